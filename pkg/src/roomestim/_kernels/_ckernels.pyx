# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: diffuse-rain ray tracing and dilated depthwise conv.

Both functions mirror ``_pykernels`` exactly in semantics; the random
stream is the same SplitMix64 counter hash, so results agree up to
floating-point summation order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin, floor, M_PI
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline uint64_t _splitmix(uint64_t seed, uint64_t counter) nogil:
    cdef uint64_t z = seed + (counter + 1) * <uint64_t>0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t seed, uint64_t ray, uint64_t step,
                            uint64_t slot) nogil:
    cdef uint64_t counter = (((ray << 21) | step) << 2) | slot
    return <double>(_splitmix(seed, counter) >> 11) * (1.0 / 9007199254740992.0)


def trace_rain(double[::1] dims, double[::1] source, double[:, ::1] mics,
               double[:, ::1] absorption, double scattering, int n_rays,
               uint64_t seed, double fs, double c, int n_bins,
               double radius, double threshold):
    """Trace ``n_rays`` rays and rain scattered energy onto each mic.

    Returns an array of shape (n_mics, n_bands, n_bins).
    """
    cdef Py_ssize_t n_mics = mics.shape[0]
    cdef Py_ssize_t n_bands = absorption.shape[1]
    hist_arr = np.zeros((n_mics, n_bands, n_bins), dtype=np.float64)
    cdef double[:, :, ::1] hist = hist_arr
    cdef double e0 = 1.0 / (4.0 * M_PI) / n_rays
    cdef double[::1] energy = np.empty(n_bands, dtype=np.float64)
    cdef double pos[3]
    cdef double d[3]
    cdef double normal[3]
    cdef double v[3]
    cdef double t, tmin, path, emax, dist, cosw, omega, weight, ratio
    cdef double u1, u2, ct, st, phi, lt, ls
    cdef int axis, wall, b, a, step, m, a1, a2
    cdef int64_t tbin
    cdef Py_ssize_t ray
    cdef double area = M_PI * radius * radius
    cdef double sc = scattering

    with nogil:
        for ray in range(n_rays):
            u1 = _uniform(seed, ray, 0, 0)
            u2 = _uniform(seed, ray, 0, 1)
            ct = 1.0 - 2.0 * u1
            st = sqrt(max(0.0, 1.0 - ct * ct))
            phi = 2.0 * M_PI * u2
            d[0] = st * cos(phi)
            d[1] = st * sin(phi)
            d[2] = ct
            for a in range(3):
                pos[a] = source[a]
            for b in range(n_bands):
                energy[b] = e0
            path = 0.0
            step = 0
            while True:
                tmin = 1e300
                wall = -1
                for a in range(3):
                    if d[a] > 0.0:
                        t = (dims[a] - pos[a]) / d[a]
                        if t < tmin:
                            tmin = t
                            wall = 2 * a + 1
                    elif d[a] < 0.0:
                        t = -pos[a] / d[a]
                        if t < tmin:
                            tmin = t
                            wall = 2 * a
                axis = wall // 2
                for a in range(3):
                    pos[a] = pos[a] + tmin * d[a]
                    normal[a] = 0.0
                if wall % 2 == 0:
                    pos[axis] = 0.0
                    normal[axis] = 1.0
                else:
                    pos[axis] = dims[axis]
                    normal[axis] = -1.0
                path = path + tmin
                if path / c * fs >= n_bins:
                    break
                emax = 0.0
                for b in range(n_bands):
                    energy[b] = energy[b] * (1.0 - absorption[wall, b])
                    if energy[b] > emax:
                        emax = energy[b]
                if sc > 0.0:
                    for m in range(n_mics):
                        for a in range(3):
                            v[a] = mics[m, a] - pos[a]
                        dist = sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
                        cosw = (v[0] * normal[0] + v[1] * normal[1]
                                + v[2] * normal[2]) / dist
                        if cosw <= 0.0:
                            continue
                        if dist > radius:
                            ratio = radius / dist
                            omega = 2.0 * M_PI * (1.0 - sqrt(1.0 - ratio * ratio))
                        else:
                            omega = 2.0 * M_PI
                        weight = sc * cosw / M_PI * omega / area
                        tbin = <int64_t>floor((path + dist) / c * fs + 0.5)
                        if tbin < n_bins:
                            for b in range(n_bands):
                                hist[m, b, tbin] += energy[b] * weight
                if emax < threshold * e0:
                    break
                step = step + 1
                if _uniform(seed, ray, step, 0) < sc:
                    u1 = _uniform(seed, ray, step, 1)
                    u2 = _uniform(seed, ray, step, 2)
                    ct = sqrt(1.0 - u1)
                    st = sqrt(u1)
                    phi = 2.0 * M_PI * u2
                    lt = st * cos(phi)
                    ls = st * sin(phi)
                    a1 = (axis + 1) % 3
                    a2 = (axis + 2) % 3
                    d[axis] = ct * normal[axis]
                    d[a1] = lt
                    d[a2] = ls
                else:
                    d[axis] = -d[axis]
    return hist_arr


def depthwise_forward(real[:, :, ::1] x, real[:, ::1] w, int dilation):
    """Zero-padded 'same' dilated depthwise convolution along the last axis."""
    cdef Py_ssize_t n = x.shape[0], ch = x.shape[1], f = x.shape[2]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t half = (k - 1) // 2
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, ch, f), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, c, j, q, lo, hi, off
    cdef real wv
    with nogil:
        for i in range(n):
            for c in range(ch):
                for j in range(k):
                    off = (j - half) * dilation
                    wv = w[c, j]
                    lo = -off if off < 0 else 0
                    hi = f - off if off > 0 else f
                    for q in range(lo, hi):
                        out[i, c, q] += wv * x[i, c, q + off]
    return out_arr


def depthwise_backward(real[:, :, ::1] x, real[:, ::1] w,
                       real[:, :, ::1] grad_out, int dilation):
    """Gradients of ``depthwise_forward`` w.r.t. input and weights."""
    cdef Py_ssize_t n = x.shape[0], ch = x.shape[1], f = x.shape[2]
    cdef Py_ssize_t k = w.shape[1]
    cdef Py_ssize_t half = (k - 1) // 2
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((n, ch, f), dtype=dtype)
    gw_acc = np.zeros((ch, k), dtype=np.float64)
    cdef real[:, :, ::1] gx = gx_arr
    cdef double[:, ::1] gw = gw_acc
    cdef Py_ssize_t i, c, j, q, lo, hi, off, m
    cdef real wv, a0, a1, a2, a3
    with nogil:
        for i in range(n):
            for c in range(ch):
                for j in range(k):
                    off = (j - half) * dilation
                    wv = w[c, j]
                    lo = -off if off < 0 else 0
                    hi = f - off if off > 0 else f
                    for q in range(lo, hi):
                        gx[i, c, q + off] += wv * grad_out[i, c, q]
                    # four interleaved partial sums let the compiler vectorize
                    a0 = a1 = a2 = a3 = 0
                    m = lo + ((hi - lo) // 4) * 4
                    for q in range(lo, m, 4):
                        a0 = a0 + grad_out[i, c, q] * x[i, c, q + off]
                        a1 = a1 + grad_out[i, c, q + 1] * x[i, c, q + 1 + off]
                        a2 = a2 + grad_out[i, c, q + 2] * x[i, c, q + 2 + off]
                        a3 = a3 + grad_out[i, c, q + 3] * x[i, c, q + 3 + off]
                    for q in range(m, hi):
                        a0 = a0 + grad_out[i, c, q] * x[i, c, q + off]
                    gw[c, j] += (a0 + a1) + (a2 + a3)
    return gx_arr, gw_acc.astype(dtype)
