"""Pure numpy fallbacks for the compiled kernels in ``_ckernels.pyx``."""
import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix_uniform(seed, ray, step, slot):
    """SplitMix64 counter hash mapped to [0, 1).

    The counter packs ``(ray, step, slot)`` as ``((ray << 21 | step) << 2) | slot``.
    Vectorized over ``ray`` and ``step``.
    """
    ray = np.asarray(ray, dtype=np.uint64)
    step = np.asarray(step, dtype=np.uint64)
    counter = (((ray << np.uint64(21)) | step) << np.uint64(2)) | np.uint64(slot)
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + (counter + np.uint64(1)) * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def trace_rain(dims, source, mics, absorption, scattering, n_rays, seed, fs, c,
               n_bins, radius, threshold):
    dims = np.asarray(dims, dtype=np.float64)
    mics = np.asarray(mics, dtype=np.float64)
    absorption = np.asarray(absorption, dtype=np.float64)
    n_mics = mics.shape[0]
    n_bands = absorption.shape[1]
    hist = np.zeros((n_mics, n_bands, n_bins))
    e0 = 1.0 / (4.0 * np.pi) / n_rays
    area = np.pi * radius * radius

    rays = np.arange(n_rays, dtype=np.uint64)
    u1 = splitmix_uniform(seed, rays, 0, 0)
    u2 = splitmix_uniform(seed, rays, 0, 1)
    ct = 1.0 - 2.0 * u1
    st = np.sqrt(np.maximum(0.0, 1.0 - ct * ct))
    phi = 2.0 * np.pi * u2
    d = np.stack([st * np.cos(phi), st * np.sin(phi), ct], axis=1)
    pos = np.tile(np.asarray(source, dtype=np.float64), (n_rays, 1))
    energy = np.full((n_rays, n_bands), e0)
    path = np.zeros(n_rays)
    idx = np.arange(n_rays)
    step = 0

    while idx.size:
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = np.where(d > 0.0, (dims - pos) / d, np.inf)
            t_lo = np.where(d < 0.0, -pos / d, np.inf)
        # ties resolve in axis order, low wall before high, as in the C loop
        cand = np.empty((idx.size, 3))
        side = np.empty((idx.size, 3), dtype=np.int64)
        use_hi = d > 0.0
        cand[:] = np.where(use_hi, t_hi, t_lo)
        side[:] = np.where(use_hi, 1, 0)
        axis = np.argmin(cand, axis=1)
        rows = np.arange(idx.size)
        tmin = cand[rows, axis]
        wall = 2 * axis + side[rows, axis]
        pos = pos + tmin[:, None] * d
        high = wall % 2 == 1
        pos[rows, axis] = np.where(high, dims[axis], 0.0)
        normal = np.zeros((idx.size, 3))
        normal[rows, axis] = np.where(high, -1.0, 1.0)
        path = path + tmin

        alive = path / c * fs < n_bins
        energy = energy * (1.0 - absorption[wall])
        emax = energy.max(axis=1)

        if scattering > 0.0:
            for m in range(n_mics):
                v = mics[m] - pos
                dist = np.sqrt(np.einsum("ij,ij->i", v, v))
                cosw = np.einsum("ij,ij->i", v, normal) / dist
                with np.errstate(invalid="ignore"):
                    ratio = radius / dist
                    omega = np.where(dist > radius,
                                     2.0 * np.pi * (1.0 - np.sqrt(1.0 - ratio * ratio)),
                                     2.0 * np.pi)
                weight = scattering * cosw / np.pi * omega / area
                tbin = np.floor((path + dist) / c * fs + 0.5).astype(np.int64)
                ok = alive & (cosw > 0.0) & (tbin < n_bins)
                if np.any(ok):
                    contrib = energy[ok] * weight[ok, None]
                    for b in range(n_bands):
                        np.add.at(hist[m, b], tbin[ok], contrib[:, b])

        keep = alive & (emax >= threshold * e0)
        step += 1
        idx, pos, d, energy, path = idx[keep], pos[keep], d[keep], energy[keep], path[keep]
        axis, normal = axis[keep], normal[keep]
        if not idx.size:
            break
        rays = idx.astype(np.uint64)
        scatter = splitmix_uniform(seed, rays, step, 0) < scattering
        rows = np.arange(idx.size)
        # specular: mirror the normal component
        d[rows, axis] = -d[rows, axis]
        if np.any(scatter):
            s_rows = rows[scatter]
            u1 = splitmix_uniform(seed, rays[scatter], step, 1)
            u2 = splitmix_uniform(seed, rays[scatter], step, 2)
            ax = axis[scatter]
            phi = 2.0 * np.pi * u2
            st = np.sqrt(u1)
            d[s_rows, ax] = np.sqrt(1.0 - u1) * normal[s_rows, ax]
            d[s_rows, (ax + 1) % 3] = st * np.cos(phi)
            d[s_rows, (ax + 2) % 3] = st * np.sin(phi)
    return hist


def depthwise_forward(x, w, dilation):
    n, ch, f = x.shape
    k = w.shape[1]
    half = (k - 1) // 2
    out = np.zeros_like(x)
    for j in range(k):
        off = (j - half) * dilation
        lo, hi = max(0, -off), min(f, f - off)
        if lo >= hi:
            continue
        out[:, :, lo:hi] += w[None, :, j, None] * x[:, :, lo + off:hi + off]
    return out


def depthwise_backward(x, w, grad_out, dilation):
    n, ch, f = x.shape
    k = w.shape[1]
    half = (k - 1) // 2
    gx = np.zeros_like(x)
    gw = np.zeros((ch, k))
    for j in range(k):
        off = (j - half) * dilation
        lo, hi = max(0, -off), min(f, f - off)
        if lo >= hi:
            continue
        g = grad_out[:, :, lo:hi]
        gx[:, :, lo + off:hi + off] += w[None, :, j, None] * g
        gw[:, j] = np.einsum("ncf,ncf->c", g, x[:, :, lo + off:hi + off], dtype=np.float64)
    return gx, gw.astype(x.dtype)
