"""Hot loops, compiled when the Cython extension is built.

Set ``ROOMESTIM_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _pykernels as python

BACKEND = "python"
if os.environ.get("ROOMESTIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None
    else:
        BACKEND = "cython"
else:
    compiled = None

_impl = compiled if compiled is not None else python


def trace_rain(dims, source, mics, absorption, scattering, n_rays, seed, fs, c,
               n_bins, radius, threshold=1e-6):
    """Diffuse-rain energy histogram of shape (n_mics, n_bands, n_bins)."""
    import numpy as np

    return _impl.trace_rain(
        np.ascontiguousarray(dims, dtype=np.float64),
        np.ascontiguousarray(source, dtype=np.float64),
        np.ascontiguousarray(mics, dtype=np.float64),
        np.ascontiguousarray(absorption, dtype=np.float64),
        float(scattering), int(n_rays), int(seed), float(fs), float(c),
        int(n_bins), float(radius), float(threshold),
    )


def depthwise_forward(x, w, dilation):
    import numpy as np

    x = np.ascontiguousarray(x)
    return _impl.depthwise_forward(x, np.ascontiguousarray(w, dtype=x.dtype), int(dilation))


def depthwise_backward(x, w, grad_out, dilation):
    import numpy as np

    x = np.ascontiguousarray(x)
    return _impl.depthwise_backward(
        x, np.ascontiguousarray(w, dtype=x.dtype),
        np.ascontiguousarray(grad_out, dtype=x.dtype), int(dilation))
