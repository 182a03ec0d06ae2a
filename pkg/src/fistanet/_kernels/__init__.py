"""Kernel backend dispatch.

Two interchangeable backends implement the hot numeric kernels: a compiled
Cython/C extension and a pure numpy fallback.  The compiled one is selected
at import when present; `use()` switches explicitly (the benchmark and the
parity tests exercise both).  Both backends are deterministic; they agree to
floating-point roundoff, not bit-for-bit.
"""

from . import py_kernels

try:
    from . import _ckernels as _compiled
except ImportError:
    _compiled = None

_active = _compiled if _compiled is not None else py_kernels


def compiled_available():
    return _compiled is not None


def active_name():
    return _active.NAME


def use(name):
    """Select the backend: 'compiled', 'python', or 'auto'."""
    global _active
    if name == "python":
        _active = py_kernels
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        _active = _compiled
    elif name == "auto":
        _active = _compiled if _compiled is not None else py_kernels
    else:
        raise ValueError("unknown backend %r" % (name,))
    return _active.NAME


def get_backend(name):
    """Direct handle on one backend module (used by benchmarks/tests)."""
    if name == "python":
        return py_kernels
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        return _compiled
    raise ValueError("unknown backend %r" % (name,))


def conv3x3_fwd(x, k):
    return _active.conv3x3_fwd(x, k)


def conv3x3_grad_input(gout, k):
    return _active.conv3x3_grad_input(gout, k)


def conv3x3_grad_kernel(x, gout):
    return _active.conv3x3_grad_kernel(x, gout)


def radon_fwd(img_flat, bin0, frac, n_detectors):
    return _active.radon_fwd(img_flat, bin0, frac, n_detectors)


def radon_adj(sino, bin0, frac, n_pixels):
    return _active.radon_adj(sino, bin0, frac, n_pixels)
