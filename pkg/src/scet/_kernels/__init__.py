"""Hot convolution kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when it imports; set ``SCET_KERNELS=python``
to force the fallback. Both backends expose ``im2col``, ``col2im``,
``dw_conv_forward``, ``dw_conv_backward``, ``gelu_forward`` and
``gelu_backward`` with identical semantics.
"""
import os

from . import _npkernels

python_backend = _npkernels

try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if os.environ.get("SCET_KERNELS", "").lower() == "python" or compiled_backend is None:
    backend = _npkernels
else:
    backend = compiled_backend

BACKEND = backend.NAME


def use(name):
    """Switch the active backend (``"cython"`` or ``"python"``); returns the previous name."""
    global backend, BACKEND
    prev = BACKEND
    if name == "python":
        backend = _npkernels
    elif name == "cython":
        if compiled_backend is None:
            raise RuntimeError("compiled kernels are not built; reinstall the package")
        backend = compiled_backend
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    BACKEND = backend.NAME
    return prev


def set_flush_denormal(on):
    """Flush subnormal floats to zero (FTZ/DAZ) on the calling thread.

    Subnormal operands slow BLAS and elementwise loops several-fold on x86.
    This is CPU state rather than a kernel, so it works whichever backend is
    active; it needs the compiled extension and returns False without it.
    """
    if compiled_backend is None:
        return False
    return compiled_backend.set_flush_denormal(on)


def get_flush_denormal():
    return compiled_backend is not None and compiled_backend.get_flush_denormal()
