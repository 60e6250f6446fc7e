"""Kernel backend selection, resolved once at import.

``TNRBM_BACKEND`` may be ``auto`` (default: compiled if importable),
``compiled`` (fail loudly if the extension is missing) or ``python``.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:
    _ckernels = None


def load(name):
    """Return the kernel module called ``name`` (``"compiled"`` or ``"python"``)."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("tnrbm._ckernels is not built; reinstall with Cython available")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def _select():
    choice = os.environ.get("TNRBM_BACKEND", "auto").strip().lower()
    if choice == "auto":
        return ("compiled", _ckernels) if _ckernels is not None else ("python", _pykernels)
    return choice, load(choice)


NAME, kernels = _select()
sweep = kernels.sweep
sigmoid = kernels.sigmoid
bernoulli = kernels.bernoulli
