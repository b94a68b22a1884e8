"""Backend selection for the MLP/Adam kernels.

The compiled Cython module is used when it imports; otherwise the numpy
fallback. Set ``QSCS_PURE_PYTHON=1`` to force the fallback.
"""
import importlib
import os

from . import _kernels_py


def load_backend(name: str):
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("qscs._kernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    names = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if os.environ.get("QSCS_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        _impl = load_backend("cython")
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
mlp_forward = _impl.mlp_forward
mlp_backward = _impl.mlp_backward
adam_update = _impl.adam_update


def use_backend(name: str) -> str:
    """Rebind the module-level kernels to ``name``; returns the previous backend name."""
    global BACKEND, mlp_forward, mlp_backward, adam_update
    impl = load_backend(name)
    previous = BACKEND
    BACKEND = impl.BACKEND
    mlp_forward, mlp_backward, adam_update = impl.mlp_forward, impl.mlp_backward, impl.adam_update
    return previous
