"""Backend selection for the training hot loop.

The compiled extension is used when it was built; otherwise the numpy
implementation is used. Set ``MINIMAXDNN_PURE_PYTHON=1`` to force the fallback.
"""

import importlib
import os

from . import _kernels_py


def _load_compiled():
    try:
        return importlib.import_module("minimaxdnn._kernels")
    except ImportError:
        return None


_compiled = _load_compiled()

if _compiled is not None and not os.environ.get("MINIMAXDNN_PURE_PYTHON"):
    _impl = _compiled
    BACKEND = "cython"
else:
    _impl = _kernels_py
    BACKEND = "python"

forward_batch = _impl.forward_batch
hinge_risk_grad = _impl.hinge_risk_grad
clip_prune = _impl.clip_prune


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])


def get_backend(name):
    """Return the kernel module for ``name`` ('python' or 'cython')."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
