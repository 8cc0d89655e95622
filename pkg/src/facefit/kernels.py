"""Hot-kernel dispatch: compiled ``_kernels`` when built, numpy fallback otherwise.

Set ``FACEFIT_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py as python_backend

compiled_backend = None
if not os.environ.get("FACEFIT_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_impl = compiled_backend or python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

accumulate_face_normals = _impl.accumulate_face_normals
mlp_gd = _impl.mlp_gd
