"""Pick the compiled kernels when importable, else the numpy fallback."""

import os

NAME = "python"

if os.environ.get("PHOTONIC_GRAYBOX_PURE", "") not in ("1", "true", "yes"):
    try:
        from photonic_graybox import _kernels as kernels

        NAME = "cython"
    except ImportError:  # pragma: no cover - depends on build
        from photonic_graybox import _kernels_py as kernels
else:
    from photonic_graybox import _kernels_py as kernels

from photonic_graybox import _kernels_py as python_kernels  # noqa: E402

__all__ = ["NAME", "kernels", "python_kernels"]
