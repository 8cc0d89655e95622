"""Neural re-parameterized 3D face model fitting on multi-view landmark videos."""

__version__ = "0.1.0"
