"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from facefit import _kernels_py as python_backend
from facefit.face_model import build_synthetic_assets
from facefit.kernels import compiled_backend
from facefit.pipeline.synth import DEFAULT_MODEL_DIMS


def _mlp_case(width, steps):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 8))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = rng.normal(size=(16, 4))
    shapes = [(width, 8), (width, width), (4, width)]
    w0 = [rng.normal(size=s) * np.sqrt(2.0 / s[1]) for s in shapes]

    def run(backend):
        backend.mlp_gd([w.copy() for w in w0], x, y, 0.5 / width, steps, 0.0, steps)
    return run


def _normals_case():
    assets = build_synthetic_assets(0, DEFAULT_MODEL_DIMS)
    verts, faces = assets.template, assets.faces

    def run(backend):
        backend.accumulate_face_normals(verts, faces)
    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    cases = [("mlp_gd m=32 x200 steps", _mlp_case(32, 200)),
             ("mlp_gd m=512 x50 steps", _mlp_case(512, 50)),
             ("accumulate_face_normals", _normals_case())]
    backends = [("python", python_backend)]
    if compiled_backend is None:
        print("compiled backend not built; timing the fallback only")
    else:
        backends.append(("cython", compiled_backend))
    print(f"{'kernel':<26}" + "".join(f"{name:>12}" for name, _ in backends) + "     speedup")
    for label, run in cases:
        times = [min(timeit.repeat(lambda b=b: run(b), number=1, repeat=args.repeat)) for _, b in backends]
        row = f"{label:<26}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
