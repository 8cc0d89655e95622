"""Pure-numpy implementations of the hot kernels (fallback for ``_kernels``)."""
import numpy as np


def accumulate_face_normals(vertices, faces):
    """Sum of un-normalized face normals (cross products) incident to each vertex."""
    v = np.ascontiguousarray(vertices, dtype=np.float64)
    f = np.ascontiguousarray(faces, dtype=np.int64)
    out = np.zeros_like(v)
    if len(f) == 0:
        return out
    cross = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    for k in range(3):
        np.add.at(out, f[:, k], cross)
    return out


def mlp_gd(weights, x, y, lr, max_steps, eps, record_every=1):
    """Full-batch gradient descent on 0.5*||Phi(x) - y||^2 for a bias-free ReLU MLP.

    ``weights`` are (rows, cols) matrices applied as ``h @ W.T`` and are updated
    in place. Returns ``(steps, final_loss, trace)`` where ``trace`` holds the
    loss before step 0 and after every ``record_every`` steps. Stops as soon as
    the loss is <= ``eps`` or non-finite.
    """
    nl = len(weights)
    trace = []
    steps = 0
    while True:
        hs = [x]
        masks = []
        h = x
        for l in range(nl - 1):
            z = h @ weights[l].T
            m = z > 0
            h = np.where(m, z, 0.0)
            masks.append(m)
            hs.append(h)
        out = h @ weights[-1].T
        r = out - y
        loss = 0.5 * float(np.sum(r * r))
        if steps % record_every == 0:
            trace.append(loss)
        if loss <= eps or not np.isfinite(loss) or steps >= max_steps:
            if steps % record_every != 0:
                trace.append(loss)
            return steps, loss, np.array(trace)
        delta = r
        for l in range(nl - 1, -1, -1):
            g = delta.T @ hs[l]
            if l > 0:
                delta = (delta @ weights[l]) * masks[l - 1]
            weights[l] -= lr * g
        steps += 1
