"""Reference computations that share no code with the package internals."""

import numpy as np


def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        fp = f(x)
        x.flat[i] = old - h
        fm = f(x)
        x.flat[i] = old
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad


def max_relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def naive_mlp(layers, x):
    """Loop-based MLP: ``layers`` is a list of (W, b) with W shaped (fan_in, fan_out)."""
    out = []
    for row in np.asarray(x, dtype=np.float64):
        h = list(row)
        for k, (w, b) in enumerate(layers):
            z = [sum(h[i] * w[i][j] for i in range(len(h))) + b[j] for j in range(len(b))]
            h = [max(v, 0.0) for v in z] if k < len(layers) - 1 else z
        out.append(h)
    return np.asarray(out)
