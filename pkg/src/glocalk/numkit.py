"""Dense numeric primitives shared by the model, the optimizer and the tests.

Everything here works on float64 numpy arrays. Random streams come from
numpy's PCG64 bit generator, which yields the same stream for the same seed
on every platform numpy supports.
"""

import numpy as np


class ShapeError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def make_rng(seed):
    """Return a seeded ``numpy.random.Generator`` backed by PCG64."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_matrix(a, name="array"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _check_kernel(kernel):
    kernel = as_matrix(kernel, "kernel")
    t = kernel.shape[0]
    if kernel.shape[1] != t:
        raise ShapeError(f"kernel must be square, got {kernel.shape}")
    if t % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {t}")
    return kernel


def conv2d_same(x, kernel):
    """Zero-padded, stride-1 cross-correlation whose output matches ``x`` in shape.

    ``out[p, q] = sum_{a,b} kernel[a, b] * xpad[p + a, q + b]`` where ``xpad``
    is ``x`` padded by ``(t - 1) // 2`` zeros on every side. The kernel is not
    flipped. Terms are accumulated in a fixed row-major kernel order.
    """
    x = as_matrix(x, "input")
    kernel = _check_kernel(kernel)
    t = kernel.shape[0]
    r = (t - 1) // 2
    rows, cols = x.shape
    xpad = np.pad(x, r)
    out = np.zeros_like(x)
    for a in range(t):
        for b in range(t):
            w = kernel[a, b]
            if w != 0.0:
                out += w * xpad[a:a + rows, b:b + cols]
    return out


def conv2d_same_kernel_grad(x, upstream, t):
    """Gradient of ``sum(upstream * conv2d_same(x, k))`` with respect to ``k``."""
    x = as_matrix(x, "input")
    upstream = as_matrix(upstream, "upstream")
    if x.shape != upstream.shape:
        raise ShapeError(f"input {x.shape} and upstream {upstream.shape} differ")
    if t % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {t}")
    r = (t - 1) // 2
    rows, cols = x.shape
    xpad = np.pad(x, r)
    grad = np.empty((t, t))
    for a in range(t):
        for b in range(t):
            grad[a, b] = np.sum(upstream * xpad[a:a + rows, b:b + cols])
    return grad


def conv2d_same_input_grad(upstream, kernel):
    """Gradient of ``sum(upstream * conv2d_same(x, kernel))`` with respect to ``x``."""
    kernel = _check_kernel(kernel)
    return conv2d_same(upstream, kernel[::-1, ::-1])


def finite_diff_gradient(f, x, eps=1e-5):
    """Central-difference gradient of the scalar function ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64).ravel()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        hi = float(f(x))
        x[i] = orig - eps
        lo = float(f(x))
        x[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"non-finite objective while probing coordinate {i}")
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(a, b, floor=1e-8):
    """Element-wise ``|a - b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
