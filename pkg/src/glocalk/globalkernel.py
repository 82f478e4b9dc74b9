"""Global convolution kernel built from pooled item reconstructions.

A bank holds one flattened ``t x t`` kernel per item. Weighting the bank by
each item's mean reconstructed rating and summing gives a single kernel
``GK`` which is convolved over the zero-imputed rating matrix; the result is
the input the autoencoder sees during fine-tuning.
"""

import numpy as np

from .data import RATING_MAX, RATING_MIN
from .kernelnet import loss_and_gradient as net_loss_and_gradient
from .numkit import (
    ConfigurationError,
    NumericError,
    ShapeError,
    conv2d_same,
    conv2d_same_input_grad,
    conv2d_same_kernel_grad,
)

AGG_MODES = ("weighted", "elementwise_avg")


def item_avg_pool(R_pred, rating_range=(RATING_MIN, RATING_MAX)):
    """Per-item mean of the reconstruction after clipping it to the rating range."""
    R_pred = np.asarray(R_pred, dtype=np.float64)
    if R_pred.ndim != 2 or R_pred.size == 0:
        raise ShapeError(f"cannot pool an empty or non-2-D matrix of shape {R_pred.shape}")
    return np.clip(R_pred, *rating_range).mean(axis=1)


def _agg_weights(mu, m, mode):
    if mode == "weighted":
        return np.asarray(mu, dtype=np.float64)
    if mode == "elementwise_avg":
        return np.full(m, 1.0 / m)
    raise ConfigurationError(f"unknown aggregation mode {mode!r}")


def aggregate_kernel(mu, bank, mode="weighted"):
    """Collapse an ``m x t^2`` bank to one ``t x t`` kernel."""
    bank = np.asarray(bank, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    m, tt = bank.shape
    t = int(round(np.sqrt(tt)))
    if t * t != tt:
        raise ShapeError(f"bank rows of length {tt} are not square kernels")
    if mu.shape != (m,):
        raise ShapeError(f"pooled summary has length {mu.size}, bank has {m} rows")
    return (_agg_weights(mu, m, mode) @ bank).reshape(t, t)


def build_transformed_matrix(R, GK):
    R = getattr(R, "dense", R)
    return conv2d_same(R, GK)


def init_bank(m, t, rng):
    if t % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {t}")
    return rng.normal(0.0, 0.1 / t ** 2, size=(m, t * t))


def global_kernel_gradient(upstream, R, mu, t, mode="weighted"):
    """Gradient with respect to the bank of a loss whose gradient in ``R_hat`` is ``upstream``.

    ``R`` is the matrix the kernel was convolved with. Since ``GK`` is linear
    in the bank, ``dL/dk_i = w_i * vec(dL/dGK)`` where ``w`` is ``mu``
    (weighted) or ``1/m`` (elementwise average), and ``dL/dGK`` correlates
    ``upstream`` with the padded input.
    """
    R = getattr(R, "dense", R)
    mu = np.asarray(mu, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if not np.all(np.isfinite(upstream)):
        raise NumericError("non-finite upstream gradient")
    dGK = conv2d_same_kernel_grad(R, upstream, t)
    return np.outer(_agg_weights(mu, mu.size, mode), dGK.ravel())


def bank_names(conv_layers):
    return [f"bank{c}" for c in range(conv_layers)]


def bank_blocks(m, t, conv_layers):
    return [(name, (m, t * t)) for name in bank_names(conv_layers)]


def transform_stack(R, banks, mu, mode="weighted"):
    """Apply one convolution per bank in sequence; return every intermediate matrix."""
    xs = [np.asarray(getattr(R, "dense", R), dtype=np.float64)]
    kernels = []
    for bank in banks:
        GK = aggregate_kernel(mu, bank, mode)
        kernels.append(GK)
        xs.append(conv2d_same(xs[-1], GK))
    return xs, kernels


class FineTuneObjective:
    """Loss and gradient of the autoencoder fed with the convolved rating matrix.

    Trainable parameters are the network blocks followed by one bank per
    convolution layer. ``mu`` is held fixed unless a caller replaces it
    between optimizer runs.
    """

    def __init__(self, net, layout, R, mask, mu, t, conv_layers=1, mode="weighted",
                 lambda2=0.0, lambda_s=0.0, kernel_reg="kernel"):
        if mode not in AGG_MODES:
            raise ConfigurationError(f"unknown aggregation mode {mode!r}")
        self.net = net
        self.layout = layout
        self.R = np.asarray(R, dtype=np.float64)
        self.mask = np.asarray(mask, dtype=np.float64)
        self.mu = np.asarray(mu, dtype=np.float64)
        self.t = t
        self.names = bank_names(conv_layers)
        self.mode = mode
        self.lambda2 = lambda2
        self.lambda_s = lambda_s
        self.kernel_reg = kernel_reg

    def banks(self, theta):
        return [self.layout.view(theta, name) for name in self.names]

    def transformed(self, theta):
        xs, _ = transform_stack(self.R, self.banks(theta), self.mu, self.mode)
        return xs[-1]

    def predict(self, theta):
        return self.net.forward(theta, self.transformed(theta), self.layout)

    def __call__(self, theta):
        banks = self.banks(theta)
        xs, kernels = transform_stack(self.R, banks, self.mu, self.mode)
        loss, grad, dX = net_loss_and_gradient(
            self.net, theta, self.R, self.mask, self.lambda2, self.lambda_s,
            X=xs[-1], kernel_reg=self.kernel_reg, layout=self.layout, input_grad=True)
        loss += 0.5 * self.lambda2 * sum(float(np.sum(b * b)) for b in banks)
        for c in range(len(banks) - 1, -1, -1):
            g = global_kernel_gradient(dX, xs[c], self.mu, self.t, self.mode)
            self.layout.view(grad, self.names[c])[...] = g + self.lambda2 * banks[c]
            if c > 0:
                dX = conv2d_same_input_grad(dX, kernels[c])
        return loss, grad
