"""Item-based autoencoder with locally kernelised weight matrices.

Each layer owns free weights ``W`` (out x in), position vectors ``U`` (one
per input unit) and ``V`` (one per output unit) in ``R^d``, and a bias. The
weight actually used in the forward pass is ``W * K`` with the finite-support
kernel ``K[o, i] = max(0, 1 - ||V[o] - U[i]||^2)``, so any pair of units whose
positions drift more than unit distance apart is disconnected.

All parameters live in one flat float64 vector. The block order is, per
layer ``l``: ``W`` (row-major), ``U``, ``V``, ``b``; global-kernel banks, when
present, follow after the last layer.
"""

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .numkit import ConfigurationError, NumericError, ShapeError

ACTIVATIONS = ("sigmoid", "identity")
KERNEL_REG_MODES = ("kernel", "positions")


@dataclass(frozen=True)
class LayerSpec:
    n_in: int
    n_out: int
    activation: str = "sigmoid"
    kernelized: bool = True

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")


@dataclass
class LocalKernelLayer:
    W: np.ndarray
    U: np.ndarray
    V: np.ndarray
    b: np.ndarray
    activation: str = "sigmoid"

    @property
    def kernelized(self):
        return self.U is not None


def layer_specs(n_users, hidden=500, num_hidden=2, kernelize_output=True,
                kernelize_hidden=True):
    """Hidden sigmoid layers of width ``hidden`` and a linear output layer of width ``n_users``."""
    specs, n_in = [], n_users
    for _ in range(num_hidden):
        specs.append(LayerSpec(n_in, hidden, "sigmoid", kernelize_hidden))
        n_in = hidden
    specs.append(LayerSpec(n_in, n_users, "identity", kernelize_output))
    return specs


class ParamLayout:
    """Named blocks of a flat parameter vector."""

    def __init__(self, blocks):
        self.blocks = [(name, tuple(int(s) for s in shape)) for name, shape in blocks]
        self.offsets = {}
        pos = 0
        for name, shape in self.blocks:
            size = int(np.prod(shape))
            self.offsets[name] = (pos, pos + size, shape)
            pos += size
        self.size = pos

    def __contains__(self, name):
        return name in self.offsets

    def __eq__(self, other):
        return isinstance(other, ParamLayout) and self.blocks == other.blocks

    def extend(self, blocks):
        return ParamLayout(self.blocks + list(blocks))

    def view(self, theta, name):
        lo, hi, shape = self.offsets[name]
        return theta[lo:hi].reshape(shape)

    def unflatten(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.size,):
            raise ShapeError(f"expected a flat vector of {self.size} parameters, got {theta.shape}")
        return {name: self.view(theta, name) for name, _ in self.blocks}

    def flatten(self, params):
        theta = np.empty(self.size)
        for name, _ in self.blocks:
            lo, hi, shape = self.offsets[name]
            block = np.asarray(params[name], dtype=np.float64)
            if block.shape != shape:
                raise ShapeError(f"block {name} has shape {block.shape}, expected {shape}")
            theta[lo:hi] = block.ravel()
        return theta

    def slice_of(self, name):
        lo, hi, _ = self.offsets[name]
        return slice(lo, hi)


def net_layout(specs, d):
    blocks = []
    for l, s in enumerate(specs):
        blocks.append((f"layer{l}.W", (s.n_out, s.n_in)))
        if s.kernelized:
            blocks.append((f"layer{l}.U", (s.n_in, d)))
            blocks.append((f"layer{l}.V", (s.n_out, d)))
        blocks.append((f"layer{l}.b", (s.n_out,)))
    return ParamLayout(blocks)


class KernelNet:
    """A stack of local-kernel layers bound to a flat parameter layout."""

    def __init__(self, specs, d=5):
        for a, b in zip(specs, specs[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer dims do not compose: {a.n_out} -> {b.n_in}")
        if d < 1:
            raise ConfigurationError("kernel dimension d must be >= 1")
        self.specs = list(specs)
        self.d = d
        self.layout = net_layout(self.specs, d)

    @property
    def n_in(self):
        return self.specs[0].n_in

    @property
    def n_out(self):
        return self.specs[-1].n_out

    def layers(self, theta, layout=None):
        layout = layout or self.layout
        out = []
        for l, s in enumerate(self.specs):
            U = layout.view(theta, f"layer{l}.U") if s.kernelized else None
            V = layout.view(theta, f"layer{l}.V") if s.kernelized else None
            out.append(LocalKernelLayer(layout.view(theta, f"layer{l}.W"), U, V,
                                        layout.view(theta, f"layer{l}.b"), s.activation))
        return out

    def forward(self, theta, X, layout=None):
        return net_forward(self.layers(theta, layout), X)


# Positions start clustered so that every kernel entry is close to 1 and the
# network begins fully connected; sparsity emerges as positions spread out.
POSITION_STD = 1e-3


def init_params(net, rng, layout=None, position_std=POSITION_STD):
    """Glorot-uniform ``W``, ``N(0, position_std)`` positions, zero biases.

    Blocks are drawn in layout order, so the result depends only on the
    seed and the layer shapes.
    """
    layout = layout or net.layout
    theta = np.zeros(layout.size)
    scale = float(position_std)
    for l, s in enumerate(net.specs):
        a = np.sqrt(6.0 / (s.n_in + s.n_out))
        layout.view(theta, f"layer{l}.W")[...] = rng.uniform(-a, a, size=(s.n_out, s.n_in))
        if s.kernelized:
            layout.view(theta, f"layer{l}.U")[...] = rng.normal(0.0, scale, size=(s.n_in, net.d))
            layout.view(theta, f"layer{l}.V")[...] = rng.normal(0.0, scale, size=(s.n_out, net.d))
    return theta


def _sq_dist(U, V):
    # ||V[o] - U[i]||^2 via the expansion; clamped since rounding can go slightly negative
    D = (V * V).sum(1)[:, None] + (U * U).sum(1)[None, :] - 2.0 * (V @ U.T)
    return np.maximum(D, 0.0)


def rbf_kernel_matrix(U, V):
    """``K[o, i] = max(0, 1 - ||V[o] - U[i]||^2)`` for input positions ``U`` and output positions ``V``."""
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    if U.shape[1] != V.shape[1]:
        raise ShapeError(f"position dims differ: {U.shape[1]} vs {V.shape[1]}")
    return np.maximum(0.0, 1.0 - _sq_dist(U, V))


def effective_weights(layer, K=None):
    if not layer.kernelized:
        return layer.W
    if K is None:
        K = rbf_kernel_matrix(layer.U, layer.V)
    if K.shape != layer.W.shape:
        raise ShapeError(f"kernel {K.shape} does not match weights {layer.W.shape}")
    return layer.W * K


def _activate(Z, activation):
    return expit(Z) if activation == "sigmoid" else Z


def layer_forward(layer, x):
    """``activation(W' x + b)``; ``x`` is one input vector or a matrix whose rows are inputs."""
    x = np.asarray(x, dtype=np.float64)
    We = effective_weights(layer)
    if x.shape[-1] != We.shape[1]:
        raise ShapeError(f"input dim {x.shape[-1]} does not match layer input {We.shape[1]}")
    return _activate(x @ We.T + layer.b, layer.activation)


def net_forward(layers, R_in):
    """Reconstruct every row (item vector) of ``R_in``."""
    A = np.asarray(R_in, dtype=np.float64)
    if A.ndim != 2 or A.shape[1] != layers[0].W.shape[1]:
        raise ShapeError(f"input of shape {A.shape} does not fit the first layer")
    for layer in layers:
        A = layer_forward(layer, A)
    return A


def _check_lambdas(lambda2, lambda_s):
    if lambda2 < 0 or lambda_s < 0:
        raise ConfigurationError("regularisation strengths must be non-negative")


def regularizer(layers, lambda2, lambda_s, kernel_reg="kernel"):
    """``lambda2/2 * sum ||W||^2 + lambda_s/2 * sum ||K||^2`` (or ``||U||^2 + ||V||^2``)."""
    total = 0.0
    for layer in layers:
        total += 0.5 * lambda2 * np.sum(layer.W ** 2)
        if layer.kernelized:
            if kernel_reg == "kernel":
                total += 0.5 * lambda_s * np.sum(rbf_kernel_matrix(layer.U, layer.V) ** 2)
            else:
                total += 0.5 * lambda_s * (np.sum(layer.U ** 2) + np.sum(layer.V ** 2))
    return total


def masked_loss(R_pred, R, mask, layers, lambda2, lambda_s, kernel_reg="kernel"):
    """Squared error over observed cells plus weight and kernel penalties."""
    _check_lambdas(lambda2, lambda_s)
    R_pred, R, mask = (np.asarray(a, dtype=np.float64) for a in (R_pred, R, mask))
    if not R_pred.shape == R.shape == mask.shape:
        raise ShapeError(f"shapes differ: {R_pred.shape}, {R.shape}, {mask.shape}")
    data = float(np.sum(mask * (R - R_pred) ** 2))
    return data + regularizer(layers, lambda2, lambda_s, kernel_reg)


def _param_norms(net, theta, layout):
    return {name: float(np.linalg.norm(layout.view(theta, name))) for name, _ in layout.blocks}


def loss_and_gradient(net, theta, R, mask, lambda2, lambda_s, X=None,
                      kernel_reg="kernel", layout=None, input_grad=False):
    """Masked regularised loss of ``net`` and its exact gradient.

    Penalties use the weight-decay convention ``lambda/2 * ||.||^2``.
    ``X`` is the network input (defaults to ``R``); the loss always compares
    against ``R`` on the cells where ``mask`` is 1. The returned gradient has
    the size of ``layout`` (which may contain blocks beyond the network;
    those entries are left at zero). With ``input_grad`` the gradient with
    respect to ``X`` is returned as a third value.
    """
    _check_lambdas(lambda2, lambda_s)
    if kernel_reg not in KERNEL_REG_MODES:
        raise ConfigurationError(f"unknown kernel_reg {kernel_reg!r}")
    layout = layout or net.layout
    layers = net.layers(theta, layout)
    X = R if X is None else X

    acts, kerns, dists, effs = [X], [], [], []
    loss = 0.0
    for layer in layers:
        if layer.kernelized:
            D = _sq_dist(layer.U, layer.V)
            K = np.maximum(0.0, 1.0 - D)
            We = layer.W * K
            if kernel_reg == "kernel":
                loss += 0.5 * lambda_s * np.sum(K * K)
            else:
                loss += 0.5 * lambda_s * (np.sum(layer.U ** 2) + np.sum(layer.V ** 2))
        else:
            D = K = None
            We = layer.W
        loss += 0.5 * lambda2 * np.sum(layer.W ** 2)
        dists.append(D)
        kerns.append(K)
        effs.append(We)
        acts.append(_activate(acts[-1] @ We.T + layer.b, layer.activation))

    resid = mask * (acts[-1] - R)
    loss += float(np.sum(resid * resid))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss; parameter norms: {_param_norms(net, theta, layout)}")

    grad = np.zeros(layout.size)
    dA = 2.0 * resid
    dX = None
    for l in range(len(layers) - 1, -1, -1):
        layer, A = layers[l], acts[l + 1]
        dZ = dA * A * (1.0 - A) if layer.activation == "sigmoid" else dA
        dWe = dZ.T @ acts[l]
        layout.view(grad, f"layer{l}.b")[...] = dZ.sum(0)
        if l > 0 or input_grad:
            dA = dZ @ effs[l]
        if layer.kernelized:
            K, D = kerns[l], dists[l]
            layout.view(grad, f"layer{l}.W")[...] = dWe * K + lambda2 * layer.W
            dK = dWe * layer.W
            if kernel_reg == "kernel":
                dK += lambda_s * K
            # the hinge has zero slope outside the unit ball, including the kink itself
            dD = np.where(D < 1.0, -dK, 0.0)
            U, V = layer.U, layer.V
            gV = 2.0 * (V * dD.sum(1)[:, None] - dD @ U)
            gU = 2.0 * (U * dD.sum(0)[:, None] - dD.T @ V)
            if kernel_reg == "positions":
                gU += lambda_s * U
                gV += lambda_s * V
            layout.view(grad, f"layer{l}.U")[...] = gU
            layout.view(grad, f"layer{l}.V")[...] = gV
        else:
            layout.view(grad, f"layer{l}.W")[...] = dWe + lambda2 * layer.W
    if input_grad:
        dX = dA
        return loss, grad, dX
    return loss, grad


CHECKPOINT_MAGIC = b"GLOCALK-CKPT"
CHECKPOINT_VERSION = 1


def config_hash(obj):
    payload = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def save_checkpoint(path, layout, theta, cfg_hash="", stage="", extra=None):
    """Write ``layout`` and ``theta`` to ``path``.

    File format: the ASCII magic, a space, the decimal version and a newline;
    a 4-byte little-endian header length followed by that many bytes of UTF-8
    JSON (``config_hash``, ``stage``, ``blocks`` as ``[name, shape]`` pairs,
    ``size``, ``extra``); then ``size`` little-endian float64 values in block
    order.
    """
    theta = np.asarray(theta, dtype="<f8")
    if theta.shape != (layout.size,):
        raise ShapeError("parameter vector does not match layout")
    header = json.dumps({
        "config_hash": cfg_hash,
        "stage": stage,
        "blocks": [[name, list(shape)] for name, shape in layout.blocks],
        "size": layout.size,
        "extra": extra or {},
    }).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" " + str(CHECKPOINT_VERSION).encode() + b"\n")
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(theta.tobytes())


def load_checkpoint(path):
    """Return ``(layout, theta, meta)`` from a file written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        first = fh.readline().rstrip(b"\n")
        magic, _, version = first.partition(b" ")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        if int(version) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {int(version)}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(hlen).decode())
        layout = ParamLayout([(name, tuple(shape)) for name, shape in meta["blocks"]])
        theta = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    if theta.size != layout.size:
        raise ValueError(f"{path}: truncated parameter payload")
    return layout, theta, meta
