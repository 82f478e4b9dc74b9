"""scikit-learn style estimator wrapping the two training stages."""

import logging
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import globalkernel as gk
from .data import RATING_MAX, RATING_MIN, RatingMatrix
from .kernelnet import KernelNet, init_params, layer_specs, loss_and_gradient
from .numkit import ConfigurationError
from .optimizer import LbfgsConfig, run_epochs

logger = logging.getLogger(__name__)


def rmse(pred, actual):
    pred = np.asarray(pred, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if actual.size == 0:
        raise ValueError("cannot compute RMSE on an empty set")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def _rng_streams(seed):
    # independent streams for weight init and bank init
    init_ss, bank_ss = np.random.SeedSequence(seed).spawn(2)
    return (np.random.Generator(np.random.PCG64(init_ss)),
            np.random.Generator(np.random.PCG64(bank_ss)))


def validate_hyperparams(p):
    for name in ("hidden", "num_hidden", "kernel_dim", "conv_layers", "maxiter_p",
                 "maxiter_f", "pretrain_epochs", "finetune_epochs"):
        if getattr(p, name) < 0:
            raise ConfigurationError(f"{name} must be >= 0")
    if p.kernel_dim < 1 or p.hidden < 1:
        raise ConfigurationError("hidden and kernel_dim must be >= 1")
    if p.conv_size < 1 or p.conv_size % 2 == 0:
        raise ConfigurationError(f"conv_size must be a positive odd number, got {p.conv_size}")
    if p.lambda2 < 0 or p.lambda_s < 0:
        raise ConfigurationError("lambda2 and lambda_s must be non-negative")
    if p.agg_mode not in gk.AGG_MODES:
        raise ConfigurationError(f"agg_mode must be one of {gk.AGG_MODES}")


def build_net(p, n_users):
    specs = layer_specs(n_users, p.hidden, p.num_hidden,
                        kernelize_output=p.kernelize_output)
    return KernelNet(specs, p.kernel_dim)


def pretrain(p, R, mask, seed, callbacks=(), theta0=None):
    """Stage one: fit the kernelised autoencoder to the zero-imputed ratings.

    ``p`` is anything carrying the estimator's hyperparameter attributes.
    Returns ``(net, theta, trace)``.
    """
    net = build_net(p, R.shape[1])
    if theta0 is None:
        theta0 = init_params(net, _rng_streams(seed)[0])

    def objective(theta):
        return loss_and_gradient(net, theta, R, mask, p.lambda2, p.lambda_s,
                                 kernel_reg=p.kernel_reg)

    theta, trace = run_epochs(objective, theta0, p.pretrain_epochs, p.maxiter_p,
                              callbacks=callbacks, cfg=LbfgsConfig(history=p.history),
                              reset_memory=p.reset_memory, stage="pretrain")
    return net, theta, trace


def build_finetune_objective(p, net, theta_pre, R, mask, seed):
    """Pool the pre-trained reconstruction and set up the joint parameter vector.

    Returns ``(objective, theta0)``; the bank blocks of ``theta0`` are freshly
    initialised and the network blocks copy ``theta_pre``.
    """
    m = R.shape[0]
    mu = gk.item_avg_pool(net.forward(theta_pre, R), p.rating_range)
    layout = net.layout.extend(gk.bank_blocks(m, p.conv_size, p.conv_layers))
    theta0 = np.zeros(layout.size)
    theta0[:net.layout.size] = theta_pre
    bank_rng = _rng_streams(seed)[1]
    for name in gk.bank_names(p.conv_layers):
        layout.view(theta0, name)[...] = gk.init_bank(m, p.conv_size, bank_rng)
    objective = gk.FineTuneObjective(net, layout, R, mask, mu, p.conv_size, p.conv_layers,
                                     p.agg_mode, p.lambda2, p.lambda_s, p.kernel_reg)
    return objective, theta0


def finetune(p, net, theta_pre, R, mask, seed, callbacks=(), objective=None, theta0=None):
    """Stage two: train the autoencoder and the kernel bank on the convolved ratings.

    Returns ``(objective, theta, mu, trace)``; ``objective`` carries the full
    parameter layout and the pooled summary used for prediction.
    """
    if objective is None:
        objective, theta0 = build_finetune_objective(p, net, theta_pre, R, mask, seed)
    callbacks = list(callbacks)
    if p.refresh_pooling:
        def refresh(epoch, theta, trace):
            objective.mu = gk.item_avg_pool(objective.predict(theta), p.rating_range)
        callbacks.insert(0, refresh)
    theta, trace = run_epochs(objective, theta0, p.finetune_epochs, p.maxiter_f,
                              callbacks=callbacks, cfg=LbfgsConfig(history=p.history),
                              reset_memory=p.reset_memory, stage="finetune")
    return objective, theta, objective.mu, trace


class GLocalK(BaseEstimator):
    """Matrix completion with a locally kernelised autoencoder and a global convolution kernel.

    ``fit`` takes an items x users rating matrix where 0 marks a missing
    rating (or an explicit ``mask``). ``predict`` returns the completed
    matrix clipped to ``rating_range``.

    Parameters
    ----------
    hidden, num_hidden : width and number of sigmoid hidden layers.
    kernel_dim : dimension of the position vectors behind each local kernel.
    conv_size, conv_layers, agg_mode : global convolution kernel size, depth
        and aggregation (``"weighted"`` or ``"elementwise_avg"``).
    lambda2, lambda_s : penalties on the weight matrices (and kernel banks)
        and on the local kernel matrices.
    maxiter_p, maxiter_f : L-BFGS iterations per epoch in each stage.
    pretrain_epochs, finetune_epochs : number of warm-started optimizer runs.
    random_state : integer seed.
    """

    def __init__(self, hidden=500, num_hidden=2, kernel_dim=5, conv_size=3, conv_layers=1,
                 agg_mode="weighted", lambda2=20.0, lambda_s=0.006, maxiter_p=5, maxiter_f=5,
                 pretrain_epochs=30, finetune_epochs=20, kernel_reg="kernel",
                 kernelize_output=True, reset_memory=True, refresh_pooling=False,
                 history=10, rating_range=(RATING_MIN, RATING_MAX), random_state=0):
        self.hidden = hidden
        self.num_hidden = num_hidden
        self.kernel_dim = kernel_dim
        self.conv_size = conv_size
        self.conv_layers = conv_layers
        self.agg_mode = agg_mode
        self.lambda2 = lambda2
        self.lambda_s = lambda_s
        self.maxiter_p = maxiter_p
        self.maxiter_f = maxiter_f
        self.pretrain_epochs = pretrain_epochs
        self.finetune_epochs = finetune_epochs
        self.kernel_reg = kernel_reg
        self.kernelize_output = kernelize_output
        self.reset_memory = reset_memory
        self.refresh_pooling = refresh_pooling
        self.history = history
        self.rating_range = rating_range
        self.random_state = random_state

    def _validate_matrix(self, X, mask=None):
        if isinstance(X, RatingMatrix):
            X, mask = X.dense, X.mask if mask is None else mask
        X = check_array(X, dtype=np.float64)
        if mask is None:
            mask = (X != 0).astype(np.float64)
        else:
            mask = check_array(mask, dtype=np.float64)
            if mask.shape != X.shape:
                raise ValueError(f"mask shape {mask.shape} does not match X {X.shape}")
        return X, mask

    def fit(self, X, y=None, mask=None, eval_set=None, pretrained=None):
        """Run pre-training then fine-tuning.

        ``eval_set`` is an optional ``(items, users, ratings)`` triple scored
        after every epoch; the curve lands in ``history_``. ``pretrained`` is
        an optional ``(net, theta)`` pair that replaces stage one.
        """
        validate_hyperparams(self)
        X, mask = self._validate_matrix(X, mask)
        seed = int(self.random_state or 0)
        self.history_ = {"pretrain": [], "finetune": []}
        self.timings_ = {}

        def recorder(stage, predict):
            def cb(epoch, theta, trace):
                entry = {"epoch": epoch + 1, "loss": trace[-1]["loss"] if trace else None}
                if eval_set is not None:
                    items, users, ratings = eval_set
                    pred = np.clip(predict(theta)[items, users], *self.rating_range)
                    entry["rmse"] = rmse(pred, ratings)
                self.history_[stage].append(entry)
            return cb

        t0 = time.perf_counter()
        if pretrained is None:
            net = build_net(self, X.shape[1])
            cb = recorder("pretrain", lambda th: net.forward(th, X))
            net, theta_pre, trace_p = pretrain(self, X, mask, seed, callbacks=[cb])
        else:
            net, theta_pre = pretrained
            trace_p = []
        t1 = time.perf_counter()
        objective, theta0 = build_finetune_objective(self, net, theta_pre, X, mask, seed)
        cb = recorder("finetune", objective.predict)
        objective, theta, mu, trace_f = finetune(self, net, theta_pre, X, mask, seed,
                                                 callbacks=[cb], objective=objective,
                                                 theta0=theta0)
        t2 = time.perf_counter()

        self._set_fitted(net, objective, theta, theta_pre, X)
        self.trace_ = trace_p + trace_f
        self.timings_ = {"pretrain_s": t1 - t0, "finetune_s": t2 - t1}
        return self

    def _set_fitted(self, net, objective, theta, theta_pre, X):
        self.net_ = net
        self.pretrained_theta_ = theta_pre
        self.theta_ = theta
        self.mu_ = objective.mu
        self.objective_ = objective
        self.layout_ = objective.layout
        self.kernels_ = [gk.aggregate_kernel(self.mu_, b, self.agg_mode)
                         for b in objective.banks(theta)]
        self.X_train_ = X

    @classmethod
    def from_checkpoint(cls, path, X, mask=None, **params):
        """Rebuild a fitted model from a fine-tuning checkpoint and its training matrix."""
        from .kernelnet import load_checkpoint
        model = cls(**params)
        X, mask = model._validate_matrix(X, mask)
        layout, theta, meta = load_checkpoint(path)
        net = build_net(model, X.shape[1])
        full = net.layout.extend(gk.bank_blocks(X.shape[0], model.conv_size, model.conv_layers))
        if layout != full:
            raise ValueError(f"{path}: parameter layout does not match the configuration")
        mu = np.asarray(meta["extra"]["mu"], dtype=np.float64)
        objective = gk.FineTuneObjective(net, full, X, mask, mu, model.conv_size,
                                         model.conv_layers, model.agg_mode, model.lambda2,
                                         model.lambda_s, model.kernel_reg)
        model._set_fitted(net, objective, theta, theta[:net.layout.size].copy(), X)
        model.trace_, model.history_, model.timings_ = [], {}, {}
        return model

    def transform(self, X=None):
        """Return the globally convolved rating matrix fed to the autoencoder."""
        check_is_fitted(self, "theta_")
        X = self.X_train_ if X is None else self._validate_matrix(X)[0]
        xs, _ = gk.transform_stack(X, self.objective_.banks(self.theta_), self.mu_, self.agg_mode)
        return xs[-1]

    def predict(self, X=None):
        """Completed rating matrix for input ``X`` (the training matrix by default)."""
        check_is_fitted(self, "theta_")
        out = self.net_.forward(self.theta_, self.transform(X), self.layout_)
        return np.clip(out, *self.rating_range)

    def predict_pretrained(self, X=None):
        check_is_fitted(self, "theta_")
        X = self.X_train_ if X is None else self._validate_matrix(X)[0]
        return np.clip(self.net_.forward(self.pretrained_theta_, X), *self.rating_range)

    def predict_entries(self, items, users, X=None):
        return self.predict(X)[np.asarray(items), np.asarray(users)]

    def score(self, items, users, ratings, X=None):
        """Negative RMSE on the given entries (higher is better, as sklearn expects)."""
        return -rmse(self.predict_entries(items, users, X), ratings)
