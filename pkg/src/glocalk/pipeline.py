"""Experiment orchestration: datasets, seeded runs, sweeps, reports, gradcheck."""

import csv
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import data as D
from . import globalkernel as gk
from .estimator import GLocalK, _rng_streams, pretrain, rmse
from .kernelnet import (
    KernelNet,
    config_hash,
    init_params,
    layer_specs,
    loss_and_gradient,
    save_checkpoint,
)
from .numkit import ConfigurationError, finite_diff_gradient

logger = logging.getLogger(__name__)

DATASETS = ("ml100k", "ml1m", "triplets")

DATASET_DEFAULTS = {
    "ml100k": dict(lambda2=20.0, lambda_s=0.006, maxiter_p=5, maxiter_f=5,
                   pretrain_epochs=30, finetune_epochs=20, split="canonical"),
    "ml1m": dict(lambda2=70.0, lambda_s=0.018, maxiter_p=50, maxiter_f=10,
                 pretrain_epochs=20, finetune_epochs=10, split="random"),
    "triplets": dict(lambda2=10.0, lambda_s=0.022, maxiter_p=5, maxiter_f=5,
                     pretrain_epochs=20, finetune_epochs=10, split="canonical"),
}

# estimator hyperparameters that ExperimentConfig forwards verbatim
MODEL_FIELDS = ("hidden", "num_hidden", "kernel_dim", "conv_size", "conv_layers", "agg_mode",
                "lambda2", "lambda_s", "maxiter_p", "maxiter_f", "pretrain_epochs",
                "finetune_epochs", "kernel_reg", "kernelize_output", "reset_memory",
                "refresh_pooling", "history")

# fields that do not influence the pre-training stage
FINETUNE_ONLY = ("conv_size", "conv_layers", "agg_mode", "maxiter_f", "finetune_epochs",
                 "refresh_pooling")

KEY_ALIASES = {"h": "hidden", "d": "kernel_dim", "t": "conv_size", "agg": "agg_mode",
               "lambda_2": "lambda2", "lambdas": "lambda_s", "seed_list": "seeds"}


@dataclass
class ExperimentConfig:
    dataset: str = "ml100k"
    data_path: str = ""
    split: str = "canonical"
    test_fraction: float = 0.1
    hidden: int = 500
    num_hidden: int = 2
    kernel_dim: int = 5
    conv_size: int = 3
    conv_layers: int = 1
    agg_mode: str = "weighted"
    lambda2: float = 20.0
    lambda_s: float = 0.006
    maxiter_p: int = 5
    maxiter_f: int = 5
    pretrain_epochs: int = 30
    finetune_epochs: int = 20
    train_ratio: float = 1.0
    seeds: tuple = (0, 1, 2, 3, 4)
    rating_range: tuple = (D.RATING_MIN, D.RATING_MAX)
    kernel_reg: str = "kernel"
    kernelize_output: bool = True
    reset_memory: bool = True
    refresh_pooling: bool = False
    history: int = 10

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.rating_range = tuple(float(r) for r in self.rating_range)
        self.validate()

    def validate(self):
        if self.dataset not in DATASETS:
            raise ConfigurationError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.split not in ("canonical", "random"):
            raise ConfigurationError(f"split must be 'canonical' or 'random', got {self.split!r}")
        if self.agg_mode not in gk.AGG_MODES:
            raise ConfigurationError(f"agg_mode must be one of {gk.AGG_MODES}")
        for name in ("hidden", "num_hidden", "kernel_dim", "conv_size", "conv_layers",
                     "maxiter_p", "maxiter_f", "pretrain_epochs", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.conv_size % 2 == 0:
            raise ConfigurationError(f"conv_size must be odd, got {self.conv_size}")
        if self.lambda2 < 0 or self.lambda_s < 0:
            raise ConfigurationError("regularisation strengths must be non-negative")
        if not 0.0 < self.train_ratio <= 1.0:
            raise ConfigurationError(f"train_ratio must lie in (0, 1], got {self.train_ratio}")
        if not self.seeds:
            raise ConfigurationError("need at least one seed")

    @classmethod
    def for_dataset(cls, dataset, **overrides):
        """Published per-dataset hyperparameters for ``dataset``, then ``overrides`` on top."""
        base = dict(DATASET_DEFAULTS.get(dataset, {}))
        base.update(overrides)
        return cls(dataset=dataset, **base)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    def model_params(self):
        params = {name: getattr(self, name) for name in MODEL_FIELDS}
        params["rating_range"] = self.rating_range
        return params

    def hash(self):
        return config_hash(self.to_dict())

    def pretrain_key(self, seed):
        d = {k: v for k, v in self.to_dict().items() if k not in FINETUNE_ONLY + ("seeds",)}
        return config_hash(d), int(seed)


def _coerce(value, current):
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"not a boolean: {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        parts = [p for p in value.replace(",", " ").split() if p]
        return tuple(parts)
    return value


def normalize_key(key):
    key = key.strip().replace("-", "_").lower()
    return KEY_ALIASES.get(key, key)


def normalize_value(key, value):
    if key == "agg_mode" and value == "avg":
        return "elementwise_avg"
    return value


def parse_config_file(path):
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[normalize_key(key)] = value
    return out


def build_config(dataset, file_values=None, overrides=None):
    """Dataset defaults, then config-file values, then explicit overrides."""
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    dataset = values.pop("dataset", dataset)
    template = ExperimentConfig.for_dataset(dataset)
    kwargs = {}
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, value in values.items():
        key = normalize_key(key)
        if key not in names:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        current = getattr(template, key)
        if isinstance(value, str):
            value = _coerce(normalize_value(key, value), current)
        kwargs[key] = normalize_value(key, value)
    return template.replace(**kwargs)


# data loading ---------------------------------------------------------------

def _data_streams(seed):
    split_ss, sub_ss = np.random.SeedSequence([int(seed), 1]).spawn(2)
    return (np.random.Generator(np.random.PCG64(split_ss)),
            np.random.Generator(np.random.PCG64(sub_ss)))


DEFAULT_DIRS = {"ml100k": "ml-100k", "ml1m": "ml-1m", "triplets": "triplets"}


def resolve_data_path(config):
    """``config.data_path``, or ``$GLOCALK_DATA/<dataset dir>`` (default root ``./data``)."""
    if config.data_path:
        return config.data_path
    return os.path.join(os.environ.get("GLOCALK_DATA", "data"), DEFAULT_DIRS[config.dataset])


def _find(path, *names):
    if os.path.isfile(path):
        return path
    for name in names:
        candidate = os.path.join(path, name)
        if os.path.isfile(candidate):
            return candidate
    raise FileNotFoundError(f"none of {names} found under {path!r}")


def load_full(config):
    """The whole rating set, for ``stats`` and random splits."""
    path, rr = resolve_data_path(config), config.rating_range
    if config.dataset == "ml100k":
        return D.parse_movielens_100k(_find(path, "u.data"), rr)
    if config.dataset == "ml1m":
        return D.parse_movielens_1m(_find(path, "ratings.dat"), rr)
    if os.path.isdir(path):
        train, test = load_canonical(config)
        return D.RatingDataset("triplets", train.triplets + test.triplets)
    return D.parse_triplet_csv(path, rr)


def load_canonical(config):
    path, rr = resolve_data_path(config), config.rating_range
    if config.dataset == "ml100k":
        base = _find(path, "u1.base")
        test = os.path.join(os.path.dirname(base), "u1.test")
        return D.merge_index(D.parse_movielens_100k(base, rr), D.parse_movielens_100k(test, rr))
    if config.dataset == "triplets":
        train = D.parse_triplet_csv(_find(path, "train.csv"), rr)
        test = D.parse_triplet_csv(_find(path, "test.csv"), rr)
        return D.merge_index(train, test)
    raise ConfigurationError("ml1m has no canonical split; use split = random")


def load_split(config, seed):
    """``(train, test)`` for one seed, after any training-ratio subsampling."""
    split_rng, sub_rng = _data_streams(seed)
    if config.split == "canonical" and config.dataset != "ml1m":
        train, test = load_canonical(config)
    else:
        train, test = D.random_split(load_full(config), config.test_fraction, split_rng)
    if config.train_ratio < 1.0:
        train = D.subsample_train(train, config.train_ratio, sub_rng)
    return train, test


# runs -----------------------------------------------------------------------

@dataclass
class EvalReport:
    config: dict
    config_hash: str
    runs: list = field(default_factory=list)
    dataset_stats: dict = field(default_factory=dict)
    failed: bool = False
    error: str = ""

    @property
    def rmses(self):
        return [r["rmse"] for r in self.runs]

    @property
    def mean_rmse(self):
        vals = self.rmses
        return float(sum(vals) / len(vals)) if vals else float("nan")

    @property
    def std_rmse(self):
        return float(np.std(self.rmses)) if self.runs else float("nan")

    def summary_row(self, **extra):
        row = dict(extra)
        row.update(dataset=self.config["dataset"], config_hash=self.config_hash,
                   n_seeds=len(self.runs), mean_rmse=self.mean_rmse, std_rmse=self.std_rmse,
                   rmses=" ".join(f"{v:.6f}" for v in self.rmses), failed=self.failed)
        return row


class PretrainCache:
    """Pre-trained parameters keyed by everything stage one depends on."""

    def __init__(self):
        self._store = {}

    def get(self, key):
        return self._store.get(key)

    def put(self, key, value):
        self._store[key] = value

    def __len__(self):
        return len(self._store)


def evaluate_rmse(model, test, X=None):
    """Test RMSE of a fitted :class:`GLocalK` on ``test`` (a dataset or index triple)."""
    items, users, ratings = test.arrays() if hasattr(test, "arrays") else test
    if len(ratings) == 0:
        raise D.ValidationError("test set is empty")
    return rmse(model.predict_entries(items, users, X), ratings)


def evaluate_checkpoint(config, path, seed):
    """Test RMSE of a saved fine-tuning checkpoint, rebuilding the seed's split."""
    train, test = load_split(config, seed)
    M = D.build_matrix(train, train.n_items, train.n_users)
    model = GLocalK.from_checkpoint(path, M.dense, M.mask, random_state=seed,
                                    **config.model_params())
    return evaluate_rmse(model, test)


def run_seed(config, seed, split=None, pretrained=None, track=True):
    """Fit and score one seed. Returns ``(model, run_record, train, test)``."""
    train, test = split or load_split(config, seed)
    M = D.build_matrix(train, train.n_items, train.n_users)
    eval_set = test.arrays() if track else None
    model = GLocalK(random_state=seed, **config.model_params())
    t0 = time.perf_counter()
    model.fit(M, eval_set=eval_set, pretrained=pretrained)
    score = evaluate_rmse(model, test)
    record = {
        "seed": int(seed),
        "rmse": score,
        "config_hash": config.hash(),
        "train_ratings": len(train),
        "test_ratings": len(test),
        "wall_s": time.perf_counter() - t0,
        "timings": model.timings_,
        "curve": model.history_,
    }
    return model, record, train, test


def _pretrained_for(config, seed, split, cache):
    if cache is None:
        return None
    key = config.pretrain_key(seed)
    hit = cache.get(key)
    if hit is None:
        train, _ = split
        M = D.build_matrix(train, train.n_items, train.n_users)
        probe = GLocalK(random_state=seed, **config.model_params())
        net, theta, trace = pretrain(probe, M.dense, M.mask, seed)
        hit = (net, theta, trace)
        cache.put(key, hit)
    net, theta, _ = hit
    return net, theta


def run_experiment(config, out_dir=None, cache=None, checkpoints=True, track=True):
    """All seeds of one configuration; writes reports when ``out_dir`` is given."""
    report = EvalReport(config.to_dict(), config.hash())
    traces = []
    try:
        for seed in config.seeds:
            split = load_split(config, seed)
            if not report.dataset_stats:
                report.dataset_stats = D.dataset_stats(D.RatingDataset(
                    "all", split[0].triplets + split[1].triplets))
            pre = _pretrained_for(config, seed, split, cache)
            model, record, train, _ = run_seed(config, seed, split, pre, track)
            if pre is not None:
                pre_trace = cache.get(config.pretrain_key(seed))[2]
                model.trace_ = pre_trace + model.trace_
            report.runs.append(record)
            traces.extend(dict(e, seed=int(seed)) for e in model.trace_)
            logger.info("seed %d: rmse %.4f", seed, record["rmse"])
            if out_dir and checkpoints:
                _write_checkpoints(out_dir, config, seed, model)
                _write_index_map(out_dir, train)
    except Exception as exc:
        report.failed = True
        report.error = f"{type(exc).__name__}: {exc}"
        logger.error("run aborted: %s", report.error)
        if out_dir:
            write_report(report, out_dir, traces)
        raise
    if out_dir:
        write_report(report, out_dir, traces)
    return report


def _write_checkpoints(out_dir, config, seed, model):
    os.makedirs(out_dir, exist_ok=True)
    h = config.hash()
    save_checkpoint(os.path.join(out_dir, f"pretrain_seed{seed}.ckpt"), model.net_.layout,
                    model.pretrained_theta_, h, "pretrain")
    save_checkpoint(os.path.join(out_dir, f"finetune_seed{seed}.ckpt"), model.layout_,
                    model.theta_, h, "finetune", extra={"mu": model.mu_.tolist()})


def _write_index_map(out_dir, ds):
    path = os.path.join(out_dir, "index_map.json")
    with open(path, "w") as fh:
        json.dump({"users": {str(k): v for k, v in ds.user_index.items()},
                   "items": {str(k): v for k, v in ds.item_index.items()}}, fh)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def write_report(report, out_dir, traces=(), summary_rows=None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.jsonl"), "w") as fh:
        for run in report.runs:
            fh.write(json.dumps(run, default=_json_default) + "\n")
        if report.failed:
            fh.write(json.dumps({"failed": True, "error": report.error,
                                 "config_hash": report.config_hash}) + "\n")
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump({"config": report.config, "config_hash": report.config_hash,
                   "dataset_stats": report.dataset_stats}, fh, indent=2, default=_json_default)
    if traces:
        write_trace(traces, os.path.join(out_dir, "trace.jsonl"))
    write_summary(summary_rows or [report.summary_row()], os.path.join(out_dir, "summary.csv"))


TRACE_FIELDS = ("stage", "epoch", "iter", "loss", "grad_norm", "step", "phi0", "dphi0", "dphi",
                "n_evals", "wall_ms")


def write_trace(traces, path):
    with open(path, "w") as fh:
        for e in traces:
            rec = {k: e[k] for k in TRACE_FIELDS}
            rec["flag"] = e.get("flag")
            if e.get("seed") is not None:
                rec["seed"] = e["seed"]
            fh.write(json.dumps(rec, default=_json_default) + "\n")


def write_summary(rows, path):
    keys = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


# sweeps ---------------------------------------------------------------------

def sweep_pretrain_epochs(config, epoch_list=(0, 10, 20, 30, 40, 50, 60), out_dir=None):
    """RMSE as a function of the number of pre-training epochs.

    With per-epoch memory resets a run of ``k`` epochs is a prefix of a run of
    ``K > k`` epochs, so each seed pre-trains once and snapshots along the way.
    """
    epoch_list = sorted(set(int(e) for e in epoch_list))
    reports = {e: EvalReport(config.replace(pretrain_epochs=e).to_dict(),
                             config.replace(pretrain_epochs=e).hash()) for e in epoch_list}
    for seed in config.seeds:
        split = load_split(config, seed)
        train = split[0]
        M = D.build_matrix(train, train.n_items, train.n_users)
        if config.reset_memory:
            snaps = {}
            probe = GLocalK(random_state=seed, **config.replace(
                pretrain_epochs=max(epoch_list)).model_params())
            net = KernelNet(layer_specs(M.n_users, config.hidden, config.num_hidden,
                                        kernelize_output=config.kernelize_output),
                            config.kernel_dim)
            if 0 in epoch_list:
                snaps[0] = init_params(net, _rng_streams(seed)[0])

            def snap(epoch, theta, trace):
                if epoch + 1 in epoch_list:
                    snaps[epoch + 1] = theta.copy()

            net, _, _ = pretrain(probe, M.dense, M.mask, seed, callbacks=[snap])
        for e in epoch_list:
            cfg = config.replace(pretrain_epochs=e)
            pre = (net, snaps[e]) if config.reset_memory else None
            _, record, _, _ = run_seed(cfg, seed, split, pre, track=False)
            record["pretrain_epochs"] = e
            reports[e].runs.append(record)
            logger.info("seed %d, %d pre-training epochs: rmse %.4f", seed, e, record["rmse"])
    rows = [reports[e].summary_row(pretrain_epochs=e) for e in epoch_list]
    if out_dir:
        _write_sweep(out_dir, [reports[e] for e in epoch_list], rows)
    return reports


def sweep_train_ratio(config, ratios=(0.2, 0.4, 0.6, 0.8, 1.0), out_dir=None):
    reports = {}
    for r in ratios:
        cfg = config.replace(train_ratio=float(r))
        reports[float(r)] = run_experiment(cfg, checkpoints=False, track=False)
        logger.info("train ratio %.2f: mean rmse %.4f", r, reports[float(r)].mean_rmse)
    rows = [rep.summary_row(train_ratio=r) for r, rep in reports.items()]
    if out_dir:
        _write_sweep(out_dir, list(reports.values()), rows)
    return reports


def global_kernel_grid(sizes=(3, 5, 7), layers=(1, 2, 3), aggs=("weighted", "elementwise_avg"),
                       full=False):
    """Cells as ``(conv_size, conv_layers, agg_mode)``.

    By default one factor varies at a time around ``(3, 1, weighted)``;
    ``full`` gives the Cartesian product.
    """
    if full:
        return [(t, c, a) for t in sizes for c in layers for a in aggs]
    base = (sizes[0], layers[0], aggs[0])
    cells = [base]
    cells += [(t, base[1], base[2]) for t in sizes[1:]]
    cells += [(base[0], c, base[2]) for c in layers[1:]]
    cells += [(base[0], base[1], a) for a in aggs[1:]]
    return cells


def sweep_global_kernel(config, cells=None, out_dir=None, cache=None):
    """Fine-tuning variants over kernel size, depth and aggregation.

    Pre-training does not depend on any of these, so it is shared per seed.
    """
    cells = cells or global_kernel_grid()
    cache = cache if cache is not None else PretrainCache()
    reports = {}
    for t, c, a in cells:
        cfg = config.replace(conv_size=t, conv_layers=c, agg_mode=a)
        reports[(t, c, a)] = run_experiment(cfg, cache=cache, checkpoints=False, track=False)
        logger.info("t=%d layers=%d agg=%s: mean rmse %.4f", t, c, a,
                    reports[(t, c, a)].mean_rmse)
    rows = [rep.summary_row(conv_size=t, conv_layers=c, agg_mode=a)
            for (t, c, a), rep in reports.items()]
    if out_dir:
        _write_sweep(out_dir, list(reports.values()), rows)
    return reports


def _write_sweep(out_dir, reports, rows):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.jsonl"), "w") as fh:
        for rep in reports:
            for run in rep.runs:
                fh.write(json.dumps(dict(run, config_hash=rep.config_hash),
                                    default=_json_default) + "\n")
    write_summary(rows, os.path.join(out_dir, "summary.csv"))


# gradient check -------------------------------------------------------------

@dataclass
class GradcheckReport:
    passed: bool
    max_rel_error: float
    blocks: dict
    worst: list
    n_checked: int
    n_skipped: int

    def lines(self):
        out = [f"{'PASS' if self.passed else 'FAIL'} max relative error {self.max_rel_error:.3e} "
               f"({self.n_checked} coordinates, {self.n_skipped} near a hinge kink skipped)"]
        for name, err in self.blocks.items():
            out.append(f"  {name:<14s} {err:.3e}")
        if not self.passed:
            for name, idx, a, f in self.worst:
                out.append(f"  worst: {name}[{idx}] analytic={a:.6e} numeric={f:.6e}")
        return out


def kink_distance(net, theta, layout, eps):
    """Per-parameter flag: True where a central-difference probe could cross a hinge kink."""
    near = np.zeros(layout.size, dtype=bool)
    for l, layer in enumerate(net.layers(theta, layout)):
        if not layer.kernelized:
            continue
        U, V = layer.U, layer.V
        diff = V[:, None, :] - U[None, :, :]
        Dm = np.sum(diff ** 2, axis=-1)
        # |dD/dcoord| = 2 |diff|; a probe moves D by at most that times eps (plus eps^2)
        reach = 2.0 * np.abs(diff) * eps + eps * eps + 1e-6
        close = np.abs(Dm - 1.0)[:, :, None] <= reach
        layout.view(near, f"layer{l}.V")[...] |= close.any(axis=1)
        layout.view(near, f"layer{l}.U")[...] |= close.any(axis=0)
    return near


def check_gradient(f_and_grad, theta, layout, eps=1e-5, tol=1e-4, skip=None):
    """Compare the analytic gradient of ``f_and_grad`` with central differences.

    Relative error is ``|a - f| / max(|a|, |f|, 1e-3 * max(1, max|a|))``; the
    floor keeps cancellation noise on near-zero entries from dominating.
    """
    _, g = f_and_grad(theta)
    num = finite_diff_gradient(lambda x: f_and_grad(x)[0], theta, eps)
    floor = 1e-3 * max(1.0, float(np.max(np.abs(g))))
    rel = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), floor)
    skip = np.zeros(theta.size, dtype=bool) if skip is None else skip
    rel = np.where(skip, 0.0, rel)
    blocks = {}
    for name, _ in layout.blocks:
        sl = layout.slice_of(name)
        blocks[name] = float(rel[sl].max()) if rel[sl].size else 0.0
    order = np.argsort(rel)[::-1][:5]
    worst = []
    for i in order:
        for name, _ in layout.blocks:
            sl = layout.slice_of(name)
            if sl.start <= i < sl.stop:
                worst.append((name, int(i - sl.start), float(g[i]), float(num[i])))
                break
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradcheckReport(max_rel <= tol, max_rel, blocks, worst,
                           int((~skip).sum()), int(skip.sum()))


def random_instance(rng, m=6, n=4, hidden=3, num_hidden=1, d=2, t=3, conv_layers=1,
                    density=0.6, agg_mode="weighted", kernel_reg="kernel"):
    """A small random fine-tuning problem: ``(net, pre_objective, ft_objective, theta)``."""
    R = rng.integers(1, 6, size=(m, n)).astype(np.float64)
    mask = (rng.random((m, n)) < density).astype(np.float64)
    R *= mask
    net = KernelNet(layer_specs(n, hidden, num_hidden), d)
    # positions spread enough that some kernel entries are exactly zero
    theta_net = init_params(net, rng, position_std=0.35)
    for l in range(len(net.specs)):
        net.layout.view(theta_net, f"layer{l}.b")[...] = rng.normal(0, 0.1, net.specs[l].n_out)
    lambda2, lambda_s = rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0)
    mu = gk.item_avg_pool(net.forward(theta_net, R))
    layout = net.layout.extend(gk.bank_blocks(m, t, conv_layers))
    theta = np.zeros(layout.size)
    theta[:net.layout.size] = theta_net
    for name in gk.bank_names(conv_layers):
        layout.view(theta, name)[...] = rng.normal(0.0, 0.3, size=(m, t * t))

    def pre_objective(x):
        return loss_and_gradient(net, x, R, mask, lambda2, lambda_s, kernel_reg=kernel_reg)

    ft = gk.FineTuneObjective(net, layout, R, mask, mu, t, conv_layers, agg_mode,
                              lambda2, lambda_s, kernel_reg)
    return net, pre_objective, ft, theta_net, theta


def gradcheck_command(draws=20, seed=0, eps=1e-5, tol=1e-4, sizes=None):
    """Gradient check of both training objectives on ``draws`` random small instances."""
    rng = np.random.Generator(np.random.PCG64(seed))
    sizes = sizes or {}
    results = []
    for k in range(draws):
        conv_layers = 1 + k % 2
        agg = "weighted" if k % 3 else "elementwise_avg"
        net, pre, ft, theta_net, theta = random_instance(
            rng, conv_layers=conv_layers, agg_mode=agg,
            kernel_reg="kernel" if k % 4 else "positions", **sizes)
        skip_net = kink_distance(net, theta_net, net.layout, eps)
        skip_ft = np.concatenate([skip_net, np.zeros(theta.size - theta_net.size, bool)])
        results.append(("pretrain", k, check_gradient(pre, theta_net, net.layout, eps, tol,
                                                      skip_net)))
        results.append(("finetune", k, check_gradient(ft, theta, ft.layout, eps, tol, skip_ft)))
    return results
