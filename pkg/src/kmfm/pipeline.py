"""End-to-end runs: twin networks -> latent codes -> locality preserving projection -> K-means.

``run_kmfm`` is the single-configuration entry point; the sweep and benchmark
helpers reuse a fitted :class:`FeatureModel` wherever only the last stages vary.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .clustering import KMeansConfig, kmeans
from .config import PipelineConfig
from .dataset import MixedDataset, MixedSchema, infer_schema, load_csv, split_indices, SplitSpec
from .embedding import (
    KernelSpec,
    LppSolution,
    build_kernel,
    concat_latents,
    degree_vector,
    locality_penalty,
    project,
    solve_lpp,
)
from .errors import BadL, ConfigError, DegenerateInput, KmfmError, NumericalError
from .metrics import nmi, rand_index
from .neuralnet import (
    LossHistory,
    MseNumerical,
    NetworkSpec,
    SoftmaxCategorical,
    TrainConfig,
    backward,
    encode_all,
    flat_grads,
    forward,
    init_network,
    layer_widths,
    net_from_arrays,
    net_to_arrays,
    train,
)
from .uci import TABLES, load_uci

log = logging.getLogger(__name__)

RUN_FORMAT = "kmfm-run"
RUN_VERSION = 1

# Published reference values: (kappa_num, kappa_cat, L, RI, NMI) chosen per dataset.
TABLE1 = {
    "heart": (5, 7, 30, 0.7162, 0.3454),
    "credit": (3, 5, 79, 0.7034, 0.3389),
    "german": (4, 4, 14, 0.5501, 0.0218),
    "adult": (5, 6, 90, 0.6202, 0.0924),
}
# Published KMFM column of the method comparison (RI, NMI).
TABLE4_KMFM = {
    "heart": (0.7162, 0.3454),
    "credit": (0.7034, 0.3389),
    "german": (0.5501, 0.0218),
    "adult": (0.6202, 0.0920),
}


class LClampWarning(UserWarning):
    """Requested L exceeded the embedding dimension and was reduced."""


def derive_seed(master_seed: int, label: str) -> int:
    """Deterministic 32-bit sub-seed for a named consumer of randomness."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode())])
    return int(ss.generate_state(1, np.uint32)[0])


SEED_LABELS = ("split", "net_num.init", "net_cat.init", "net_num.shuffle", "net_cat.shuffle", "kmeans")


def derive_seeds(master_seed: int) -> dict:
    return {label: derive_seed(master_seed, label) for label in SEED_LABELS}


# ------------------------------------------------------------------ data

def load_dataset(cfg: PipelineConfig) -> MixedDataset:
    d = cfg.data
    if d.dataset:
        if d.dataset not in TABLES:
            raise ConfigError(f"unknown dataset {d.dataset!r}")
        return load_uci(d.dataset, d.cache_dir, missing_policy=d.missing_policy)
    if not d.path:
        raise ConfigError("config needs data.dataset or data.path")
    if isinstance(d.categorical, dict):
        schema = MixedSchema.build(d.numerical, d.categorical)
    else:
        schema = infer_schema(d.path, d.numerical, d.categorical)
    return load_csv(d.path, schema, missing_policy=d.missing_policy, label_column=d.label or None)


# ------------------------------------------------------------------ model

def _train_config(sec, seed: int, n_train: int) -> TrainConfig:
    return TrainConfig(
        epochs=sec.epochs,
        batch_size=min(sec.batch_size, n_train),
        learning_rate=sec.learning_rate,
        optimizer=sec.optimizer,
        momentum=sec.momentum,
        beta1=sec.beta1,
        beta2=sec.beta2,
        eps=sec.eps,
        shuffle_seed=seed,
    )


def network_specs(cfg: PipelineConfig, schema: MixedSchema, seeds: dict):
    if schema.p1 < 2 or schema.p2 < 2:
        raise ConfigError("mixed data needs at least 2 numerical columns and 2 dummy columns")
    net = cfg.network
    blocks = tuple(c.m for c in schema.categorical) if net.blockwise_softmax else None
    spec_num = NetworkSpec(layer_widths(schema.p1, net.kappa_num, net.latent_num),
                           SoftmaxCategorical(schema.p2, blocks), net.use_bias, seeds["net_num.init"])
    spec_cat = NetworkSpec(layer_widths(schema.p2, net.kappa_cat, net.latent_cat),
                           MseNumerical(schema.p1), net.use_bias, seeds["net_cat.init"])
    return spec_num, spec_cat


@dataclass
class FeatureModel:
    """Everything needed to map encoded rows to final features."""

    net_num: object
    net_cat: object
    keep: np.ndarray  # latent coordinates that survive dead-unit pruning
    lpp: LppSolution  # full spectrum; truncate for a given L
    kernel: KernelSpec

    @property
    def dim(self) -> int:
        return int(self.keep.sum())

    def embedding(self, dataset: MixedDataset) -> np.ndarray:
        y_num = encode_all(self.net_num, dataset.numerical)
        y_cat = encode_all(self.net_cat, dataset.categorical)
        return concat_latents(y_num, y_cat).W[self.keep]

    def features(self, dataset: MixedDataset, L: int, W: Optional[np.ndarray] = None) -> np.ndarray:
        if W is None:
            W = self.embedding(dataset)
        return project(self.lpp.truncate(L).V, W)


def live_units(W: np.ndarray, min_active: float = 0.0) -> np.ndarray:
    """Mask of latent units that fire on more than ``min_active`` of the samples
    (and on at least one). Rarely active ReLU units become isolated outlier
    coordinates once the projection is normalized."""
    active = np.count_nonzero(W > 0.0, axis=1)
    keep = (active > 0) & (active >= min_active * W.shape[1])
    if not keep.any():
        raise NumericalError("no latent unit is active on enough samples")
    return keep


def resolve_L(requested: Optional[int], dim: int, k: int = 2) -> int:
    """Requested L, clamped to the embedding dimension; unset means one direction per cluster."""
    if requested is None:
        return min(k, dim)
    if requested > dim:
        warnings.warn(f"L={requested} exceeds embedding dimension {dim}; using {dim}", LClampWarning,
                      stacklevel=3)
        return dim
    return int(requested)


def kernel_spec_for(cfg: PipelineConfig, n: int) -> KernelSpec:
    k = cfg.kernel
    knn = k.knn if k.knn is not None else (50 if n > k.dense_limit else None)
    return KernelSpec(k.degree, k.offset, k.row_normalize, knn)


def _objective_terms(model: FeatureModel, dataset: MixedDataset, W, S, L: int, cfg: PipelineConfig):
    _, out_num, _ = forward(model.net_num, dataset.numerical)
    _, out_cat, _ = forward(model.net_cat, dataset.categorical)
    j1 = float(np.sum(model.net_num.head.loss(out_num, dataset.categorical)))
    j2 = float(np.mean(model.net_cat.head.loss(out_cat, dataset.numerical)))
    p = locality_penalty(model.lpp.truncate(L).V, W, S)
    a, b = cfg.objective.alpha, cfg.objective.beta
    return j1, j2, p, a * j1 + (1 - a) * j2 + b * p


@dataclass
class Fit:
    model: FeatureModel
    W: np.ndarray
    S: object
    L: int
    histories: dict
    timings: dict
    rounds: list = field(default_factory=list)
    converged: Optional[bool] = None
    layer_dims: dict = field(default_factory=dict)
    latent_dim: int = 0


def _solve(W_full, S, cfg: PipelineConfig):
    keep = live_units(W_full, cfg.lpp.min_active)
    W = W_full[keep]
    return keep, W, solve_lpp(W, S, W.shape[0], cfg.lpp.ridge)


def fit_feature_model(cfg: PipelineConfig, dataset: MixedDataset, seeds: dict) -> Fit:
    """Train both networks, build the kernel, and solve the projection (full spectrum)."""
    timings = {}
    spec_num, spec_cat = network_specs(cfg, dataset.schema, seeds)
    tr, va = split_indices(dataset.n, SplitSpec(cfg.train.train_fraction, seeds["split"]))
    xn, xc = dataset.numerical, dataset.categorical

    t0 = time.perf_counter()
    net_num, hist_num = train(init_network(spec_num), (xn[tr], xc[tr]), (xn[va], xc[va]),
                              _train_config(cfg.train_for("num"), seeds["net_num.shuffle"], len(tr)))
    timings["train_num"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    net_cat, hist_cat = train(init_network(spec_cat), (xc[tr], xn[tr]), (xc[va], xn[va]),
                              _train_config(cfg.train_for("cat"), seeds["net_cat.shuffle"], len(tr)))
    timings["train_cat"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    kspec = kernel_spec_for(cfg, dataset.n)
    S = build_kernel(dataset.encoded, kspec)
    timings["kernel"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    W_full = concat_latents(encode_all(net_num, xn), encode_all(net_cat, xc)).W
    keep, W, lpp = _solve(W_full, S, cfg)
    timings["lpp"] = time.perf_counter() - t0
    model = FeatureModel(net_num, net_cat, keep, lpp, kspec)
    fit = Fit(model, W, S, resolve_L(cfg.lpp.L, model.dim, cfg.kmeans.k),
              {"num": hist_num, "cat": hist_cat}, timings,
              layer_dims={"num": list(spec_num.layer_dims), "cat": list(spec_cat.layer_dims)},
              latent_dim=W_full.shape[0])
    if cfg.objective.mode == "alternating":
        t0 = time.perf_counter()
        _alternate(cfg, dataset, fit)
        timings["alternating"] = time.perf_counter() - t0
    return fit


def _alternate(cfg: PipelineConfig, dataset: MixedDataset, fit: Fit) -> None:
    """Outer rounds of (network steps on the combined objective with V fixed, re-solve V)."""
    obj = cfg.objective
    a, b = obj.alpha, obj.beta
    n = dataset.n
    xn, xc = dataset.numerical, dataset.categorical
    model = fit.model
    net_num, net_cat = model.net_num.copy(), model.net_cat.copy()
    opt_num = _train_config(cfg.train_for("num"), 0, n).make_optimizer()
    opt_cat = _train_config(cfg.train_for("cat"), 0, n).make_optimizer()
    lam = degree_vector(fit.S)
    d_cat = net_cat.latent_dim
    prev = _objective_terms(model, dataset, fit.W, fit.S, fit.L, cfg)[3]
    fit.rounds.append(prev)
    fit.converged = False
    for _ in range(obj.outer_rounds):
        V = model.lpp.truncate(fit.L).V
        keep = model.keep
        for _ in range(obj.inner_epochs):
            lat_num, out_num, c_num = forward(net_num, xn)
            lat_cat, out_cat, c_cat = forward(net_cat, xc)
            W = np.vstack([lat_cat.T, lat_num.T])[keep]
            phi = W.T @ V
            g_phi = 4.0 * (lam[:, None] * phi - np.asarray(fit.S @ phi))
            g_w = np.zeros((n, keep.size))
            g_w[:, keep] = g_phi @ V.T
            g_num = flat_grads(backward(net_num, c_num, a * net_num.head.grad(out_num, xc),
                                        b * g_w[:, d_cat:]))
            g_cat = flat_grads(backward(net_cat, c_cat, (1 - a) / n * net_cat.head.grad(out_cat, xn),
                                        b * g_w[:, :d_cat]))
            opt_num.step(net_num.parameters(), g_num)
            opt_cat.step(net_cat.parameters(), g_cat)
            net_num.version += 1
            net_cat.version += 1
        W_full = concat_latents(encode_all(net_num, xn), encode_all(net_cat, xc)).W
        keep, W, lpp = _solve(W_full, fit.S, cfg)
        model = FeatureModel(net_num.copy(), net_cat.copy(), keep, lpp, model.kernel)
        L = resolve_L(cfg.lpp.L, model.dim, cfg.kmeans.k)
        cur = _objective_terms(model, dataset, W, fit.S, L, cfg)[3]
        fit.model, fit.W, fit.L = model, W, L
        fit.rounds.append(cur)
        if not math.isfinite(cur):
            raise NumericalError("combined objective became non-finite")
        if abs(prev - cur) <= obj.rel_tol * max(abs(prev), 1e-300):
            fit.converged = True
            break
        prev = cur
    if not fit.converged:
        warnings.warn(f"alternating optimization hit the {obj.outer_rounds}-round cap", RuntimeWarning,
                      stacklevel=2)


# ------------------------------------------------------------------ report

@dataclass
class RunReport:
    dataset: str
    n: int
    p1: int
    p2: int
    mode: str
    master_seed: int
    seeds: dict
    config: dict
    layer_dims: dict
    latent_dim: int
    pruned: int
    L_requested: Optional[int]
    L_effective: int
    k: int
    eigenvalues: list
    J1: float
    J2: float
    P: float
    objective: float
    RI: Optional[float]
    NMI: Optional[float]
    inertia: float
    histories: dict
    timings: dict
    rounds: list = field(default_factory=list)
    converged: Optional[bool] = None
    labels: Optional[np.ndarray] = field(default=None, repr=False)
    fit: Optional[Fit] = field(default=None, repr=False)

    def metrics_row(self) -> dict:
        return {
            "dataset": self.dataset, "master_seed": self.master_seed, "mode": self.mode,
            "n": self.n, "k": self.k, "L_requested": self.L_requested, "L_effective": self.L_effective,
            "RI": self.RI, "NMI": self.NMI, "J1": self.J1, "J2": self.J2, "P": self.P,
            "objective": self.objective, "inertia": self.inertia,
        }

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "dataset", "n", "p1", "p2", "mode", "master_seed", "seeds", "config", "layer_dims",
            "latent_dim", "pruned", "L_requested", "L_effective", "k", "eigenvalues", "J1", "J2",
            "P", "objective", "RI", "NMI", "inertia", "timings", "rounds", "converged")}
        d["histories"] = {k: h.to_dict() for k, h in self.histories.items()}
        d["labels"] = None if self.labels is None else [int(x) for x in self.labels]
        d["format"] = RUN_FORMAT
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        d.pop("format", None)
        d["histories"] = {k: LossHistory.from_dict(h) for k, h in d["histories"].items()}
        if d.get("labels") is not None:
            d["labels"] = np.array(d["labels"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _score(labels, truth):
    if truth is None:
        return None, None
    return rand_index(labels, truth), nmi(labels, truth)


def evaluate(fit: Fit, dataset: MixedDataset, L: int, k: int, kmeans_seed: int, cfg: PipelineConfig):
    """K-means on the first ``L`` projected coordinates; truth labels only reach the metrics."""
    phi = fit.model.features(dataset, L, fit.W)
    km = kmeans(phi, KMeansConfig(k, cfg.kmeans.restarts, cfg.kmeans.max_iters, cfg.kmeans.tol,
                                  kmeans_seed))
    ri, mi = _score(km.labels, dataset.truth_labels)
    return km, ri, mi


def run_kmfm(cfg: PipelineConfig, dataset: Optional[MixedDataset] = None) -> RunReport:
    """Fit the feature map for one configuration, cluster it, and score it."""
    seeds = derive_seeds(cfg.run.master_seed)
    if dataset is None:
        dataset = load_dataset(cfg)
    if cfg.kmeans.k > dataset.n:
        raise DegenerateInput(f"k={cfg.kmeans.k} exceeds n={dataset.n}")
    fit = fit_feature_model(cfg, dataset, seeds)
    t0 = time.perf_counter()
    km, ri, mi = evaluate(fit, dataset, fit.L, cfg.kmeans.k, seeds["kmeans"], cfg)
    fit.timings["kmeans"] = time.perf_counter() - t0
    j1, j2, p, total = _objective_terms(fit.model, dataset, fit.W, fit.S, fit.L, cfg)
    return RunReport(
        dataset=dataset.name, n=dataset.n, p1=dataset.schema.p1, p2=dataset.schema.p2,
        mode=cfg.objective.mode, master_seed=cfg.run.master_seed, seeds=seeds, config=cfg.to_dict(),
        layer_dims=fit.layer_dims, latent_dim=fit.latent_dim,
        pruned=int(fit.latent_dim - fit.model.dim), L_requested=cfg.lpp.L, L_effective=fit.L,
        k=cfg.kmeans.k, eigenvalues=[float(x) for x in fit.model.lpp.eigenvalues[:fit.L]],
        J1=j1, J2=j2, P=p, objective=total, RI=ri, NMI=mi, inertia=km.inertia,
        histories=fit.histories, timings=fit.timings, rounds=fit.rounds, converged=fit.converged,
        labels=km.labels, fit=fit,
    )


# ------------------------------------------------------------------ sweeps

def sweep_feature_dim(cfg: PipelineConfig, L_values, dataset: Optional[MixedDataset] = None):
    """RI/NMI per requested L from one fitted model (only the eigenvector count varies)."""
    if not L_values:
        raise BadL("no L values given")
    if any(int(L) < 1 for L in L_values):
        raise BadL("L values must be >= 1")
    seeds = derive_seeds(cfg.run.master_seed)
    dataset = dataset if dataset is not None else load_dataset(cfg)
    fit = fit_feature_model(cfg, dataset, seeds)
    rows = []
    for L in L_values:
        L_eff = resolve_L(int(L), fit.model.dim)
        _, ri, mi = evaluate(fit, dataset, L_eff, cfg.kmeans.k, seeds["kmeans"], cfg)
        rows.append({"L": int(L), "L_effective": L_eff, "RI": ri, "NMI": mi})
    return rows


def sweep_clusters(cfg: PipelineConfig, k_values, dataset: Optional[MixedDataset] = None):
    """RI/NMI per cluster count on one fixed feature map."""
    seeds = derive_seeds(cfg.run.master_seed)
    dataset = dataset if dataset is not None else load_dataset(cfg)
    if not k_values or max(k_values) > dataset.n or min(k_values) < 1:
        raise DegenerateInput(f"cluster counts must lie in 1..{dataset.n}")
    fit = fit_feature_model(cfg, dataset, seeds)
    rows = []
    for k in k_values:
        _, ri, mi = evaluate(fit, dataset, fit.L, int(k), seeds["kmeans"], cfg)
        rows.append({"k": int(k), "RI": ri, "NMI": mi})
    return rows


# extra widths picked by looking at benchmark labels
TABLE1_TUNED = {"heart": {"network.latent_cat": 4}}


def table1_config(name: str, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """Config with the published per-dataset layer counts and L as defaults."""
    from .config import load_config

    base_d = base.to_dict() if base is not None else load_config().to_dict()
    kn, kc, L, _, _ = TABLE1[name]
    base_d["data"]["dataset"] = name
    base_d["network"]["kappa_num"] = kn
    base_d["network"]["kappa_cat"] = kc
    base_d["lpp"]["L"] = L
    base_d["run"]["label_tuned"] = True
    for key, val in TABLE1_TUNED.get(name, {}).items():
        sec, field = key.split(".")
        if base_d[sec][field] is None:
            base_d[sec][field] = val
    return PipelineConfig.from_dict(base_d)


BENCH_COLUMNS = ("dataset", "kappa_num", "kappa_cat", "L_requested", "L_effective", "n",
                 "KMFM_RI", "KMFM_NMI", "paper_KMFM_RI", "paper_KMFM_NMI",
                 "paper_table1_RI", "paper_table1_NMI", "label_tuned", "note")


def benchmark(dataset_names, config_overrides=(), base: Optional[PipelineConfig] = None):
    """One computed KMFM row per dataset next to the published values (marked ``paper_``)."""
    from .config import apply_overrides

    rows, reports = [], []
    for name in dataset_names:
        if name not in TABLE1:
            raise ConfigError(f"unknown dataset {name!r}")
        cfg = table1_config(name, base)
        cfg = PipelineConfig.from_dict(apply_overrides(cfg.to_dict(), config_overrides))
        rep = run_kmfm(cfg)
        reports.append(rep)
        kn, kc, L, ri1, nmi1 = TABLE1[name]
        ri4, nmi4 = TABLE4_KMFM[name]
        note = "paper-reported values are copied, not computed"
        if nmi1 != nmi4:
            note += f"; published NMI differs between tables ({nmi1} vs {nmi4})"
        rows.append({
            "dataset": name, "kappa_num": cfg.network.kappa_num, "kappa_cat": cfg.network.kappa_cat,
            "L_requested": cfg.lpp.L, "L_effective": rep.L_effective, "n": rep.n,
            "KMFM_RI": rep.RI, "KMFM_NMI": rep.NMI,
            "paper_KMFM_RI": ri4, "paper_KMFM_NMI": nmi4,
            "paper_table1_RI": ri1, "paper_table1_NMI": nmi1,
            "label_tuned": cfg.run.label_tuned, "note": note,
        })
    return rows, reports


# ------------------------------------------------------------------ outputs

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows, path=None, columns=None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    return text


CURVE_FILES = {"num": "loss_num_to_cat.csv", "cat": "loss_cat_to_num.csv"}


def emit_loss_curves(report: RunReport, out_path) -> list:
    """One CSV per network with columns epoch, train_loss, validation_loss."""
    out = Path(out_path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for key, fname in CURVE_FILES.items():
            rows = [{"epoch": e, "train_loss": t, "validation_loss": v}
                    for e, t, v in report.histories[key].rows()]
            p = out / fname
            rows_to_csv(rows, p, ("epoch", "train_loss", "validation_loss"))
            paths.append(p)
    except OSError as exc:
        raise KmfmError(f"cannot write loss curves to {out}: {exc}") from exc
    return paths


def save_checkpoint(model: FeatureModel, path, meta: Optional[dict] = None) -> None:
    """Both networks, the kept-unit mask and the full projection in one ``.npz``.
    The kernel matrix is not stored."""
    header = {
        "format": RUN_FORMAT, "version": RUN_VERSION,
        "spec_num": model.net_num.spec.to_dict(), "spec_cat": model.net_cat.spec.to_dict(),
        "kernel": model.kernel.to_dict(), "ridge": model.lpp.ridge, "meta": meta or {},
    }
    arrays = {**net_to_arrays(model.net_num, "num_"), **net_to_arrays(model.net_cat, "cat_")}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), keep=model.keep,
                 V=model.lpp.V, eigenvalues=model.lpp.eigenvalues, degrees=np.zeros(0), **arrays)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != RUN_FORMAT or header.get("version") != RUN_VERSION:
            raise ConfigError(f"{path} is not a version-{RUN_VERSION} run checkpoint")
        net_num = net_from_arrays(NetworkSpec.from_dict(header["spec_num"]), z, "num_")
        net_cat = net_from_arrays(NetworkSpec.from_dict(header["spec_cat"]), z, "cat_")
        lpp = LppSolution(np.array(z["V"]), np.array(z["eigenvalues"]), None, np.zeros(0),
                          header["ridge"])
        model = FeatureModel(net_num, net_cat, np.array(z["keep"]), lpp, KernelSpec(**header["kernel"]))
    return model, header["meta"]


def replay(checkpoint_path, dataset: MixedDataset):
    """Recompute features, clusters and scores from a saved checkpoint."""
    model, meta = load_checkpoint(checkpoint_path)
    cfg = PipelineConfig.from_dict(meta["config"])
    phi = model.features(dataset, meta["L_effective"])
    km = kmeans(phi, KMeansConfig(meta["k"], cfg.kmeans.restarts, cfg.kmeans.max_iters, cfg.kmeans.tol,
                                  meta["seeds"]["kmeans"]))
    ri, mi = _score(km.labels, dataset.truth_labels)
    return km, ri, mi


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_run(report: RunReport, out_dir, extra_manifest: Optional[dict] = None) -> dict:
    """Write metrics.csv, report.json, loss curves, checkpoint.npz and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["metrics"] = out / "metrics.csv"
    rows_to_csv([report.metrics_row()], files["metrics"])
    files["report"] = out / "report.json"
    files["report"].write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")
    for key, p in zip(CURVE_FILES, emit_loss_curves(report, out)):
        files[f"loss_{key}"] = p
    if report.fit is not None:
        files["checkpoint"] = out / "checkpoint.npz"
        save_checkpoint(report.fit.model, files["checkpoint"], {
            "config": report.config, "seeds": report.seeds, "k": report.k,
            "L_effective": report.L_effective,
        })
    manifest = {
        "package_version": __version__,
        "config": report.config,
        "master_seed": report.master_seed,
        "seeds": report.seeds,
        "artifacts": {k: {"path": p.name, "sha256": _sha256(p)} for k, p in files.items()},
        "truth_label_model_selection": bool(report.config["run"].get("label_tuned", False)),
    }
    manifest.update(extra_manifest or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return manifest
