"""Subject-independent cross-validation grid over variants and seeds.

Folds partition subjects: fold i is the test set, fold (i+1) mod k the
validation set, the rest trains.  Every (model, fold, seed) cell trains one
network and evaluates on the held-out windows:

* concordance of predicted vs empirical window moments (mu, sigma);
* concordance of Beta-derived descriptors against the descriptors of the
  ground-truth Beta fits, next to per-descriptor point-regressor baselines
  trained on identical windows;
* per-window KL divergence of the ground-truth Beta against the predicted
  Beta and against the uniform Beta(1,1) reference (both KL directions are
  recorded; the configured one is reported first).

Features are z-normalised with training-fold statistics, which are stored in
the report for reproducibility.  Seeds are master_seed + {0..n_seeds-1}; the
whole grid is deterministic, also when cells run in parallel.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from . import nn
from .consensus import (
    DESCRIPTOR_NAMES,
    beta_pdf_arrays,
    clamp_moments_arrays,
    descriptors_arrays,
    moment_match_arrays,
)
from .errors import (
    AnnodistError,
    DomainError,
    InsufficientDataError,
    TrainingError,
)
from .metrics import PairedSeries, ccc, kl_beta_arrays, wilcoxon_signed_rank
from .pipeline import WindowedSample, fmt_float

ORACLE_MODEL = "oracle"
KL_DIRECTIONS = ("truth_first", "pred_first")
CCC_POOLINGS = ("pooled", "per_subject")


@dataclass(frozen=True)
class FoldPlan:
    """Subject-to-fold assignment with disjoint train/val/test per fold."""

    k: int
    assignments: dict[str, int]

    def fold_subjects(self, i: int) -> list[str]:
        return sorted(s for s, f in self.assignments.items() if f == i)

    def test_subjects(self, i: int) -> list[str]:
        return self.fold_subjects(i)

    def val_subjects(self, i: int) -> list[str]:
        return self.fold_subjects((i + 1) % self.k)

    def train_subjects(self, i: int) -> list[str]:
        held = {i, (i + 1) % self.k}
        return sorted(
            s for s, f in self.assignments.items() if f not in held
        )


def make_folds(subjects: list[str], k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle plus round-robin assignment of subjects to k folds."""
    uniq = sorted(set(subjects))
    if len(uniq) < k:
        raise InsufficientDataError(
            f"make_folds: need >= {k} subjects for {k} folds, got {len(uniq)}"
        )
    if k < 2:
        raise DomainError("make_folds: k must be >= 2")
    order = np.random.default_rng(seed).permutation(len(uniq))
    return FoldPlan(k, {uniq[j]: i % k for i, j in enumerate(order)})


@dataclass(frozen=True)
class ExperimentConfig:
    k_folds: int = 5
    n_seeds: int = 10
    master_seed: int = 0
    variants: tuple[str, ...] = nn.MOMENT_KINDS
    baselines: tuple[str, ...] = DESCRIPTOR_NAMES
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 5
    epsilon: float = 1e-4
    kl_direction: str = "truth_first"
    ccc_pooling: str = "pooled"
    include_oracle: bool = False
    jobs: int = 1

    def __post_init__(self):
        for v in self.variants:
            if v not in nn.MOMENT_KINDS:
                raise DomainError(f"ExperimentConfig: unknown variant {v!r}")
        for b in self.baselines:
            if b not in DESCRIPTOR_NAMES:
                raise DomainError(f"ExperimentConfig: unknown baseline target {b!r}")
        if self.kl_direction not in KL_DIRECTIONS:
            raise DomainError(
                f"ExperimentConfig: kl_direction must be one of {KL_DIRECTIONS}"
            )
        if self.ccc_pooling not in CCC_POOLINGS:
            raise DomainError(
                f"ExperimentConfig: ccc_pooling must be one of {CCC_POOLINGS}"
            )
        if self.n_seeds < 1 or self.k_folds < 2 or self.jobs < 1:
            raise DomainError("ExperimentConfig: bad grid dimensions")

    def train_config(self, seed: int) -> nn.TrainConfig:
        return nn.TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=seed,
        )

    def model_names(self) -> list[str]:
        names = list(self.variants) + [f"point[{b}]" for b in self.baselines]
        if self.include_oracle:
            names.append(ORACLE_MODEL)
        return names


@dataclass
class DatasetArrays:
    """Column view of a windowed dataset plus its ground-truth Beta fits."""

    x: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    subjects: np.ndarray
    starts: np.ndarray
    truth_alpha: np.ndarray
    truth_beta: np.ndarray
    truth_desc: dict[str, np.ndarray]

    @staticmethod
    def from_samples(samples: list[WindowedSample], epsilon: float = 1e-4
                     ) -> "DatasetArrays":
        if not samples:
            raise InsufficientDataError("DatasetArrays: empty sample list")
        x = np.stack([s.feature_vector for s in samples])
        mu = np.array([s.target.mu for s in samples])
        sigma = np.array([s.target.sigma for s in samples])
        cmu, csigma = clamp_moments_arrays(mu, sigma, epsilon)
        alpha, beta = moment_match_arrays(cmu, csigma)
        return DatasetArrays(
            x=x,
            mu=mu,
            sigma=sigma,
            subjects=np.array([s.subject_id for s in samples]),
            starts=np.array([s.window_start for s in samples]),
            truth_alpha=alpha,
            truth_beta=beta,
            truth_desc=descriptors_arrays(alpha, beta),
        )


@dataclass
class CellResult:
    model: str
    fold: int
    seed: int
    scores: dict[str, float] = field(default_factory=dict)
    failed: str | None = None


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    fold_plan: FoldPlan
    cells: list[CellResult]
    fold_norms: list[dict[str, list[float]]]

    def score_vectors(self, metric: str) -> dict[str, np.ndarray]:
        """Per-model score arrays aligned by (fold, seed); NaN for failures."""
        out: dict[str, np.ndarray] = {}
        order = {}
        for c in self.cells:
            order.setdefault(c.model, []).append(c)
        for model, cells in order.items():
            cells.sort(key=lambda c: (c.fold, c.seed))
            vals = [c.scores.get(metric, np.nan) for c in cells]
            if not all(np.isnan(vals)):
                out[model] = np.array(vals, dtype=np.float64)
        return out

    def failures(self) -> list[CellResult]:
        return [c for c in self.cells if c.failed is not None]


def _zscore_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _score_ccc(pred, target, subjects, pooling: str) -> float:
    """Concordance either over pooled windows or averaged per subject."""
    if pooling == "pooled":
        return ccc(PairedSeries(pred, target))
    values = [
        ccc(PairedSeries(pred[subjects == s], target[subjects == s]))
        for s in np.unique(subjects)
        if np.count_nonzero(subjects == s) >= 2
    ]
    return float(np.mean(values))


def _evaluate_moment_model(
    data: DatasetArrays, mu_hat: np.ndarray, sigma_hat: np.ndarray,
    test_idx: np.ndarray, epsilon: float, pooling: str = "pooled",
) -> dict[str, float]:
    subjects = data.subjects[test_idx]
    scores = {
        "ccc_mu": _score_ccc(mu_hat, data.mu[test_idx], subjects, pooling),
        "ccc_sigma": _score_ccc(sigma_hat, data.sigma[test_idx], subjects, pooling),
    }
    pmu, psigma = clamp_moments_arrays(mu_hat, sigma_hat, epsilon)
    pred_alpha, pred_beta = moment_match_arrays(pmu, psigma)
    # Non-strict quantiles: badly clamped predictions (sigma_hat above the
    # validity cap) yield near-degenerate Betas whose quartiles collapse to
    # the interval ends; scoring them beats losing the whole grid cell, and
    # keeps both descriptor paths evaluated on identical windows.
    pred_desc = descriptors_arrays(pred_alpha, pred_beta, strict=False)
    for name in DESCRIPTOR_NAMES:
        scores[f"ccc_{name}"] = _score_ccc(
            pred_desc[name], data.truth_desc[name][test_idx], subjects, pooling
        )
    t_alpha = data.truth_alpha[test_idx]
    t_beta = data.truth_beta[test_idx]
    ones = np.ones_like(t_alpha)
    kl_tp = kl_beta_arrays(t_alpha, t_beta, pred_alpha, pred_beta)
    kl_pt = kl_beta_arrays(pred_alpha, pred_beta, t_alpha, t_beta)
    kl_tu = kl_beta_arrays(t_alpha, t_beta, ones, ones)
    scores["kl_truth_pred"] = float(kl_tp.mean())
    scores["kl_pred_truth"] = float(kl_pt.mean())
    scores["kl_truth_uniform"] = float(kl_tu.mean())
    scores["kl_frac_better"] = float(np.mean(kl_tp < kl_tu))
    return scores


# Worker-global payload for parallel grids (fork start method).
_GRID_PAYLOAD: dict = {}


def _init_grid_worker(payload: dict) -> None:
    _GRID_PAYLOAD.update(payload)


def _fold_indices(
    data: DatasetArrays, plan: FoldPlan, fold: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    train = np.isin(data.subjects, plan.train_subjects(fold))
    val = np.isin(data.subjects, plan.val_subjects(fold))
    test = np.isin(data.subjects, plan.test_subjects(fold))
    if not (train.any() and val.any() and test.any()):
        raise InsufficientDataError(f"fold {fold}: a split has no windows")
    # Subject-disjointness is a hard protocol invariant; assert, not assume.
    assert not ((train & val).any() or (train & test).any() or (val & test).any())
    return np.where(train)[0], np.where(val)[0], np.where(test)[0]


def _run_cell(
    data: DatasetArrays,
    cfg: ExperimentConfig,
    plan: FoldPlan,
    model: str,
    fold: int,
    seed_offset: int,
) -> CellResult:
    seed = cfg.master_seed + seed_offset
    cell = CellResult(model=model, fold=fold, seed=seed)
    try:
        train_idx, val_idx, test_idx = _fold_indices(data, plan, fold)
        mean, std = _zscore_stats(data.x[train_idx])
        xt = (data.x[train_idx] - mean) / std
        xv = (data.x[val_idx] - mean) / std
        xe = (data.x[test_idx] - mean) / std

        if model == ORACLE_MODEL:
            cell.scores = _evaluate_moment_model(
                data, data.mu[test_idx], data.sigma[test_idx], test_idx,
                cfg.epsilon, cfg.ccc_pooling,
            )
            return cell

        if model.startswith("point["):
            target_name = model[len("point[") : -1]
            target = data.truth_desc[target_name]
            net = nn.build(nn.NetworkVariant("point", data.x.shape[1]), seed)
            nn.train(net, xt, target[train_idx], xv, target[val_idx],
                     cfg.train_config(seed))
            pred = nn.forward(net, xe)
            cell.scores = {
                f"ccc_{target_name}": _score_ccc(
                    pred, target[test_idx], data.subjects[test_idx],
                    cfg.ccc_pooling,
                )
            }
            return cell

        net = nn.build(nn.NetworkVariant(model, data.x.shape[1]), seed)
        train_y = np.column_stack([data.mu[train_idx], data.sigma[train_idx]])
        val_y = np.column_stack([data.mu[val_idx], data.sigma[val_idx]])
        nn.train(net, xt, train_y, xv, val_y, cfg.train_config(seed))
        mu_hat, sigma_hat = nn.predict_moments(net, xe)
        cell.scores = _evaluate_moment_model(
            data, mu_hat, sigma_hat, test_idx, cfg.epsilon, cfg.ccc_pooling
        )
        return cell
    except (AnnodistError, FloatingPointError) as exc:
        cell.failed = f"{type(exc).__name__}: {exc}"
        return cell


def _run_cell_task(task: tuple[str, int, int]) -> CellResult:
    model, fold, seed_offset = task
    return _run_cell(
        _GRID_PAYLOAD["data"],
        _GRID_PAYLOAD["cfg"],
        _GRID_PAYLOAD["plan"],
        model,
        fold,
        seed_offset,
    )


def run_grid(
    samples: list[WindowedSample],
    cfg: ExperimentConfig,
) -> ExperimentReport:
    """Train and evaluate every (model, fold, seed) cell of the grid.

    Cell failures are recorded in the report and do not stop the grid.
    """
    data = DatasetArrays.from_samples(samples, cfg.epsilon)
    plan = make_folds(sorted(set(data.subjects.tolist())), cfg.k_folds,
                      cfg.master_seed)
    tasks = [
        (model, fold, s)
        for model in cfg.model_names()
        for fold in range(cfg.k_folds)
        for s in range(cfg.n_seeds)
    ]
    if cfg.jobs > 1:
        payload = {"data": data, "cfg": cfg, "plan": plan}
        with ProcessPoolExecutor(
            max_workers=cfg.jobs,
            mp_context=get_context("fork"),
            initializer=_init_grid_worker,
            initargs=(payload,),
        ) as pool:
            cells = list(pool.map(_run_cell_task, tasks))
    else:
        cells = [_run_cell(data, cfg, plan, *task) for task in tasks]
    fold_norms = []
    for fold in range(cfg.k_folds):
        train_idx, _, _ = _fold_indices(data, plan, fold)
        mean, std = _zscore_stats(data.x[train_idx])
        fold_norms.append({"mean": mean.tolist(), "std": std.tolist()})
    return ExperimentReport(cfg, plan, cells, fold_norms)


def significance(
    report: ExperimentReport, level: float = 0.05
) -> dict[str, dict[str, dict]]:
    """Per-metric pairwise Wilcoxon comparison against the best model.

    Marks the best model and every model not significantly different from it
    at the given level; comparisons without enough paired scores are marked
    inconclusive.
    """
    metrics = ["ccc_mu", "ccc_sigma"] + [f"ccc_{n}" for n in DESCRIPTOR_NAMES]
    out: dict[str, dict[str, dict]] = {}
    for metric in metrics:
        vectors = report.score_vectors(metric)
        vectors = {
            m: v for m, v in vectors.items() if not np.any(np.isnan(v))
        }
        if not vectors:
            continue
        means = {m: float(v.mean()) for m, v in vectors.items()}
        best = max(means, key=means.get)
        entry: dict[str, dict] = {}
        for model, vec in vectors.items():
            row = {
                "mean": means[model],
                "std": float(vec.std()),
                "best": model == best,
            }
            if model != best:
                try:
                    _, p = wilcoxon_signed_rank(vectors[best], vec)
                    row["p_vs_best"] = p
                    row["indistinguishable_from_best"] = p >= level
                except InsufficientDataError:
                    row["inconclusive"] = True
            entry[model] = row
        out[metric] = entry
    return out


def emit_density_data(
    data: DatasetArrays,
    mu_hat: np.ndarray,
    sigma_hat: np.ndarray,
    indices: np.ndarray,
    path,
    n_points: int = 512,
    epsilon: float = 1e-4,
) -> Path:
    """Write true/predicted Beta densities for selected windows as tidy CSV.

    Densities are sampled at ``n_points`` midpoints of (0, 1); columns carry
    the window key, both Beta parameter pairs, x and the two densities.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise DomainError("emit_density_data: empty window selection")
    if np.any(indices < 0) or np.any(indices >= data.x.shape[0]):
        raise DomainError("emit_density_data: window index out of range")
    if np.asarray(mu_hat).shape != indices.shape:
        raise DomainError("emit_density_data: predictions must align with indices")
    grid = (np.arange(n_points) + 0.5) / n_points
    pmu, psigma = clamp_moments_arrays(mu_hat, sigma_hat, epsilon)
    pred_alpha, pred_beta = moment_match_arrays(pmu, psigma)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["subject_id", "window_start", "alpha_true", "beta_true",
             "alpha_pred", "beta_pred", "x", "pdf_true", "pdf_pred"]
        )
        for j, idx in enumerate(indices):
            at, bt = data.truth_alpha[idx], data.truth_beta[idx]
            ap, bp = pred_alpha[j], pred_beta[j]
            pdf_t = beta_pdf_arrays(grid, at, bt)
            pdf_p = beta_pdf_arrays(grid, ap, bp)
            head = [
                data.subjects[idx], fmt_float(data.starts[idx]),
                fmt_float(at), fmt_float(bt), fmt_float(ap), fmt_float(bp),
            ]
            for x, pt, pp in zip(grid, pdf_t, pdf_p):
                writer.writerow(head + [fmt_float(x), fmt_float(pt), fmt_float(pp)])
    return path


def write_report(
    report: ExperimentReport, outdir, level: float = 0.05
) -> dict[str, Path]:
    """Write the per-table CSVs and the JSON summary; returns the paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cells = sorted(report.cells, key=lambda c: (c.model, c.fold, c.seed))

    paths = {
        "moments": outdir / "moments_ccc.csv",
        "descriptors": outdir / "descriptors_ccc.csv",
        "kl": outdir / "kl.csv",
        "summary": outdir / "summary.json",
    }
    with open(paths["moments"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "fold", "seed", "ccc_mu", "ccc_sigma"])
        for c in cells:
            if "ccc_mu" in c.scores:
                writer.writerow(
                    [c.model, c.fold, c.seed,
                     fmt_float(c.scores["ccc_mu"]),
                     fmt_float(c.scores["ccc_sigma"])]
                )
    with open(paths["descriptors"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "fold", "seed", "descriptor", "ccc"])
        for c in cells:
            for name in DESCRIPTOR_NAMES:
                key = f"ccc_{name}"
                if key in c.scores:
                    writer.writerow(
                        [c.model, c.fold, c.seed, name, fmt_float(c.scores[key])]
                    )
    with open(paths["kl"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["model", "fold", "seed", "kl_truth_pred", "kl_pred_truth",
             "kl_truth_uniform", "kl_frac_better"]
        )
        for c in cells:
            if "kl_truth_pred" in c.scores:
                writer.writerow(
                    [c.model, c.fold, c.seed,
                     fmt_float(c.scores["kl_truth_pred"]),
                     fmt_float(c.scores["kl_pred_truth"]),
                     fmt_float(c.scores["kl_truth_uniform"]),
                     fmt_float(c.scores["kl_frac_better"])]
                )

    # The reported KL column follows the configured direction; the raw CSV
    # always carries both directions plus the uniform reference.
    kl_key = ("kl_truth_pred" if report.config.kl_direction == "truth_first"
              else "kl_pred_truth")
    kl_means = {}
    for model, vec in report.score_vectors(kl_key).items():
        kl_means[model] = {
            "vs_truth_beta": float(np.nanmean(vec)),
            "vs_uniform": float(
                np.nanmean(report.score_vectors("kl_truth_uniform")[model])
            ),
            "windows_better_than_uniform": float(
                np.nanmean(report.score_vectors("kl_frac_better")[model])
            ),
        }
    summary = {
        "grid": {
            "models": report.config.model_names(),
            "k_folds": report.config.k_folds,
            "n_seeds": report.config.n_seeds,
            "master_seed": report.config.master_seed,
            "cells": len(report.cells),
            "failures": [
                {"model": c.model, "fold": c.fold, "seed": c.seed, "error": c.failed}
                for c in report.failures()
            ],
        },
        "kl_direction": report.config.kl_direction,
        "kl_means": kl_means,
        "ccc_pooling": report.config.ccc_pooling,
        "fold_assignments": report.fold_plan.assignments,
        "fold_normalization": report.fold_norms,
        "significance_level": level,
        "significance": significance(report, level),
    }
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
