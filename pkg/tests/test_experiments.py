"""Fold construction, grid execution, significance marking, density output."""

import numpy as np
import pytest

from annodist import experiments
from annodist.consensus import BetaParams, beta_pdf
from annodist.errors import DomainError, InsufficientDataError
from annodist.experiments import (
    CellResult,
    DatasetArrays,
    ExperimentConfig,
    ExperimentReport,
    emit_density_data,
    make_folds,
    run_grid,
    significance,
    write_report,
)
from annodist.pipeline import WindowConfig, build_dataset
from annodist.synthetic import SyntheticConfig, generate

TINY_SYNTH = SyntheticConfig(
    n_subjects=6, duration=24.0, frame_rate=10.0, n_annotators=4,
    feature_dim=8, latent_dim=2, seed=5,
)
TINY_GRID = ExperimentConfig(
    k_folds=3, n_seeds=2, master_seed=1, variants=("fully_shared",),
    baselines=("median",), max_epochs=15, include_oracle=True,
)


@pytest.fixture(scope="module")
def tiny_samples():
    feats, annots, _ = generate(TINY_SYNTH, WindowConfig())
    samples, _ = build_dataset(feats, annots, WindowConfig())
    return samples


@pytest.fixture(scope="module")
def tiny_report(tiny_samples):
    return run_grid(tiny_samples, TINY_GRID)


class TestFolds:
    def test_balanced_assignment(self):
        plan = make_folds([f"s{i}" for i in range(10)], k=5, seed=0)
        sizes = [len(plan.fold_subjects(i)) for i in range(5)]
        assert sizes == [2, 2, 2, 2, 2]

    def test_subject_disjointness(self):
        plan = make_folds([f"s{i}" for i in range(11)], k=5, seed=3)
        for i in range(5):
            train = set(plan.train_subjects(i))
            val = set(plan.val_subjects(i))
            test = set(plan.test_subjects(i))
            assert not (train & val) and not (train & test) and not (val & test)
            assert train | val | test == set(plan.assignments)

    def test_deterministic(self):
        subjects = [f"s{i}" for i in range(9)]
        assert make_folds(subjects, 4, 7) == make_folds(subjects, 4, 7)

    def test_too_few_subjects(self):
        with pytest.raises(InsufficientDataError):
            make_folds(["a", "b", "c"], k=5, seed=0)


class TestRunGrid:
    def test_grid_is_complete(self, tiny_report):
        models = TINY_GRID.model_names()
        assert len(tiny_report.cells) == len(models) * 3 * 2
        seen = {(c.model, c.fold, c.seed) for c in tiny_report.cells}
        assert len(seen) == len(tiny_report.cells)
        assert not tiny_report.failures()

    def test_oracle_rows_are_perfect(self, tiny_report):
        for c in tiny_report.cells:
            if c.model == "oracle":
                assert c.scores["ccc_mu"] == pytest.approx(1.0)
                assert c.scores["ccc_sigma"] == pytest.approx(1.0)
                assert c.scores["kl_truth_pred"] <= 1e-10
                assert c.scores["kl_frac_better"] == 1.0

    def test_baseline_cells_score_their_descriptor(self, tiny_report):
        for c in tiny_report.cells:
            if c.model == "point[median]":
                assert set(c.scores) == {"ccc_median"}

    def test_determinism(self, tiny_samples, tiny_report):
        again = run_grid(tiny_samples, TINY_GRID)
        for a, b in zip(tiny_report.cells, again.cells):
            assert (a.model, a.fold, a.seed) == (b.model, b.fold, b.seed)
            assert a.scores == b.scores

    def test_parallel_jobs_match_sequential(self, tiny_samples, tiny_report):
        parallel_cfg = ExperimentConfig(**{
            **TINY_GRID.__dict__, "jobs": 2,
        })
        parallel = run_grid(tiny_samples, parallel_cfg)
        for a, b in zip(tiny_report.cells, parallel.cells):
            assert (a.model, a.fold, a.seed) == (b.model, b.fold, b.seed)
            assert a.scores == b.scores

    def test_cell_failures_recorded_and_grid_continues(self, tiny_samples):
        # An absurd learning rate overflows the parameters and trips the
        # non-finite gradient guard; those cells must be marked failed while
        # the rest of the grid keeps running.
        cfg = ExperimentConfig(
            k_folds=3, n_seeds=1, master_seed=0, variants=("fully_shared",),
            baselines=("median",), max_epochs=3, learning_rate=1e200,
        )
        with np.errstate(over="ignore", invalid="ignore"):
            report = run_grid(tiny_samples, cfg)
        assert len(report.cells) == 2 * 3
        failed = {c.model for c in report.failures()}
        assert failed == {"fully_shared", "point[median]"}
        for c in report.failures():
            assert "TrainingError" in c.failed

    def test_per_subject_ccc_pooling(self, tiny_samples, tiny_report):
        cfg = ExperimentConfig(**{
            **TINY_GRID.__dict__, "ccc_pooling": "per_subject",
        })
        per_subject = run_grid(tiny_samples, cfg)
        pooled_mu = tiny_report.score_vectors("ccc_mu")["fully_shared"]
        split_mu = per_subject.score_vectors("ccc_mu")["fully_shared"]
        assert split_mu.shape == pooled_mu.shape
        assert not np.allclose(split_mu, pooled_mu)
        # The oracle predicts the targets exactly, so both poolings give 1.
        assert np.allclose(per_subject.score_vectors("ccc_mu")["oracle"], 1.0)

    def test_degenerate_predictions_scored_not_failed(self, tiny_samples):
        # A frozen network keeps sigma_hat near softplus(0) ~ 0.69, above the
        # validity cap; the clamp collapses it to a near-two-point Beta whose
        # quartiles sit at the interval ends.  The cell still gets scores.
        cfg = ExperimentConfig(
            k_folds=3, n_seeds=1, master_seed=0, variants=("fully_shared",),
            baselines=(), max_epochs=1, learning_rate=1e-30,
        )
        report = run_grid(tiny_samples, cfg)
        assert not report.failures()
        for c in report.cells:
            assert np.isfinite(c.scores["ccc_median"])
            assert np.isfinite(c.scores["kl_truth_pred"])


def _fake_report(score_map, n_folds=1):
    cells = []
    for model, scores in score_map.items():
        for i, s in enumerate(scores):
            cells.append(CellResult(model, i % n_folds, i, {"ccc_mu": s}))
    cfg = ExperimentConfig(k_folds=2, n_seeds=len(next(iter(score_map.values()))),
                           variants=("fully_shared",), baselines=())
    plan = make_folds([f"s{i}" for i in range(4)], 2, 0)
    return ExperimentReport(cfg, plan, cells, [])


class TestSignificance:
    def test_identical_scores_not_significant(self):
        scores = list(np.linspace(0.1, 0.9, 10))
        report = _fake_report({"a": scores, "b": scores})
        result = significance(report)["ccc_mu"]
        best = [m for m, row in result.items() if row.get("best")]
        other = [m for m in result if m not in best][0]
        assert result[other]["p_vs_best"] == 1.0
        assert result[other]["indistinguishable_from_best"]

    def test_disjoint_ranges_significant(self):
        rng = np.random.default_rng(30)
        high = list(rng.uniform(0.8, 0.9, 10))
        low = list(rng.uniform(0.1, 0.2, 10))
        result = significance(_fake_report({"good": high, "bad": low}))["ccc_mu"]
        assert result["good"]["best"]
        assert result["bad"]["p_vs_best"] == pytest.approx(2.0 / 2.0**10)
        assert not result["bad"]["indistinguishable_from_best"]

    def test_single_seed_inconclusive(self):
        result = significance(_fake_report({"a": [0.5], "b": [0.4]}))["ccc_mu"]
        assert result["b"].get("inconclusive")


class TestDensityData:
    def _data(self):
        rng = np.random.default_rng(31)
        n = 6
        mu = rng.uniform(0.3, 0.7, n)
        sigma = rng.uniform(0.05, 0.15, n)
        from annodist.consensus import clamp_moments_arrays, moment_match_arrays, descriptors_arrays
        cmu, csig = clamp_moments_arrays(mu, sigma)
        alpha, beta = moment_match_arrays(cmu, csig)
        return DatasetArrays(
            x=rng.normal(size=(n, 3)), mu=mu, sigma=sigma,
            subjects=np.array([f"s{i}" for i in range(n)]),
            starts=np.arange(n) * 0.4,
            truth_alpha=alpha, truth_beta=beta,
            truth_desc=descriptors_arrays(alpha, beta),
        )

    def test_identical_predictions_give_identical_columns(self, tmp_path):
        data = self._data()
        idx = np.array([0, 2])
        path = emit_density_data(
            data, data.mu[idx], data.sigma[idx], idx, tmp_path / "d.csv")
        rows = path.read_text().strip().splitlines()[1:]
        assert len(rows) == 2 * 512
        for row in rows:
            fields = row.split(",")
            assert fields[7] == fields[8]

    def test_uniform_truth_density_is_one(self, tmp_path):
        data = self._data()
        variance_uniform = 1.0 / 12.0
        data.mu[0] = 0.5
        data.sigma[0] = np.sqrt(variance_uniform)
        data.truth_alpha[0] = 1.0
        data.truth_beta[0] = 1.0
        idx = np.array([0])
        path = emit_density_data(
            data, data.mu[idx], data.sigma[idx], idx, tmp_path / "d.csv")
        rows = [r.split(",") for r in path.read_text().strip().splitlines()[1:]]
        assert all(float(r[7]) == pytest.approx(1.0) for r in rows)

    def test_densities_integrate_to_one(self, tmp_path):
        data = self._data()
        idx = np.arange(3)
        path = emit_density_data(
            data, data.mu[idx], data.sigma[idx], idx, tmp_path / "d.csv")
        rows = [r.split(",") for r in path.read_text().strip().splitlines()[1:]]
        for lo in range(0, len(rows), 512):
            chunk = rows[lo : lo + 512]
            x = np.array([float(r[6]) for r in chunk])
            for col in (7, 8):
                pdf = np.array([float(r[col]) for r in chunk])
                assert np.trapezoid(pdf, x) == pytest.approx(1.0, abs=1e-3)

    def test_invalid_window_rejected(self, tmp_path):
        data = self._data()
        with pytest.raises(DomainError):
            emit_density_data(data, data.mu[:1], data.sigma[:1],
                              np.array([99]), tmp_path / "d.csv")


class TestWriteReport:
    def test_files_and_determinism(self, tiny_report, tmp_path):
        paths1 = write_report(tiny_report, tmp_path / "one")
        paths2 = write_report(tiny_report, tmp_path / "two")
        for key in ("moments", "descriptors", "kl", "summary"):
            assert paths1[key].exists()
            assert paths1[key].read_bytes() == paths2[key].read_bytes()

    def test_moments_rows_cover_moment_models(self, tiny_report, tmp_path):
        paths = write_report(tiny_report, tmp_path)
        rows = paths["moments"].read_text().strip().splitlines()[1:]
        # fully_shared and oracle cells carry moment scores; 3 folds x 2 seeds.
        assert len(rows) == 2 * 3 * 2

    def test_summary_tracks_normalization(self, tiny_report, tmp_path):
        import json

        paths = write_report(tiny_report, tmp_path)
        summary = json.loads(paths["summary"].read_text())
        assert len(summary["fold_normalization"]) == 3
        assert summary["kl_direction"] == "truth_first"
        assert summary["grid"]["cells"] == len(tiny_report.cells)
        assert summary["ccc_pooling"] == "pooled"
        kl = summary["kl_means"]
        assert set(kl) == {"fully_shared", "oracle"}
        assert kl["oracle"]["vs_truth_beta"] <= 1e-10
        assert kl["oracle"]["windows_better_than_uniform"] == 1.0
