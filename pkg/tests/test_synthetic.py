"""Synthetic generator: determinism, validity, convergence, revelation."""

import hashlib

import numpy as np
import pytest

from annodist.errors import DomainError
from annodist.metrics import PairedSeries, ccc
from annodist.pipeline import WindowConfig, build_dataset, window_consensus
from annodist.synthetic import (
    SyntheticConfig,
    generate,
    read_ground_truth_csv,
    write_dataset_csvs,
)

SMALL = SyntheticConfig(n_subjects=3, duration=20.0, frame_rate=10.0,
                        n_annotators=4, feature_dim=8, latent_dim=2, seed=42)


def file_hash(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestDeterminism:
    def test_same_seed_same_arrays(self):
        f1, a1, t1 = generate(SMALL)
        f2, a2, t2 = generate(SMALL)
        for x, y in zip(f1, f2):
            np.testing.assert_array_equal(x.features, y.features)
            np.testing.assert_array_equal(x.timestamps, y.timestamps)
        for x, y in zip(a1, a2):
            np.testing.assert_array_equal(x.values, y.values)
        assert t1.rows == t2.rows

    def test_different_seed_differs(self):
        _, a1, _ = generate(SMALL)
        cfg2 = SyntheticConfig(**{**SMALL.__dict__, "seed": 43})
        _, a2, _ = generate(cfg2)
        assert not np.array_equal(a1[0].values, a2[0].values)

    def test_csv_bytes_identical(self, tmp_path):
        p1 = write_dataset_csvs(SMALL, tmp_path / "one")
        p2 = write_dataset_csvs(SMALL, tmp_path / "two")
        for key in p1:
            assert file_hash(p1[key]) == file_hash(p2[key])


class TestValidity:
    def test_annotator_values_in_unit_interval(self):
        _, annots, _ = generate(SMALL)
        for tr in annots:
            assert np.all(tr.values >= 0.0) and np.all(tr.values <= 1.0)

    def test_truth_satisfies_validity_conditions(self):
        _, _, truth = generate(SMALL)
        for _, _, mu, sigma in truth.rows:
            assert 0.0 < mu < 1.0
            assert 0.0 < sigma**2 < mu * (1.0 - mu)

    def test_biased_annotators_stay_in_range(self):
        cfg = SyntheticConfig(**{**SMALL.__dict__, "annotator_bias_std": 0.2})
        _, annots, _ = generate(cfg)
        for tr in annots:
            assert np.all(tr.values >= 0.0) and np.all(tr.values <= 1.0)

    def test_config_validation(self):
        with pytest.raises(DomainError):
            SyntheticConfig(n_annotators=1)
        with pytest.raises(DomainError):
            SyntheticConfig(noise_std=-0.1)
        with pytest.raises(DomainError):
            SyntheticConfig(identity_features=True, feature_dim=5, latent_dim=2)


class TestConvergence:
    def test_large_panel_moments_approach_truth(self):
        # Empirical window moments from a 200-rater panel track the latent
        # trajectories to within 0.02.
        cfg = SyntheticConfig(n_subjects=2, duration=30.0, n_annotators=200,
                              feature_dim=6, latent_dim=2, seed=7)
        wcfg = WindowConfig()
        _, annots, truth = generate(cfg, wcfg)
        by_subject = {}
        for tr in annots:
            by_subject.setdefault(tr.subject_id, []).append(tr)
        for subject, traces in by_subject.items():
            windows, _ = window_consensus(traces, wcfg)
            for start, target, _ in windows:
                ref = truth.lookup[(subject, start)]
                assert abs(target.mu - ref.mu) < 0.02
                assert abs(target.sigma - ref.sigma) < 0.02


class TestRevelation:
    def test_identity_noiseless_features_reveal_latents(self):
        cfg = SyntheticConfig(
            n_subjects=4, duration=40.0, frame_rate=10.0, n_annotators=6,
            feature_dim=4, latent_dim=2, noise_std=0.0, seed=3,
            identity_features=True,
        )
        wcfg = WindowConfig()
        feats, annots, truth = generate(cfg, wcfg)
        samples, _ = build_dataset(feats, annots, wcfg)
        x = np.stack([s.feature_vector for s in samples])
        truth_mu = np.array(
            [truth.lookup[(s.subject_id, s.window_start)].mu for s in samples]
        )
        # Column 0 of the identity map is the latent mean trajectory itself.
        assert ccc(PairedSeries(x[:, 0], truth_mu)) > 0.99
        design = np.column_stack([x, np.ones(len(x))])
        coef, *_ = np.linalg.lstsq(design, truth_mu, rcond=None)
        assert ccc(PairedSeries(design @ coef, truth_mu)) > 0.99


class TestGroundTruthCsv:
    def test_round_trip(self, tmp_path):
        paths = write_dataset_csvs(SMALL, tmp_path)
        truth = read_ground_truth_csv(paths["ground_truth"])
        _, _, expected = generate(SMALL)
        assert len(truth.rows) == len(expected.rows)
        for got, ref in zip(truth.rows, expected.rows):
            assert got[0] == ref[0]
            assert got[1] == ref[1]
            assert got[2] == pytest.approx(ref[2], abs=1e-15)
            assert got[3] == pytest.approx(ref[3], abs=1e-15)
