"""Config invariants, gradient checks, and score-schema parity for both baselines."""
import numpy as np
import pytest

import ubsdetect.numcore as nc
from ubsdetect.autoencoder import (
    MlpAeConfig,
    MlpAeModel,
    flatten_user,
    load_model,
    save_model,
    score_tab,
    score_ubs,
    train_tab,
    train_ubs,
)
from ubsdetect.errors import ConfigError
from ubsdetect.evaluation import auroc_from_scores
from ubsdetect.numcore import Mat, finite_difference_check
from ubsdetect.ubs import Label, UbsDims, UbsTensor

DIMS = UbsDims(4, 3, 6)


def make_tensor(seed: int, label=Label.BENIGN, scale: float = 1.0, density: float = 0.6) -> UbsTensor:
    rng = np.random.default_rng(seed)
    mask = rng.random((DIMS.days, DIMS.sessions)) < density
    if not mask.any():
        mask[0, 0] = True
    values = (rng.standard_normal((DIMS.days, DIMS.sessions, DIMS.features)) * scale)
    values = (values * mask[:, :, None]).astype(np.float32)
    return UbsTensor(f"user{seed:03d}", values, mask, label)


class TestConfig:
    def test_identity_capable_bottleneck_rejected(self):
        with pytest.raises(ConfigError):
            MlpAeConfig(input_width=6, hidden=[8, 6])

    def test_non_decreasing_hidden_rejected(self):
        with pytest.raises(ConfigError):
            MlpAeConfig(input_width=20, hidden=[8, 8])
        with pytest.raises(ConfigError):
            MlpAeConfig(input_width=20, hidden=[4, 8])

    def test_valid_config_builds_mirror(self):
        cfg = MlpAeConfig(input_width=10, hidden=[8, 3])
        model = MlpAeModel(cfg, np.random.default_rng(0))
        widths = [(w.rows, w.cols) for w, _ in model.layers]
        assert widths == [(10, 8), (8, 3), (3, 8), (8, 10)]


class TestGradient:
    @pytest.mark.parametrize("seed", range(3))
    def test_reconstruction_loss_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        cfg = MlpAeConfig(input_width=7, hidden=[5, 2], dropout=0.0)
        model = MlpAeModel(cfg, rng)
        x = rng.standard_normal((4, 7))
        mask = np.ones((4, 1), dtype=bool)

        def build():
            return nc.mse_masked(model.reconstruct(Mat(x), train=False), x, mask)

        err = finite_difference_check(build, model.params())
        assert err < 1e-4, f"seed {seed}: {err}"


@pytest.fixture(scope="module")
def trained():
    train_map = {t.user: t for t in (make_tensor(i) for i in range(12))}
    cfg = MlpAeConfig(input_width=6, hidden=[5, 2], learning_rate=3e-3, epochs=40, seed=1)
    model, report = train_tab(cfg, train_map)
    return model, report, train_map


class TestTabular:
    def test_training_reduces_loss(self, trained):
        _, report, _ = trained
        assert report.epoch_losses[-1] < report.epoch_losses[0]

    def test_summary_order_statistics(self, trained):
        model, _, train_map = trained
        for s in score_tab(model, train_map):
            mean, mx, p95, _ = s.summary
            assert mx >= p95 >= 0 and mx >= mean >= 0

    def test_obvious_anomalies_rank_above_benign(self, trained):
        model, _, _ = trained
        test_map = {}
        for i in range(20, 30):
            test_map_label = Label.MALICIOUS if i >= 26 else Label.BENIGN
            scale = 40.0 if i >= 26 else 1.0
            t = make_tensor(i, label=test_map_label, scale=scale)
            test_map[t.user] = t
        scores = score_tab(model, test_map)
        auc = auroc_from_scores(
            np.array([s.summary[0] for s in scores]),
            np.array([s.label is Label.MALICIOUS for s in scores]),
        )
        assert auc > 0.5

    def test_rejects_malicious_training_user(self):
        bad = make_tensor(1, label=Label.MALICIOUS)
        cfg = MlpAeConfig(input_width=6, hidden=[4, 2])
        with pytest.raises(ValueError):
            train_tab(cfg, {bad.user: bad})


class TestFlattened:
    def test_flatten_concatenates_then_pads(self):
        t = make_tensor(5, density=0.5)
        row, fill = flatten_user(t, DIMS)
        n_cells = int(t.mask.sum()) * DIMS.features
        assert row.shape == (1, DIMS.slots * DIMS.features)
        assert fill[0, :n_cells].all() and not fill[0, n_cells:].any()
        assert (row[0, n_cells:] == 0).all()
        np.testing.assert_array_equal(row[0, :n_cells], t.values[t.mask].reshape(-1))

    def test_train_and_score_roundtrip(self):
        train_map = {t.user: t for t in (make_tensor(i) for i in range(10))}
        width = DIMS.slots * DIMS.features
        cfg = MlpAeConfig(input_width=width, hidden=[16, 4], learning_rate=3e-3, epochs=30, seed=2)
        model, report = train_ubs(cfg, train_map, DIMS)
        assert report.epoch_losses[-1] < report.epoch_losses[0]
        scores = score_ubs(model, train_map, DIMS)
        assert len(scores) == len(train_map)
        for s in scores:
            t = train_map[s.user]
            assert s.n_sessions == int(t.mask.sum())
            mean, mx, p95, _ = s.summary
            assert mx >= p95 >= 0 and mx >= mean >= 0

    def test_input_width_must_match_dims(self):
        cfg = MlpAeConfig(input_width=10, hidden=[4, 2])
        t = make_tensor(0)
        from ubsdetect.errors import ShapeMismatch

        with pytest.raises(ShapeMismatch):
            train_ubs(cfg, {t.user: t}, DIMS)

    def test_obvious_anomalies_rank_above_benign(self):
        train_map = {t.user: t for t in (make_tensor(i) for i in range(10))}
        width = DIMS.slots * DIMS.features
        cfg = MlpAeConfig(input_width=width, hidden=[16, 4], learning_rate=3e-3, epochs=30, seed=3)
        model, _ = train_ubs(cfg, train_map, DIMS)
        test_map = {}
        for i in range(40, 50):
            label = Label.MALICIOUS if i >= 46 else Label.BENIGN
            t = make_tensor(i, label=label, scale=40.0 if label is Label.MALICIOUS else 1.0)
            test_map[t.user] = t
        scores = score_ubs(model, test_map, DIMS)
        auc = auroc_from_scores(
            np.array([s.summary[0] for s in scores]),
            np.array([s.label is Label.MALICIOUS for s in scores]),
        )
        assert auc > 0.5


class TestSharedScoreSchema:
    def test_all_models_emit_identical_score_shape(self, desk_run):
        """Detectors must be model-agnostic: same CSV schema, same summary."""
        from ubsdetect.scores import read_scores

        _, out = desk_run
        by_model = {}
        for model in ("transformer", "auto-tab", "auto-ubs"):
            scores = read_scores(out / "scores" / f"{model}_test.csv")
            by_model[model] = scores
            for s in scores:
                assert s.summary.shape == (4,)
                assert np.isfinite(s.summary).all()
        users = {m: [s.user for s in v] for m, v in by_model.items()}
        assert users["transformer"] == users["auto-tab"] == users["auto-ubs"]
        n = {m: [s.n_sessions for s in v] for m, v in by_model.items()}
        assert n["transformer"] == n["auto-tab"] == n["auto-ubs"]


class TestCheckpoint:
    def test_save_load_reproduces_scores(self, tmp_path):
        train_map = {t.user: t for t in (make_tensor(i) for i in range(6))}
        cfg = MlpAeConfig(input_width=6, hidden=[4, 2], epochs=5, seed=9)
        model, _ = train_tab(cfg, train_map)
        save_model(model, tmp_path / "ae.ckpt")
        loaded = load_model(tmp_path / "ae.ckpt")
        a = score_tab(model, train_map)
        b = score_tab(loaded, train_map)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.errors, y.errors)
