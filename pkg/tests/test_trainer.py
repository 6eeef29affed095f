import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairdro import dro
from fairdro.dataset import LabeledDataset, SyntheticSpec, generate_synthetic, partition_cells, split
from fairdro.errors import (
    BatchCompositionError,
    DivisibilityError,
    SpecError,
    TrainingDivergedError,
)
from fairdro.metrics import evaluate
from fairdro.model import LinearModel, per_sample_cross_entropy, weighted_cross_entropy
from fairdro.trainer import (
    VARIANTS,
    TrainConfig,
    cell_multipliers,
    grad_regularized_loss,
    q_targets_from_losses,
    regularized_loss,
    rw_weights,
    train,
)

from conftest import cell_dataset
from test_model import numeric_grad

SEEDS = range(4)


def data(seed=0, **spec):
    ds = generate_synthetic(SyntheticSpec(seed=seed, **spec))
    return split(ds, 0.2, np.random.default_rng(seed))


def scratch_cfg(seed=0, **kw):
    return TrainConfig(variant="scratch", seed=seed, **kw)


class TestRW:
    def test_example(self):
        w = rw_weights(partition_cells(cell_dataset([[40, 10], [10, 40]], d=1)))
        np.testing.assert_allclose(w, [[0.625, 2.5], [2.5, 0.625]])

    def test_balanced_is_one(self):
        np.testing.assert_allclose(rw_weights(partition_cells(cell_dataset([[7, 7], [7, 7]], d=1))), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(1, 30), min_size=6, max_size=6))
    def test_mass_identity(self, counts):
        part = partition_cells(cell_dataset(np.reshape(counts, (3, 2)), d=1))
        w = rw_weights(part)
        assert float((w * part.counts).sum()) == pytest.approx(sum(counts), rel=1e-12)


def ce_model_and_batch(targets):
    """One row per cell of a 2x2 batch whose per-row CE equals ``targets``.

    With theta = [[0, 0], [1, 0]] the logits are [0, x]: class 0 has CE
    log(1 + e^x) and class 1 has CE log(1 + e^-x).
    """
    model = LinearModel(np.array([[0.0, 0.0], [1.0, 0.0]]))
    cells = [(0, 0), (0, 1), (1, 0), (1, 1)]
    x = []
    for (y, _), c in zip(cells, targets):
        s = math.log(math.expm1(c))
        x.append([s if y == 0 else -s])
    y = np.array([c[0] for c in cells])
    a = np.array([c[1] for c in cells])
    return model, np.array(x), y, a


class TestRegularizers:
    def test_hand_example(self):
        model, x, y, a = ce_model_and_batch([0.5, 0.9, 0.3, 0.3])
        np.testing.assert_allclose(per_sample_cross_entropy(model, x, y), [0.5, 0.9, 0.3, 0.3])
        base = 0.5
        assert regularized_loss(model, x, y, a, 2, 2, "gap_reg", 1.0) == pytest.approx(base + 0.2)
        assert regularized_loss(model, x, y, a, 2, 2, "var_reg", 1.0) == pytest.approx(base + 0.02)

    def test_lambda_zero_is_balanced_ce(self):
        model, x, y, a = ce_model_and_batch([0.5, 0.9, 0.3, 0.3])
        for v in ("gap_reg", "var_reg"):
            assert regularized_loss(model, x, y, a, 2, 2, v, 0.0) == weighted_cross_entropy(model, x, y)

    def test_equal_cells_no_penalty(self):
        model, x, y, a = ce_model_and_batch([0.4, 0.4, 0.7, 0.7])
        for v in ("gap_reg", "var_reg"):
            assert regularized_loss(model, x, y, a, 2, 2, v, 3.0) == pytest.approx(0.55)

    @pytest.mark.parametrize("variant", ["gap_reg", "var_reg"])
    @pytest.mark.parametrize("seed", range(4))
    def test_gradient(self, variant, seed):
        r = np.random.default_rng(seed)
        y, a = np.repeat([0, 0, 1, 1], 3), np.tile(np.repeat([0, 1], 3), 2)
        x = r.standard_normal((12, 3))
        theta = r.standard_normal((2, 4))
        fn = lambda t: regularized_loss(LinearModel(t), x, y, a, 2, 2, variant, 0.7)
        g = grad_regularized_loss(LinearModel(theta), x, y, a, 2, 2, variant, 0.7)
        np.testing.assert_allclose(g, numeric_grad(fn, theta, 1e-6), rtol=1e-5, atol=1e-7)

    def test_missing_cell(self):
        model, x, y, a = ce_model_and_batch([0.5, 0.9, 0.3, 0.3])
        with pytest.raises(BatchCompositionError):
            regularized_loss(model, x[:3], y[:3], a[:3], 2, 2, "gap_reg", 1.0)


class TestQTargets:
    losses = np.array([[0.6, 0.2], [0.3, 0.3]])

    def test_classwise(self):
        spec = dro.UncertaintySpec(rho=0.5, num_groups=2)
        q = q_targets_from_losses(self.losses, spec)
        np.testing.assert_allclose(q[0], [0.85355, 0.14645], atol=1e-5)
        np.testing.assert_array_equal(q[1], [0.5, 0.5])
        # classes are independent: perturbing class 1 leaves class 0 alone
        q2 = q_targets_from_losses(np.array([[0.6, 0.2], [0.9, 0.1]]), spec)
        np.testing.assert_array_equal(q2[0], q[0])

    def test_non_classwise(self):
        spec = dro.UncertaintySpec(rho=0.5, num_groups=2, classwise=False)
        q = q_targets_from_losses(self.losses, spec)
        assert q.shape == (4,)
        np.testing.assert_allclose(q, dro.best_response(self.losses.ravel(), 0.5))
        assert not np.allclose(q.reshape(2, 2) * 2, q_targets_from_losses(self.losses, replace(spec, classwise=True)))

    def test_equal_losses_uniform(self):
        spec = dro.UncertaintySpec(rho=2.0, num_groups=3)
        np.testing.assert_array_equal(q_targets_from_losses(np.full((2, 3), 0.2), spec), np.full((2, 3), 1 / 3))

    def test_simplex(self):
        spec = dro.UncertaintySpec(num_groups=2, allow_negative=False, use_chi2=False, classwise=False)
        q = q_targets_from_losses(self.losses, spec, eg_step=1.0)
        assert q.min() > 0 and q.sum() == pytest.approx(1)

    def test_multipliers(self):
        np.testing.assert_array_equal(cell_multipliers(np.full((2, 2), 0.5), 2, 2), np.ones((2, 2)))
        np.testing.assert_array_equal(cell_multipliers(np.full(6, 1 / 6), 2, 3), np.ones((2, 3)))


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(variant="nope"), dict(variant="fairdro", rho=0.0), dict(variant="var_reg", lam=-1.0),
         dict(epochs=0), dict(iterations_per_epoch=0), dict(variant="group_dro", eg_step=0.0)],
    )
    def test_invalid(self, kw):
        with pytest.raises(SpecError):
            TrainConfig(**kw).validate()

    def test_batch_divisibility(self):
        tr, _ = data()
        with pytest.raises(DivisibilityError):
            train(TrainConfig(variant="scratch", batch_size=126, epochs=1), tr)


class TestTraining:
    def test_symmetric_data_is_fair(self):
        gaps = []
        for s in SEEDS:
            tr, te = data(s, group_noise_scales=(1.0, 1.0))
            model, _ = train(scratch_cfg(s), tr)
            gaps.append(evaluate(model, te).dca)
        assert np.mean(gaps) < 0.05

    def test_noisy_group_is_less_accurate(self):
        acc = []
        for s in SEEDS:
            tr, te = data(s)
            model, _ = train(scratch_cfg(s), tr)
            acc.append(evaluate(model, te).cell_accuracies)
        acc = np.mean(acc, axis=0)
        assert np.all(acc[:, 1] < acc[:, 0])

    def test_tiny_rho_matches_scratch(self):
        for s in SEEDS[:2]:
            tr, te = data(s)
            m_s, _ = train(scratch_cfg(s), tr)
            m_d, h = train(TrainConfig(variant="fairdro", rho=1e-9, seed=s), tr)
            assert max(np.max(np.abs(q - 0.5)) for q in h.q) < 1e-4
            np.testing.assert_allclose(m_d.theta, m_s.theta, atol=1e-3)
            a, b = evaluate(m_s, te).to_dict(), evaluate(m_d, te).to_dict()
            for k in ("balanced_acc", "dca", "deo", "worst_group_acc"):
                assert abs(a[k] - b[k]) <= 1e-3

    def test_deterministic(self):
        tr, _ = data(3)
        cfg = TrainConfig(variant="fairdro", rho=2.0, epochs=10, seed=3)
        m1, h1 = train(cfg, tr)
        m2, h2 = train(cfg, tr)
        assert m1.theta.tobytes() == m2.theta.tobytes()
        assert np.array_equal(np.array(h1.q), np.array(h2.q))

    @pytest.mark.parametrize("rho", [0.5, 5.0, 21.5])
    def test_history_and_change_bound(self, rho):
        tr, te = data(1)
        T = 20
        _, h = train(TrainConfig(variant="fairdro", rho=rho, epochs=T, seed=1), tr, te)
        assert len(h.q) == len(h.train_losses) == len(h.test_accuracies) == len(h.learning_rates) == T
        lo, hi = dro.weight_range(rho, 2)
        diam = hi - lo
        prev = np.full((2, 2), 0.5)
        for t, q in enumerate(h.q):
            for row in q:
                dro.GroupWeights(row).check(rho)
            eta = 1.0 - t / T
            assert np.max(np.abs(q - prev)) <= eta * diam + 1e-12
            prev = q

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_every_variant_runs(self, variant):
        tr, te = data(0)
        cfg = TrainConfig(variant=variant, rho=1.0, lam=0.5, epochs=3, seed=0)
        model, h = train(cfg, tr, te)
        assert np.all(np.isfinite(model.theta))
        q = np.asarray(h.q[-1])
        expected = (4,) if variant in ("fairdro_no_classwise", "group_dro") else (2, 2)
        assert q.shape == expected
        if variant in ("fairdro_nonneg", "group_dro"):
            assert q.min() >= 0

    def test_q_update_interval(self):
        tr, _ = data(0)
        seen = []
        cfg = TrainConfig(variant="fairdro", rho=4.0, epochs=2, seed=0, q_update_interval=5)
        train(cfg, tr, on_epoch=lambda t, m, q: seen.append(np.array(q)))
        assert len(seen) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        tr, _ = data(0)
        with pytest.raises(TrainingDivergedError):
            train(TrainConfig(variant="scratch", base_lr=1e308, epochs=2), tr)

    def test_duplicated_cell_invariance(self):
        # balanced sampling draws from each cell uniformly, so doubling a cell
        # leaves the sampling distribution unchanged
        diffs, spread = [], []
        for s in SEEDS:
            tr, te = data(s)
            idx = np.flatnonzero((tr.classes == 0) & (tr.groups == 1))
            dup = LabeledDataset(
                np.vstack([tr.features, tr.features[idx]]),
                np.concatenate([tr.classes, tr.classes[idx]]),
                np.concatenate([tr.groups, tr.groups[idx]]),
                2, 2,
            )
            cfg = scratch_cfg(s, iterations_per_epoch=16)
            a = evaluate(train(cfg, tr)[0], te).balanced_accuracy
            b = evaluate(train(cfg, dup)[0], te).balanced_accuracy
            diffs.append(b - a)
            spread.append(a)
        assert abs(np.mean(diffs)) <= max(2 * np.std(spread), 0.01)

    def test_history_jsonl(self, tmp_path):
        tr, te = data(0)
        _, h = train(TrainConfig(variant="fairdro", epochs=3), tr, te)
        h.to_jsonl(tmp_path / "h.jsonl")
        recs = [json.loads(l) for l in (tmp_path / "h.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in recs] == [0, 1, 2]
        assert np.allclose(recs[-1]["q"], h.q[-1])
