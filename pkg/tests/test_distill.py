"""Distillation loss tests: KL values, chunking, coarsening, temperatures."""

import numpy as np
import pytest
from conftest import (
    assert_gradients_match,
    finite_difference,
    random_labels,
    random_lattice,
)

from rnnt_distill import (
    DistillConfig,
    IncompatibleShapeError,
    InvalidParameterError,
    LossResult,
    coarsen_distribution,
    coarsened_kl_loss,
    combined_loss,
    consistency_loss,
    kl_lattice_loss,
    node_kl_divergence,
    softmax_lattice,
    temperature_scale,
)

TAU_GRID = (0.1, 0.4, 1.0, 1.9, 2.0)


def _entropy(p):
    return -np.sum(p * np.log(p), axis=-1)


class TestDistillConfig:
    def test_mode_pins_effective_alpha(self):
        assert DistillConfig(alpha=0.3, mode="hard").effective_alpha == 1.0
        assert DistillConfig(alpha=0.3, mode="soft").effective_alpha == 0.0
        assert DistillConfig(alpha=0.3, mode="mixed").effective_alpha == 0.3

    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            DistillConfig(alpha=1.5)
        with pytest.raises(InvalidParameterError):
            DistillConfig(tau_teacher=0.0)
        with pytest.raises(InvalidParameterError):
            DistillConfig(chunk_frames=0)
        with pytest.raises(InvalidParameterError):
            DistillConfig(mode="warm")
        with pytest.raises(InvalidParameterError):
            DistillConfig(consistency_weight=-0.1)

    def test_paper_default_chunk(self):
        assert DistillConfig().chunk_frames == 8


class TestTemperatureScale:
    def test_tau_one_is_bit_identity(self):
        rng = np.random.default_rng(0)
        z = random_lattice(rng, 3, 2, 5)
        out = temperature_scale(z, 1.0)
        assert out.tobytes() == z.tobytes()

    def test_two_logit_example(self):
        z = np.zeros((1, 1, 2))
        z[0, 0, 0] = 2.0
        scaled = temperature_scale(z, 2.0)
        np.testing.assert_allclose(scaled[0, 0], [1.0, 0.0], atol=1e-15)
        probs = softmax_lattice(scaled)[0, 0]
        np.testing.assert_allclose(
            probs, [0.7310585786300049, 0.2689414213699951], atol=1e-12
        )

    @pytest.mark.parametrize("tau", TAU_GRID)
    def test_argmax_invariant(self, tau):
        rng = np.random.default_rng(42)
        z = random_lattice(rng, 6, 4, 7, scale=3.0)
        before = np.argmax(z, axis=-1)
        after = np.argmax(temperature_scale(z, tau), axis=-1)
        assert np.array_equal(before, after)

    def test_entropy_non_decreasing_in_tau(self):
        rng = np.random.default_rng(43)
        z = random_lattice(rng, 5, 3, 6, scale=3.0)
        entropies = [
            _entropy(softmax_lattice(temperature_scale(z, tau))) for tau in TAU_GRID
        ]
        for lower, higher in zip(entropies, entropies[1:]):
            assert np.all(higher - lower >= -1e-12)

    def test_invalid_tau(self):
        with pytest.raises(InvalidParameterError):
            temperature_scale(np.zeros((1, 1, 2)), 0.0)
        with pytest.raises(InvalidParameterError):
            temperature_scale(np.zeros((1, 1, 2)), -1.0)


class TestKlLatticeLoss:
    def test_identical_inputs_give_zero(self):
        rng = np.random.default_rng(1)
        z = random_lattice(rng, 4, 3, 5)
        result = kl_lattice_loss(z, z, DistillConfig())
        assert result.loss == 0.0
        assert np.all(result.grad == 0.0)

    def test_single_node_value(self):
        # Teacher (0.75, 0.25) against uniform: 0.75 ln 1.5 + 0.25 ln 0.5.
        teacher = np.zeros((1, 1, 2))
        teacher[0, 0, 0] = np.log(3.0)
        student = np.zeros((1, 1, 2))
        result = kl_lattice_loss(teacher, student, DistillConfig())
        np.testing.assert_allclose(result.loss, 0.1308120359411137, atol=1e-12)

    def test_non_negative_on_random_pairs(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            a = random_lattice(rng, 3, 2, 4, scale=2.0)
            b = random_lattice(rng, 3, 2, 4, scale=2.0)
            assert kl_lattice_loss(a, b, DistillConfig()).loss >= 0.0

    @pytest.mark.parametrize("chunk", [1, 8, 32])
    def test_chunking_matches_single_pass(self, chunk):
        rng = np.random.default_rng(3)
        a = random_lattice(rng, 32, 4, 6)
        b = random_lattice(rng, 32, 4, 6)
        full = kl_lattice_loss(a, b, DistillConfig(chunk_frames=32))
        chunked = kl_lattice_loss(a, b, DistillConfig(chunk_frames=chunk))
        np.testing.assert_allclose(chunked.loss, full.loss, rtol=1e-9)
        np.testing.assert_allclose(chunked.grad, full.grad, rtol=1e-9, atol=1e-15)

    @pytest.mark.parametrize("tau_t,tau_s", [(1.0, 1.0), (1.9, 1.0), (1.0, 0.4), (2.0, 1.5)])
    def test_gradient_against_finite_differences(self, tau_t, tau_s):
        rng = np.random.default_rng(4)
        a = random_lattice(rng, 3, 2, 4)
        b = random_lattice(rng, 3, 2, 4)
        cfg = DistillConfig(tau_teacher=tau_t, tau_student=tau_s)
        numeric = finite_difference(lambda bb: kl_lattice_loss(a, bb, cfg).loss, b)
        assert_gradients_match(kl_lattice_loss(a, b, cfg).grad, numeric)

    def test_gradient_closed_form(self):
        rng = np.random.default_rng(5)
        a = random_lattice(rng, 4, 2, 5)
        b = random_lattice(rng, 4, 2, 5)
        tau_s = 1.9
        cfg = DistillConfig(tau_teacher=0.7, tau_student=tau_s)
        pt = softmax_lattice(a / 0.7)
        ps = softmax_lattice(b / tau_s)
        np.testing.assert_allclose(
            kl_lattice_loss(a, b, cfg).grad, (ps - pt) / tau_s, atol=1e-12
        )

    def test_shape_mismatch(self):
        with pytest.raises(IncompatibleShapeError):
            kl_lattice_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)), DistillConfig())


class TestCoarsenedKlLoss:
    def test_identical_inputs_give_zero(self):
        rng = np.random.default_rng(6)
        z = random_lattice(rng, 4, 2, 5)
        y = random_labels(rng, 2, 5)
        result = coarsened_kl_loss(z, z, y, DistillConfig())
        assert result.loss == 0.0
        assert np.all(result.grad == 0.0)

    def test_k3_interior_rows_match_full_kl(self):
        # With K=3 the grouping at nodes with a next label is a bijection, so
        # per-node coarsened KL must equal full KL there. The boundary row has
        # no label group and keeps only blank/remainder.
        rng = np.random.default_rng(7)
        y = [1, 2]
        a = random_lattice(rng, 4, 2, 3)
        b = random_lattice(rng, 4, 2, 3)
        cfg = DistillConfig()
        pt, ps = softmax_lattice(a), softmax_lattice(b)
        interior_full = sum(
            node_kl_divergence(pt[t, u], ps[t, u]) for t in range(4) for u in range(2)
        )
        interior_coarse = sum(
            node_kl_divergence(
                coarsen_distribution(pt[t, u], y[u]),
                coarsen_distribution(ps[t, u], y[u]),
            )
            for t in range(4)
            for u in range(2)
        )
        assert abs(interior_full - interior_coarse) <= 1e-12
        # Whole-lattice equality when teacher and student boundary rows agree.
        b_matched = b.copy()
        b_matched[:, 2, :] = a[:, 2, :]
        full = kl_lattice_loss(a, b_matched, cfg).loss
        coarse = coarsened_kl_loss(a, b_matched, y, cfg).loss
        assert abs(full - coarse) <= 1e-12

    @pytest.mark.parametrize("seed", range(10))
    def test_never_exceeds_full_kl(self, seed):
        # Log-sum inequality, node by node, hence in total.
        rng = np.random.default_rng(seed)
        a = random_lattice(rng, 4, 3, 8, scale=2.0)
        b = random_lattice(rng, 4, 3, 8, scale=2.0)
        y = random_labels(rng, 3, 8)
        cfg = DistillConfig()
        assert (
            coarsened_kl_loss(a, b, y, cfg).loss
            <= kl_lattice_loss(a, b, cfg).loss + 1e-12
        )

    def test_k2_remainder_group_is_empty(self):
        rng = np.random.default_rng(8)
        a = random_lattice(rng, 3, 2, 2)
        b = random_lattice(rng, 3, 2, 2)
        y = [1, 1]
        cfg = DistillConfig()
        # With K=2 every group is a singleton or empty, so coarsened == full.
        np.testing.assert_allclose(
            coarsened_kl_loss(a, b, y, cfg).loss,
            kl_lattice_loss(a, b, cfg).loss,
            rtol=1e-12,
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_against_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        a = random_lattice(rng, 3, 2, 5)
        b = random_lattice(rng, 3, 2, 5)
        y = random_labels(rng, 2, 5)
        cfg = DistillConfig(tau_teacher=1.3, tau_student=0.8)
        numeric = finite_difference(
            lambda bb: coarsened_kl_loss(a, bb, y, cfg).loss, b
        )
        assert_gradients_match(coarsened_kl_loss(a, b, y, cfg).grad, numeric)

    def test_u0_lattice(self):
        rng = np.random.default_rng(9)
        a = random_lattice(rng, 3, 0, 4)
        b = random_lattice(rng, 3, 0, 4)
        cfg = DistillConfig()
        assert coarsened_kl_loss(a, b, [], cfg).loss >= 0.0


class TestCombinedLoss:
    def _pair(self):
        rng = np.random.default_rng(10)
        rnnt = LossResult(loss=2.5, grad=rng.normal(size=(3, 2, 4)))
        kl = LossResult(loss=0.7, grad=rng.normal(size=(3, 2, 4)))
        return rnnt, kl

    def test_alpha_one_returns_rnnt_exactly(self):
        rnnt, kl = self._pair()
        out = combined_loss(rnnt, kl, DistillConfig(alpha=1.0, mode="mixed"))
        assert out.loss == rnnt.loss
        assert np.array_equal(out.grad, rnnt.grad)

    def test_alpha_zero_returns_kl_exactly(self):
        rnnt, kl = self._pair()
        out = combined_loss(rnnt, kl, DistillConfig(alpha=0.0, mode="mixed"))
        assert out.loss == kl.loss
        assert np.array_equal(out.grad, kl.grad)

    def test_alpha_half_is_arithmetic_mean(self):
        rnnt, kl = self._pair()
        out = combined_loss(rnnt, kl, DistillConfig(alpha=0.5, mode="mixed"))
        np.testing.assert_allclose(out.loss, 0.5 * (rnnt.loss + kl.loss), rtol=1e-15)
        np.testing.assert_allclose(out.grad, 0.5 * (rnnt.grad + kl.grad), rtol=1e-15)

    def test_hard_and_soft_modes_follow_pinned_alpha(self):
        rnnt, kl = self._pair()
        hard = combined_loss(rnnt, kl, DistillConfig(alpha=0.5, mode="hard"))
        soft = combined_loss(rnnt, kl, DistillConfig(alpha=0.5, mode="soft"))
        assert hard.loss == rnnt.loss
        assert soft.loss == kl.loss

    def test_shape_mismatch(self):
        rnnt, _ = self._pair()
        bad = LossResult(loss=0.1, grad=np.zeros((2, 2, 2)))
        with pytest.raises(IncompatibleShapeError):
            combined_loss(rnnt, bad, DistillConfig(alpha=0.5, mode="mixed"))


class TestConsistencyLoss:
    def test_identical_states_zero(self):
        states = np.random.default_rng(11).normal(size=(4, 6))
        result = consistency_loss(states, states)
        assert result.loss == 0.0
        assert np.all(result.grad == 0.0)

    def test_unit_example(self):
        result = consistency_loss(np.zeros((2, 3)), np.ones((2, 3)))
        assert result.loss == 1.0
        np.testing.assert_allclose(result.grad, np.full((2, 3), 2.0 / 6.0), rtol=1e-15)

    def test_gradient_against_finite_differences(self):
        rng = np.random.default_rng(12)
        teacher = rng.normal(size=(3, 5))
        student = rng.normal(size=(3, 5))
        numeric = finite_difference(
            lambda s: consistency_loss(teacher, s).loss, student
        )
        assert_gradients_match(consistency_loss(teacher, student).grad, numeric, rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(IncompatibleShapeError):
            consistency_loss(np.zeros((2, 3)), np.zeros((3, 2)))


class TestNodeHelpers:
    def test_coarsen_groups_sum_to_one(self):
        rng = np.random.default_rng(13)
        p = rng.dirichlet(np.ones(8))
        grouped = coarsen_distribution(p, label_class=3)
        assert grouped.shape == (3,)
        np.testing.assert_allclose(grouped.sum(), 1.0, atol=1e-12)
        grouped2 = coarsen_distribution(p)
        assert grouped2.shape == (2,)

    def test_node_kl_inequality_on_seeded_distributions(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            p = rng.dirichlet(np.ones(8))
            q = rng.dirichlet(np.ones(8))
            full = node_kl_divergence(p, q)
            coarse = node_kl_divergence(
                coarsen_distribution(p, 2), coarsen_distribution(q, 2)
            )
            assert coarse <= full + 1e-12
