import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunklab.fidelity import (
    EPSILON_SCORE,
    DecomposedScores,
    FidelityError,
    FidelityTriple,
    LossBreakdown,
    RegimeLabel,
    clamp_score,
    classify_regime,
    compose_fidelity,
    first_order_error,
    measure_triple,
    to_losses,
)

fidelities = st.floats(min_value=1e-6, max_value=1.0, allow_nan=False)
triples = st.builds(FidelityTriple, fidelities, fidelities, fidelities)


class TestComposeFidelity:
    def test_identity(self):
        assert compose_fidelity(FidelityTriple(1.0, 1.0, 1.0)) == 1.0

    def test_product(self):
        got = compose_fidelity(FidelityTriple(0.9, 0.95, 0.8))
        assert got == pytest.approx(0.684, rel=1e-12)

    def test_single_factor(self):
        assert compose_fidelity(FidelityTriple(0.5, 1.0, 1.0)) == 0.5

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.5, float("nan")])
    def test_domain_errors(self, bad):
        with pytest.raises(FidelityError):
            FidelityTriple(bad, 0.5, 0.5)


class TestToLosses:
    def test_all_ones(self):
        losses = to_losses(FidelityTriple(1.0, 1.0, 1.0))
        assert losses == LossBreakdown(0.0, 0.0, 0.0, 0.0)

    def test_log_exp_inverse(self):
        losses = to_losses(
            FidelityTriple(math.exp(-0.1), math.exp(-0.2), math.exp(-0.3))
        )
        assert losses.l_task == pytest.approx(0.1, abs=1e-12)
        assert losses.l_agg == pytest.approx(0.2, abs=1e-12)
        assert losses.l_model == pytest.approx(0.3, abs=1e-12)
        assert losses.l_sys == pytest.approx(0.6, abs=1e-12)

    def test_composed_example(self):
        triple = FidelityTriple(0.9, 0.95, 0.8)
        losses = to_losses(triple)
        # -ln(0.684) to six decimals
        assert losses.l_sys == pytest.approx(0.379797, abs=1e-6)

    @given(triples)
    def test_product_identity(self, triple):
        losses = to_losses(triple)
        assert abs(-math.log(compose_fidelity(triple)) - losses.l_sys) < 1e-12
        assert losses.l_sys == losses.l_task + losses.l_agg + losses.l_model
        assert min(losses.l_task, losses.l_agg, losses.l_model) >= 0.0


class TestFirstOrderError:
    def test_symmetric_expansion(self):
        r = first_order_error(FidelityTriple(0.95, 0.95, 0.95))
        assert r.exact == pytest.approx(0.142625, abs=1e-12)
        assert r.approx == pytest.approx(0.15, abs=1e-12)
        assert r.residual == pytest.approx(0.007375, abs=1e-12)

    def test_perfect(self):
        r = first_order_error(FidelityTriple(1.0, 1.0, 1.0))
        assert (r.exact, r.approx, r.residual) == (0.0, 0.0, 0.0)

    def test_single_term_is_exact(self):
        r = first_order_error(FidelityTriple(0.9, 1.0, 1.0))
        assert r.exact == pytest.approx(0.1, abs=1e-15)
        assert r.approx == pytest.approx(0.1, abs=1e-15)
        assert abs(r.residual) < 1e-15

    @given(triples)
    def test_residual_bounds(self, triple):
        r = first_order_error(triple)
        e1 = 1.0 - triple.rho_task
        e2 = 1.0 - triple.rho_agg
        e3 = 1.0 - triple.rho_model
        bound = e1 * e2 + e1 * e3 + e2 * e3 + e1 * e2 * e3
        assert r.residual >= -1e-15
        assert r.residual <= bound + 1e-12


class TestMeasureTriple:
    def test_all_equal(self):
        m = measure_triple(DecomposedScores(1.0, 1.0, 1.0, 1.0))
        assert m.triple == FidelityTriple(1.0, 1.0, 1.0)
        assert not m.clamped

    def test_consecutive_ratios(self):
        m = measure_triple(DecomposedScores(1.0, 0.9, 0.81, 0.729))
        assert m.triple.rho_task == pytest.approx(0.9, rel=1e-12)
        assert m.triple.rho_agg == pytest.approx(0.9, rel=1e-12)
        assert m.triple.rho_model == pytest.approx(0.9, rel=1e-12)
        assert not m.clamped

    def test_clamp_path(self):
        m = measure_triple(DecomposedScores(1.0, 0.9, 0.9, 0.95))
        assert m.triple.rho_task == pytest.approx(0.9, rel=1e-12)
        assert m.triple.rho_agg == 1.0
        assert m.triple.rho_model == 1.0
        assert m.clamped_stages == ("rho_model",)

    def test_nonpositive_scores_rejected(self):
        with pytest.raises(FidelityError):
            DecomposedScores(0.0, 1.0, 1.0, 1.0)

    @given(
        st.tuples(fidelities, fidelities, fidelities, fidelities)
    )
    def test_clamp_flag_iff_ratio_above_one(self, scores):
        s = DecomposedScores(*scores)
        m = measure_triple(s)
        ratios = {
            "rho_task": s.s_ideal_agg_ideal_art / s.s_truth,
            "rho_agg": s.s_real_agg_ideal_art / s.s_ideal_agg_ideal_art,
            "rho_model": s.s_real_agg_real_art / s.s_real_agg_ideal_art,
        }
        expected = tuple(name for name, r in ratios.items() if r > 1.0)
        assert m.clamped_stages == expected

    @given(
        st.tuples(fidelities, fidelities, fidelities, fidelities)
    )
    @settings(max_examples=200)
    def test_telescoping_identity_unclamped(self, scores):
        s = DecomposedScores(*scores)
        m = measure_triple(s)
        if m.clamped:
            return
        recomposed = compose_fidelity(m.triple) * s.s_truth
        assert recomposed == pytest.approx(s.s_real_agg_real_art, rel=1e-12)


class TestClassifyRegime:
    def test_zero_loss_trivial(self):
        call = classify_regime(LossBreakdown(0.0, 0.0, 0.0, 0.0))
        assert call.label is RegimeLabel.TRIVIAL
        assert not call.indeterminate

    def test_task_dominated(self):
        call = classify_regime(LossBreakdown(0.5, 0.05, 0.05, 0.6))
        assert call.label is RegimeLabel.TASK_DOMINATED

    def test_model_dominated(self):
        call = classify_regime(LossBreakdown(0.02, 0.02, 0.9, 0.94))
        assert call.label is RegimeLabel.MODEL_DOMINATED

    def test_indeterminate_fallback(self):
        call = classify_regime(LossBreakdown(0.3, 0.0, 0.4, 0.7))
        assert call.label is RegimeLabel.MODEL_DOMINATED
        assert call.indeterminate

    @given(
        st.floats(min_value=0.0, max_value=10.0),
        st.floats(min_value=0.0, max_value=10.0),
        st.floats(min_value=0.0, max_value=10.0),
        st.floats(min_value=1.5, max_value=50.0),
    )
    def test_scale_consistency(self, lt, la, lm, scale):
        base = LossBreakdown(lt, la, lm, lt + la + lm)
        scaled = LossBreakdown(lt * scale, la * scale, lm * scale,
                               (lt + la + lm) * scale)
        a = classify_regime(base)
        b = classify_regime(scaled)
        if a.label is not RegimeLabel.TRIVIAL and b.label is not RegimeLabel.TRIVIAL:
            assert a == b


class TestClampScore:
    def test_floor(self):
        assert clamp_score(0.0) == EPSILON_SCORE
        assert clamp_score(-5.0) == EPSILON_SCORE

    def test_ceiling_and_passthrough(self):
        assert clamp_score(2.0) == 1.0
        assert clamp_score(0.5) == 0.5

    def test_nan_rejected(self):
        with pytest.raises(FidelityError):
            clamp_score(float("nan"))
