import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualpop.model import (
    DiracAtDeme,
    FiniteMixture,
    GridDensity,
    InvalidParamsError,
    LevelIIFitness,
    ModelParams,
    SimplexPoint,
    TwoTypeGridDensity,
    TypeSubset,
    decompose_fitness1,
    eval_fitness2,
    measure_from_dict,
    measure_to_dict,
    params_from_dict,
    params_to_dict,
    validate_params,
)


def P(s):
    return TypeSubset.parse(s)


class TestTypeSubset:
    def test_parse_and_members(self):
        b = P("(110)")
        assert b.members == (1, 2)
        assert b.K == 3
        assert str(b) == "(110)"
        assert 1 in b and 3 not in b

    def test_empty_and_full_distinct(self):
        assert TypeSubset.empty(3).is_empty
        assert TypeSubset.full(3).is_full
        assert TypeSubset.empty(3) != TypeSubset.full(3)

    def test_algebra(self):
        a, b = P("(110)"), P("(011)")
        assert (a & b) == P("(010)")
        assert (a | b) == P("(111)")
        assert a.complement() == P("(001)")

    def test_word_sized(self):
        b = TypeSubset.full(64)
        assert len(b) == 64
        with pytest.raises(ValueError):
            TypeSubset(0, 65)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            TypeSubset.of([4], 3)
        with pytest.raises(ValueError):
            TypeSubset.parse("(12)")

    def test_measure(self):
        assert P("(101)").measure([0.2, 0.5, 0.3]) == pytest.approx(0.5)


class TestValidateParams:
    def test_all_zero_valid(self):
        p = ModelParams(K=2, V1=[0, 1])
        assert validate_params(p) == p

    def test_negative_rate(self):
        with pytest.raises(InvalidParamsError) as e:
            validate_params(ModelParams(K=2, gamma1=-1))
        assert any("negative rate" in m for m in e.value.errors)

    def test_mutation_matrix_valid(self):
        validate_params(ModelParams(K=2, m=[[0, 0.1], [0.2, 0]]))

    def test_collects_every_violation(self):
        p = ModelParams(K=2, s1=-1, c=-2, V1=[0, 2], m=[[0.1, -1], [0, 0]])
        with pytest.raises(InvalidParamsError) as e:
            validate_params(p)
        msgs = " | ".join(e.value.errors)
        for frag in ("s1", "c =", "V1 outside", "row 1 of m", "diagonal"):
            assert frag in msgs

    def test_K_below_two(self):
        with pytest.raises(InvalidParamsError):
            validate_params(ModelParams(K=1))

    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 1))
    def test_idempotent(self, s1, c, v):
        p = ModelParams(K=2, s1=s1, c=c, V1=[v, 1 - v])
        once = validate_params(p)
        assert validate_params(once) == once


class TestFitness2:
    def test_product_of_types(self):
        V2 = LevelIIFitness.from_terms([(1.0, (P("(10)"), P("(01)")))])
        assert eval_fitness2(V2, SimplexPoint([0.5, 0.5])) == pytest.approx(0.25)

    def test_atom(self):
        assert eval_fitness2(LevelIIFitness.linear(P("(10)")), SimplexPoint([1, 0])) == 1.0

    def test_three_types(self):
        V2 = LevelIIFitness.from_terms([(2.0, (P("(010)"), P("(001)")))])
        assert eval_fitness2(V2, SimplexPoint([0.2, 0.5, 0.3])) == pytest.approx(0.30)

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.floats(0.1, 3))
    def test_full_factor_is_constant(self, w, coef):
        w = np.asarray(w) + 1e-3
        w /= w.sum()
        V2 = LevelIIFitness.linear(TypeSubset.full(3), coef)
        assert eval_fitness2(V2, w) == pytest.approx(coef)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_multilinear_expansion(self, a, x, y):
        # mu = a*d_x + (1-a)*d_y on two types; factors B1={1}, B2={1}, B3={2}
        mu = np.array([a * x + (1 - a) * y, 1 - a * x - (1 - a) * y])
        V2 = LevelIIFitness.from_terms([(1.0, (P("(10)"), P("(10)"), P("(01)")))])
        p1 = [a * x + (1 - a) * y] * 2
        p2 = a * (1 - x) + (1 - a) * (1 - y)
        assert eval_fitness2(V2, mu) == pytest.approx(p1[0] * p1[1] * p2, abs=1e-12)

    def test_bounded_by_total(self):
        V2 = LevelIIFitness.from_terms([(0.5, (P("(10)"),)), (1.5, (P("(01)"), P("(11)")))])
        for x in np.linspace(0, 1, 11):
            assert 0 <= eval_fitness2(V2, [x, 1 - x]) <= V2.total + 1e-12


class TestDecomposeFitness1:
    @given(st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0]), min_size=2, max_size=5))
    def test_reconstructs_up_to_shift(self, v):
        v = np.asarray(v)
        comps = decompose_fitness1(v)
        rec = np.zeros(v.size)
        for w, mask in comps:
            assert w > 0
            rec += w * np.array([(mask >> i) & 1 for i in range(v.size)])
        # the full-set component is a constant shift, equal to min(v)
        assert np.allclose(rec + v.min(), v)

    def test_indicator(self):
        assert decompose_fitness1([0.0, 1.0]) == [(1.0, 0b10)]


class TestMeasures:
    def test_simplex_tolerance(self):
        SimplexPoint([0.5, 0.5 + 5e-13])
        with pytest.raises(InvalidParamsError):
            SimplexPoint([0.5, 0.6])
        with pytest.raises(InvalidParamsError):
            SimplexPoint([1.5, -0.5])

    def test_mixture_weights(self):
        with pytest.raises(InvalidParamsError):
            FiniteMixture(((0.5, [1, 0]), (0.4, [0, 1])))

    def test_grid_mass(self):
        g = GridDensity.uniform(10)
        assert g.mass == pytest.approx(1.0)
        assert g.mean == pytest.approx(0.5)
        with pytest.raises(InvalidParamsError):
            TwoTypeGridDensity(GridDensity(np.ones(10), 0.1, 0.0))
        TwoTypeGridDensity(GridDensity(np.full(10, 0.8), 0.1, 0.1))

    def test_grid_integrate_includes_atoms(self):
        g = GridDensity(np.full(4, 0.5), 0.25, 0.25)
        assert g.integrate(lambda x: x) == pytest.approx(0.5)
        assert g.integrate(lambda x: x**2) == pytest.approx(0.5 * 1 / 3 + 0.25)


class TestJSON:
    def test_params_roundtrip(self):
        p = ModelParams(K=3, m=[[0, 0.1, 0], [0, 0, 0.2], [0.3, 0, 0]], s1=1.0, V1=[1, 0, 0.5],
                        s2=2.0, V2=LevelIIFitness.from_terms([(1.0, (P("(010)"), P("(001)")))]),
                        c=0.5, gamma1=1.0, gamma2=0.25, eta=2.0)
        d = json.loads(json.dumps(params_to_dict(p)))
        assert d["V2"] == [{"coef": 1.0, "factors": [[2], [3]]}]
        assert params_from_dict(d) == p

    def test_params_unknown_field(self):
        with pytest.raises(InvalidParamsError) as e:
            params_from_dict({"K": 2, "gamma": 1})
        assert "unknown parameter field 'gamma'" in e.value.errors[0]

    @pytest.mark.parametrize("nu", [
        DiracAtDeme(SimplexPoint([0.3, 0.7])),
        FiniteMixture(((0.5, [1, 0]), (0.5, [0, 1]))),
        TwoTypeGridDensity(GridDensity(np.full(4, 0.5), 0.25, 0.25)),
    ])
    def test_measure_roundtrip(self, nu):
        d = json.loads(json.dumps(measure_to_dict(nu)))
        assert measure_to_dict(measure_from_dict(d)) == measure_to_dict(nu)

    def test_uniform_shorthand(self):
        nu = measure_from_dict({"variant": "TwoTypeGridDensity", "uniform": True, "M": 8})
        assert nu.grid.M == 8 and nu.grid.mass == pytest.approx(1.0)

    def test_unknown_variant(self):
        with pytest.raises(InvalidParamsError):
            measure_from_dict({"variant": "Gaussian"})
