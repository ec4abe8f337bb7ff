import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import two_type
from dualpop.dual import (
    DualEvent,
    DualState,
    InternalConsistencyError,
    MomentQuery,
    apply_event,
    dual_event_rates,
    estimate_fixation,
    estimate_moment,
    evaluate_dual,
    parse_query,
    run_trajectories,
)
from dualpop.model import (
    DiracAtDeme,
    FiniteMixture,
    GridDensity,
    LevelIIFitness,
    ModelParams,
    SimplexPoint,
    TwoTypeGridDensity,
    TypeSubset,
)

D37 = DiracAtDeme(SimplexPoint([0.3, 0.7]))


def q(text, **kw):
    return parse_query(text, **kw).initial


def by_kind(evs, kind):
    return [e for e in evs if e.kind == kind]


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------


class TestRates:
    def test_single_selection_event(self):
        evs = dual_event_rates(q("(01)"), two_type(s1=1.0, V1=[1.0, 0.0]))
        assert [(e.kind, e.rate) for e in evs] == [("select1", 1.0)]

    def test_level1_coalescence_total(self):
        evs = dual_event_rates(q("deme[(10),(10),(01)]"), two_type(gamma1=1.0))
        co = by_kind(evs, "coalesce1")
        assert len(co) == 3
        assert sum(e.rate for e in co) == pytest.approx(3.0)

    def test_level2_coalescence(self):
        evs = dual_event_rates(q("deme[(10)] deme[(01)]"), two_type(gamma2=1.0))
        assert [(e.kind, e.rate) for e in evs] == [("coalesce2", 1.0)]

    def test_migration_infinite_and_finite(self):
        st_ = q("deme[(10),(01)]")
        inf = by_kind(dual_event_rates(st_, two_type(c=2.0)), "migrate")
        assert [e.rate for e in inf] == [2.0, 2.0]
        assert all(e.args[1] == st_.next_label for e in inf)
        fin = by_kind(dual_event_rates(q("deme[(10),(01)]", mode="finite", N2=4),
                                       two_type(c=2.0)), "migrate")
        assert len(fin) == 2 * 3
        assert sum(e.rate for e in fin) == pytest.approx(2 * 2.0 * 3 / 4)

    def test_mutation_rates(self):
        p = two_type(m=[[0, 0.3], [0.2, 0]])
        evs = by_kind(dual_event_rates(q("(10)"), p), "mutate")
        assert sorted((e.args[1:], e.rate) for e in evs) == [((0, 1), 0.3), ((1, 0), 0.2)]

    def test_level2_selection_per_term(self):
        V2 = LevelIIFitness.from_terms([(0.5, (TypeSubset.parse("(10)"),)),
                                        (2.0, (TypeSubset.parse("(01)"),))])
        evs = by_kind(dual_event_rates(q("deme[(10)] deme[(01)]"), two_type(s2=2.0, V2=V2)),
                      "select2")
        assert sorted(e.rate for e in evs) == [1.0, 1.0, 4.0, 4.0]

    def test_eta_scales_level1_only(self):
        p = two_type(s1=1.0, gamma1=1.0, c=1.0, gamma2=1.0, eta=3.0)
        evs = dual_event_rates(q("deme[(10),(01)] deme[(10)]"), p)
        rates = {e.kind: e.rate for e in evs}
        assert rates["select1"] == 3.0 and rates["coalesce1"] == 3.0
        assert rates["migrate"] == 1.0 and rates["coalesce2"] == 1.0

    def test_empty_and_full_have_no_events(self):
        p = two_type(s1=1, gamma1=1, c=1, s2=1, gamma2=1)
        full = DualState(np.zeros((1, 0), np.uint64), np.zeros(0, np.int64), 2)
        empty = DualState(np.zeros((0, 0), np.uint64), np.zeros(0, np.int64), 2)
        assert dual_event_rates(full, p) == [] and dual_event_rates(empty, p) == []


# ---------------------------------------------------------------------------
# transitions
# ---------------------------------------------------------------------------


def sets_of(state):
    return [[[str(a) for a in d] for d in s] for s in state.summands]


class TestApply:
    def test_selection_split_drops_empty_piece(self):
        st_ = q("(01)")
        new = apply_event(st_, DualEvent("select1", (0, 0b01), 1.0))
        assert sets_of(new) == [[["(01)", "(01)"]]]
        assert new.frame == [(0, 2)]

    def test_selection_split_two_pieces(self):
        new = apply_event(q("(10)"), DualEvent("select1", (0, 0b01), 1.0))
        # B ∩ A = (10) with the fresh rank full, and A ⊗ B^c
        assert sets_of(new) == [[["(10)", "(11)"]], [["(01)", "(10)"]]]
        nu = DiracAtDeme(SimplexPoint([0.4, 0.6]))
        assert evaluate_dual(new, nu) == pytest.approx(0.4 + 0.6 * 0.4)

    def test_level2_selection_worked_example(self):
        st_ = q("(01)")
        new = apply_event(st_, DualEvent("select2", (0, (0b01,), st_.next_label), 1.0))
        # A ⊗1 B at the target deme, and B^c at the target with A at a fresh deme
        assert new.frame == [(0, 2), (1, 1)]
        assert sets_of(new) == [[["(01)", "(10)"], ["(11)"]],
                                [["(11)", "(01)"], ["(01)"]]]
        assert evaluate_dual(new, D37) == pytest.approx(0.7 * 0.3 + 0.7 * 0.7)

    def test_migration_to_fresh_deme(self):
        st_ = q("deme[(10),(01)] + deme[(01),(10)]")
        new = apply_event(st_, DualEvent("migrate", (1, st_.next_label), 1.0))
        assert new.frame == [(0, 1), (1, 1)]
        assert sets_of(new) == [[["(10)"], ["(01)"]], [["(01)"], ["(10)"]]]

    def test_level2_coalescence_merges(self):
        new = apply_event(q("deme[(10)] deme[(01)]"), DualEvent("coalesce2", (0, 1), 1.0))
        assert new.frame == [(0, 2)]

    def test_mutation_to_full_trims(self):
        new = apply_event(q("deme[(10),(01)]"), DualEvent("mutate", (0, 1, 0), 1.0))
        # (10) gains type 2 -> full -> trimmed
        assert sets_of(new) == [[["(01)"]]]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


class TestEvaluate:
    def test_single_factor(self):
        assert evaluate_dual(q("(10)"), D37) == pytest.approx(0.3)

    def test_product_of_factors(self):
        assert evaluate_dual(q("deme[(10),(01)]"), D37) == pytest.approx(0.21)

    def test_empty_and_full(self):
        empty = DualState(np.zeros((0, 0), np.uint64), np.zeros(0, np.int64), 2)
        full = DualState(np.zeros((1, 0), np.uint64), np.zeros(0, np.int64), 2)
        assert evaluate_dual(empty, D37) == 0.0
        assert evaluate_dual(full, D37) == 1.0

    def test_mixture_and_grid(self):
        nu = FiniteMixture(((0.5, [0.2, 0.8]), (0.5, [0.6, 0.4])))
        assert evaluate_dual(q("deme[(10),(10)]"), nu) == pytest.approx(0.5 * (0.04 + 0.36))
        assert evaluate_dual(q("deme[(10)] deme[(10)]"), nu) == pytest.approx(0.4 ** 2)
        g = TwoTypeGridDensity(GridDensity.uniform(50))
        assert evaluate_dual(q("deme[(10),(10)]"), g) == pytest.approx(1 / 3, abs=1e-10)
        assert evaluate_dual(q("deme[(10),(01)]"), g) == pytest.approx(1 / 6, abs=1e-10)

    def test_overlapping_summands_fault(self):
        bad = DualState(np.array([[0b01], [0b01]], np.uint64), np.zeros(1, np.int64), 2)
        with pytest.raises(InternalConsistencyError):
            evaluate_dual(bad, DiracAtDeme(SimplexPoint([0.9, 0.1])))


# ---------------------------------------------------------------------------
# structural properties on random walks
# ---------------------------------------------------------------------------


def _subset_strings(K):
    return [str(TypeSubset(m, K)) for m in range(1, (1 << K) - 1)]


@st.composite
def small_states(draw, K):
    n_demes = draw(st.integers(1, 2))
    shape = [draw(st.integers(1, 2)) for _ in range(n_demes)]
    subs = _subset_strings(K)
    summand = [[draw(st.sampled_from(subs)) for _ in range(n)] for n in shape]
    return DualState.from_products(K, [summand])


def _params(K, rng_seed):
    r = np.random.default_rng(rng_seed)
    V1 = r.choice([0.0, 0.5, 1.0], size=K)
    m = r.choice([0.0, 0.3], size=(K, K))
    np.fill_diagonal(m, 0.0)
    b = TypeSubset(int(r.integers(1, (1 << K) - 1)), K)
    return ModelParams(K=K, m=m, s1=1.0, V1=V1, s2=1.0, V2=LevelIIFitness.linear(b),
                       c=1.0, gamma1=1.0, gamma2=1.0)


def _check_invariants(state):
    full = (1 << state.K) - 1
    if state.n_summands == 0:
        return
    assert not np.any(state.cells == 0), "empty subset in a summand"
    for j in range(state.n_columns):
        assert not np.all(state.cells[:, j] == full), "all-full column not trimmed"
    sets = state.product_sets()
    for a, b in itertools.combinations(sets, 2):
        assert not (a & b), "summands intersect"


@pytest.mark.parametrize("K", [2, 3])
@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(data=st.data())
def test_disjointness_exhaustive_small_frames(K, data):
    state = data.draw(small_states(K))
    p = _params(K, data.draw(st.integers(0, 1000)))
    mu = np.random.default_rng(0).dirichlet(np.ones(K))
    nu = DiracAtDeme(SimplexPoint(mu / mu.sum()))
    for _ in range(data.draw(st.integers(1, 6))):
        evs = dual_event_rates(state, p)
        if not evs:
            break
        ev = data.draw(st.sampled_from(evs))
        state = apply_event(state, ev)
        frame = state.frame
        if len(frame) > 3 or any(n > 3 for _, n in frame) or state.n_columns > 6:
            break
        _check_invariants(state)
        v = evaluate_dual(state, nu)
        assert -1e-12 <= v <= 1 + 1e-12
        # brute force: sum over summands of product measures
        brute = 0.0
        for s in state.product_sets():
            brute += sum(np.prod([mu[i - 1] for i in pt]) for pt in s)
        assert v == pytest.approx(brute, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["(10)", "(01)", "(11)"]), st.floats(0, 1), st.sampled_from([1, 2]))
def test_selection_split_partition_of_unity(a, x, B):
    A = TypeSubset.parse(a)
    Bs = TypeSubset(B, 2)
    state = DualState.from_products(2, [[[a]]], trim=False)
    w = [x, 1 - x]
    after = evaluate_dual(apply_event(state, DualEvent("select1", (0, B), 1.0)),
                          DiracAtDeme(SimplexPoint(w)))
    # mu(A ∩ B) + mu(B^c) mu(A); with B ∪ B^c in place of the two factors
    # the pieces recombine to mu(A)
    assert after == pytest.approx((A & Bs).measure(w) + Bs.complement().measure(w) * A.measure(w),
                                  abs=1e-12)
    assert (A & Bs).measure(w) + (A & Bs.complement()).measure(w) == pytest.approx(A.measure(w))


def test_evaluate_drop_monotone():
    p = two_type(s1=1.0, gamma1=1.0, s2=1.0, c=1.0)
    rng = np.random.default_rng(3)
    state = q("deme[(10),(01)]")
    nu = DiracAtDeme(SimplexPoint([0.4, 0.6]))
    for _ in range(8):
        evs = dual_event_rates(state, p)
        state = apply_event(state, evs[rng.integers(len(evs))])
        if state.n_summands < 2:
            continue
        total = evaluate_dual(state, nu)
        for r in range(state.n_summands):
            rest = DualState(np.delete(state.cells, r, axis=0), state.deme, 2)
            one = DualState(state.cells[r:r + 1], state.deme, 2)
            assert evaluate_dual(rest, nu) == pytest.approx(total - evaluate_dual(one, nu),
                                                            abs=1e-12)


# ---------------------------------------------------------------------------
# Monte Carlo estimator
# ---------------------------------------------------------------------------


class TestEstimator:
    def test_time_zero_exact(self):
        e = estimate_moment(parse_query("(01)"), D37, two_type(s1=1, gamma1=1), 0.0, 10, seed=1)
        assert e.value == pytest.approx(0.7) and e.stderr == 0.0

    def test_rejects_one_replicate(self):
        with pytest.raises(ValueError):
            estimate_moment(parse_query("(01)"), D37, two_type(), 1.0, 1, seed=1)

    def test_determinism_and_threads(self):
        p = two_type(s1=1.0, gamma1=1.0, c=0.5, s2=0.5, gamma2=0.5)
        a = run_trajectories(parse_query("deme[(10),(01)]"), D37, p, [0.5, 1.0], 300, seed=9)
        b = run_trajectories(parse_query("deme[(10),(01)]"), D37, p, [0.5, 1.0], 300, seed=9,
                             threads=3)
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.events, b.events)
        c = run_trajectories(parse_query("deme[(10),(01)]"), D37, p, [0.5, 1.0], 300, seed=10)
        assert not np.array_equal(a.events, c.events)

    def test_replicate_prefix_stable(self):
        p = two_type(s1=1.0, gamma1=1.0, c=0.5)
        a = run_trajectories(parse_query("(10)"), D37, p, [1.0], 50, seed=4)
        b = run_trajectories(parse_query("(10)"), D37, p, [1.0], 80, seed=4)
        assert np.array_equal(a.values, b.values[:50])

    def test_overflow_abort_and_sample(self):
        p = two_type(s1=4.0, s2=4.0, gamma1=1.0, V1=[1.0, 0.0])
        e = estimate_moment(parse_query("(01)"), D37, p, 1.0, 200, seed=2, max_summands=4)
        assert e.overflow_fraction > 0
        assert e.replicates == round(200 * (1 - e.overflow_fraction))
        s = estimate_moment(parse_query("(01)"), D37, p, 1.0, 200, seed=2, max_summands=4,
                            on_overflow="sample")
        assert s.overflow_fraction == 0 and s.sampled_fraction > 0

    def test_sampling_frame_cap(self):
        # without coalescence the bare frame grows without bound
        p = two_type(s1=4.0, s2=4.0, V1=[1.0, 0.0])
        s = estimate_moment(parse_query("(01)"), D37, p, 3.0, 50, seed=2, max_summands=4,
                            on_overflow="sample", max_frame=200)
        assert s.overflow_fraction > 0.5

    def test_sample_fallback_unbiased(self):
        # deterministic two-level selection with s2 = 2 s1 keeps the uniform
        # law invariant, so E mu(1) = 1/2 at every time
        p = two_type(s1=1.0, s2=2.0)
        g = TwoTypeGridDensity(GridDensity.uniform(100))
        samp = estimate_moment(parse_query("(10)"), g, p, 0.7, 20000, seed=6, max_summands=2,
                               on_overflow="sample")
        assert samp.sampled_fraction > 0.2 and samp.overflow_fraction == 0
        assert abs(samp.value - 0.5) < 3.5 * samp.stderr

    def test_neutral_summand_count_constant(self):
        p = two_type(gamma1=1.0, gamma2=1.0, c=1.0, m=[[0, 0.5], [0.5, 0]])
        r = run_trajectories(parse_query("deme[(10),(01)] + deme[(01),(10)]"), D37, p,
                             [2.0], 200, seed=1)
        assert r.peak.max() <= 2

    def test_neutral_coalescence_to_single_rank(self):
        p = two_type(gamma1=1.0, gamma2=1.0)
        nu = FiniteMixture(((0.5, [0.2, 0.8]), (0.5, [0.9, 0.1])))
        qq = parse_query("deme[(10),(10)] deme[(10)]")
        f = estimate_fixation(qq, nu, p, 200.0, 2000, seed=3)
        assert f.non_absorbed_fraction == 0.0
        # every replicate ends as a single rank (10) at a single deme
        assert f.value == pytest.approx(0.55) and f.stderr < 1e-12

    def test_neutral_fixation_is_initial_frequency(self):
        f = estimate_fixation(parse_query("deme[(10),(10),(10)]"), D37, two_type(gamma1=1.0),
                              100.0, 500, seed=2)
        assert f.value == pytest.approx(0.3) and f.non_absorbed_fraction == 0 and f.stderr < 1e-12

    def test_matches_python_reference_chain(self):
        # the compiled kernel against a plain Gillespie loop over the public
        # rate table and transition function
        p = two_type(s1=1.0, gamma1=1.0, c=0.5, s2=0.5, gamma2=0.5, m=[[0, 0.2], [0.1, 0]])
        qq = parse_query("deme[(10),(01)]")
        nu = FiniteMixture(((0.5, [0.2, 0.8]), (0.5, [0.7, 0.3])))
        t_end = 0.5
        rng = np.random.default_rng(77)
        vals = []
        for _ in range(3000):
            state, t = qq.initial, 0.0
            while True:
                evs = dual_event_rates(state, p)
                if not evs:
                    break
                rates = np.array([e.rate for e in evs])
                t += rng.exponential(1 / rates.sum())
                if t > t_end:
                    break
                state = apply_event(state, evs[rng.choice(len(evs), p=rates / rates.sum())])
            vals.append(evaluate_dual(state, nu))
        ref_mean = np.mean(vals)
        ref_se = np.std(vals, ddof=1) / np.sqrt(len(vals))
        e = estimate_moment(qq, nu, p, t_end, 20000, seed=8)
        assert abs(e.value - ref_mean) < 3.5 * np.hypot(e.stderr, ref_se)


def test_query_json_roundtrip():
    qq = parse_query("deme[(10),(01)] deme[(11)] + deme[(01),(01)] deme[(10)]")
    back = MomentQuery.from_dict(qq.to_dict())
    assert np.array_equal(back.initial.cells, qq.initial.cells)
    assert np.array_equal(back.initial.deme, qq.initial.deme)


def test_query_shorthand_products():
    qq = parse_query("deme[(10),(01)] deme[(10)]")
    assert qq.initial.frame == [(0, 2), (1, 1)]
    assert evaluate_dual(qq.initial, D37) == pytest.approx(0.21 * 0.3)
