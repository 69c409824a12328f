import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bidmarket.dynamics import StepsizeSchedule, StoppingCriterion, compute_B, equilibrium, min_radius, run_baa
from bidmarket.network import Bus, Generator, Line, NetworkCase, ieee9_modified
from bidmarket.robustness import (
    CoalitionView, Conforming, ConstantBid, DisturbanceModel, OwnView, SequenceBids, Strategy,
    contractive_theta, estimate_umax, undercut_chain, iss_envelope, perturbed_bounds,
    proportional_step_violations, run_collusion, run_deviation, run_perturbed, theta_upper,
    unprotected_buses,
)
from _cases import B1_REF

SCHED = StepsizeSchedule(beta=0.01)


@pytest.fixture(scope="module")
def nine():
    return ieee9_modified()


@pytest.fixture(scope="module")
def eq(nine):
    return equilibrium(nine)


def same_trace(a, b):
    return all(np.array_equal(getattr(a, f), getattr(b, f)) for f in ("b", "x_opt", "q", "beta", "b_next"))


def test_zero_disturbance_reduces_to_baa(nine):
    stop = StoppingCriterion(1e-12, 300)
    ref = run_baa(nine, B1_REF, SCHED, stop)
    for model in (DisturbanceModel("bounded", d_max=0.0), DisturbanceModel("custom", sequence=[[0.0] * 6])):
        assert same_trace(run_perturbed(nine, B1_REF, SCHED, model, stop), ref)


def test_disturbance_model_validation():
    for kw in (dict(kind="gust"), dict(kind="state_proportional"), dict(kind="bounded"),
               dict(kind="stepsize_variation"), dict(kind="custom")):
        with pytest.raises(ValueError):
            DisturbanceModel(**kw)


def test_theta_range_enforced(nine):
    model = DisturbanceModel("state_proportional", theta=0.5)
    with pytest.raises(ValueError, match="theta"):
        run_perturbed(nine, B1_REF, SCHED, model, StoppingCriterion(1e-12, 5))


def _stepsize_runs(nine):
    stop = StoppingCriterion(1e-12, 3000)
    wide = StepsizeSchedule("per_generator_random", 0.01, 0.001, 0.1)
    decay = StepsizeSchedule("decaying", 0.01, 0.001, 0.1, decay=500.0)
    return [run_perturbed(nine, B1_REF, SCHED, DisturbanceModel("stepsize_variation", schedule=s), stop, seed=4)
            for s in (wide, decay)]


def test_stepsize_variation_neighbourhoods(nine):
    wide, decay = _stepsize_runs(nine)
    base = run_baa(nine, B1_REF, SCHED, StoppingCriterion(1e-12, 3000))
    tail = slice(2000, None)
    assert wide.dist[tail].mean() > base.dist[tail].mean()
    assert decay.terminal_distance() < wide.terminal_distance()
    # recorded d is exactly the stepsize deviation term
    k = 10
    assert np.allclose(wide.b[k + 1], np.maximum(0, wide.b[k] + 0.01 * (wide.x_opt[k] - wide.q[k]) + wide.d[k]))


def test_perturbed_bounds_zero_disturbance(nine):
    r = 1.35
    pb = perturbed_bounds(nine, r, 0.05, 0.0)
    B = compute_B(nine, r)
    assert pb.G2 == 0.0
    assert pb.G1 == pytest.approx(math.sqrt(B * r * r / (2 * 0.1225) + r * r))
    assert pb.G == pb.G1


def test_perturbed_bounds_independent_evaluation(nine):
    pb = perturbed_bounds(nine, 1.35, 0.1, 0.05)
    mp.mp.dps = 40
    a_max, a_min, y, r, th, d = mp.mpf("0.1225"), mp.mpf("0.075"), mp.mpf(7), mp.mpf("1.35"), mp.mpf("0.1"), mp.mpf("0.05")
    B = 1 / (2 * a_max) / (1 / (2 * a_min ** 2) + 16 * y ** 2 / r ** 2)
    G1 = mp.sqrt(B * r ** 2 / (2 * a_max) + (2 * d + r) ** 2)
    G2 = (2 + 1 / th) * d
    rate = mp.sqrt(1 - B / (2 * a_max) + 2 * th + 4 * th ** 2)
    ult = mp.sqrt(1 + B / (2 * a_max) + 2 * th + 4 * th ** 2) * r
    for got, want in ((pb.G1, G1), (pb.G2, G2), (pb.G, max(G1, G2)), (pb.rate_factor, rate), (pb.ultimate, ult)):
        assert got == pytest.approx(float(want), rel=1e-13)


def test_theta_out_of_range(nine):
    with pytest.raises(ValueError, match="admissible"):
        perturbed_bounds(nine, 1.35, 0.2, 0.05)
    with pytest.raises(ValueError):
        perturbed_bounds(nine, 1.35, 0.0, 0.05)


def test_rate_factor_condition_on_grid():
    # admissible theta alone does not make the factor contractive;
    # it is below one exactly when 2 theta + 4 theta^2 < alpha / (2 a_max)
    a_max = 0.1225
    case = ieee9_modified()
    seen_above = False
    for alpha in np.linspace(0.001, 0.2, 25):
        for frac in np.linspace(0.02, 0.98, 25):
            theta = frac * theta_upper(alpha, a_max)
            pb = perturbed_bounds(case, 1.35, theta, 0.0, alpha=alpha)
            contract = 2 * theta + 4 * theta ** 2 < alpha / (2 * a_max)
            assert (pb.rate_factor < 1) == contract
            seen_above |= pb.rate_factor >= 1
        th = contractive_theta(alpha, a_max)
        assert perturbed_bounds(case, 1.35, th, 0.0, alpha=alpha).rate_factor < 1
    assert seen_above


def test_state_proportional_step_inequality(nine):
    r = min_radius(nine, 0.01)
    theta = contractive_theta(0.01, 0.1225)
    tr = run_perturbed(nine, B1_REF, SCHED, DisturbanceModel("state_proportional", theta=theta),
                       StoppingCriterion(1e-12, 800), seed=2)
    norms = np.linalg.norm(tr.d, axis=1)
    assert np.all(norms <= theta * tr.dist + 1e-12)
    assert proportional_step_violations(tr, nine, r, theta, 0.01) == []


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10 ** 6), d_max=st.floats(0.0, 0.2))
def test_bounded_disturbance_envelope(seed, d_max):
    case = ieee9_modified()
    r = min_radius(case, 0.01)
    tr = run_perturbed(case, B1_REF, SCHED, DisturbanceModel("bounded", d_max=d_max),
                       StoppingCriterion(1e-12, 400), seed=seed)
    assert np.all(np.linalg.norm(tr.d, axis=1) <= d_max + 1e-12)
    pb = perturbed_bounds(case, r, contractive_theta(0.01, 0.1225), d_max, alpha=0.01)
    assert np.all(tr.dist <= iss_envelope(tr, pb))


def test_conforming_deviation_is_baa(nine):
    stop = StoppingCriterion(1e-12, 200)
    assert same_trace(run_deviation(nine, B1_REF, SCHED, 3, Conforming(), stop), run_baa(nine, B1_REF, SCHED, stop))


def test_constant_high_bid_loses_dispatch(nine, eq):
    _, b_star = eq
    tr = run_deviation(nine, B1_REF, SCHED, 1, ConstantBid(b_star[0] + 0.3), StoppingCriterion(1e-12, 1500))
    assert np.all(tr.b[1:, 0] == b_star[0] + 0.3)
    zero = np.flatnonzero(tr.x_opt[:, 0] <= 1e-12)
    assert zero.size and np.all(tr.x_opt[zero[0]:, 0] <= 1e-12)


def test_bid_below_cost_never_pays(nine):
    tr = run_deviation(nine, B1_REF, SCHED, 5, ConstantBid(0.5), StoppingCriterion(1e-12, 400))
    assert np.all(tr.payoff[1:, 4] <= 1e-12)


def test_deviation_not_profitable_against_umax(nine, eq):
    _, b_star = eq
    r = min_radius(nine, 0.01)
    for gid, strat in ((1, ConstantBid(b_star[0] + 0.3)), (4, SequenceBids([5.0, 3.0, 1.5])), (6, ConstantBid(2.0))):
        tr = run_deviation(nine, B1_REF, SCHED, gid, strat, StoppingCriterion(1e-12, 1500))
        umax = estimate_umax(nine, b_star, r, gid, sample_count=200, seed=1).value
        tail = tr.payoff[-300:, gid - 1]
        assert not np.all(tail > umax)


def test_empty_collusion_is_baa(nine):
    stop = StoppingCriterion(1e-12, 200)
    assert same_trace(run_collusion(nine, B1_REF, SCHED, [], {}, stop), run_baa(nine, B1_REF, SCHED, stop))


def test_collusion_requires_conformer_per_bus(nine):
    assert unprotected_buses(nine, [1, 2]) == [1]
    strategies = {1: ConstantBid(5.0), 2: ConstantBid(5.0)}
    with pytest.raises(ValueError, match="no conforming generator"):
        run_collusion(nine, B1_REF, SCHED, [1, 2], strategies, StoppingCriterion(1e-12, 5))
    with pytest.warns(RuntimeWarning):
        tr = run_collusion(nine, B1_REF, SCHED, [1, 2], strategies, StoppingCriterion(1e-12, 5), allow_unprotected=True)
    assert any("unprotected" in n for n in tr.notes)


def test_whole_bus_collusion_with_binding_line():
    case = NetworkCase([Bus(1, 0.0), Bus(2, 2.0)], [Line(1, 2, 0.8)],
                       [Generator(1, 1, 0.1, 1.0), Generator(2, 1, 0.1, 1.0),
                        Generator(3, 2, 0.1, 1.2), Generator(4, 2, 0.1, 1.2)])
    ramp = list(np.linspace(2.0, 20.0, 300))
    strategies = {3: SequenceBids(ramp), 4: SequenceBids(ramp)}
    with pytest.warns(RuntimeWarning):
        tr = run_collusion(case, case.c + 1.0, StepsizeSchedule(beta=0.05), [3, 4], strategies,
                           StoppingCriterion(1e-12, 300), allow_unprotected=True)
    local = tr.payoff[:, 2] + tr.payoff[:, 3]
    assert np.allclose(tr.x_opt[5:, 2] + tr.x_opt[5:, 3], 1.2)
    assert local[-1] > local[5] + 10.0 and np.all(np.diff(local[5:]) > 0)


class _Spy(Strategy):
    def __init__(self):
        self.views = []

    def next_bid(self, view):
        self.views.append(view)
        return view.bids[-1]


def test_information_sets(nine):
    spy = _Spy()
    run_deviation(nine, B1_REF, SCHED, 2, spy, StoppingCriterion(1e-12, 4))
    v = spy.views[-1]
    assert type(v) is OwnView and len(v.bids) == v.k == 4
    with pytest.raises(ValueError):
        v.bids[0] = 0.0
    spies = {1: _Spy(), 3: _Spy()}
    run_collusion(nine, B1_REF, SCHED, [1, 3], spies, StoppingCriterion(1e-12, 3))
    cv = spies[3].views[-1]
    assert isinstance(cv, CoalitionView)
    assert set(cv.shared_bids) == {1, 3} and set(cv.shared_dispatch) == {1, 3} and cv.observed == {}
    assert np.array_equal(cv.shared_bids[1], spies[1].views[-1].bids)


def test_undercut_chain_notes_extra_information(nine, eq):
    _, b_star = eq
    tr = run_collusion(nine, B1_REF, SCHED, [1, 3, 5], undercut_chain(nine, [1, 3, 5], b_star),
                       StoppingCriterion(1e-12, 50), seed=1)
    assert any("same-round" in n for n in tr.notes)
    assert np.all(tr.b[1:, [0, 2, 4]] >= b_star[[0, 2, 4]] - 1e-12)


def test_umax_estimate(nine, eq):
    x_star, b_star = eq
    ustar = b_star * x_star - (nine.a * x_star ** 2 + nine.c * x_star)
    est = estimate_umax(nine, b_star, 1.35, 1, sample_count=300, seed=5)
    assert est.value >= ustar[0] - 1e-12
    assert ustar[0] == pytest.approx(0.2239, abs=1e-4)
    assert est.samples == 300 and est.radius == pytest.approx((1 + compute_B(nine, 1.35) / 0.245) * 1.35)
    assert estimate_umax(nine, b_star, 1.35, 1, sample_count=300, seed=5).value == est.value
    tiny = estimate_umax(nine, b_star, 1e-9, 1, sample_count=20, seed=5)
    # centre only: best payoff over the optimal face at b* (the unit may take the whole bus export)
    face_best = b_star[0] * 1.5 - (0.11 * 1.5 ** 2 + 3.5 * 1.5)
    assert tiny.value == pytest.approx(max(ustar[0], face_best), abs=1e-6)
