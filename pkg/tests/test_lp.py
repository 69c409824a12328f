import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bidmarket.lp import (
    EnumerationTooLarge, InfeasibleError, enumerate_vertices, face_range, is_basic_feasible,
    optimal_vertices, solve_sdcopf, standard_form,
)
from bidmarket.network import Bus, Generator, Line, NetworkCase, build_matrices, ieee9_modified, total_load
from bidmarket.opf import efficient_bid, solve_dcopf
from _cases import random_network


def single_bus(y, bids_like=2):
    return NetworkCase([Bus(1, y)], [], [Generator(n + 1, 1, 0.1, 1.0) for n in range(bids_like)])


def feasible_random(rng, max_vars=12):
    while True:
        nb = int(rng.integers(2, 4))
        ne = nb - 1 + int(rng.integers(0, 2))
        ng = int(rng.integers(1, max_vars - ne + 1))
        case = random_network(rng, nb, ng, extra_lines=ne - (nb - 1))
        if case.n_gens + case.n_lines > max_vars:
            continue
        try:
            solve_sdcopf(case, np.ones(case.n_gens))
        except InfeasibleError:
            continue
        return case


def test_nine_bus_at_equilibrium_bids():
    case = ieee9_modified()
    sol = solve_dcopf(case)
    b = efficient_bid(case, sol)
    lp = solve_sdcopf(case, b)
    assert lp.objective == pytest.approx(b @ sol.x, abs=1e-6)
    assert lp.is_vertex and is_basic_feasible(case, lp)


def test_cheaper_generator_takes_all():
    lp = solve_sdcopf(single_bus(2.5), [1.0, 2.0])
    assert np.allclose(lp.x_opt, [2.5, 0.0])


def test_single_generator_single_vertex():
    verts = enumerate_vertices(single_bus(1.7, 1), [3.0])
    assert len(verts) == 1 and verts[0].x_opt == pytest.approx([1.7])


def test_tie_gives_two_optimal_vertices():
    opt = optimal_vertices(single_bus(1.0), [2.0, 2.0])
    pts = sorted(tuple(np.round(v.x_opt, 12)) for v in opt)
    assert pts == [(0.0, 1.0), (1.0, 0.0)]


def test_congested_two_bus_vertices():
    y2, zbar = 2.0, 0.7
    case = NetworkCase([Bus(1, 0.0), Bus(2, y2)], [Line(1, 2, zbar)],
                       [Generator(1, 1, 0.1, 1.0), Generator(2, 2, 0.1, 1.0)])
    verts = enumerate_vertices(case, [1.0, 5.0])
    assert verts
    for v in verts:
        assert v.x_opt[1] >= y2 - zbar - 1e-12
    assert solve_sdcopf(case, [1.0, 5.0]).x_opt == pytest.approx([0.7, 1.3])


def test_enumeration_guard():
    with pytest.raises(EnumerationTooLarge):
        enumerate_vertices(ieee9_modified(), np.ones(6))


def test_rejects_negative_or_misshaped_bids():
    with pytest.raises(ValueError):
        solve_sdcopf(single_bus(1.0), [-1.0, 1.0])
    with pytest.raises(ValueError):
        solve_sdcopf(single_bus(1.0), [1.0])


def test_infeasibility_certificate():
    case = NetworkCase([Bus(1, 0.0), Bus(2, 2.0), Bus(3, 0.0)], [Line(1, 2, 0.5), Line(2, 3, 0.5)],
                       [Generator(1, 1, 0.1, 1.0), Generator(2, 3, 0.1, 1.0)])
    with pytest.raises(InfeasibleError) as info:
        solve_sdcopf(case, [1.0, 1.0])
    y = info.value.certificate
    sf = standard_form(case)
    assert y is not None and y.shape == (sf.A.shape[0],)
    # Farkas: A'y <= 0 and b'y > 0 rule out any v >= 0 with A v = b
    assert np.all(sf.A.T @ y <= 1e-9)
    assert sf.b @ y > 1e-9


def test_deterministic_policy_is_repeatable():
    case = ieee9_modified()
    b = np.array([3.0, 3.0, 1.0, 1.0, 2.0, 2.0])
    a, c = solve_sdcopf(case, b), solve_sdcopf(case, b)
    assert a.basis == c.basis and np.array_equal(a.x_opt, c.x_opt)


def test_randomized_policy_optimal_and_seeded():
    case = ieee9_modified()
    b = np.array([3.0, 3.0, 1.0, 1.0, 2.0, 2.0])
    ref = solve_sdcopf(case, b).objective
    runs = []
    for seed in (0, 0, 1):
        rng = np.random.default_rng(seed)
        sols = [solve_sdcopf(case, b, rng=rng) for _ in range(5)]
        assert all(s.objective == pytest.approx(ref, abs=1e-9) for s in sols)
        assert all(is_basic_feasible(case, s) for s in sols)
        runs.append([s.x_opt for s in sols])
    assert all(np.array_equal(u, v) for u, v in zip(runs[0], runs[1]))


def test_face_range_at_equilibrium():
    case = ieee9_modified()
    sol = solve_dcopf(case)
    b = efficient_bid(case, sol)
    for n in range(case.n_gens):
        lo, hi = face_range(case, b, n)
        assert lo - 1e-9 <= sol.x[n] <= hi + 1e-9
    # both bus-1 units share a price, so either may carry the whole export
    assert face_range(case, b, 0) == pytest.approx((0.0, 1.5), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_matches_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    case = feasible_random(rng)
    bids = np.round(rng.uniform(0, 5, case.n_gens), 3)
    sol = solve_sdcopf(case, bids)
    verts = enumerate_vertices(case, bids)
    assert sol.objective == pytest.approx(verts[0].objective, abs=1e-9)
    assert all(sol.objective <= v.objective + 1e-9 for v in verts)
    assert is_basic_feasible(case, sol)
    m = build_matrices(case)
    assert np.max(np.abs(m.balance_residual(sol.x_opt, sol.z_opt))) <= 1e-8
    assert np.all(np.abs(sol.z_opt) <= case.limits + 1e-8) and np.all(sol.x_opt >= -1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_optimal_face_monotonicity(seed):
    rng = np.random.default_rng(seed)
    case = feasible_random(rng)
    b, b2 = rng.uniform(0, 5, case.n_gens), rng.uniform(0, 5, case.n_gens)
    x, x2 = solve_sdcopf(case, b).x_opt, solve_sdcopf(case, b2).x_opt
    assert (x - x2) @ (b2 - b) >= -1e-9


def test_dispatch_gap_bounded_by_twice_load():
    case = ieee9_modified()
    x_star = solve_dcopf(case).x
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = solve_sdcopf(case, rng.uniform(0, 10, 6)).x_opt
        assert np.linalg.norm(x - x_star) <= 2 * total_load(case) + 1e-12
