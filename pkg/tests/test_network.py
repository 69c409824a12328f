import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bidmarket.network import (
    Bus, CaseError, Generator, Line, NetworkCase, build_matrices, case_from_dict, case_to_dict,
    get_preset, ieee9_modified, ieee9_light, load_case, save_case, total_load, validate_case,
)
from _cases import random_network


def two_bus(limit=1.0):
    return NetworkCase([Bus(1, 0.0), Bus(2, 1.0)], [Line(1, 2, limit)],
                       [Generator(1, 1, 0.1, 1.0), Generator(2, 2, 0.2, 2.0)])


def test_single_edge_incidence():
    m = build_matrices(two_bus())
    assert m.j1.tolist() == [[1.0], [-1.0]]


def test_nine_bus_generator_assignment():
    m = build_matrices(ieee9_modified())
    assert [int(np.flatnonzero(col)[0]) + 1 for col in m.j2.T] == [1, 1, 2, 2, 3, 3]
    assert m.j2.sum(axis=0).tolist() == [1.0] * 6


def test_stacked_limits_match_box():
    case = ieee9_modified()
    m = build_matrices(case)
    assert m.j3.shape == (18, 9)
    assert np.array_equal(m.zbar_c, np.concatenate([case.limits, case.limits]))
    rng = np.random.default_rng(0)
    for _ in range(200):
        z = rng.uniform(-3.5, 3.5, 9)
        assert np.all(m.j3 @ z <= m.zbar_c) == np.all(np.abs(z) <= case.limits)


def test_nine_bus_limits():
    case = ieee9_modified()
    lim = {(ln.from_bus, ln.to_bus): ln.limit for ln in case.lines}
    assert lim[(5, 6)] == 1.5 and lim[(3, 6)] == 3.0 and lim[(6, 7)] == 1.5
    assert sorted(v for k, v in lim.items() if k not in {(5, 6), (3, 6), (6, 7)}) == [2.5] * 6


def test_validate_nine_bus():
    rep = validate_case(ieee9_modified())
    assert rep.ok and rep.existence_hypothesis and not rep.warnings


def test_validate_flags_single_generator_bus():
    rep = validate_case(two_bus())
    assert rep.ok
    assert not rep.existence_hypothesis
    assert rep.single_generator_buses == [1, 2]


def test_total_load_light_loads():
    assert total_load(ieee9_light()) == 6.0
    assert validate_case(ieee9_light()).total_load == 6.0
    assert total_load(ieee9_modified()) == 7.0


def test_total_load_trivial():
    empty = NetworkCase([Bus(1), Bus(2)], [Line(1, 2, 1.0)], [])
    assert total_load(empty) == 0.0
    uniform = NetworkCase([Bus(i, 0.4) for i in range(1, 6)], [], [])
    assert total_load(uniform) == pytest.approx(5 * 0.4)


@pytest.mark.parametrize("case, fragment", [
    (NetworkCase([Bus(1)], [Line(1, 7, 1.0)], []), "unknown bus 7"),
    (NetworkCase([Bus(1), Bus(2)], [Line(1, 1, 1.0)], []), "self loop"),
    (NetworkCase([Bus(1), Bus(2)], [Line(1, 2, 0.0)], []), "limit must be > 0"),
    (NetworkCase([Bus(1), Bus(2)], [Line(1, 2, 1.0), Line(1, 2, 2.0)], []), "parallel"),
    (NetworkCase([Bus(1, -1.0)], [], []), "load"),
    (NetworkCase([Bus(1)], [], [Generator(1, 3, 0.1, 1.0)]), "generator 1"),
    (NetworkCase([Bus(1)], [], [Generator(1, 1, 0.0, 1.0)]), "quadratic"),
    (NetworkCase([Bus(1)], [], [Generator(1, 1, 0.1, -1.0)]), "linear"),
])
def test_structural_errors(case, fragment):
    rep = validate_case(case)
    assert not rep.ok
    assert any(fragment in e for e in rep.errors)
    with pytest.raises(CaseError, match=fragment):
        build_matrices(case)


def test_reverse_pair_is_not_parallel():
    case = NetworkCase([Bus(1), Bus(2)], [Line(1, 2, 1.0), Line(2, 1, 1.0)], [])
    assert validate_case(case).ok


def test_case_json_roundtrip(tmp_path):
    case = ieee9_modified()
    path = tmp_path / "nine.json"
    save_case(case, path)
    again = load_case(path)
    assert case_to_dict(again) == case_to_dict(case)
    assert np.array_equal(build_matrices(again).j1, build_matrices(case).j1)


def test_case_json_rejects_unknown_keys():
    doc = case_to_dict(ieee9_modified())
    doc["shunts"] = []
    with pytest.raises(CaseError, match="unknown case keys"):
        case_from_dict(doc)
    doc = case_to_dict(ieee9_modified())
    doc["lines"][0]["reactance"] = 0.1
    with pytest.raises(CaseError, match=r"lines\[0\]"):
        case_from_dict(doc)
    with pytest.raises(CaseError, match="missing"):
        case_from_dict(json.loads('{"buses": [], "lines": []}'))


def test_unknown_preset():
    with pytest.raises(CaseError, match="unknown preset"):
        get_preset("ieee14")


def test_build_matrices_deterministic():
    a, b = build_matrices(ieee9_modified()), build_matrices(ieee9_modified())
    for name in ("j1", "j2", "j3", "zbar_c", "y"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), nb=st.integers(2, 6), ng=st.integers(1, 8), extra=st.integers(0, 3))
def test_incidence_column_sums(seed, nb, ng, extra):
    case = random_network(np.random.default_rng(seed), nb, ng, extra_lines=extra)
    m = build_matrices(case)
    assert np.all(m.j1.sum(axis=0) == 0)
    assert np.all((m.j1 == 1).sum(axis=0) == 1) and np.all((m.j1 == -1).sum(axis=0) == 1)
    assert np.all(m.j2.sum(axis=0) == 1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_balance_residual_is_linear(seed):
    rng = np.random.default_rng(seed)
    case = random_network(rng, 4, 4, extra_lines=1)
    m = build_matrices(case)
    x, z = rng.uniform(0, 2, case.n_gens), rng.uniform(-1, 1, case.n_lines)
    res = m.balance_residual(x, z)
    assert np.allclose(res, m.j1 @ z - m.j2 @ x + case.loads)
