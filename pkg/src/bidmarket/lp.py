"""Bid-weighted dispatch LP solved by a dense two-phase primal simplex.

The LP is put in standard form by shifting each flow to ``w = z + zbar`` with
``w + s = 2 zbar``. Variables are ordered ``x_1..x_N, w_1..w_E, s_1..s_E``.
Pivoting uses Bland's smallest-index rule for both the entering and the
leaving choice, so the vertex returned for a given bid vector is fully
determined; a random priority permutation can be supplied to sample other
optimal vertices.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .network import NetworkCase, build_matrices

PIVOT_TOL = 1e-11
COST_TOL = 1e-11
FEAS_TOL = 1e-9


class InfeasibleError(RuntimeError):
    """No dispatch meets every load within the line limits.

    ``certificate`` holds a Farkas multiplier on the bus balance rows: weighted
    bus loads exceed what the weighted network can deliver.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class SolverError(RuntimeError):
    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log or []


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class LpSolution:
    x_opt: np.ndarray
    z_opt: np.ndarray
    basis: tuple[int, ...]
    basis_names: tuple[str, ...]
    objective: float
    is_vertex: bool = True
    pivots: int = 0


@dataclass(frozen=True)
class StandardForm:
    A: np.ndarray       # reduced to independent rows
    b: np.ndarray
    n_gens: int
    n_lines: int
    zbar: np.ndarray
    names: tuple[str, ...]
    rows: tuple[int, ...]  # original row index of each kept row

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    def split(self, v: np.ndarray):
        ng, ne = self.n_gens, self.n_lines
        x = v[:ng]
        z = v[ng:ng + ne] - self.zbar
        return x, z


def _independent_rows(A: np.ndarray, b: np.ndarray, tol=1e-10):
    """Drop linearly dependent rows; raise if the dropped rows are inconsistent."""
    keep = []
    basis = np.zeros((0, A.shape[1]))
    for i in range(A.shape[0]):
        trial = np.vstack([basis, A[i]])
        if np.linalg.matrix_rank(trial, tol) > basis.shape[0]:
            keep.append(i)
            basis = trial
    Ak, bk = A[keep], b[keep]
    # dependent rows must be consistent with the kept ones
    coef, *_ = np.linalg.lstsq(Ak.T, A.T, rcond=None)
    if np.max(np.abs(coef.T @ bk - b), initial=0.0) > 1e-8:
        cert = np.zeros(A.shape[0])
        bad = int(np.argmax(np.abs(coef.T @ bk - b)))
        cert[bad] = 1.0
        cert[keep] -= coef[:, bad]
        raise InfeasibleError("balance rows are inconsistent (an island's load cannot be served)", cert)
    return Ak, bk, keep


@lru_cache(maxsize=64)
def standard_form(case: NetworkCase) -> StandardForm:
    m = build_matrices(case)
    ng, ne = case.n_gens, case.n_lines
    zbar = case.limits
    A_flow = np.hstack([-m.j2, m.j1, np.zeros((case.n_buses, ne))])
    b_flow = -m.y + m.j1 @ zbar
    A_box = np.hstack([np.zeros((ne, ng)), np.eye(ne), np.eye(ne)])
    b_box = 2.0 * zbar
    A = np.vstack([A_flow, A_box])
    b = np.concatenate([b_flow, b_box])
    A, b, rows = _independent_rows(A, b)
    names = tuple([f"x{g.id}" for g in case.generators]
                  + [f"w{e + 1}" for e in range(ne)]
                  + [f"s{e + 1}" for e in range(ne)])
    return StandardForm(A=A, b=b, n_gens=ng, n_lines=ne, zbar=zbar, names=names, rows=tuple(rows))


class _Tableau:
    """Constraint rows ``[B^-1 A | B^-1 b]`` plus the current basis."""

    def __init__(self, T: np.ndarray, basis: list[int]):
        self.T = T
        self.basis = basis

    def copy(self):
        return _Tableau(self.T.copy(), list(self.basis))

    def pivot(self, row: int, col: int, r: np.ndarray | None = None):
        T = self.T
        T[row] /= T[row, col]
        colv = T[:, col].copy()
        colv[row] = 0.0
        T -= np.outer(colv, T[row])
        if r is not None:
            r -= r[col] * T[row]
        self.basis[row] = col

    def run(self, cost: np.ndarray, priority: np.ndarray, n_active: int, max_pivots: int, log: list,
            allowed: np.ndarray | None = None):
        """Bland-rule simplex over columns ``[0, n_active)``; returns pivot count.

        ``allowed`` masks columns that may enter the basis.
        """
        T = self.T
        cb = cost[self.basis]
        r = np.concatenate([cost, [0.0]]) - cb @ T
        self.reduced = r
        pivots = 0
        while True:
            rc = r[:n_active]
            mask = rc < -COST_TOL
            if allowed is not None:
                mask &= allowed[:n_active]
            cand = np.flatnonzero(mask)
            if cand.size == 0:
                return pivots
            col = int(cand[np.argmin(priority[cand])])
            colv = T[:, col]
            rows = np.flatnonzero(colv > PIVOT_TOL)
            if rows.size == 0:
                raise SolverError("LP is unbounded; the dispatch polytope should be compact", log)
            ratios = T[rows, -1] / colv[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            row = int(min(ties, key=lambda i: priority[self.basis[i]]))
            log.append((col, row, float(best)))
            self.pivot(row, col, r)
            pivots += 1
            if pivots > max_pivots:
                raise SolverError(f"simplex exceeded {max_pivots} pivots", log[-50:])


@lru_cache(maxsize=64)
def _phase_one(case: NetworkCase) -> _Tableau:
    """Feasible starting basis for the dispatch polytope (independent of bids)."""
    sf = standard_form(case)
    A, b = sf.A.copy(), sf.b.copy()
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    T = np.hstack([A, np.eye(m), b[:, None]])
    basis = [n + i for i in range(m)]
    # box rows carry their own unit slack; use it instead of an artificial
    for i in range(m):
        for j in np.flatnonzero(A[i]):
            if j >= sf.n_gens + sf.n_lines and A[i, j] == 1.0 and np.count_nonzero(A[:, j]) == 1:
                basis[i] = int(j)
                break
    tab = _Tableau(T, basis)
    cost = np.concatenate([np.zeros(n), np.ones(m)])
    log: list = []
    tab.run(cost, np.arange(n + m), n + m, 50 * (n + m), log)
    infeas = float(np.sum(tab.T[[i for i, j in enumerate(tab.basis) if j >= n], -1]))
    if infeas > FEAS_TOL:
        r = np.concatenate([cost, [0.0]]) - cost[tab.basis] @ tab.T
        y = 1.0 - r[n:n + m]
        y[neg] *= -1
        buses = [case.buses[sf.rows[i]].id for i in np.flatnonzero(np.abs(y) > 1e-9)
                 if sf.rows[i] < case.n_buses]
        raise InfeasibleError(
            f"no feasible dispatch: aggregate load on buses {buses} exceeds the supply "
            f"the network can route to them (phase-1 residual {infeas:.3g})",
            certificate=y,
        )
    # drive remaining zero-level artificials out of the basis
    keep_rows = []
    for i in range(m):
        j = tab.basis[i]
        if j < n:
            keep_rows.append(i)
            continue
        cands = np.flatnonzero(np.abs(tab.T[i, :n]) > 1e-9)
        if cands.size:
            tab.pivot(i, int(cands[0]))
            keep_rows.append(i)
    T2 = np.hstack([tab.T[keep_rows, :n], tab.T[keep_rows, -1:]])
    return _Tableau(T2, [tab.basis[i] for i in keep_rows])


def _priority(n: int, rng) -> np.ndarray:
    if rng is None:
        return np.arange(n)
    pr = np.empty(n, dtype=int)
    pr[rng.permutation(n)] = np.arange(n)
    return pr


def solve_sdcopf(case: NetworkCase, bids, rng: np.random.Generator | None = None) -> LpSolution:
    """Minimise ``bids @ x`` over the dispatch polytope; returns a vertex.

    With ``rng=None`` the pivot priority is the variable order (Bland).
    Otherwise a random priority permutation drawn from ``rng`` is used.
    """
    bids = np.asarray(bids, dtype=float)
    sf = standard_form(case)
    if bids.shape != (sf.n_gens,):
        raise ValueError(f"expected {sf.n_gens} bids, got shape {bids.shape}")
    if np.any(bids < 0):
        raise ValueError("bids must be nonnegative")
    tab = _phase_one(case).copy()
    n = sf.n_vars
    cost = np.zeros(n)
    cost[:sf.n_gens] = bids
    log: list = []
    pivots = tab.run(cost, _priority(n, rng), n, 50 * n, log)
    v = np.zeros(n)
    v[tab.basis] = tab.T[:, -1]
    v[np.abs(v) < 1e-13] = 0.0
    x, z = sf.split(v)
    basis = tuple(sorted(tab.basis))
    return LpSolution(
        x_opt=x.copy(), z_opt=z.copy(), basis=basis,
        basis_names=tuple(sf.names[j] for j in basis),
        objective=float(bids @ x), is_vertex=True, pivots=pivots,
    )


def face_range(case: NetworkCase, bids, index: int) -> tuple[float, float]:
    """Min and max of ``x[index]`` over the whole optimal face for ``bids``."""
    bids = np.asarray(bids, dtype=float)
    sf = standard_form(case)
    n = sf.n_vars
    tab = _phase_one(case).copy()
    cost = np.zeros(n)
    cost[:sf.n_gens] = bids
    log: list = []
    tab.run(cost, np.arange(n), n, 50 * n, log)
    scale = max(1.0, float(np.max(np.abs(bids), initial=0.0)))
    # columns with positive reduced cost are zero on every optimizer
    allowed = tab.reduced[:n] <= 1e-9 * scale
    out = []
    for sign in (1.0, -1.0):
        t = tab.copy()
        e = np.zeros(n)
        e[index] = sign
        t.run(e, np.arange(n), n, 50 * n, log, allowed=allowed)
        v = np.zeros(n)
        v[t.basis] = t.T[:, -1]
        out.append(float(v[index]))
    return out[0], out[1]


def is_basic_feasible(case: NetworkCase, sol: LpSolution, tol=1e-9) -> bool:
    """True when the basis columns are independent and reproduce the point."""
    sf = standard_form(case)
    B = sf.A[:, list(sol.basis)]
    if B.shape[0] != B.shape[1] or np.linalg.matrix_rank(B) < B.shape[1]:
        return False
    vb = np.linalg.solve(B, sf.b)
    if np.any(vb < -tol):
        return False
    v = np.zeros(sf.n_vars)
    v[list(sol.basis)] = vb
    x, z = sf.split(v)
    return bool(np.allclose(x, sol.x_opt, atol=1e-8) and np.allclose(z, sol.z_opt, atol=1e-8))


def enumerate_vertices(case: NetworkCase, bids, max_dims: int = 12) -> list[LpSolution]:
    """Every basic feasible solution of the dispatch polytope, one per distinct point.

    Brute force over column subsets; refuses when ``N + E > max_dims``.
    """
    bids = np.asarray(bids, dtype=float)
    dims = case.n_gens + case.n_lines
    if dims > max_dims:
        raise EnumerationTooLarge(f"{dims} variables exceeds enumeration guard {max_dims}")
    sf = standard_form(case)
    m, n = sf.A.shape
    ng, ne = sf.n_gens, sf.n_lines
    found: dict[tuple, LpSolution] = {}
    for cols in itertools.combinations(range(n), m):
        cset = set(cols)
        # w_e and s_e cannot both be zero because w_e + s_e = 2 zbar_e > 0
        if any(ng + e not in cset and ng + ne + e not in cset for e in range(ne)):
            continue
        B = sf.A[:, cols]
        try:
            vb = np.linalg.solve(B, sf.b)
        except np.linalg.LinAlgError:
            continue
        if np.linalg.cond(B) > 1e12 or np.any(vb < -FEAS_TOL):
            continue
        v = np.zeros(n)
        v[list(cols)] = np.maximum(vb, 0.0)
        x, z = sf.split(v)
        key = tuple(np.round(np.concatenate([x, z]), 9))
        if key in found:
            continue
        found[key] = LpSolution(
            x_opt=x, z_opt=z, basis=tuple(cols),
            basis_names=tuple(sf.names[j] for j in cols),
            objective=float(bids @ x), is_vertex=True,
        )
    return sorted(found.values(), key=lambda s: s.objective)


def optimal_vertices(case: NetworkCase, bids, max_dims: int = 12, tol: float = 1e-9) -> list[LpSolution]:
    """Vertices on the optimal face, from the enumeration oracle."""
    verts = enumerate_vertices(case, bids, max_dims)
    best = verts[0].objective
    return [v for v in verts if v.objective <= best + tol * max(1.0, abs(best))]
