"""Quadratic-cost dispatch (DC-OPF) with multipliers, and efficient bids.

Multiplier conventions follow the Lagrangian

    L = sum f_n(x_n) + nu.(J1 z - J2 x + y) + mu.(J3 z - zbar_c) - lam.x

so stationarity reads ``grad f(x) - J2' nu - lam = 0`` and
``J1' nu + J3' mu = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .lp import SolverError, _independent_rows, solve_sdcopf
from .network import Generator, NetworkCase, build_matrices

KKT_TOL = 1e-8
POSITIVE_TOL = 1e-9


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class DispatchSolution:
    x: np.ndarray
    z: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    lam: np.ndarray
    objective: float
    active: tuple[int, ...] = ()
    iterations: int = 0


@dataclass
class KktReport:
    stationarity: float
    flow_stationarity: float
    balance: float
    limits: float
    nonneg: float
    dual_mu: float
    dual_lam: float
    comp_x: float
    comp_mu: float
    balance_residual: np.ndarray = field(repr=False, default=None)

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.flow_stationarity, self.balance, self.limits,
                   self.nonneg, self.dual_mu, self.dual_lam, self.comp_x, self.comp_mu)

    def ok(self, tol: float = KKT_TOL) -> bool:
        return self.max_residual <= tol


def _qp_data(case: NetworkCase):
    m = build_matrices(case)
    ng, ne = case.n_gens, case.n_lines
    H = np.zeros((ng + ne, ng + ne))
    H[:ng, :ng] = np.diag(2.0 * case.a)
    g = np.concatenate([case.c, np.zeros(ne)])
    Aeq = np.hstack([-m.j2, m.j1])
    beq = -m.y
    # inequalities C v >= d: x >= 0, then z <= zbar, then z >= -zbar
    C = np.zeros((ng + 2 * ne, ng + ne))
    C[:ng, :ng] = np.eye(ng)
    C[ng:ng + ne, ng:] = -np.eye(ne)
    C[ng + ne:, ng:] = np.eye(ne)
    d = np.concatenate([np.zeros(ng), -case.limits, -case.limits])
    return m, H, g, Aeq, beq, C, d


def solve_dcopf(case: NetworkCase, max_iter: int = 500, tol: float = 1e-12, start_bids=None) -> DispatchSolution:
    """Primal active-set method started from a vertex of the dispatch polytope.

    The starting vertex is the bid-LP optimum for ``start_bids`` (the linear
    cost coefficients by default).

    Each iteration solves the equality-constrained KKT system exactly. The
    flow block of the Hessian is zero, so that system can be singular along
    loop flows; the minimum-norm solution is taken, which leaves ``x`` and
    the multipliers unaffected.
    """
    m, H, g, Aeq, beq, C, d = _qp_data(case)
    ng = case.n_gens
    Aeq_r, beq_r, eq_rows = _independent_rows(Aeq, beq)
    start = solve_sdcopf(case, case.c if start_bids is None else start_bids)  # raises InfeasibleError when infeasible
    v = np.concatenate([start.x_opt, start.z_opt])
    nv = v.size
    W: list[int] = []
    log = []
    scale = max(1.0, float(np.max(np.abs(d), initial=0.0)), float(np.max(case.loads, initial=0.0)))
    for it in range(max_iter):
        grad = H @ v + g
        A_w = np.vstack([Aeq_r, C[W]]) if W else Aeq_r
        k = A_w.shape[0]
        K = np.block([[H, A_w.T], [A_w, np.zeros((k, k))]])
        rhs = np.concatenate([-grad, np.zeros(k)])
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        p = sol[:nv]
        mult = -sol[nv:]  # grad + H p = A_w' mult
        if np.linalg.norm(p, np.inf) <= tol * scale:
            kap = mult[Aeq_r.shape[0]:]
            if kap.size == 0 or kap.min() >= -1e-12:
                log.append(("optimal", it))
                break
            worst = kap.min()
            drop = min(i for i, kv in enumerate(kap) if kv <= worst + 1e-15)
            log.append(("drop", W[drop], float(worst)))
            W.pop(drop)
            continue
        Cp = C @ p
        slack = C @ v - d
        alpha, block = 1.0, None
        for i in range(C.shape[0]):
            if i in W or Cp[i] >= -1e-15:
                continue
            step = max(slack[i], 0.0) / -Cp[i]
            # strict improvement keeps the smallest blocking index on ties
            if step < alpha - 1e-15 or (block is not None and abs(step - alpha) <= 1e-15 and i < block):
                alpha, block = step, i
            elif block is None and step <= alpha:
                alpha, block = step, i
        v = v + alpha * p
        if block is not None:
            W.append(block)
            log.append(("add", block, alpha))
    else:
        raise SolverError(f"active-set QP did not converge in {max_iter} iterations", log[-50:])

    x = np.maximum(v[:ng], 0.0)
    z = v[ng:]
    eta = np.zeros(case.n_buses)
    eta[eq_rows] = mult[:Aeq_r.shape[0]]
    kappa = np.zeros(C.shape[0])
    kappa[W] = mult[Aeq_r.shape[0]:]
    nu = -eta
    lam = kappa[:ng]
    mu = kappa[ng:]
    obj = float(np.sum(case.a * x * x + case.c * x))
    return DispatchSolution(x=x, z=z, nu=nu, mu=mu, lam=lam, objective=obj,
                            active=tuple(sorted(W)), iterations=it + 1)


def check_kkt(case: NetworkCase, sol: DispatchSolution, bids=None) -> KktReport:
    """Residuals of the optimality system; ``bids`` replaces the cost gradient."""
    m = build_matrices(case)
    x, z = np.asarray(sol.x, float), np.asarray(sol.z, float)
    nu, mu, lam = np.asarray(sol.nu, float), np.asarray(sol.mu, float), np.asarray(sol.lam, float)
    if x.shape != (case.n_gens,) or z.shape != (case.n_lines,) or nu.shape != (case.n_buses,) \
            or mu.shape != (2 * case.n_lines,) or lam.shape != (case.n_gens,):
        raise ValueError("solution dimensions do not match the case")
    grad = 2.0 * case.a * x + case.c if bids is None else np.asarray(bids, float)
    bal = m.balance_residual(x, z)
    lim_gap = m.j3 @ z - m.zbar_c
    return KktReport(
        stationarity=float(np.max(np.abs(grad - m.j2.T @ nu - lam), initial=0.0)),
        flow_stationarity=float(np.max(np.abs(m.j1.T @ nu + m.j3.T @ mu), initial=0.0)),
        balance=float(np.max(np.abs(bal), initial=0.0)),
        limits=float(max(0.0, np.max(lim_gap, initial=0.0))),
        nonneg=float(max(0.0, -np.min(x, initial=0.0))),
        dual_mu=float(max(0.0, -np.min(mu, initial=0.0))),
        dual_lam=float(max(0.0, -np.min(lam, initial=0.0))),
        comp_x=float(abs(x @ lam)),
        comp_mu=float(abs(mu @ lim_gap)),
        balance_residual=bal,
    )


def dual_value(case: NetworkCase, sol: DispatchSolution) -> float:
    """Lagrange dual function at the solution's multipliers (-inf off its domain)."""
    m = build_matrices(case)
    if np.max(np.abs(m.j1.T @ sol.nu + m.j3.T @ sol.mu), initial=0.0) > 1e-9:
        return -np.inf
    w = m.j2.T @ sol.nu + sol.lam
    return float(np.sum(-(w - case.c) ** 2 / (4.0 * case.a)) + sol.nu @ m.y - sol.mu @ m.zbar_c)


def with_bid_multipliers(case: NetworkCase, sol: DispatchSolution, bids) -> DispatchSolution:
    """Same primal-dual point with ``lam = bids - J2' nu`` (optimality for the bid LP)."""
    m = build_matrices(case)
    return replace(sol, lam=np.asarray(bids, float) - m.j2.T @ sol.nu)


def efficient_bid(case: NetworkCase, sol: DispatchSolution) -> np.ndarray:
    """``b_n = 2 a_n x_n + c_n``; requires every generator to be dispatched."""
    x = np.asarray(sol.x, float)
    idle = [case.generators[n].id for n in np.flatnonzero(x <= POSITIVE_TOL)]
    if idle:
        raise PreconditionError(
            f"generators {idle} have zero optimal output; the efficient bid is not unique, "
            "use nash_from_duals instead")
    return 2.0 * case.a * x + case.c


def nash_from_duals(case: NetworkCase, sol: DispatchSolution) -> np.ndarray:
    """Equilibrium bid built from bus prices; idle buses bid marginal cost at zero."""
    x = np.asarray(sol.x, float)
    pos = case.gen_bus_positions()
    b = np.empty(case.n_gens)
    for n, g in enumerate(case.generators):
        peers = case.generators_at(g.bus)
        if min(x[j] for j in peers) > POSITIVE_TOL:
            b[n] = sol.nu[pos[n]]
        else:
            b[n] = g.c
    return b


def best_response_quantity(bid, gen: Generator):
    """Profit-maximising output at a fixed unit price: ``max(0, (bid - c) / 2a)``."""
    return np.maximum(0.0, (np.asarray(bid, float) - gen.c) / (2.0 * gen.a))


def best_response(bids, a, c) -> np.ndarray:
    """Vectorised :func:`best_response_quantity` over all generators."""
    return np.maximum(0.0, (np.asarray(bids, float) - c) / (2.0 * a))


def payoff(bid, dispatched, gen: Generator):
    d = np.asarray(dispatched, float)
    return bid * d - (gen.a * d * d + gen.c * d)


def payoffs(bids, dispatched, a, c) -> np.ndarray:
    d = np.asarray(dispatched, float)
    return np.asarray(bids, float) * d - (a * d * d + c * d)
