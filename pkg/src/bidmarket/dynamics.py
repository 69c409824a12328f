"""Bid Adjustment Algorithm: simulation engine, convergence bounds and per-step audits."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lp import solve_sdcopf
from .network import NetworkCase, total_load
from .opf import POSITIVE_TOL, best_response, efficient_bid, payoffs, solve_dcopf

log = logging.getLogger(__name__)

DIAG_TOL = 1e-9

_STREAM_IDS = {"stepsizes": 1, "disturbance": 2, "strategy": 3, "pivots": 4, "init": 5, "umax": 6}


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent named RNG stream derived from one experiment seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAM_IDS[name]]))


# -- schedules and stopping ----------------------------------------------------

@dataclass
class StepsizeSchedule:
    """Stepsizes per iteration.

    ``beta`` is the common (nominal) stepsize. ``per_generator_random`` draws
    each generator's stepsize uniformly from ``[low, high]`` every iteration;
    ``decaying`` does the same from an interval that shrinks onto ``beta``
    with time constant ``decay``. ``custom`` replays ``sequence`` (scalars or
    per-generator rows), holding the last entry.
    """

    kind: str = "constant"
    beta: float = 0.01
    low: float | None = None
    high: float | None = None
    decay: float = 500.0
    sequence: Sequence | None = None

    KINDS = ("constant", "per_generator_random", "decaying", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown stepsize kind {self.kind!r}")
        if self.kind in ("per_generator_random", "decaying"):
            if self.low is None or self.high is None or not 0 < self.low <= self.high:
                raise ValueError(f"{self.kind} schedule needs 0 < low <= high")
        if self.kind == "decaying" and not self.low <= self.beta <= self.high:
            raise ValueError("decaying schedule: beta must lie inside [low, high]")
        if self.kind == "custom" and not self.sequence:
            raise ValueError("custom schedule needs a nonempty sequence")
        if self.kind != "custom" and not self.beta > 0:
            raise ValueError("stepsize must be positive")

    @property
    def heterogeneous(self) -> bool:
        if self.kind == "custom":
            return any(np.ndim(s) > 0 for s in self.sequence)
        return self.kind != "constant"

    @property
    def alpha(self) -> float:
        """Lower bound on the nominal stepsize over all iterations."""
        if self.kind == "custom":
            return float(min(np.min(s) for s in self.sequence))
        return float(self.beta)

    def interval(self, k: int) -> tuple[float, float]:
        if self.kind == "per_generator_random":
            return self.low, self.high
        if self.kind == "decaying":
            rho = math.exp(-(k - 1) / self.decay)
            shrink = 1.0 - rho
            return self.low + (self.beta - self.low) * shrink, self.high - (self.high - self.beta) * shrink
        return self.beta, self.beta

    def draw(self, k: int, n: int, rng: np.random.Generator) -> tuple[float, np.ndarray]:
        """Nominal stepsize and per-generator stepsizes for iteration ``k``."""
        if self.kind == "constant":
            return self.beta, np.full(n, self.beta)
        if self.kind == "custom":
            s = self.sequence[min(k, len(self.sequence)) - 1]
            vec = np.broadcast_to(np.asarray(s, float), (n,)).copy()
            return float(np.mean(vec)) if np.ndim(s) else float(s), vec
        lo, hi = self.interval(k)
        return self.beta, rng.uniform(lo, hi, size=n)


@dataclass
class StoppingCriterion:
    epsilon: float = 1e-4
    max_iters: int = 10000

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass(frozen=True)
class IsoPolicy:
    """How the ISO picks among optimal vertices."""

    kind: str = "deterministic"
    seed: int | None = None

    def solver(self, case: NetworkCase, seed: int = 0) -> Callable:
        if self.kind == "deterministic":
            return lambda b: solve_sdcopf(case, b)
        if self.kind == "randomized":
            rng = substream(self.seed if self.seed is not None else seed, "pivots")
            return lambda b: solve_sdcopf(case, b, rng=rng)
        raise ValueError(f"unknown ISO policy {self.kind!r}")


# -- closed-form bounds ---------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceParams:
    r: float
    a_max: float
    a_min: float
    ybar: float
    b_of_r: float


def _B(r, a_max, a_min, ybar):
    return (1.0 / (2.0 * a_max)) / (1.0 / (2.0 * a_min ** 2) + 16.0 * ybar ** 2 / r ** 2)


def compute_B(case: NetworkCase, r: float) -> float:
    """Largest stepsize that guarantees contraction outside the radius-``r`` ball."""
    if not r > 0:
        raise ValueError("radius must be positive")
    return _B(r, case.a.max(), case.a.min(), total_load(case))


def min_radius(case: NetworkCase, beta: float) -> float:
    """Smallest ``r`` with ``compute_B(case, r) >= beta`` (inf if none)."""
    a_max, a_min, ybar = case.a.max(), case.a.min(), total_load(case)
    denom = 1.0 / (2.0 * a_max * beta) - 1.0 / (2.0 * a_min ** 2)
    if denom <= 0:
        return math.inf
    return 4.0 * ybar / math.sqrt(denom)


def convergence_params(case: NetworkCase, r: float) -> ConvergenceParams:
    return ConvergenceParams(r=r, a_max=float(case.a.max()), a_min=float(case.a.min()),
                             ybar=total_load(case), b_of_r=compute_B(case, r))


def ultimate_bound(case: NetworkCase, r: float) -> float:
    return math.sqrt(1.0 + compute_B(case, r) / (2.0 * case.a.max())) * r


def stopping_guarantee(epsilon: float, alpha: float, a_max: float) -> float:
    """Distance-to-equilibrium guarantee when consecutive bids differ by <= epsilon."""
    if not 0 < alpha <= 2 * a_max:
        raise ValueError("need 0 < alpha <= 2 a_max")
    return epsilon / (1.0 - math.sqrt(1.0 - alpha / (2.0 * a_max)))


# -- bid update -----------------------------------------------------------------

def bid_update(b, x_opt, q, beta, d=None) -> np.ndarray:
    """``max(0, b + beta (x_opt - q) + d)`` componentwise."""
    step = np.asarray(b, float) + np.asarray(beta, float) * (np.asarray(x_opt, float) - np.asarray(q, float))
    if d is not None:
        step = step + d
    return np.maximum(0.0, step)


# -- traces -----------------------------------------------------------------------

@dataclass
class MarketTrace:
    """Per-iteration record of a run; row ``i`` is iteration ``k = i + 1``."""

    b: np.ndarray
    x_opt: np.ndarray
    q: np.ndarray
    beta: np.ndarray          # nominal stepsize used for k -> k+1
    beta_gen: np.ndarray      # stepsize each generator actually applied
    d: np.ndarray
    payoff: np.ndarray
    b_next: np.ndarray        # bid after the last recorded iteration
    b_star: np.ndarray | None = None
    x_star: np.ndarray | None = None
    stop_reason: str = ""
    notes: list[str] = field(default_factory=list)
    strategic: tuple[int, ...] = ()   # generator positions not following the update

    def __len__(self):
        return self.b.shape[0]

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, len(self) + 1)

    @property
    def dist(self) -> np.ndarray:
        if self.b_star is None:
            return np.full(len(self), np.nan)
        return np.linalg.norm(self.b - self.b_star, axis=1)

    def entry_index(self, r: float) -> int | None:
        """First iteration ``k`` with distance below ``r``."""
        hit = np.flatnonzero(self.dist < r)
        return int(hit[0]) + 1 if hit.size else None

    def terminal_distance(self) -> float:
        return float(self.dist[-1]) if len(self) else math.nan

    def bid_after(self, i: int) -> np.ndarray:
        return self.b[i + 1] if i + 1 < len(self) else self.b_next

    def payoff_gap(self) -> np.ndarray:
        """Payoff minus the payoff at the efficient equilibrium, per generator."""
        if self.b_star is None:
            raise ValueError("trace has no equilibrium reference")
        ustar = self.b_star * self.x_star - (self._a * self.x_star ** 2 + self._c * self.x_star)
        return self.payoff - ustar

    _a: np.ndarray = field(default=None, repr=False)
    _c: np.ndarray = field(default=None, repr=False)


def equilibrium(case: NetworkCase):
    """``(x*, b*)`` when the equilibrium is unique, else ``(x*, None)``."""
    sol = solve_dcopf(case)
    if np.all(sol.x > POSITIVE_TOL):
        return sol.x, efficient_bid(case, sol)
    return sol.x, None


def simulate(case: NetworkCase, b1, schedule: StepsizeSchedule, stop: StoppingCriterion,
             iso_policy: IsoPolicy = IsoPolicy(), seed: int = 0,
             disturbance: Callable | None = None,
             override: Callable | None = None, strategic: Sequence[int] = (),
             check_initial: bool = True) -> MarketTrace:
    """Shared iteration loop.

    ``disturbance(k, b, x_opt, q, beta, beta_gen) -> d`` is added inside the
    projection. ``override(k, b, x_opt, q, b_conforming, beta_gen) -> {n: bid}`` sets
    the next bid of non-conforming generators after conformers have moved.
    """
    a, c = case.a, case.c
    b = np.array(b1, dtype=float)
    n = case.n_gens
    if b.shape != (n,):
        raise ValueError(f"expected {n} initial bids")
    if check_initial and np.any(b < c - 1e-12):
        bad = [case.generators[i].id for i in np.flatnonzero(b < c - 1e-12)]
        raise ValueError(f"initial bids must satisfy b_n(1) >= c_n; violated for generators {bad}")
    x_star, b_star = equilibrium(case)
    notes = []
    if b_star is None:
        msg = "some generator is idle at the optimum: equilibrium not unique, distance diagnostics disabled"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    iso = iso_policy.solver(case, seed)
    rng_beta = substream(seed, "stepsizes")
    rows = {key: [] for key in ("b", "x", "q", "beta", "beta_gen", "d", "u")}
    reason = "max_iters"
    for k in range(1, stop.max_iters + 1):
        x_opt = iso(b).x_opt
        q = best_response(b, a, c)
        nominal, beta_gen = schedule.draw(k, n, rng_beta)
        d = np.zeros(n) if disturbance is None else np.asarray(
            disturbance(k, b, x_opt, q, nominal, beta_gen), float)
        b_new = np.maximum(0.0, b + beta_gen * (x_opt - q) + d)
        if override is not None:
            for i, bid in override(k, b, x_opt, q, b_new, beta_gen).items():
                b_new[i] = max(0.0, float(bid))
        rows["b"].append(b)
        rows["x"].append(x_opt)
        rows["q"].append(q)
        rows["beta"].append(nominal)
        rows["beta_gen"].append(beta_gen)
        rows["d"].append(d)
        rows["u"].append(payoffs(b, x_opt, a, c))
        done = np.linalg.norm(b_new - b) <= stop.epsilon
        b = b_new
        if done:
            reason = "epsilon"
            break
    tr = MarketTrace(
        b=np.array(rows["b"]), x_opt=np.array(rows["x"]), q=np.array(rows["q"]),
        beta=np.array(rows["beta"], float), beta_gen=np.array(rows["beta_gen"]),
        d=np.array(rows["d"]), payoff=np.array(rows["u"]), b_next=b,
        b_star=b_star, x_star=x_star if b_star is not None else None,
        stop_reason=reason, notes=notes, strategic=tuple(strategic),
    )
    tr._a, tr._c = a, c
    return tr


def run_baa(case: NetworkCase, b1, schedule: StepsizeSchedule | None = None,
            stop: StoppingCriterion | None = None, iso_policy: IsoPolicy = IsoPolicy(),
            seed: int = 0) -> MarketTrace:
    """Every generator follows the bid update; the ISO answers with an LP vertex."""
    return simulate(case, b1, schedule or StepsizeSchedule(), stop or StoppingCriterion(),
                    iso_policy=iso_policy, seed=seed)


# -- diagnostics -----------------------------------------------------------------

@dataclass
class StepRecord:
    k: int
    b: np.ndarray
    x_opt: np.ndarray
    q: np.ndarray
    beta: np.ndarray   # per-generator stepsizes applied at this step


@dataclass
class DiagnosticsReport:
    k: int
    lower_bound_slack: float
    qfunc_residual: float
    projection_active: bool
    decomposition_residual: float
    term1_slack: float
    term2_slack: float
    contraction_applicable: bool
    contraction_slack: float
    contraction_ratio: float
    face_inner: float
    violations: list[str] = field(default_factory=list)


def iteration_diagnostics(rec: StepRecord, b_next, b_star, x_star, case: NetworkCase,
                          tol: float = DIAG_TOL) -> DiagnosticsReport:
    """Check one transition ``k -> k+1`` against the per-step inequalities.

    Bounds that assume a common stepsize are evaluated with ``max(beta)`` and
    only flagged when all generators used the same stepsize.
    """
    a, c = case.a, case.c
    a_max, a_min, ybar = a.max(), a.min(), total_load(case)
    b, x, q, beta = rec.b, rec.x_opt, rec.q, np.asarray(rec.beta, float)
    b_next = np.asarray(b_next, float)
    common = bool(np.all(beta == beta[0]))
    bk = float(beta.max())
    e = b - b_star
    dist2 = float(e @ e)
    scale = max(1.0, dist2, float(np.max(np.abs(b))) ** 2)

    lower = float(np.min(b - c))
    closed = np.where(b >= c, (b - c) / (2 * a), 0.0)
    qres = float(np.max(np.abs(q - closed)))
    raw = b + beta * (x - q)
    proj = bool(np.any(raw < 0))
    coc = (1 - beta / (2 * a)) * b + beta / (2 * a) * b_star
    decomp = float(np.max(np.abs(b_next - coc - beta * (x - x_star))))
    step = b_next - b
    t1 = float(step @ (b_star - b)) - bk / (2 * a_max) * dist2
    t2 = bk ** 2 / (2 * a_min ** 2) * dist2 + 8 * bk ** 2 * ybar ** 2 - float(step @ step)
    dist = math.sqrt(dist2)
    applicable = common and dist > 0 and bk <= _B(dist, a_max, a_min, ybar)
    nd2 = float((b_next - b_star) @ (b_next - b_star))
    cslack = (1 - bk / (2 * a_max)) * dist2 - nd2
    ratio = math.sqrt(nd2) / dist if dist > 0 else 0.0
    face = float((x - x_star) @ (b_star - b))

    rep = DiagnosticsReport(rec.k, lower, qres, proj, decomp, t1, t2, applicable, cslack, ratio, face)
    hyp = bool(np.all((beta > 0) & (beta < 2 * a)))
    if hyp:
        if lower < -tol:
            rep.violations.append("lower_bound")
        if qres > tol:
            rep.violations.append("q_closed_form")
        if not proj and decomp > tol * max(1.0, float(np.max(np.abs(b)))):
            rep.violations.append("decomposition")
        if common and t1 < -tol * scale:
            rep.violations.append("term1")
        if common and t2 < -tol * scale:
            rep.violations.append("term2")
        if applicable and cslack < -tol * scale:
            rep.violations.append("contraction")
    if face < -tol * scale:
        rep.violations.append("optimal_face")
    return rep


@dataclass
class TraceAudit:
    steps: int
    counts: dict[str, int]
    first: dict[str, int]
    checked: list[str]
    skipped: dict[str, str]
    entry_index: int | None = None
    radius: float | None = None

    @property
    def total_violations(self) -> int:
        return int(sum(self.counts.values()))

    def first_offender(self) -> tuple[str, int] | None:
        if not self.first:
            return None
        name = min(self.first, key=self.first.get)
        return name, self.first[name]


def _tally(audit: TraceAudit, name: str, k: int):
    audit.counts[name] = audit.counts.get(name, 0) + 1
    audit.first.setdefault(name, k)


def audit_trace(case: NetworkCase, trace: MarketTrace, r: float | None = None,
                tol: float = DIAG_TOL) -> TraceAudit:
    """Tally every per-step and trace-level inequality violation of a conforming run."""
    audit = TraceAudit(steps=len(trace), counts={}, first={}, checked=[], skipped={})
    if trace.b_star is None:
        audit.skipped["all"] = "equilibrium not unique"
        return audit
    audit.checked += ["lower_bound", "q_closed_form", "decomposition", "term1", "term2",
                      "contraction", "optimal_face"]
    for i in range(len(trace)):
        rec = StepRecord(i + 1, trace.b[i], trace.x_opt[i], trace.q[i], trace.beta_gen[i])
        rep = iteration_diagnostics(rec, trace.bid_after(i), trace.b_star, trace.x_star, case, tol)
        for name in rep.violations:
            _tally(audit, name, i + 1)

    # convergence checks need a common stepsize inside [alpha, B(r)]
    dist = np.append(trace.dist, np.linalg.norm(trace.b_next - trace.b_star))
    betas = trace.beta_gen
    if r is None:
        r = min_radius(case, float(betas.max()))
    audit.radius = r
    hyp = []
    if not np.all(betas == betas[:, :1]):
        hyp.append("stepsizes differ across generators")
    if not np.all(betas < 2 * case.a):
        hyp.append("stepsize not below 2 a_n")
    if not math.isfinite(r) or betas.max() > compute_B(case, r) * (1 + 1e-12):
        hyp.append("stepsize exceeds B(r)")
    if not dist[0] > r:
        hyp.append("initial distance not above r")
    if hyp:
        audit.skipped["convergence"] = "; ".join(hyp)
        return audit
    audit.checked += ["rate", "ultimate_bound", "monotone_outside_r"]
    alpha = float(betas.min())
    a_max = float(case.a.max())
    ub = ultimate_bound(case, r)
    hit = np.flatnonzero(dist < r)
    entry = int(hit[0]) + 1 if hit.size else None
    audit.entry_index = entry
    last_pre = (entry - 1) if entry else len(dist)
    for k in range(1, last_pre):
        bound = (1 - alpha / (2 * a_max)) ** (k / 2) * dist[0]
        if dist[k] > bound * (1 + tol) + tol:
            _tally(audit, "rate", k)
    for k in range(1, len(dist)):
        if dist[k - 1] >= r and dist[k] >= dist[k - 1] + tol:
            _tally(audit, "monotone_outside_r", k)
    if entry:
        for k in range(entry, len(dist) + 1):
            if dist[k - 1] > ub * (1 + tol):
                _tally(audit, "ultimate_bound", k)
    return audit
