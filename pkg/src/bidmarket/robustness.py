"""Perturbed, deviating and colluding variants of the bid dynamics.

Non-conforming generators are driven by :class:`Strategy` objects. The engine
hands each strategy a read-only view holding only what that generator is
entitled to know: its own bids, dispatch and desired quantities, plus (for
colluders) the bids and dispatch of every member of the coalition.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import (
    IsoPolicy, MarketTrace, StepsizeSchedule, StoppingCriterion, compute_B, equilibrium,
    simulate, substream,
)
from .lp import face_range, solve_sdcopf
from .network import NetworkCase
from .opf import payoff

# -- disturbances ----------------------------------------------------------------


def _random_in_ball(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    u = rng.standard_normal(n)
    u /= np.linalg.norm(u)
    return u * radius * rng.uniform()


@dataclass
class DisturbanceModel:
    """Additive perturbation of the bid update.

    Kinds: ``state_proportional`` (``|d| <= theta |b - b*|``), ``bounded``
    (``|d| <= d_max``), ``stepsize_variation`` (generators draw their own
    stepsizes from ``schedule``; ``d`` is the deviation from the nominal
    update), ``custom`` (explicit per-iteration vectors, zero afterwards).
    """

    kind: str = "bounded"
    theta: float | None = None
    d_max: float | None = None
    schedule: StepsizeSchedule | None = None
    sequence: Sequence | None = None

    KINDS = ("state_proportional", "bounded", "stepsize_variation", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "state_proportional" and not (self.theta and self.theta > 0):
            raise ValueError("state_proportional disturbance needs theta > 0")
        if self.kind == "bounded" and not (self.d_max is not None and self.d_max >= 0):
            raise ValueError("bounded disturbance needs d_max >= 0")
        if self.kind == "stepsize_variation" and self.schedule is None:
            raise ValueError("stepsize_variation needs a per-generator schedule")
        if self.kind == "custom" and self.sequence is None:
            raise ValueError("custom disturbance needs a sequence")

    def build(self, n: int, b_star, rng: np.random.Generator):
        if self.kind == "state_proportional":
            theta = self.theta

            def dist(k, b, x, q, nominal, beta_gen):
                return _random_in_ball(rng, n, theta * float(np.linalg.norm(b - b_star)))
        elif self.kind == "bounded":
            d_max = self.d_max

            def dist(k, b, x, q, nominal, beta_gen):
                return _random_in_ball(rng, n, d_max)
        elif self.kind == "stepsize_variation":
            sched = self.schedule

            def dist(k, b, x, q, nominal, beta_gen):
                _, own = sched.draw(k, n, rng)
                return (own - beta_gen) * (x - q)
        else:
            seq = self.sequence

            def dist(k, b, x, q, nominal, beta_gen):
                return np.asarray(seq[k - 1], float) if k <= len(seq) else np.zeros(n)
        return dist


def theta_upper(alpha: float, a_max: float) -> float:
    """Open upper end of the admissible disturbance ratio."""
    return (1.0 - alpha / (2.0 * a_max)) / 6.0


def contractive_theta(alpha: float, a_max: float, fraction: float = 0.5) -> float:
    """Ratio ``theta`` with ``2 theta + 4 theta^2 = fraction * alpha / (2 a_max)``, kept admissible.

    The perturbed rate factor is below one only when ``2 theta + 4 theta^2 <
    alpha / (2 a_max)``, which is far tighter than the admissible range.
    """
    s = fraction * alpha / (2.0 * a_max)
    root = (-2.0 + math.sqrt(4.0 + 16.0 * s)) / 8.0
    # for large alpha the admissible range is the tighter limit
    return min(root, 0.99 * theta_upper(alpha, a_max))


def run_perturbed(case: NetworkCase, b1, schedule: StepsizeSchedule, disturbance: DisturbanceModel,
                  stop: StoppingCriterion, iso_policy: IsoPolicy = IsoPolicy(), seed: int = 0) -> MarketTrace:
    if disturbance.kind == "state_proportional":
        hi = theta_upper(schedule.alpha, float(case.a.max()))
        if not 0 < disturbance.theta < hi:
            raise ValueError(f"theta must lie in (0, {hi:.6g}) for this schedule")
    _, b_star = equilibrium(case)
    if disturbance.kind == "state_proportional" and b_star is None:
        raise ValueError("state-proportional disturbance needs a unique equilibrium")
    rng = substream(seed, "disturbance")
    fn = disturbance.build(case.n_gens, b_star, rng)
    return simulate(case, b1, schedule, stop, iso_policy=iso_policy, seed=seed, disturbance=fn)


@dataclass(frozen=True)
class PerturbedBounds:
    G1: float
    G2: float
    G: float
    rate_factor: float
    ultimate: float

    @property
    def contractive(self) -> bool:
        return self.rate_factor < 1.0


def perturbed_bounds(case: NetworkCase, r: float, theta: float, d_max: float,
                     alpha: float | None = None) -> PerturbedBounds:
    """Bounds for the disturbed dynamics; ``alpha`` defaults to ``B(r)``.

    ``rate_factor`` is the per-step distance factor (a square root), so the
    envelope decays like ``rate_factor ** k``.
    """
    a_max = float(case.a.max())
    B = compute_B(case, r)
    alpha = B if alpha is None else alpha
    hi = theta_upper(alpha, a_max)
    if not 0 < theta < hi:
        raise ValueError(f"theta={theta} outside admissible range (0, {hi:.6g})")
    G1 = math.sqrt(B * r * r / (2 * a_max) + (2 * d_max + r) ** 2)
    G2 = (2.0 + 1.0 / theta) * d_max
    extra = 2 * theta + 4 * theta * theta
    return PerturbedBounds(
        G1=G1, G2=G2, G=max(G1, G2),
        rate_factor=math.sqrt(1 - alpha / (2 * a_max) + extra),
        ultimate=math.sqrt(1 + B / (2 * a_max) + extra) * r,
    )


def iss_envelope(trace: MarketTrace, bounds: PerturbedBounds) -> np.ndarray:
    """Distance envelope ``rate^k |b(1) - b*| + G`` for each recorded k."""
    return bounds.rate_factor ** trace.k * trace.dist[0] + bounds.G


def proportional_step_violations(trace: MarketTrace, case: NetworkCase, r: float, theta: float,
                                 alpha: float, tol: float = 1e-9) -> list[int]:
    """Iterations where the squared-distance contraction for state-proportional noise fails."""
    a_max = float(case.a.max())
    factor = 1 - alpha / (2 * a_max) + 2 * theta + 4 * theta ** 2
    dist = np.append(trace.dist, np.linalg.norm(trace.b_next - trace.b_star))
    bad = []
    for k in range(1, len(dist)):
        if dist[k - 1] >= r and dist[k] ** 2 > factor * dist[k - 1] ** 2 * (1 + tol) + tol:
            bad.append(k)
    return bad


# -- strategies --------------------------------------------------------------------


@dataclass(frozen=True)
class OwnView:
    """Private history of one generator up to and including iteration ``k``."""

    k: int
    bids: np.ndarray
    dispatch: np.ndarray
    quantities: np.ndarray
    a: float
    c: float
    beta: float
    rng: np.random.Generator = field(repr=False, compare=False)


@dataclass(frozen=True)
class CoalitionView(OwnView):
    """Own history plus the coalition's shared bids and dispatch."""

    shared_bids: dict = field(default_factory=dict)
    shared_dispatch: dict = field(default_factory=dict)
    observed: dict = field(default_factory=dict)


class Strategy:
    """Maps a generator's information view to its next bid.

    ``observes`` lists generator ids whose freshly updated bid (same round)
    the strategy reads when choosing its own. That is outside the coalition information set and
    is reported in the trace notes whenever it is used.
    """

    observes: tuple[int, ...] = ()

    def next_bid(self, view: OwnView) -> float:
        raise NotImplementedError


class Conforming(Strategy):
    def next_bid(self, view):
        return max(0.0, view.bids[-1] + view.beta * (view.dispatch[-1] - view.quantities[-1]))


class ConstantBid(Strategy):
    def __init__(self, value: float):
        self.value = float(value)

    def next_bid(self, view):
        return self.value


class SequenceBids(Strategy):
    """Replays a fixed bid list; the last value is held."""

    def __init__(self, bids: Sequence[float]):
        self.bids = [float(v) for v in bids]

    def next_bid(self, view):
        return self.bids[min(view.k, len(self.bids)) - 1]


class UniformAbove(Strategy):
    def __init__(self, low: float, width: float = 1.0):
        self.low, self.width = float(low), float(width)

    def next_bid(self, view):
        return float(view.rng.uniform(self.low, self.low + self.width))


class MultiplicativeUndercut(Strategy):
    """Bid ``factor`` times a rival's current bid, if that stays above ``floor``.

    Otherwise fall back to ``fallback`` (uniform on ``[floor, floor + 1]`` by default).
    """

    def __init__(self, rival: int, floor: float, factor: float = 0.99, fallback: Strategy | None = None):
        self.rival = int(rival)
        self.floor = float(floor)
        self.factor = float(factor)
        self.fallback = fallback or UniformAbove(floor, 1.0)
        self.observes = (self.rival,)

    def next_bid(self, view):
        cand = self.factor * view.observed[self.rival]
        if cand >= self.floor:
            return cand
        return self.fallback.next_bid(view)


def undercut_chain(case: NetworkCase, colluders: Sequence[int], b_star) -> dict[int, Strategy]:
    """Undercut the next generator's bid by 1%, never going below the equilibrium bid."""
    ids = [g.id for g in case.generators]
    out = {}
    for gid in colluders:
        n = ids.index(gid)
        out[gid] = MultiplicativeUndercut(rival=ids[n + 1], floor=float(b_star[n]))
    return out


# -- engine wiring -------------------------------------------------------------------


class _History:
    """Growable per-iteration buffers; views are read-only slices."""

    def __init__(self, n: int, cap: int):
        self.k = 0
        self.b, self.x, self.q = (np.empty((cap, n)) for _ in range(3))

    def push(self, b, x, q):
        if self.k == self.b.shape[0]:
            self.b, self.x, self.q = (np.vstack([m, np.empty_like(m)]) for m in (self.b, self.x, self.q))
        self.b[self.k], self.x[self.k], self.q[self.k] = b, x, q
        self.k += 1

    def column(self, which: str, n: int) -> np.ndarray:
        v = getattr(self, which)[:self.k, n]
        v.setflags(write=False)
        return v


def _strategic_run(case, b1, schedule, stop, strategies: dict[int, Strategy], coalition: Sequence[int],
                   iso_policy, seed, check_initial=True):
    ids = [g.id for g in case.generators]
    pos = {gid: ids.index(gid) for gid in strategies}
    coal = [ids.index(g) for g in coalition]
    rng = substream(seed, "strategy")
    hist = _History(case.n_gens, min(stop.max_iters, 100000))
    extra_info = sorted({o for s in strategies.values() for o in s.observes})

    def override(k, b, x, q, b_conf, beta):
        hist.push(b, x, q)
        out = {}
        for gid, strat in strategies.items():
            n = pos[gid]
            base = dict(k=k, bids=hist.column("b", n), dispatch=hist.column("x", n),
                        quantities=hist.column("q", n), a=float(case.a[n]), c=float(case.c[n]),
                        beta=float(beta[n]), rng=rng)
            if coal:
                view = CoalitionView(
                    **base,
                    shared_bids={ids[m]: hist.column("b", m) for m in coal},
                    shared_dispatch={ids[m]: hist.column("x", m) for m in coal},
                    observed={o: float(b_conf[ids.index(o)]) for o in strat.observes},
                )
            elif strat.observes:
                view = CoalitionView(**base, observed={o: float(b_conf[ids.index(o)]) for o in strat.observes})
            else:
                view = OwnView(**base)
            out[n] = strat.next_bid(view)
        return out

    tr = simulate(case, b1, schedule, stop, iso_policy=iso_policy, seed=seed, override=override,
                  strategic=tuple(pos.values()), check_initial=check_initial)
    if extra_info:
        tr.notes.append(f"strategies read same-round bids of generators {extra_info} (beyond coalition information)")
    return tr


def run_deviation(case: NetworkCase, b1, schedule: StepsizeSchedule, deviant: int, strategy: Strategy,
                  stop: StoppingCriterion, iso_policy: IsoPolicy = IsoPolicy(), seed: int = 0) -> MarketTrace:
    """One generator (by id) follows ``strategy``; everyone else conforms."""
    if deviant not in [g.id for g in case.generators]:
        raise ValueError(f"unknown generator id {deviant}")
    return _strategic_run(case, b1, schedule, stop, {deviant: strategy}, (), iso_policy, seed,
                          check_initial=False)


def unprotected_buses(case: NetworkCase, colluders: Sequence[int]) -> list[int]:
    """Generating buses where every generator is in the coalition."""
    J = set(colluders)
    bad = []
    for bus in case.buses:
        gens = [case.generators[n].id for n in case.generators_at(bus.id)]
        if gens and all(g in J for g in gens):
            bad.append(bus.id)
    return bad


def run_collusion(case: NetworkCase, b1, schedule: StepsizeSchedule, colluders: Sequence[int],
                  strategies: dict[int, Strategy], stop: StoppingCriterion,
                  iso_policy: IsoPolicy = IsoPolicy(), seed: int = 0,
                  allow_unprotected: bool = False) -> MarketTrace:
    """Generators in ``colluders`` share bids and dispatch and follow ``strategies``."""
    colluders = list(colluders)
    if set(strategies) != set(colluders):
        raise ValueError("need exactly one strategy per colluder")
    bad = unprotected_buses(case, colluders)
    if bad:
        msg = f"buses {bad} have no conforming generator; collusion robustness does not apply"
        if not allow_unprotected:
            raise ValueError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if not colluders:
        return simulate(case, b1, schedule, stop, iso_policy=iso_policy, seed=seed)
    tr = _strategic_run(case, b1, schedule, stop, strategies, colluders, iso_policy, seed, check_initial=False)
    if bad:
        tr.notes.append(f"unprotected buses {bad}")
    return tr


# -- u_max ------------------------------------------------------------------------------


@dataclass(frozen=True)
class UmaxEstimate:
    generator: int
    value: float
    samples: int
    radius: float
    argmax: np.ndarray = field(repr=False, default=None)


def estimate_umax(case: NetworkCase, b_star, r: float, generator: int, sample_count: int = 1000,
                  seed: int = 0, exponent: float = 1.0) -> UmaxEstimate:
    """Sampled lower estimate of the best payoff reachable near equilibrium.

    Bid profiles are drawn in the ball of radius
    ``(1 + B(r) / (2 a_max)) ** exponent * r`` around ``b_star`` (direction
    uniform, radius uniform, negative bids clipped). For each profile the
    payoff is maximised exactly over the generator's output range on the
    whole optimal face; the payoff is concave in output, so this is the
    best-response quantity clamped to that range. The centre is always
    evaluated first.
    """
    b_star = np.asarray(b_star, float)
    ids = [g.id for g in case.generators]
    n = ids.index(generator)
    gen = case.generators[n]
    radius = (1.0 + compute_B(case, r) / (2.0 * case.a.max())) ** exponent * r
    rng = substream(seed, "umax")
    best, arg = -math.inf, b_star
    for s in range(max(1, sample_count)):
        b = b_star if s == 0 else np.maximum(0.0, b_star + _random_in_ball(rng, b_star.size, radius))
        lo, hi = face_range(case, b, n)
        qn = max(0.0, (b[n] - gen.c) / (2 * gen.a))
        xn = min(max(qn, lo), hi)
        u = float(payoff(b[n], xn, gen))
        if u > best:
            best, arg = u, b
    return UmaxEstimate(generator=generator, value=best, samples=max(1, sample_count), radius=radius, argmax=arg)


def vertex_payoffs(case: NetworkCase, bids, generator: int, tries: int = 8, seed: int = 0) -> list[float]:
    """Generator payoff under several ISO vertex selections (randomised pivots)."""
    ids = [g.id for g in case.generators]
    n = ids.index(generator)
    gen = case.generators[n]
    rng = substream(seed, "pivots")
    sols = [solve_sdcopf(case, bids)] + [solve_sdcopf(case, bids, rng=rng) for _ in range(tries - 1)]
    return [float(payoff(bids[n], s.x_opt[n], gen)) for s in sols]
