"""Experiment orchestration: run one configured scenario, audit it, write artifacts."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import (
    MarketTrace, TraceAudit, audit_trace, compute_B, min_radius, run_baa, stopping_guarantee,
    ultimate_bound,
)
from ..network import NetworkCase, validate_case
from ..opf import (
    DispatchSolution, POSITIVE_TOL, check_kkt, efficient_bid, nash_from_duals, solve_dcopf,
    with_bid_multipliers,
)
from ..robustness import (
    contractive_theta, estimate_umax, iss_envelope, perturbed_bounds, proportional_step_violations,
    run_collusion, run_deviation, run_perturbed,
)
from .config import ExperimentConfig
from .plotting import emit_plot_data
from .traces import _fmt, write_trace

SUMMARY_KEYS = ("b_star", "x_star", "entry_iteration", "terminal_distance", "violations", "bounds")
TAIL_FRACTION = 0.2


@dataclass
class Violations:
    counts: dict = field(default_factory=dict)
    first: dict = field(default_factory=dict)
    checked: list = field(default_factory=list)
    skipped: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add(self, name: str, k: int, times: int = 1):
        if times <= 0:
            return
        self.counts[name] = self.counts.get(name, 0) + times
        self.first[name] = min(k, self.first.get(name, k))

    def merge_audit(self, audit: TraceAudit):
        self.checked += audit.checked
        self.skipped.update(audit.skipped)
        for name, n in audit.counts.items():
            self.add(name, audit.first[name], n)

    @property
    def total(self) -> int:
        return int(sum(self.counts.values()))

    def first_offender(self):
        if not self.first:
            return None
        name = min(self.first, key=lambda n: (self.first[n], n))
        return [name, int(self.first[name])]

    def as_dict(self) -> dict:
        return {"total": self.total, "counts": dict(sorted(self.counts.items())),
                "first": dict(sorted(self.first.items())), "first_offender": self.first_offender(),
                "checked": sorted(set(self.checked)), "skipped": dict(sorted(self.skipped.items())),
                "notes": list(self.notes)}


@dataclass
class ExperimentResult:
    result: MarketTrace | DispatchSolution
    summary: dict
    files: list[Path]

    @property
    def exit_code(self) -> int:
        return 0 if self.summary["violations"]["total"] == 0 else 1


def _vec(v):
    return None if v is None else [float(x) for x in v]


def _num(v):
    if v is None or isinstance(v, (bool, int)):
        return v
    v = float(v)
    return v if math.isfinite(v) else None


def _summary(b_star, x_star, entry, terminal, viol: Violations, bounds: dict) -> dict:
    return {"b_star": _vec(b_star), "x_star": _vec(x_star), "entry_iteration": entry,
            "terminal_distance": _num(terminal), "violations": viol.as_dict(),
            "bounds": {k: (_num(v) if isinstance(v, (float, np.floating)) else v)
                       for k, v in bounds.items()}}


def _common_bounds(case: NetworkCase, trace: MarketTrace, cfg: ExperimentConfig, r: float) -> dict:
    alpha = float(trace.beta.min())
    a_max = float(case.a.max())
    out = {"r": r, "B_r": compute_B(case, r) if math.isfinite(r) else None,
           "ultimate": ultimate_bound(case, r) if math.isfinite(r) else None,
           "alpha": alpha, "epsilon": cfg.stop.epsilon, "stop_reason": trace.stop_reason}
    try:
        out["stopping_guarantee"] = stopping_guarantee(cfg.stop.epsilon, alpha, a_max)
    except ValueError:
        out["stopping_guarantee"] = None
    return out


def _radius(case, cfg, trace) -> float:
    if cfg.radius is not None:
        return float(cfg.radius)
    return min_radius(case, float(trace.beta_gen.max() if cfg.mode == "baa" else trace.beta.max()))


# -- per-mode runners --------------------------------------------------------------


def _run_opf(case, cfg):
    sol = solve_dcopf(case)
    viol = Violations(checked=["kkt", "bid_kkt"])
    rep = check_kkt(case, sol)
    if not rep.ok():
        viol.add("kkt", 0)
    if np.all(sol.x > POSITIVE_TOL):
        b_star = efficient_bid(case, sol)
    else:
        b_star = nash_from_duals(case, sol)
        viol.notes.append("some generator idle at the optimum; bids from bus prices")
    if not check_kkt(case, with_bid_multipliers(case, sol, b_star), bids=b_star).ok():
        viol.add("bid_kkt", 0)
    bounds = {"objective": sol.objective, "kkt_max_residual": rep.max_residual,
              "total_load": validate_case(case).total_load}
    return sol, b_star, _summary(b_star, sol.x, None, None, viol, bounds)


def _write_dispatch(case: NetworkCase, sol: DispatchSolution, b_star, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    gens = out / "dispatch.csv"
    with open(gens, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generator", "bus", "x", "lambda", "b_star"])
        for n, g in enumerate(case.generators):
            w.writerow([g.id, g.bus, _fmt(sol.x[n]), _fmt(sol.lam[n]), _fmt(b_star[n])])
    flows = out / "flows.csv"
    ne = case.n_lines
    with open(flows, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "limit", "z", "mu_upper", "mu_lower"])
        for e, ln in enumerate(case.lines):
            w.writerow([ln.from_bus, ln.to_bus, _fmt(ln.limit), _fmt(sol.z[e]),
                        _fmt(sol.mu[e]), _fmt(sol.mu[ne + e])])
    prices = out / "prices.csv"
    with open(prices, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bus", "load", "nu"])
        for i, b in enumerate(case.buses):
            w.writerow([b.id, _fmt(b.load), _fmt(sol.nu[i])])
    return [gens, flows, prices]


def _run_baa(case, cfg):
    tr = run_baa(case, cfg.initial(case), cfg.schedule.build(), cfg.stopping(), cfg.iso(), cfg.seed)
    r = _radius(case, cfg, tr)
    viol = Violations(notes=list(tr.notes))
    viol.merge_audit(audit_trace(case, tr, r))
    return tr, r, viol, _common_bounds(case, tr, cfg, r)


def _run_perturbed(case, cfg):
    model = cfg.disturbance.build()
    tr = run_perturbed(case, cfg.initial(case), cfg.schedule.build(), model, cfg.stopping(), cfg.iso(), cfg.seed)
    r = _radius(case, cfg, tr)
    viol = Violations(notes=list(tr.notes))
    bounds = _common_bounds(case, tr, cfg, r)
    if tr.b_star is None:
        viol.skipped["envelope"] = "equilibrium not unique"
        return tr, r, viol, bounds
    alpha = float(tr.beta.min())
    a_max = float(case.a.max())
    theta = cfg.theta if cfg.theta is not None else (model.theta or contractive_theta(alpha, a_max))
    d_obs = float(np.linalg.norm(tr.d, axis=1).max())
    d_max = float(model.d_max) if model.kind == "bounded" else d_obs
    bounds.update(theta=theta, d_max=d_max, d_observed=d_obs)
    hyp = []
    if not math.isfinite(r) or tr.beta.max() > compute_B(case, r) * (1 + 1e-12):
        hyp.append("nominal stepsize exceeds B(r)")
    if np.any(tr.b < case.c - 1e-9):
        hyp.append("some bid fell below its marginal cost at zero")
    try:
        pb = perturbed_bounds(case, r, theta, d_max, alpha=alpha) if not hyp else None
    except ValueError as exc:
        hyp.append(str(exc))
        pb = None
    if pb is None:
        viol.skipped["envelope"] = "; ".join(hyp)
        return tr, r, viol, bounds
    bounds.update(G1=pb.G1, G2=pb.G2, G=pb.G, rate_factor=pb.rate_factor, ultimate_perturbed=pb.ultimate)
    viol.checked.append("iss_envelope")
    over = np.flatnonzero(tr.dist > iss_envelope(tr, pb) * (1 + 1e-12))
    if over.size:
        viol.add("iss_envelope", int(over[0]) + 1, over.size)
    if model.kind == "state_proportional":
        viol.checked.append("perturbed_contraction")
        bad = proportional_step_violations(tr, case, r, theta, alpha)
        if bad:
            viol.add("perturbed_contraction", bad[0], len(bad))
    return tr, r, viol, bounds


def _strategic(case, cfg):
    sched, stop = cfg.schedule.build(), cfg.stopping()
    if cfg.mode == "deviation":
        tr = run_deviation(case, cfg.initial(case), sched, cfg.deviation.generator,
                           cfg.deviation.strategy.build(), stop, cfg.iso(), cfg.seed)
    else:
        col = cfg.collusion
        tr = run_collusion(case, cfg.initial(case), sched, col.colluders, col.build(case), stop,
                           cfg.iso(), cfg.seed, allow_unprotected=col.allow_unprotected)
    r = _radius(case, cfg, tr)
    viol = Violations(notes=list(tr.notes))
    bounds = _common_bounds(case, tr, cfg, r)
    viol.skipped["per_step"] = "per-step inequalities assume every generator conforms"
    if tr.b_star is None or not math.isfinite(r):
        viol.skipped["incentive"] = "equilibrium not unique or radius undefined"
        return tr, r, viol, bounds
    ids = [g.id for g in case.generators]
    ustar = tr.b_star * tr.x_star - (case.a * tr.x_star ** 2 + case.c * tr.x_star)
    umax, tail_max = {}, {}
    start = int(math.floor((1 - TAIL_FRACTION) * len(tr)))
    viol.checked.append("incentive")
    for n in tr.strategic:
        est = estimate_umax(case, tr.b_star, r, ids[n], cfg.umax.samples, cfg.seed, cfg.umax.exponent)
        umax[str(ids[n])] = est.value
        tail = tr.payoff[start:, n]
        tail_max[str(ids[n])] = float(tail.max())
        # profitable deviation on the recorded horizon: payoff above u_max throughout the tail
        if tail.size and np.all(tail > est.value):
            viol.add("incentive", start + 1)
    bounds.update(u_max=umax, u_star={str(ids[n]): float(ustar[n]) for n in tr.strategic},
                  tail_payoff_max=tail_max, tail_start=int(start + 1))
    return tr, r, viol, bounds


def run_experiment(cfg: ExperimentConfig, base_dir=None, write: bool = True) -> ExperimentResult:
    """Run ``cfg``; artifacts go to ``cfg.output.dir`` (relative to ``base_dir``)."""
    base = Path(base_dir) if base_dir is not None else None
    case = cfg.network(base)
    out = Path(cfg.output.dir)
    if base is not None and not out.is_absolute():
        out = base / out
    files: list[Path] = []
    if cfg.mode == "opf_only":
        sol, b_star, summary = _run_opf(case, cfg)
        if write:
            files = _write_dispatch(case, sol, b_star, out)
            files.append(_write_summary(summary, out / cfg.output.summary))
        return ExperimentResult(sol, summary, files)

    runner = {"baa": _run_baa, "perturbed": _run_perturbed}.get(cfg.mode, _strategic)
    tr, r, viol, bounds = runner(case, cfg)
    summary = _summary(tr.b_star, tr.x_star, tr.entry_index(r) if math.isfinite(r) else None,
                       tr.terminal_distance(), viol, bounds)
    if write:
        extended = cfg.mode != "baa"
        files.append(write_trace(tr, out / cfg.output.trace, extended=extended))
        if tr.b_star is not None:
            kinds = ["bids_vs_k", "dist_vs_k"] + (["payoff_gap_vs_k"] if tr.strategic else [])
            for kind in kinds:
                files += emit_plot_data(tr, kind, out / f"{kind}.csv", render=cfg.output.plots,
                                        highlight=tuple(n + 1 for n in tr.strategic))
        files.append(_write_summary(summary, out / cfg.output.summary))
    return ExperimentResult(tr, summary, files)


def _write_summary(summary: dict, path: Path) -> Path:
    assert tuple(summary) == SUMMARY_KEYS
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2) + "\n")
    return path
