"""Power network model and the constraint matrices shared by both dispatch problems.

Buses, lines and generators keep their declaration order; every matrix and
vector produced here follows that order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class CaseError(ValueError):
    """A network description is structurally unsound."""


@dataclass(frozen=True)
class Bus:
    id: int
    load: float = 0.0


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    limit: float


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    a: float
    c: float

    def cost(self, x):
        return self.a * x * x + self.c * x

    def marginal_cost(self, x):
        return 2.0 * self.a * x + self.c


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "generators", tuple(self.generators))

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_gens(self) -> int:
        return len(self.generators)

    @property
    def a(self) -> np.ndarray:
        return np.array([g.a for g in self.generators], dtype=float)

    @property
    def c(self) -> np.ndarray:
        return np.array([g.c for g in self.generators], dtype=float)

    @property
    def loads(self) -> np.ndarray:
        return np.array([b.load for b in self.buses], dtype=float)

    @property
    def limits(self) -> np.ndarray:
        return np.array([ln.limit for ln in self.lines], dtype=float)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def gen_bus_positions(self) -> np.ndarray:
        """Row position (in bus order) of each generator's bus."""
        idx = self.bus_index()
        return np.array([idx[g.bus] for g in self.generators], dtype=int)

    def generators_at(self, bus_id: int) -> list[int]:
        """Positions of the generators attached to ``bus_id``."""
        return [n for n, g in enumerate(self.generators) if g.bus == bus_id]


@dataclass(frozen=True)
class ConstraintMatrices:
    """Flow balance ``j1 @ z - j2 @ x + y = 0`` and limits ``j3 @ z <= zbar_c``."""

    j1: np.ndarray
    j2: np.ndarray
    j3: np.ndarray
    zbar_c: np.ndarray
    y: np.ndarray

    def balance_residual(self, x, z) -> np.ndarray:
        return self.j1 @ np.asarray(z, float) - self.j2 @ np.asarray(x, float) + self.y


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    existence_hypothesis: bool = True
    single_generator_buses: list[int] = field(default_factory=list)
    total_load: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_case(case: NetworkCase) -> ValidationReport:
    """Check structure and the generator-count condition for existence.

    Never raises; findings are collected in the report.
    """
    rep = ValidationReport()
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        rep.errors.append("duplicate bus ids")
    known = set(ids)
    for b in case.buses:
        if not np.isfinite(b.load) or b.load < 0:
            rep.errors.append(f"bus {b.id}: load must be finite and >= 0, got {b.load}")
    seen = set()
    for k, ln in enumerate(case.lines):
        tag = f"line {k} ({ln.from_bus}->{ln.to_bus})"
        for end in (ln.from_bus, ln.to_bus):
            if end not in known:
                rep.errors.append(f"{tag}: references unknown bus {end}")
        if ln.from_bus == ln.to_bus:
            rep.errors.append(f"{tag}: self loop")
        if not ln.limit > 0:
            rep.errors.append(f"{tag}: limit must be > 0, got {ln.limit}")
        if (ln.from_bus, ln.to_bus) in seen:
            rep.errors.append(f"{tag}: parallel line on the same ordered pair")
        seen.add((ln.from_bus, ln.to_bus))
    gids = [g.id for g in case.generators]
    if len(set(gids)) != len(gids):
        rep.errors.append("duplicate generator ids")
    for g in case.generators:
        if g.bus not in known:
            rep.errors.append(f"generator {g.id}: references unknown bus {g.bus}")
        if not g.a > 0:
            rep.errors.append(f"generator {g.id}: quadratic coefficient a must be > 0, got {g.a}")
        if not g.c >= 0:
            rep.errors.append(f"generator {g.id}: linear coefficient c must be >= 0, got {g.c}")

    for b in case.buses:
        n_i = len(case.generators_at(b.id))
        if n_i == 1:
            rep.single_generator_buses.append(b.id)
    if rep.single_generator_buses:
        rep.existence_hypothesis = False
        rep.warnings.append(
            "buses with exactly one generator (equilibrium existence not guaranteed): "
            + ", ".join(map(str, rep.single_generator_buses))
        )
    rep.total_load = total_load(case)
    return rep


def total_load(case: NetworkCase) -> float:
    return float(sum(b.load for b in case.buses))


def build_matrices(case: NetworkCase) -> ConstraintMatrices:
    rep = validate_case(case)
    if rep.errors:
        raise CaseError("; ".join(rep.errors))
    idx = case.bus_index()
    nb, ne, ng = case.n_buses, case.n_lines, case.n_gens
    j1 = np.zeros((nb, ne))
    for e, ln in enumerate(case.lines):
        j1[idx[ln.from_bus], e] = 1.0
        j1[idx[ln.to_bus], e] = -1.0
    j2 = np.zeros((nb, ng))
    for n, g in enumerate(case.generators):
        j2[idx[g.bus], n] = 1.0
    eye = np.eye(ne)
    j3 = np.vstack([eye, -eye])
    zbar = case.limits
    return ConstraintMatrices(j1=j1, j2=j2, j3=j3, zbar_c=np.concatenate([zbar, zbar]), y=case.loads)


# -- JSON case files ---------------------------------------------------------

_TOP_KEYS = {"buses", "lines", "generators"}
_ITEM_KEYS = {
    "buses": {"id", "load"},
    "lines": {"from", "to", "limit"},
    "generators": {"id", "bus", "a", "c"},
}


def case_from_dict(doc: dict, name: str = "") -> NetworkCase:
    if not isinstance(doc, dict):
        raise CaseError("case document must be a JSON object")
    extra = set(doc) - _TOP_KEYS
    if extra:
        raise CaseError(f"unknown case keys: {sorted(extra)}")
    missing = _TOP_KEYS - set(doc)
    if missing:
        raise CaseError(f"missing case keys: {sorted(missing)}")
    for key, allowed in _ITEM_KEYS.items():
        for i, item in enumerate(doc[key]):
            if not isinstance(item, dict):
                raise CaseError(f"{key}[{i}]: expected an object")
            bad = set(item) - allowed
            if bad:
                raise CaseError(f"{key}[{i}]: unknown keys {sorted(bad)}")
            lacking = allowed - set(item) - ({"load"} if key == "buses" else set())
            if lacking:
                raise CaseError(f"{key}[{i}]: missing keys {sorted(lacking)}")
    try:
        buses = [Bus(int(b["id"]), float(b.get("load", 0.0))) for b in doc["buses"]]
        lines = [Line(int(ln["from"]), int(ln["to"]), float(ln["limit"])) for ln in doc["lines"]]
        gens = [Generator(int(g["id"]), int(g["bus"]), float(g["a"]), float(g["c"])) for g in doc["generators"]]
    except (TypeError, ValueError) as exc:
        raise CaseError(f"type mismatch in case document: {exc}") from exc
    return NetworkCase(buses, lines, gens, name=name)


def case_to_dict(case: NetworkCase) -> dict:
    return {
        "buses": [{"id": b.id, "load": b.load} for b in case.buses],
        "lines": [{"from": ln.from_bus, "to": ln.to_bus, "limit": ln.limit} for ln in case.lines],
        "generators": [{"id": g.id, "bus": g.bus, "a": g.a, "c": g.c} for g in case.generators],
    }


def load_case(path) -> NetworkCase:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    return case_from_dict(doc, name=path.stem)


def save_case(case: NetworkCase, path) -> None:
    with open(path, "w") as fh:
        json.dump(case_to_dict(case), fh, indent=2)


# -- presets -----------------------------------------------------------------

IEEE9_EDGES = [(1, 4), (4, 5), (5, 6), (3, 6), (6, 7), (7, 8), (8, 2), (8, 9), (9, 4)]
IEEE9_SPECIAL_LIMITS = {(5, 6): 1.5, (3, 6): 3.0, (6, 7): 1.5}
IEEE9_A = (0.1100, 0.0950, 0.0850, 0.1000, 0.1225, 0.0750)
IEEE9_C = (3.5, 3.8, 1.2, 0.8, 1.0, 1.3)
IEEE9_GEN_BUS = (1, 1, 2, 2, 3, 3)


def ieee9_modified(loads: dict[int, float] | None = None, name: str = "ieee9-modified") -> NetworkCase:
    """Modified IEEE 9-bus case with two generators at each of buses 1, 2, 3.

    The default loads (2, 3, 2) at buses 5, 7, 9 total 7 p.u., which is the
    total generation of the reference optimal dispatch. The lighter loading
    (2, 3, 1) is available as :func:`ieee9_light`.
    """
    if loads is None:
        loads = {5: 2.0, 7: 3.0, 9: 2.0}
    buses = [Bus(i, float(loads.get(i, 0.0))) for i in range(1, 10)]
    lines = [Line(i, j, IEEE9_SPECIAL_LIMITS.get((i, j), 2.5)) for i, j in IEEE9_EDGES]
    gens = [Generator(n + 1, IEEE9_GEN_BUS[n], IEEE9_A[n], IEEE9_C[n]) for n in range(6)]
    return NetworkCase(buses, lines, gens, name=name)


def ieee9_light() -> NetworkCase:
    """Same network with loads (2, 3, 1); total load 6, generator 2 idle at the optimum."""
    return ieee9_modified({5: 2.0, 7: 3.0, 9: 1.0}, name="ieee9-light")


PRESETS = {
    "ieee9-modified": ieee9_modified,
    "ieee9-light": ieee9_light,
}


def get_preset(name: str) -> NetworkCase:
    try:
        return PRESETS[name]()
    except KeyError:
        raise CaseError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
