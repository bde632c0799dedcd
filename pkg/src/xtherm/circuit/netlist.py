"""Netlist elements and validation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from ..compact import CompactModelParams

GROUND = "0"


class NetlistError(ValueError):
    pass


@dataclass(frozen=True)
class Mosfet:
    name: str
    d: str
    g: str
    s: str
    card: str  # key into Netlist.cards
    pair: str | None = None  # thermal pair id
    role: str = "n"  # position inside the pair: "n" or "p"


@dataclass(frozen=True)
class Capacitor:
    name: str
    a: str
    b: str
    value: float  # F


@dataclass(frozen=True)
class Resistor:
    name: str
    a: str
    b: str
    value: float  # ohm


@dataclass(frozen=True)
class VSource:
    """Grounded voltage source; ``pwl`` is ``((t, v), ...)``, one point for DC."""

    name: str
    node: str
    pwl: tuple[tuple[float, float], ...]

    def value(self, t: float) -> float:
        pts = self.pwl
        if t <= pts[0][0]:
            return pts[0][1]
        for (t0, v0), (t1, v1) in zip(pts, pts[1:]):
            if t <= t1:
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        return pts[-1][1]


@dataclass
class Netlist:
    name: str
    mosfets: list[Mosfet] = field(default_factory=list)
    capacitors: list[Capacitor] = field(default_factory=list)
    resistors: list[Resistor] = field(default_factory=list)
    sources: list[VSource] = field(default_factory=list)
    cards: dict[str, CompactModelParams] = field(default_factory=dict)
    pair_models: dict[str, str] = field(default_factory=dict)  # pair id -> thermal model key
    initial: dict[str, float] = field(default_factory=dict)  # node -> V offset applied after DC
    meta: dict = field(default_factory=dict)

    @property
    def nodes(self) -> list[str]:
        seen: dict[str, None] = {}
        for m in self.mosfets:
            for n in (m.d, m.g, m.s):
                seen.setdefault(n)
        for e in (*self.capacitors, *self.resistors):
            seen.setdefault(e.a)
            seen.setdefault(e.b)
        for v in self.sources:
            seen.setdefault(v.node)
        seen.pop(GROUND, None)
        return list(seen)

    @property
    def pairs(self) -> list[str]:
        return sorted({m.pair for m in self.mosfets if m.pair is not None})

    def validate(self) -> None:
        names = [e.name for e in (*self.mosfets, *self.capacitors, *self.resistors, *self.sources)]
        if len(set(names)) != len(names):
            raise NetlistError("duplicate element names")
        for m in self.mosfets:
            if m.card not in self.cards:
                raise NetlistError(f"mosfet {m.name} references unknown card {m.card!r}")
            if m.role not in ("n", "p"):
                raise NetlistError(f"mosfet {m.name} has role {m.role!r}, expected 'n' or 'p'")
            if m.pair is not None and m.pair not in self.pair_models:
                raise NetlistError(f"mosfet {m.name} pair {m.pair!r} has no thermal model key")
        for c in self.capacitors:
            if c.value < 0:
                raise NetlistError(f"capacitor {c.name} is negative")
        for r in self.resistors:
            if r.value <= 0:
                raise NetlistError(f"resistor {r.name} must be positive")
        for v in self.sources:
            if not v.pwl:
                raise NetlistError(f"source {v.name} has no points")
            ts = [p[0] for p in v.pwl]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise NetlistError(f"source {v.name} PWL times must increase")
        driven = {v.node for v in self.sources}
        if len(driven) != len(self.sources):
            raise NetlistError("two sources drive the same node")
        self._check_reachable(driven)

    def _check_reachable(self, driven: set[str]) -> None:
        # every node must connect through some element to ground or a source
        adj: dict[str, set[str]] = {n: set() for n in [*self.nodes, GROUND]}

        def link(a, b):
            adj[a].add(b)
            adj[b].add(a)

        for m in self.mosfets:
            link(m.d, m.s)
            link(m.g, m.s)
            link(m.g, m.d)
        for e in (*self.capacitors, *self.resistors):
            link(e.a, e.b)
        frontier = [GROUND, *driven]
        seen = set(frontier)
        while frontier:
            n = frontier.pop()
            for k in adj[n] - seen:
                seen.add(k)
                frontier.append(k)
        orphans = [n for n in self.nodes if n not in seen]
        if orphans:
            raise NetlistError(f"nodes not reachable from a source or ground: {orphans}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "nodes": self.nodes,
            "elements": (
                [{"type": "mosfet", **asdict(m)} for m in self.mosfets]
                + [{"type": "capacitor", **asdict(c)} for c in self.capacitors]
                + [{"type": "resistor", **asdict(r)} for r in self.resistors]
                + [{"type": "vsource", "name": v.name, "node": v.node, "pwl": [list(p) for p in v.pwl]}
                   for v in self.sources]
            ),
            "cards": {k: c.to_dict() for k, c in sorted(self.cards.items())},
            "pair_models": dict(sorted(self.pair_models.items())),
            "initial": self.initial,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Netlist":
        net = cls(d["name"], cards={k: CompactModelParams.from_dict(c) for k, c in d["cards"].items()},
                  pair_models=dict(d.get("pair_models", {})), initial=dict(d.get("initial", {})),
                  meta=dict(d.get("meta", {})))
        for e in d["elements"]:
            e = dict(e)
            kind = e.pop("type")
            if kind == "mosfet":
                net.mosfets.append(Mosfet(**e))
            elif kind == "capacitor":
                net.capacitors.append(Capacitor(**e))
            elif kind == "resistor":
                net.resistors.append(Resistor(**e))
            elif kind == "vsource":
                net.sources.append(VSource(e["name"], e["node"], tuple(tuple(p) for p in e["pwl"])))
            else:
                raise NetlistError(f"unknown element type {kind!r}")
        return net
