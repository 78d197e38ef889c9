"""Pipeline network graph, uniform pipe segmentation and scenario data.

Networks and scenarios are read from JSON documents (SI units throughout)
and are immutable after construction, so they are safe for shared reads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .physics import (
    DEFAULT_L0,
    DEFAULT_MACH,
    DEFAULT_P0,
    GasConstants,
)

ROLES = ("slack", "injection", "withdrawal", "junction")


class ParseError(ValueError):
    """A network or scenario document is malformed.

    The message carries the location (array and id) of the offending entry.
    """


@dataclass(frozen=True)
class Node:
    id: str
    role: str = "junction"
    p_min: float = 3.0e6
    p_max: float = 6.0e6
    p_slack: Optional[float] = None          # slack nodes only, Pa
    eta_s: Optional[float] = None            # constant supply fraction (scenario may override)
    gE_max: Optional[float] = None           # withdrawal bound mode, MJ/s
    gE_fixed: Optional[float] = None         # withdrawal fixed mode, MJ/s


@dataclass(frozen=True)
class Pipe:
    id: str
    from_node: str
    to_node: str
    L: float                                 # m
    D: float                                 # m
    lam: float                               # Darcy friction factor
    A: float                                 # m^2

    @staticmethod
    def area(D: float) -> float:
        return math.pi * D ** 2 / 4.0


@dataclass(frozen=True)
class Compressor:
    id: str
    from_node: str
    to_node: str
    alpha_max: float
    fc_max: float                            # kg/s


@dataclass(frozen=True)
class Network:
    nodes: tuple[Node, ...]
    pipes: tuple[Pipe, ...]
    compressors: tuple[Compressor, ...]

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def slack_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.role == "slack")

    @property
    def injection_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.role == "injection")

    @property
    def withdrawal_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes if n.role == "withdrawal")

    @property
    def supply_ids(self) -> tuple[str, ...]:
        """Nodes that can inject gas: slack plus injection nodes."""
        return tuple(n.id for n in self.nodes if n.role in ("slack", "injection"))

    def to_document(self) -> dict:
        doc = {"nodes": [], "pipes": [], "compressors": []}
        for n in self.nodes:
            entry = {"id": n.id, "role": n.role, "p_min": n.p_min, "p_max": n.p_max}
            for key in ("p_slack", "eta_s", "gE_max", "gE_fixed"):
                value = getattr(n, key)
                if value is not None:
                    entry[key] = value
            doc["nodes"].append(entry)
        for p in self.pipes:
            doc["pipes"].append(
                {"id": p.id, "from": p.from_node, "to": p.to_node,
                 "L": p.L, "D": p.D, "lambda": p.lam, "A": p.A}
            )
        for c in self.compressors:
            doc["compressors"].append(
                {"id": c.id, "from": c.from_node, "to": c.to_node,
                 "alpha_max": c.alpha_max, "fc_max": c.fc_max}
            )
        return doc


def _require(cond: bool, where: str, msg: str):
    if not cond:
        raise ParseError(f"{where}: {msg}")


def parse_network(document: dict) -> Network:
    """Build a Network from a parsed JSON document.

    Raises ParseError (with the offending array and id in the message) for
    unknown node references, duplicate ids, missing slack nodes or negative
    parameters.
    """
    _require(isinstance(document, dict), "network", "document must be an object")
    nodes = []
    seen: set[str] = set()
    for entry in document.get("nodes", []):
        nid = entry.get("id")
        where = f"nodes[{nid!r}]"
        _require(isinstance(nid, str) and nid, where, "missing id")
        _require(nid not in seen, where, "duplicate id")
        seen.add(nid)
        role = entry.get("role", "junction")
        _require(role in ROLES, where, f"unknown role {role!r}")
        p_min = float(entry.get("p_min", 3.0e6))
        p_max = float(entry.get("p_max", 6.0e6))
        _require(0.0 < p_min < p_max, where, f"need 0 < p_min < p_max, got [{p_min}, {p_max}]")
        p_slack = entry.get("p_slack")
        if role == "slack":
            _require(p_slack is not None, where, "slack node needs p_slack")
            p_slack = float(p_slack)
            _require(p_min <= p_slack <= p_max, where, "p_slack outside pressure bounds")
        else:
            _require(p_slack is None, where, "p_slack only valid on slack nodes")
        eta_s = entry.get("eta_s")
        if eta_s is not None:
            _require(role in ("slack", "injection"), where, "eta_s only valid on supply nodes")
            eta_s = float(eta_s)
            _require(0.0 <= eta_s <= 1.0, where, "eta_s must be in [0, 1]")
        gE_max = entry.get("gE_max")
        gE_fixed = entry.get("gE_fixed")
        if gE_max is not None or gE_fixed is not None:
            _require(role == "withdrawal", where, "energy demand only valid on withdrawal nodes")
            _require(gE_max is None or gE_fixed is None, where,
                     "gE_max and gE_fixed are mutually exclusive")
        if gE_max is not None:
            gE_max = float(gE_max)
            _require(gE_max >= 0.0, where, "gE_max must be non-negative")
        if gE_fixed is not None:
            gE_fixed = float(gE_fixed)
            _require(gE_fixed >= 0.0, where, "gE_fixed must be non-negative")
        if role == "withdrawal":
            _require(gE_max is not None or gE_fixed is not None, where,
                     "withdrawal node needs gE_max or gE_fixed")
        nodes.append(Node(id=nid, role=role, p_min=p_min, p_max=p_max,
                          p_slack=p_slack, eta_s=eta_s, gE_max=gE_max, gE_fixed=gE_fixed))

    def check_endpoint(where, nid):
        _require(nid in seen, where, f"unknown node reference {nid!r}")

    pipes = []
    for entry in document.get("pipes", []):
        pid = entry.get("id")
        where = f"pipes[{pid!r}]"
        _require(isinstance(pid, str) and pid, where, "missing id")
        _require(pid not in seen, where, "duplicate id")
        seen.add(pid)
        frm, to = entry.get("from"), entry.get("to")
        check_endpoint(where, frm)
        check_endpoint(where, to)
        L = float(entry["L"])
        D = float(entry["D"])
        lam = float(entry.get("lambda", 0.01))
        A = float(entry.get("A", Pipe.area(D)))
        _require(L > 0 and D > 0 and A > 0, where, "L, D, A must be positive")
        _require(lam > 0, where, "friction factor must be positive")
        pipes.append(Pipe(id=pid, from_node=frm, to_node=to, L=L, D=D, lam=lam, A=A))

    compressors = []
    for entry in document.get("compressors", []):
        cid = entry.get("id")
        where = f"compressors[{cid!r}]"
        _require(isinstance(cid, str) and cid, where, "missing id")
        _require(cid not in seen, where, "duplicate id")
        seen.add(cid)
        frm, to = entry.get("from"), entry.get("to")
        check_endpoint(where, frm)
        check_endpoint(where, to)
        alpha_max = float(entry.get("alpha_max", 2.0))
        fc_max = float(entry["fc_max"])
        _require(alpha_max >= 1.0, where, "alpha_max must be >= 1")
        _require(fc_max > 0.0, where, "fc_max must be positive")
        compressors.append(Compressor(id=cid, from_node=frm, to_node=to,
                                      alpha_max=alpha_max, fc_max=fc_max))

    net = Network(nodes=tuple(nodes), pipes=tuple(pipes), compressors=tuple(compressors))
    _require(len(net.slack_ids) >= 1, "network", "at least one slack node is required")
    return net


def load_network(path: str | Path) -> Network:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    return parse_network(doc)


def validate_topology(net: Network) -> list[str]:
    """Return a list of diagnostics; an empty list means the topology is sound.

    Checks connectivity, presence of a slack node per component, self-loops,
    and that no node holds both an injection and a withdrawal role (only one
    of supply and withdrawal flow may be positive at a node).
    """
    diags: list[str] = []
    edges = [(p.from_node, p.to_node, p.id) for p in net.pipes] + [
        (c.from_node, c.to_node, c.id) for c in net.compressors
    ]
    for frm, to, eid in edges:
        if frm == to:
            diags.append(f"self-loop on edge {eid!r}")
    # undirected connectivity from the first node
    adjacency: dict[str, set[str]] = {n.id: set() for n in net.nodes}
    for frm, to, _ in edges:
        if frm != to:
            adjacency[frm].add(to)
            adjacency[to].add(frm)
    if net.nodes:
        reached = {net.nodes[0].id}
        stack = [net.nodes[0].id]
        while stack:
            for nxt in sorted(adjacency[stack.pop()]):
                if nxt not in reached:
                    reached.add(nxt)
                    stack.append(nxt)
        for n in net.nodes:
            if n.id not in reached:
                diags.append(f"unreachable node {n.id!r}")
    slack = set(net.slack_ids)
    if not slack:
        diags.append("no slack node in network")
    # roles are encoded as a single field, but a document may still try to give
    # a withdrawal node supply data (or vice versa); flag the exclusivity.
    for n in net.nodes:
        if n.role == "withdrawal" and n.eta_s is not None:
            diags.append(
                f"node {n.id!r} mixes injection and withdrawal roles; "
                "only one of supply and withdrawal flow may be positive"
            )
    return diags


@dataclass(frozen=True)
class Segment:
    """One short pipe produced by uniform segmentation of a parent pipe."""

    id: str
    parent: str
    from_node: str
    to_node: str
    L: float
    D: float
    lam: float
    A: float


@dataclass(frozen=True)
class SegmentedNetwork:
    """Original network plus auxiliary junctions and equal-length segments."""

    original: Network
    nodes: tuple[Node, ...]                  # original nodes followed by auxiliaries
    segments: tuple[Segment, ...]
    compressors: tuple[Compressor, ...]
    dL: float

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)


def segment_pipes(net: Network, dL: float) -> SegmentedNetwork:
    """Split every pipe into ceil(L/dL) equal-length segments.

    Auxiliary node ids are deterministic: ``<pipe id>.<segment index>``.
    Auxiliary nodes are junctions carrying the parent pipe's endpoint
    pressure bounds.
    """
    if dL <= 0.0:
        raise ValueError(f"segmentation length must be positive, got {dL}")
    nodes = list(net.nodes)
    segments: list[Segment] = []
    for pipe in net.pipes:
        count = max(1, math.ceil(pipe.L / dL - 1e-12))
        seg_len = pipe.L / count
        frm_node = net.node(pipe.from_node)
        to_node = net.node(pipe.to_node)
        p_min = max(frm_node.p_min, to_node.p_min)
        p_max = min(frm_node.p_max, to_node.p_max)
        prev = pipe.from_node
        for k in range(count):
            last = k == count - 1
            nxt = pipe.to_node if last else f"{pipe.id}.{k + 1}"
            if not last:
                nodes.append(Node(id=nxt, role="junction", p_min=p_min, p_max=p_max))
            segments.append(
                Segment(id=f"{pipe.id}.s{k + 1}", parent=pipe.id,
                        from_node=prev, to_node=nxt,
                        L=seg_len, D=pipe.D, lam=pipe.lam, A=pipe.A)
            )
            prev = nxt
    return SegmentedNetwork(
        original=net, nodes=tuple(nodes), segments=tuple(segments),
        compressors=net.compressors, dL=dL,
    )


def injection_profile(eta0: float, delta: float, nu: float, t, T: float):
    """Sinusoidal supply concentration eta0 + delta*sin(2 pi nu t / T).

    ``t`` may be a scalar or an array of times in hours; ``T`` is the period
    basis in hours.  The result lies in [eta0 - delta, eta0 + delta].
    """
    if not (0.0 <= eta0 - abs(delta) and eta0 + abs(delta) <= 1.0):
        raise ValueError(
            f"eta0 +/- delta must stay within [0, 1], got eta0={eta0}, delta={delta}"
        )
    return eta0 + delta * np.sin(2.0 * np.pi * nu * np.asarray(t, dtype=float) / T)


@dataclass(frozen=True)
class Profile:
    """Time profile for supply concentration: sinusoid or sampled series.

    Sampled series are piecewise constant over each sampling interval;
    sinusoids are evaluated exactly at grid points.
    """

    kind: str                                 # "sinusoid" | "series" | "constant"
    eta0: float = 0.0
    delta: float = 0.0
    nu: float = 1.0
    times: Optional[tuple[float, ...]] = None
    values: Optional[tuple[float, ...]] = None

    def evaluate(self, t_hours, period_hours: float) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t_hours, dtype=float))
        if self.kind == "constant":
            return np.full_like(t, self.eta0)
        if self.kind == "sinusoid":
            return np.asarray(injection_profile(self.eta0, self.delta, self.nu,
                                                t, period_hours))
        idx = np.searchsorted(np.asarray(self.times), t, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return np.asarray(self.values, dtype=float)[idx]


@dataclass(frozen=True)
class Scenario:
    """Time horizon, discretization, supply profiles, prices and weights."""

    T_f: float                               # hours
    dt: float                                # hours
    dL: float                                # m
    profiles: dict[str, Profile] = field(default_factory=dict)
    c_H2: float = 1.5                        # $/kg
    c_NG: float = 0.18                       # $/kg
    C_E: float = 0.01                        # $/MJ
    zeta: float = 0.07                       # $/kWh
    xi: float = 0.5
    mu: float = 1.31
    G: float = 0.505
    T_suction: float = 288.7                 # K
    gas: GasConstants = field(default_factory=GasConstants)
    l0: float = DEFAULT_L0
    p0: float = DEFAULT_P0
    M: float = DEFAULT_MACH
    qs_max: float = 1000.0                   # kg/s, supply flow cap
    qw_max: float = 2000.0                   # kg/s, withdrawal flow cap

    def __post_init__(self):
        if self.T_f <= 0.0 or self.dt <= 0.0:
            raise ParseError(f"scenario: horizon and dt must be positive")
        ratio = self.T_f / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ParseError(
                f"scenario: dt={self.dt} h does not divide the horizon {self.T_f} h"
            )
        if not 0.0 <= self.xi <= 1.0:
            raise ParseError(f"scenario: xi must be in [0, 1], got {self.xi}")

    @property
    def n_steps(self) -> int:
        return round(self.T_f / self.dt)

    def supply_fraction(self, node: Node, t_hours) -> np.ndarray:
        """Supply concentration profile for a node at the given grid times."""
        profile = self.profiles.get(node.id)
        if profile is None:
            eta = node.eta_s if node.eta_s is not None else 0.0
            profile = Profile(kind="constant", eta0=eta)
        return profile.evaluate(t_hours, self.T_f)

    def compressor_work_constant(self) -> float:
        """Adiabatic-compression constant K, J per kg of compressed gas."""
        return 286.76 * self.mu * self.T_suction / (self.G * (self.mu - 1.0))


def _parse_profile(node_id: str, entry: dict) -> Profile:
    where = f"profiles[{node_id!r}]"
    kind = entry.get("type")
    if kind == "sinusoid":
        eta0 = float(entry["eta0"])
        delta = float(entry.get("delta", 0.0))
        nu = float(entry.get("nu", 1.0))
        _require(0.0 <= eta0 - abs(delta) and eta0 + abs(delta) <= 1.0, where,
                 "eta0 +/- delta must stay within [0, 1]")
        return Profile(kind="sinusoid", eta0=eta0, delta=delta, nu=nu)
    if kind == "series":
        times = tuple(float(v) for v in entry["times"])
        values = tuple(float(v) for v in entry["values"])
        _require(len(times) == len(values) and len(times) > 0, where,
                 "times and values must be equal-length, non-empty")
        _require(all(0.0 <= v <= 1.0 for v in values), where,
                 "series values must be in [0, 1]")
        return Profile(kind="series", times=times, values=values)
    if kind == "constant":
        eta0 = float(entry["eta0"])
        _require(0.0 <= eta0 <= 1.0, where, "eta0 must be in [0, 1]")
        return Profile(kind="constant", eta0=eta0)
    raise ParseError(f"{where}: unknown profile type {kind!r}")


def parse_scenario(document: dict) -> Scenario:
    _require(isinstance(document, dict), "scenario", "document must be an object")
    profiles = {
        node_id: _parse_profile(node_id, entry)
        for node_id, entry in document.get("profiles", {}).items()
    }
    prices = document.get("prices", {})
    cost = document.get("compressor_cost", {})
    gas_doc = document.get("gas", {})
    defaults = GasConstants()
    gas = GasConstants(
        a_H2=float(gas_doc.get("a_H2", defaults.a_H2)),
        a_NG=float(gas_doc.get("a_NG", defaults.a_NG)),
        R_H2=float(gas_doc.get("R_H2", defaults.R_H2)),
        R_NG=float(gas_doc.get("R_NG", defaults.R_NG)),
    )
    scales_doc = document.get("scales", {})
    return Scenario(
        T_f=float(document.get("horizon_hours", 24.0)),
        dt=float(document.get("dt_hours", 0.5)),
        dL=float(document.get("segment_length_m", 10000.0)),
        profiles=profiles,
        c_H2=float(prices.get("c_H2", 1.5)),
        c_NG=float(prices.get("c_NG", 0.18)),
        C_E=float(prices.get("C_E", 0.01)),
        zeta=float(prices.get("zeta", 0.07)),
        xi=float(document.get("xi", 0.5)),
        mu=float(cost.get("mu", 1.31)),
        G=float(cost.get("G", 0.505)),
        T_suction=float(cost.get("T", 288.7)),
        gas=gas,
        l0=float(scales_doc.get("l0", DEFAULT_L0)),
        p0=float(scales_doc.get("p0", DEFAULT_P0)),
        M=float(scales_doc.get("M", DEFAULT_MACH)),
        qs_max=float(document.get("qs_max", 1000.0)),
        qw_max=float(document.get("qw_max", 2000.0)),
    )


def load_scenario(path: str | Path) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    return parse_scenario(doc)
