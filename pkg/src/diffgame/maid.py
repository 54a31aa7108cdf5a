"""Influence-diagram games with parameterized chance tables.

A game is a DAG of chance and decision nodes over finite state spaces.
Chance nodes carry conditional probability tables whose entries are
expressions in named parameters (see `expr`); decision nodes carry no
table — their rows come from a `StrategyProfile`.  Utilities are dense
real tables over a declared scope of nodes.

Inference is exact enumeration over the full joint grid, which is stored
as a numpy array with one axis per node in topological order.  Parent
configurations are indexed row-major over the parents in that same
order, as are utility scopes; this convention also fixes the document
layout (see `parse_maid`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError, ZeroProbabilityEvent
from .expr import Expr, Num, parse_expr

__all__ = [
    "Node", "UtilityTable", "Maid", "ParamPoint", "StrategyProfile",
    "JointTable", "parse_maid", "joint_distribution",
    "conditional_distribution", "expected_utility",
    "conditional_expected_utility",
]

MAX_JOINT_STATES = 2 ** 24

RESIDUAL = "_"


@dataclass(frozen=True)
class ParamPoint:
    """A point in parameter space: named components inside a box domain."""

    names: tuple[str, ...]
    values: np.ndarray
    domain: np.ndarray  # shape (d, 2), closed intervals

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        domain = np.asarray(self.domain, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "domain", domain)
        if len(self.names) < 1:
            raise ValidationError("parameter vector must have dimension >= 1")
        if values.shape != (len(self.names),) or domain.shape != (len(self.names), 2):
            raise ValidationError("parameter point shape mismatch")
        if np.any(values < domain[:, 0] - 1e-15) or np.any(values > domain[:, 1] + 1e-15):
            raise ValidationError(
                f"parameter values {values} outside domain box {domain.tolist()}")
        values.setflags(write=False)
        domain.setflags(write=False)

    @property
    def dim(self) -> int:
        return len(self.names)

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def index(self, name: str) -> int:
        return self.names.index(name)

    def with_values(self, values) -> "ParamPoint":
        return ParamPoint(self.names, np.asarray(values, dtype=float), self.domain)

    def shifted(self, k: int, h: float) -> "ParamPoint":
        v = self.values.copy()
        v[k] += h
        return self.with_values(v)

    def midpoint(self) -> "ParamPoint":
        return self.with_values(0.5 * (self.domain[:, 0] + self.domain[:, 1]))


@dataclass(frozen=True)
class Node:
    id: str
    kind: str  # "chance" | "decision"
    states: tuple[str, ...]
    player: str | None = None
    # chance only: one row per parent configuration; None marks the residual
    # entry ("one minus the rest of the row")
    cpd: tuple[tuple[Expr | None, ...], ...] | None = None

    @property
    def n_states(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class UtilityTable:
    player: str
    scope: tuple[str, ...]  # topological order
    table: np.ndarray       # shape = state-space sizes of scope


class Maid:
    """A validated game; immutable after construction."""

    def __init__(self, nodes, edges, players, utilities, theta: ParamPoint):
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self.edges: tuple[tuple[str, str], ...] = tuple((a, b) for a, b in edges)
        self.players: dict[str, float] = dict(players)
        self.theta_template = theta
        self._by_id = {n.id: n for n in self.nodes}
        if len(self._by_id) != len(self.nodes):
            raise ValidationError("duplicate node ids")
        self._validate_structure()
        self.order: tuple[str, ...] = self._topological_order()
        self._topo_pos = {v: i for i, v in enumerate(self.order)}
        self.parents: dict[str, tuple[str, ...]] = {
            n.id: tuple(sorted((a for a, b in self.edges if b == n.id),
                               key=self._topo_pos.__getitem__))
            for n in self.nodes
        }
        self.sizes: dict[str, int] = {n.id: n.n_states for n in self.nodes}
        self.utilities: dict[str, UtilityTable] = {}
        for u in utilities:
            scope = tuple(sorted(u.scope, key=self._topo_pos.__getitem__))
            table = np.asarray(u.table, dtype=float).reshape(
                [self.sizes[v] for v in scope])
            table.setflags(write=False)
            if u.player in self.utilities:
                raise ValidationError(f"duplicate utility table for player {u.player!r}")
            self.utilities[u.player] = UtilityTable(u.player, scope, table)
        self._validate_tables()
        self._cpd_grad_cache: dict[tuple[str, str], list] = {}

    # -- structure ---------------------------------------------------------

    def _validate_structure(self):
        ids = set(self._by_id)
        for a, b in self.edges:
            if a not in ids or b not in ids:
                raise ValidationError(f"edge ({a!r}, {b!r}) references unknown node")
        for n in self.nodes:
            if not n.states:
                raise ValidationError(f"node {n.id!r} has an empty state space")
            if n.kind == "decision":
                if n.player is None or n.player not in self.players:
                    raise ValidationError(
                        f"decision node {n.id!r} must belong to a declared player")
            elif n.kind == "chance":
                if n.cpd is None:
                    raise ValidationError(f"chance node {n.id!r} is missing its table")
            else:
                raise ValidationError(f"node {n.id!r} has unknown kind {n.kind!r}")
        for pid, beta in self.players.items():
            if beta < 0:
                raise ValidationError(f"player {pid!r} has negative rationality")

    def _topological_order(self) -> tuple[str, ...]:
        doc_pos = {n.id: i for i, n in enumerate(self.nodes)}
        indeg = {n.id: 0 for n in self.nodes}
        out = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            if a == b:
                raise ValidationError(f"cycle detected through node {a!r}")
            indeg[b] += 1
            out[a].append(b)
        ready = sorted((v for v, d in indeg.items() if d == 0), key=doc_pos.__getitem__)
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for w in out[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
            ready.sort(key=doc_pos.__getitem__)
        if len(order) != len(self.nodes):
            stuck = sorted(v for v, d in indeg.items() if d > 0)
            raise ValidationError(f"cycle detected among nodes {stuck}")
        return tuple(order)

    def _validate_tables(self):
        joint = 1
        for n in self.nodes:
            joint *= n.n_states
            if joint > MAX_JOINT_STATES:
                raise ValidationError(
                    f"joint state space exceeds {MAX_JOINT_STATES} states")
        for pid in self.players:
            if pid not in self.utilities:
                raise ValidationError(f"player {pid!r} has no utility table")
        mid = self.theta_template.midpoint().as_dict()
        for n in self.nodes:
            if n.kind != "chance":
                continue
            n_rows = self.n_parent_configs(n.id)
            if len(n.cpd) != n_rows:
                raise ValidationError(
                    f"node {n.id!r}: expected {n_rows} table rows, got {len(n.cpd)}")
            for r, row in enumerate(n.cpd):
                if len(row) != n.n_states:
                    raise ValidationError(
                        f"node {n.id!r} row {r}: wrong number of entries")
                if sum(1 for e in row if e is None) > 1:
                    raise ValidationError(
                        f"node {n.id!r} row {r}: more than one residual marker")
                for e in row:
                    if e is None:
                        continue
                    for name in e.variables():
                        if name not in self.theta_template.names:
                            raise ValidationError(
                                f"node {n.id!r} row {r}: unknown parameter {name!r}")
            rows = self.cpd_array(n.id, mid)
            bad = np.abs(rows.sum(axis=1) - 1.0) > 1e-12
            if np.any(bad):
                raise ValidationError(
                    f"node {n.id!r}: rows {np.flatnonzero(bad).tolist()} do not "
                    "normalize at the domain midpoint")

    # -- bookkeeping -------------------------------------------------------

    def node(self, v: str) -> Node:
        try:
            return self._by_id[v]
        except KeyError:
            raise ValidationError(f"unknown node {v!r}") from None

    @property
    def decision_nodes(self) -> tuple[str, ...]:
        return tuple(v for v in self.order if self._by_id[v].kind == "decision")

    @property
    def chance_nodes(self) -> tuple[str, ...]:
        return tuple(v for v in self.order if self._by_id[v].kind == "chance")

    def n_parent_configs(self, v: str) -> int:
        return int(np.prod([self.sizes[u] for u in self.parents[v]], dtype=np.int64))

    def parent_config_index(self, v: str, assignment: dict[str, str]) -> int:
        idx = 0
        for u in self.parents[v]:
            idx = idx * self.sizes[u] + self.state_index(u, assignment[u])
        return idx

    def parent_config_states(self, v: str, index: int) -> dict[str, str]:
        out = {}
        for u in reversed(self.parents[v]):
            out[u] = self.node(u).states[index % self.sizes[u]]
            index //= self.sizes[u]
        return {u: out[u] for u in self.parents[v]}

    def state_index(self, v: str, label: str) -> int:
        try:
            return self.node(v).states.index(label)
        except ValueError:
            raise ValidationError(f"node {v!r} has no state {label!r}") from None

    def ancestors(self, v: str) -> set[str]:
        seen: set[str] = set()
        stack = list(self.parents[v])
        while stack:
            u = stack.pop()
            if u not in seen:
                seen.add(u)
                stack.extend(self.parents[u])
        return seen

    def with_betas(self, overrides: dict[str, float]) -> "Maid":
        for pid in overrides:
            if pid not in self.players:
                raise ValidationError(f"unknown player {pid!r}")
        players = {pid: overrides.get(pid, b) for pid, b in self.players.items()}
        m = Maid.__new__(Maid)
        m.__dict__.update(self.__dict__)
        m.players = players
        m._cpd_grad_cache = {}
        return m

    # -- numeric tables ----------------------------------------------------

    def cpd_array(self, v: str, env: dict[str, float]) -> np.ndarray:
        """Rows of p(x_v | x_pa; theta), residual entries completed."""
        node = self.node(v)
        rows = np.empty((len(node.cpd), node.n_states))
        for r, row in enumerate(node.cpd):
            residual_at = None
            total = 0.0
            for j, e in enumerate(row):
                if e is None:
                    residual_at = j
                else:
                    rows[r, j] = e.evaluate(env)
                    total += rows[r, j]
            if residual_at is not None:
                rows[r, residual_at] = 1.0 - total
        if np.any(rows < -1e-12) or np.any(rows > 1 + 1e-12):
            raise ValidationError(
                f"node {v!r}: table entries leave [0, 1] at theta={env}")
        if np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError(f"node {v!r}: rows do not normalize at theta={env}")
        return rows

    def cpd_grad_arrays(self, v: str, env: dict[str, float]) -> list[np.ndarray]:
        """d(cpd rows)/d(theta_k) for every component k, exact from the trees."""
        node = self.node(v)
        out = []
        for name in self.theta_template.names:
            key = (v, name)
            if key not in self._cpd_grad_cache:
                dcpd = []
                for row in node.cpd:
                    drow = [None if e is None else e.diff(name) for e in row]
                    dcpd.append(drow)
                self._cpd_grad_cache[key] = dcpd
            dcpd = self._cpd_grad_cache[key]
            rows = np.empty((len(node.cpd), node.n_states))
            for r, drow in enumerate(dcpd):
                residual_at = None
                total = 0.0
                for j, de in enumerate(drow):
                    if de is None:
                        residual_at = j
                    else:
                        rows[r, j] = de.evaluate(env)
                        total += rows[r, j]
                if residual_at is not None:
                    rows[r, residual_at] = -total
            out.append(rows)
        return out

    # -- serialization -----------------------------------------------------

    def to_document(self) -> dict:
        nodes = []
        for n in self.nodes:
            d = {"id": n.id, "kind": n.kind, "states": list(n.states)}
            if n.kind == "decision":
                d["player"] = n.player
            else:
                d["cpd"] = [[RESIDUAL if e is None else str(e) for e in row]
                            for row in n.cpd]
            nodes.append(d)
        return {
            "nodes": nodes,
            "edges": [list(e) for e in self.edges],
            "players": [{"id": p, "beta": b} for p, b in self.players.items()],
            "utilities": [
                {"player": u.player, "scope": list(u.scope),
                 "table": u.table.reshape(-1).tolist()}
                for u in self.utilities.values()
            ],
            "theta": [
                {"name": n, "min": float(lo), "max": float(hi), "default": float(v)}
                for n, v, (lo, hi) in zip(self.theta_template.names,
                                          self.theta_template.values,
                                          self.theta_template.domain)
            ],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_document(), indent=2, **kwargs)


def parse_maid(text) -> Maid:
    """Build a validated Maid from a JSON document string or a plain dict.

    Document layout::

        {"nodes":    [{"id", "kind": "chance"|"decision", "player"?,
                       "states": [...], "cpd"?: [[expr, ...], ...]}],
         "edges":    [[from, to], ...],
         "players":  [{"id", "beta"}],
         "utilities":[{"player", "scope": [...], "table": [flat floats]}],
         "theta":    [{"name", "min", "max", "default"}]}

    Table rows are expression strings over the declared theta names with
    "_" marking at most one residual entry per row.  Rows are indexed
    row-major over the node's parents in topological order, and utility
    tables row-major over the scope in topological order.
    """
    if isinstance(text, (str, bytes)):
        doc = json.loads(text)
    else:
        doc = text
    try:
        theta_decl = doc.get("theta", [])
        names = tuple(t["name"] for t in theta_decl)
        theta = ParamPoint(
            names,
            np.array([t["default"] for t in theta_decl], dtype=float),
            np.array([[t["min"], t["max"]] for t in theta_decl], dtype=float),
        ) if theta_decl else ParamPoint(("_unused",), np.zeros(1), np.array([[0.0, 1.0]]))
        nodes = []
        for nd in doc["nodes"]:
            kind = nd["kind"]
            cpd = None
            if kind == "chance":
                cpd = tuple(
                    tuple(None if cell.strip() == RESIDUAL else parse_expr(cell)
                          for cell in row)
                    for row in nd["cpd"])
            nodes.append(Node(
                id=nd["id"], kind=kind, states=tuple(nd["states"]),
                player=nd.get("player"), cpd=cpd))
        players = {p["id"]: float(p["beta"]) for p in doc["players"]}
        utilities = [
            UtilityTable(u["player"], tuple(u["scope"]),
                         np.asarray(u["table"], dtype=float))
            for u in doc.get("utilities", [])
        ]
    except KeyError as e:
        raise ValidationError(f"document is missing key {e.args[0]!r}") from None
    return Maid(nodes, doc["edges"], players, utilities, theta)


# ---------------------------------------------------------------------------
# strategy profiles


class StrategyProfile:
    """One conditional table per decision node, rows over parent configs."""

    def __init__(self, maid: Maid, tables: dict[str, np.ndarray]):
        self.tables: dict[str, np.ndarray] = {}
        if set(tables) != set(maid.decision_nodes):
            raise ValidationError(
                "strategy tables do not match the game's decision nodes")
        for v in maid.decision_nodes:
            t = np.asarray(tables[v], dtype=float)
            want = (maid.n_parent_configs(v), maid.sizes[v])
            if t.shape != want:
                raise ValidationError(
                    f"strategy table for {v!r} has shape {t.shape}, expected {want}")
            if np.any(t < -1e-12) or np.any(np.abs(t.sum(axis=1) - 1.0) > 1e-12):
                raise ValidationError(f"strategy rows for {v!r} are not distributions")
            t = t.copy()
            t.setflags(write=False)
            self.tables[v] = t

    @classmethod
    def uniform(cls, maid: Maid) -> "StrategyProfile":
        return cls(maid, {
            v: np.full((maid.n_parent_configs(v), maid.sizes[v]), 1.0 / maid.sizes[v])
            for v in maid.decision_nodes})

    def as_vector(self, maid: Maid) -> np.ndarray:
        return np.concatenate([self.tables[v].reshape(-1)
                               for v in maid.decision_nodes])

    @classmethod
    def from_vector(cls, maid: Maid, vec: np.ndarray) -> "StrategyProfile":
        tables = {}
        at = 0
        for v in maid.decision_nodes:
            n = maid.n_parent_configs(v) * maid.sizes[v]
            tables[v] = vec[at:at + n].reshape(maid.n_parent_configs(v), maid.sizes[v])
            at += n
        return cls(maid, tables)

    def distance(self, other: "StrategyProfile") -> float:
        return max(
            float(np.max(np.abs(self.tables[v] - other.tables[v])))
            for v in self.tables)


# ---------------------------------------------------------------------------
# joint tables and enumeration machinery


@dataclass(frozen=True)
class JointTable:
    """Distribution over the product of node state spaces, axes in `nodes` order."""

    nodes: tuple[str, ...]
    states: tuple[tuple[str, ...], ...]
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", p)
        p.setflags(write=False)

    def axis(self, v: str) -> int:
        return self.nodes.index(v)

    def marginal(self, keep) -> "JointTable":
        keep = [v for v in self.nodes if v in set(keep)]
        drop = tuple(i for i, v in enumerate(self.nodes) if v not in keep)
        return JointTable(
            tuple(keep),
            tuple(self.states[self.axis(v)] for v in keep),
            self.probs.sum(axis=drop) if drop else self.probs)

    def prob(self, assignment: dict[str, str]) -> float:
        idx = tuple(
            self.states[i].index(assignment[v]) for i, v in enumerate(self.nodes))
        return float(self.probs[idx])


def _full_shape(m: Maid) -> tuple[int, ...]:
    return tuple(m.sizes[v] for v in m.order)


def _factor_full(m: Maid, v: str, rows: np.ndarray) -> np.ndarray:
    """Reshape a (parent-config, state) table for broadcasting on the grid."""
    axes = [m._topo_pos[u] for u in m.parents[v]] + [m._topo_pos[v]]
    shape = [1] * len(m.order)
    for ax, u in zip(axes, list(m.parents[v]) + [v]):
        shape[ax] = m.sizes[u]
    return rows.reshape(shape)


def _factor_rows(m: Maid, s: StrategyProfile, env: dict[str, float], v: str
                 ) -> np.ndarray:
    if m.node(v).kind == "chance":
        return m.cpd_array(v, env)
    return s.tables[v]


def product_of_factors(m: Maid, s: StrategyProfile, env: dict[str, float],
                       exclude: frozenset = frozenset(),
                       replace: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Full-grid product of node factors, skipping `exclude`.

    `replace` swaps in alternative (parent-config, state) tables for chosen
    nodes, which is how derivative factors enter the product rule.
    """
    out = np.ones(_full_shape(m))
    for v in m.order:
        if v in exclude:
            continue
        rows = replace[v] if replace and v in replace else _factor_rows(m, s, env, v)
        out = out * _factor_full(m, v, rows)
    return out


def marginalize_to(m: Maid, grid: np.ndarray, keep) -> np.ndarray:
    keep = set(keep)
    drop = tuple(i for i, v in enumerate(m.order) if v not in keep)
    return grid.sum(axis=drop) if drop else grid


def utility_grid(m: Maid, player: str) -> np.ndarray:
    try:
        u = m.utilities[player]
    except KeyError:
        raise ValidationError(f"unknown player {player!r}") from None
    shape = [1] * len(m.order)
    for v in u.scope:
        shape[m._topo_pos[v]] = m.sizes[v]
    return u.table.reshape(shape)


def joint_distribution(m: Maid, s: StrategyProfile, p: ParamPoint) -> JointTable:
    """p(x) as the product of chance tables and strategy rows."""
    env = p.as_dict()
    grid = product_of_factors(m, s, env)
    total = float(grid.sum())
    if abs(total - 1.0) > 1e-10:
        raise ValidationError(f"joint distribution sums to {total}, not 1")
    return JointTable(m.order, tuple(m.node(v).states for v in m.order), grid)


def conditional_distribution(j: JointTable, targets, givens,
                             given_state: dict[str, str]) -> JointTable:
    """Normalized marginal ratio p(targets | givens = given_state)."""
    targets = tuple(targets)
    givens = tuple(givens)
    if set(targets) & set(givens):
        raise ValidationError("target and conditioning sets overlap")
    sub = j.marginal(set(targets) | set(givens))
    sl = [slice(None)] * len(sub.nodes)
    for g in givens:
        ax = sub.axis(g)
        sl[ax] = sub.states[ax].index(given_state[g])
    restricted = sub.probs[tuple(sl)]
    total = float(restricted.sum())
    if total <= 0.0:
        raise ZeroProbabilityEvent(
            f"conditioning event {given_state} has probability zero")
    kept = [v for v in sub.nodes if v not in givens]
    return JointTable(
        tuple(kept),
        tuple(sub.states[sub.axis(v)] for v in kept),
        restricted / total)


def expected_utility(m: Maid, s: StrategyProfile, p: ParamPoint, player: str
                     ) -> float:
    grid = product_of_factors(m, s, p.as_dict())
    return float((grid * utility_grid(m, player)).sum())


def conditional_expected_utility(m: Maid, s: StrategyProfile, p: ParamPoint,
                                 player: str, v: str, a_v: str,
                                 x_pa: dict[str, str]) -> float:
    """E(u_player | x_v = a_v, x_pa(v)) with v's own factor excluded.

    Conditioning runs through the ancestors of v only (v's strategy row
    cancels from the Bayes quotient); descendants are integrated forward
    under the profile.  Parent configurations with zero ancestor mass fall
    back to clamping the parents outright, so the response rows the solver
    needs exist at every configuration.
    """
    if m.node(v).kind != "decision":
        raise ValidationError(f"{v!r} is not a decision node")
    tables = conditional_utility_tables(m, s, p, v, player)
    r = m.parent_config_index(v, x_pa)
    a = m.state_index(v, a_v)
    return float(tables[r, a])


def conditional_utility_tables(m: Maid, s: StrategyProfile, p: ParamPoint,
                               v: str, player: str) -> np.ndarray:
    """All rows E(u_player | a_v, x_pa) at once, shape (parent configs, states)."""
    env = p.as_dict()
    ug = utility_grid(m, player)
    keep = set(m.parents[v]) | {v}
    leave_out = product_of_factors(m, s, env, exclude=frozenset({v}))
    num = marginalize_to(m, leave_out * ug, keep)
    den = marginalize_to(m, leave_out, keep)
    if np.any(den <= 0.0):
        clamped = product_of_factors(m, s, env, exclude=frozenset(keep))
        num_cl = marginalize_to(m, clamped * ug, keep)
        den_cl = marginalize_to(m, clamped, keep)
        zero = den <= 0.0
        num = np.where(zero, num_cl, num)
        den = np.where(zero, den_cl, den)
    table = num / den
    # collapse kept axes (topological order) onto (parent config, state)
    kept_order = [u for u in m.order if u in keep]
    perm = [kept_order.index(u) for u in list(m.parents[v]) + [v]]
    table = np.transpose(table, perm)
    return table.reshape(m.n_parent_configs(v), m.sizes[v])
