"""Information functionals: entropy, mutual information, channel capacity,
and the garbling (noisier-channel) partial order.

All quantities are returned in nats; the CLI converts to bits on output.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import ValidationError
from .maid import JointTable, Maid, ParamPoint

__all__ = [
    "Channel", "BacParams", "GarblingOrder", "entropy", "mutual_information",
    "bac_capacity", "bac_capacity_gradient", "capacity_numeric",
    "garbling_order", "channel_from_node", "capacity_channel_gradient",
    "LN2",
]

LN2 = float(np.log(2.0))

GARBLING_TOL = 1e-9


@dataclass(frozen=True)
class Channel:
    """Row-stochastic matrix p(y|x); rows are inputs, columns outputs."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "matrix", m)
        if np.any(m < -1e-12) or np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-12):
            raise ValidationError("channel rows must be probability distributions")
        m.setflags(write=False)

    @property
    def n_inputs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class BacParams:
    """Transmission errors of the two-input binary channel.

    eps1 flips input 0, eps2 flips input 1.  Capacity gradients need the
    open interior (0,1) x (0,1).
    """

    eps1: float
    eps2: float

    def channel(self) -> Channel:
        return Channel(np.array([[1.0 - self.eps1, self.eps1],
                                 [self.eps2, 1.0 - self.eps2]]))

    def interior(self) -> bool:
        return 0.0 < self.eps1 < 1.0 and 0.0 < self.eps2 < 1.0


class GarblingOrder(enum.Enum):
    MORE_INFORMATIVE = "MoreInformative"
    LESS_INFORMATIVE = "LessInformative"
    EQUIVALENT = "Equivalent"
    INCOMPARABLE = "Incomparable"


def _xlogx(p: np.ndarray) -> np.ndarray:
    # 0 * log 0 = 0
    return np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)


def entropy(dist) -> float:
    """Shannon entropy -sum p ln p in nats."""
    p = np.asarray(dist, dtype=float).reshape(-1)
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise ValidationError("entropy argument is not a distribution")
    return float(-_xlogx(p).sum())


def _binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log(p) - (1.0 - p) * np.log(1.0 - p))


def mutual_information(j: JointTable, a_nodes, b_nodes) -> float:
    """I(A;B) = sum p(a,b) ln[ p(a,b) / p(a)p(b) ] over the joint table."""
    a_nodes, b_nodes = tuple(a_nodes), tuple(b_nodes)
    if set(a_nodes) & set(b_nodes):
        raise ValidationError("mutual information requires disjoint node sets")
    sub = j.marginal(set(a_nodes) | set(b_nodes))
    a_axes = tuple(i for i, v in enumerate(sub.nodes) if v in set(a_nodes))
    b_axes = tuple(i for i, v in enumerate(sub.nodes) if v in set(b_nodes))
    pab = sub.probs
    pa = pab.sum(axis=b_axes, keepdims=True)
    pb = pab.sum(axis=a_axes, keepdims=True)
    mask = pab > 0.0
    ratio = np.where(mask, pab / np.where(mask, pa * pb, 1.0), 1.0)
    return float(np.where(mask, pab * np.log(ratio), 0.0).sum())


def channel_mutual_information(r: np.ndarray, q: np.ndarray) -> float:
    """I(X;Y) for input distribution r and channel rows q."""
    joint = r[:, None] * q
    py = joint.sum(axis=0)
    mask = joint > 0.0
    ratio = np.where(mask, q / np.where(py > 0.0, py, 1.0)[None, :], 1.0)
    return float(np.where(mask, joint * np.log(ratio), 0.0).sum())


def bac_capacity(b: BacParams) -> float:
    """Closed-form capacity (nats) of the binary asymmetric channel.

    Derived from the interior stationary point of I(pi) = H(Y) - H(Y|X)
    over the input probability pi = P(X=1); cross-validated against the
    Blahut-Arimoto iteration in the tests.
    """
    e1, e2 = float(b.eps1), float(b.eps2)
    if not (0.0 <= e1 <= 1.0 and 0.0 <= e2 <= 1.0):
        raise ValidationError("channel errors must lie in [0, 1]")
    span = 1.0 - e1 - e2
    if abs(span) < 1e-12:
        return 0.0  # identical rows: output independent of input
    btilde = (_binary_entropy(e2) - _binary_entropy(e1)) / span
    q1 = 1.0 / (1.0 + np.exp(btilde))  # optimal P(Y=1)
    pi = (q1 - e1) / span              # optimal P(X=1)
    c = (_binary_entropy(q1)
         - (1.0 - pi) * _binary_entropy(e1) - pi * _binary_entropy(e2))
    return float(max(c, 0.0))


def bac_capacity_gradient(b: BacParams) -> np.ndarray:
    """(dC/d eps1, dC/d eps2) in nats, by the envelope theorem."""
    if not b.interior():
        raise ValidationError("capacity gradient needs interior channel errors")
    e1, e2 = float(b.eps1), float(b.eps2)
    span = 1.0 - e1 - e2
    if abs(span) < 1e-12:
        raise ValidationError("capacity is not differentiable on eps1 + eps2 = 1")
    btilde = (_binary_entropy(e2) - _binary_entropy(e1)) / span
    q1 = 1.0 / (1.0 + np.exp(btilde))
    pi = (q1 - e1) / span
    logit = lambda p: np.log((1.0 - p) / p)  # h'(p)
    d1 = (1.0 - pi) * (btilde - logit(e1))
    d2 = -pi * (btilde + logit(e2))
    return np.array([d1, d2])


def capacity_numeric(c: Channel, tol: float = 1e-10,
                     max_iter: int = 10_000) -> tuple[float, np.ndarray]:
    """Blahut-Arimoto capacity (nats) with an upper/lower bracket stop.

    Deterministic uniform initialization; stops when the bracket
    max_x D(q_x || p_Y) - I(r) drops below `tol`.
    """
    q = c.matrix
    n = c.n_inputs
    r = np.full(n, 1.0 / n)
    lower = 0.0
    for _ in range(max_iter):
        py = r @ q
        # D(q_x || py) per input; rows with q=0 contribute nothing
        mask = q > 0.0
        logratio = np.where(mask, np.log(np.where(mask, q, 1.0))
                            - np.log(np.where(py > 0.0, py, 1.0))[None, :], 0.0)
        d = (np.where(mask, q * logratio, 0.0)).sum(axis=1)
        lower = float((r * d).sum())
        upper = float(d.max())
        if upper - lower < tol:
            break
        r = r * np.exp(d - d.max())
        r = r / r.sum()
    return lower, r


def garbling_order(p: Channel, q: Channel) -> GarblingOrder:
    """Blackwell order: p is more informative than q iff q = p G for some
    row-stochastic G (linear-programming feasibility at tolerance 1e-9)."""
    if p.n_inputs != q.n_inputs:
        raise ValidationError("channels must share the input alphabet")
    p_garbles_q = _garbling_feasible(p.matrix, q.matrix)
    q_garbles_p = _garbling_feasible(q.matrix, p.matrix)
    if p_garbles_q and q_garbles_p:
        return GarblingOrder.EQUIVALENT
    if p_garbles_q:
        return GarblingOrder.MORE_INFORMATIVE
    if q_garbles_p:
        return GarblingOrder.LESS_INFORMATIVE
    return GarblingOrder.INCOMPARABLE


def _garbling_feasible(p: np.ndarray, q: np.ndarray) -> bool:
    """min t  s.t.  |p G - q| <= t entrywise, G row-stochastic, G >= 0."""
    n_in, n_p = p.shape
    n_q = q.shape[1]
    n_g = n_p * n_q  # variables: G entries (row-major), then t
    c = np.zeros(n_g + 1)
    c[-1] = 1.0

    def g_col(i, j):
        return i * n_q + j

    rows_ub, rhs_ub = [], []
    for x in range(n_in):
        for j in range(n_q):
            row = np.zeros(n_g + 1)
            for i in range(n_p):
                row[g_col(i, j)] = p[x, i]
            row[-1] = -1.0
            rows_ub.append(row.copy())
            rhs_ub.append(q[x, j])
            row[:-1] = -row[:-1]
            rows_ub.append(row)
            rhs_ub.append(-q[x, j])
    rows_eq = []
    for i in range(n_p):
        row = np.zeros(n_g + 1)
        row[i * n_q:(i + 1) * n_q] = 1.0
        rows_eq.append(row)
    res = linprog(
        c, A_ub=np.array(rows_ub), b_ub=np.array(rhs_ub),
        A_eq=np.array(rows_eq), b_eq=np.ones(n_p),
        bounds=[(0.0, 1.0)] * n_g + [(0.0, None)], method="highs")
    if not res.success:
        return False
    return res.fun <= GARBLING_TOL


def channel_from_node(m: Maid, p: ParamPoint, v: str) -> Channel:
    """The conditional table of a single-parent chance node as a channel."""
    node = m.node(v)
    if node.kind != "chance" or len(m.parents[v]) != 1:
        raise ValidationError(
            f"node {v!r} is not a single-parent chance node")
    return Channel(m.cpd_array(v, p.as_dict()))


def capacity_channel_gradient(c: Channel, tol: float = 1e-12) -> np.ndarray:
    """dC/d p(y|x) at the capacity-achieving input (Danskin's theorem)."""
    cap, r = capacity_numeric(c, tol=tol)
    q = c.matrix
    py = r @ q
    mask = q > 0.0
    out = np.where(mask,
                   np.log(np.where(mask, q, 1.0))
                   - np.log(np.where(py > 0.0, py, 1.0))[None, :], 0.0)
    return r[:, None] * out
