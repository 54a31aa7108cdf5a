"""Logit quantal-response equilibria: residual system, solver, enumeration,
and branch continuation.

The equilibrium conditions are stacked as one residual vector over the
unknowns (all strategy entries, then all row normalizers):

    sigma(a|pa) - exp(beta * E(u | a, pa)) / Z(pa) = 0
    Z(pa) - sum_a exp(beta * E(u | a, pa))        = 0

Internally every exponential is shifted by the row maximum of E so the
system stays finite at arbitrarily large beta; the stored normalizers are
the shifted ones and `Equilibrium.log_z` recovers the raw value exactly in
log space.  The shift is held fixed while a Jacobian is assembled, which
leaves the strategy components of every tangent unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, ValidationError
from .maid import (Maid, ParamPoint, StrategyProfile, expected_utility,
                   marginalize_to, product_of_factors, utility_grid,
                   _factor_full)

__all__ = [
    "SolveOptions", "Equilibrium", "Branch", "PathSpec", "residual", "solve",
    "enumerate_equilibria", "trace_branch", "principal_equilibrium",
]

DEDUP_TOL = 1e-6
FOLD_CONDITION = 1e12
JUMP_GUARD = 0.1


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-10
    max_iter: int = 5000
    damping: float = 0.5
    newton_polish: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        if not (0.0 < self.damping <= 1.0):
            raise ValidationError("damping must lie in (0, 1]")


@dataclass(frozen=True)
class Equilibrium:
    """One solution of the residual system at one parameter point."""

    profile: StrategyProfile
    z: dict[str, np.ndarray]        # shifted normalizers, one row per parent config
    z_shift: dict[str, np.ndarray]  # row maxima of E; raw ln Z = beta*shift + ln z
    betas: dict[str, float]
    theta: ParamPoint
    residual_norm: float

    def log_z(self, m: Maid, v: str) -> np.ndarray:
        beta = self.betas[m.node(v).player]
        return beta * self.z_shift[v] + np.log(self.z[v])

    def values(self, m: Maid) -> dict[str, float]:
        return {i: expected_utility(m, self.profile, self.theta, i)
                for i in m.players}


@dataclass
class Branch:
    points: list[Equilibrium]
    path_param: str  # "beta:<player>" or "theta:<name>"
    label: str = ""
    fold: dict | None = None

    def path_values(self) -> np.ndarray:
        kind, name = self.path_param.split(":", 1)
        if kind == "beta":
            return np.array([pt.betas[name] for pt in self.points])
        return np.array([pt.theta.as_dict()[name] for pt in self.points])


@dataclass(frozen=True)
class PathSpec:
    kind: str  # "beta" | "theta"
    name: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if self.kind not in ("beta", "theta"):
            raise ValidationError("path kind must be 'beta' or 'theta'")
        if len(v) >= 2:
            d = np.diff(v)
            if not (np.all(d > 0) or np.all(d < 0)):
                raise ValidationError("path values must be strictly monotone")

    @property
    def param(self) -> str:
        return f"{self.kind}:{self.name}"


# ---------------------------------------------------------------------------
# enumeration engine


class _Engine:
    """Caches the theta-dependent pieces of one game for repeated solves."""

    def __init__(self, m: Maid, p: ParamPoint, betas: dict[str, float]):
        self.m = m
        self.p = p
        self.env = p.as_dict()
        self.betas = dict(betas)
        self.dec = m.decision_nodes
        self.chance = m.chance_nodes
        self.beta_of = {v: self.betas[m.node(v).player] for v in self.dec}
        self.shape = {v: (m.n_parent_configs(v), m.sizes[v]) for v in self.dec}
        # unknown vector layout: sigma blocks, then z blocks
        at = 0
        self.sig_at, self.z_at = {}, {}
        for v in self.dec:
            r, a = self.shape[v]
            self.sig_at[v] = at
            at += r * a
        self.n_sigma = at
        for v in self.dec:
            self.z_at[v] = at
            at += self.shape[v][0]
        self.n_unknowns = at
        # theta-independent grids
        self.ugrid = {v: utility_grid(m, m.node(v).player) for v in self.dec}
        self.chance_full = {c: _factor_full(m, c, m.cpd_array(c, self.env))
                            for c in self.chance}
        self.chance_prod = np.ones(tuple(m.sizes[v] for v in m.order))
        for c in self.chance:
            self.chance_prod = self.chance_prod * self.chance_full[c]
        self.chance_prod_minus = {}
        for c in self.chance:
            out = np.ones_like(self.chance_prod)
            for c2 in self.chance:
                if c2 != c:
                    out = out * self.chance_full[c2]
            self.chance_prod_minus[c] = out
        self.keep_axes = {v: set(m.parents[v]) | {v} for v in self.dec}
        self._dgrad = None  # per-(chance, k) derivative tables, built lazily

    # -- per-profile quantities ------------------------------------------

    def dec_fulls(self, tables: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {v: _factor_full(self.m, v, tables[v]) for v in self.dec}

    def leave_out(self, fulls, skip: set[str]) -> np.ndarray:
        out = self.chance_prod
        for w in self.dec:
            if w not in skip:
                out = out * fulls[w]
        return out

    def cond_utilities(self, tables) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Per decision node: (E, W) with shape (parent configs, actions)."""
        m = self.m
        fulls = self.dec_fulls(tables)
        out = {}
        for v in self.dec:
            r, a = self.shape[v]
            loo = self.leave_out(fulls, {v})
            num = marginalize_to(m, loo * self.ugrid[v], self.keep_axes[v])
            den = marginalize_to(m, loo, self.keep_axes[v])
            num = num.reshape(r, a)
            den = den.reshape(r, a)
            if np.any(den <= 0.0):
                s = StrategyProfile(m, tables)
                clamped = product_of_factors(
                    m, s, self.env, exclude=frozenset(self.keep_axes[v]))
                ncl = marginalize_to(m, clamped * self.ugrid[v],
                                     self.keep_axes[v]).reshape(r, a)
                wcl = marginalize_to(m, clamped, self.keep_axes[v]).reshape(r, a)
                zero = den <= 0.0
                num = np.where(zero, ncl, num)
                den = np.where(zero, wcl, den)
            out[v] = (num / den, den)
        return out

    def best_response(self, cond) -> dict[str, np.ndarray]:
        out = {}
        for v in self.dec:
            e, _ = cond[v]
            w = self.beta_of[v] * (e - e.max(axis=1, keepdims=True))
            g = np.exp(w)
            out[v] = g / g.sum(axis=1, keepdims=True)
        return out

    def shifted_parts(self, cond):
        """Row shifts c, boltzmann weights g = exp(beta (E - c)), z = sum g."""
        shift, g, zt = {}, {}, {}
        for v in self.dec:
            e, _ = cond[v]
            shift[v] = e.max(axis=1)
            g[v] = np.exp(self.beta_of[v] * (e - shift[v][:, None]))
            zt[v] = g[v].sum(axis=1)
        return shift, g, zt

    def residual_vec(self, tables, ztilde, cond) -> np.ndarray:
        shift, g, _ = self.shifted_parts(cond)
        out = np.empty(self.n_unknowns)
        for v in self.dec:
            r, a = self.shape[v]
            out[self.sig_at[v]:self.sig_at[v] + r * a] = (
                tables[v] - g[v] / ztilde[v][:, None]).reshape(-1)
            out[self.z_at[v]:self.z_at[v] + r] = ztilde[v] - g[v].sum(axis=1)
        return out

    # -- derivative machinery ----------------------------------------------

    def _decode(self, v: str, config: int) -> dict[str, int]:
        out = {}
        for u in reversed(self.m.parents[v]):
            out[u] = config % self.m.sizes[u]
            config //= self.m.sizes[u]
        return out

    def _cross_block(self, grid_n, grid_w, v, w):
        """Partial derivatives of E[v] rows w.r.t. sigma[w] entries.

        grid_n / grid_w are the union-marginals of P_{-v,-w} * U and
        P_{-v,-w}; the returned block has shape (Rv, Av, Rw, Aw) with zeros
        at inconsistent overlapping assignments.
        """
        m = self.m
        keep = self.keep_axes[v] | self.keep_axes[w]
        kept = [u for u in m.order if u in keep]
        pos = {u: i for i, u in enumerate(kept)}
        rv, av = self.shape[v]
        rw, aw = self.shape[w]
        dn = np.zeros((rv, av, rw, aw))
        dw = np.zeros((rv, av, rw, aw))
        for r in range(rv):
            base_pa = self._decode(v, r)
            for s_ in range(rw):
                w_pa = self._decode(w, s_)
                conflict = any(base_pa.get(k, val) != val for k, val in w_pa.items())
                if conflict:
                    continue
                merged = {**base_pa, **w_pa}
                for a in range(av):
                    if merged.get(v, a) != a:
                        continue
                    for b in range(aw):
                        if merged.get(w, b) != b:
                            continue
                        assign = {**merged, v: a, w: b}
                        idx = tuple(assign[u] for u in kept)
                        dn[r, a, s_, b] = grid_n[idx]
                        dw[r, a, s_, b] = grid_w[idx]
        return dn, dw

    def dE_dsigma(self, fulls, cond, v, w):
        """(Rv, Av, Rw, Aw) array of dE[v]/dsigma[w]; free-coordinate partials."""
        if w == v:
            raise ValidationError("E does not depend on the node's own rows")
        m = self.m
        e, wden = cond[v]
        loo = self.leave_out(fulls, {v, w})
        keep = self.keep_axes[v] | self.keep_axes[w]
        grid_n = marginalize_to(m, loo * self.ugrid[v], keep)
        grid_w = marginalize_to(m, loo, keep)
        dn, dw = self._cross_block(grid_n, grid_w, v, w)
        if np.any(wden <= 0.0):
            raise ValidationError(
                f"zero-probability parent configuration at {v!r}; "
                "derivatives are undefined there")
        return (dn - e[:, :, None, None] * dw) / wden[:, :, None, None]

    def _grad_fulls(self):
        if self._dgrad is None:
            m = self.m
            self._dgrad = {}
            for c in self.chance:
                tabs = m.cpd_grad_arrays(c, self.env)
                self._dgrad[c] = [_factor_full(m, c, t) for t in tabs]
        return self._dgrad

    def dE_dtheta(self, fulls, cond, v):
        """(Rv, Av, d) array of dE[v]/dtheta, exact from the table trees."""
        m = self.m
        e, wden = cond[v]
        rv, av = self.shape[v]
        d = self.p.dim
        dn = np.zeros((rv, av, d))
        dw = np.zeros((rv, av, d))
        dec_part = np.ones_like(self.chance_prod)
        for w in self.dec:
            if w != v:
                dec_part = dec_part * fulls[w]
        grads = self._grad_fulls()
        for c in self.chance:
            base = self.chance_prod_minus[c] * dec_part
            for k in range(d):
                dfull = grads[c][k]
                if not np.any(dfull):
                    continue
                g = base * dfull
                dn[:, :, k] += marginalize_to(
                    m, g * self.ugrid[v], self.keep_axes[v]).reshape(rv, av)
                dw[:, :, k] += marginalize_to(
                    m, g, self.keep_axes[v]).reshape(rv, av)
        return (dn - e[:, :, None] * dw) / wden[:, :, None]

    def jacobian(self, tables, ztilde, cond) -> np.ndarray:
        """[dF/dsigma  dF/dz] with the row shifts held fixed."""
        shift, g, _ = self.shifted_parts(cond)
        fulls = self.dec_fulls(tables)
        jac = np.zeros((self.n_unknowns, self.n_unknowns))
        for v in self.dec:
            r, a = self.shape[v]
            beta = self.beta_of[v]
            srow = self.sig_at[v]
            zrow = self.z_at[v]
            idx = np.arange(r * a)
            jac[srow + idx, srow + idx] = 1.0
            # dF_sigma/dZ and dF_Z/dZ
            gz = (g[v] / ztilde[v][:, None] ** 2).reshape(-1)
            rows = srow + idx
            cols = zrow + np.repeat(np.arange(r), a)
            jac[rows, cols] += gz
            jac[zrow + np.arange(r), zrow + np.arange(r)] = 1.0
            for w in self.dec:
                if w == v:
                    continue
                de = self.dE_dsigma(fulls, cond, v, w)  # (r, a, rw, aw)
                rw, aw = self.shape[w]
                coef = (beta * g[v] / ztilde[v][:, None])[:, :, None, None]
                block = (coef * de).reshape(r * a, rw * aw)
                jac[srow:srow + r * a,
                    self.sig_at[w]:self.sig_at[w] + rw * aw] -= block
                zblock = (beta * g[v][:, :, None, None] * de).sum(axis=1)
                jac[zrow:zrow + r,
                    self.sig_at[w]:self.sig_at[w] + rw * aw] -= zblock.reshape(
                        r, rw * aw)
        return jac

    def dF_dtheta(self, tables, ztilde, cond) -> np.ndarray:
        shift, g, _ = self.shifted_parts(cond)
        fulls = self.dec_fulls(tables)
        out = np.zeros((self.n_unknowns, self.p.dim))
        for v in self.dec:
            r, a = self.shape[v]
            beta = self.beta_of[v]
            de = self.dE_dtheta(fulls, cond, v)  # (r, a, d)
            coef = (beta * g[v] / ztilde[v][:, None])[:, :, None]
            out[self.sig_at[v]:self.sig_at[v] + r * a, :] = (
                -(coef * de).reshape(r * a, self.p.dim))
            out[self.z_at[v]:self.z_at[v] + r, :] = (
                -(beta * g[v][:, :, None] * de).sum(axis=1))
        return out

    def dF_dbeta(self, tables, ztilde, cond, player: str) -> np.ndarray:
        shift, g, _ = self.shifted_parts(cond)
        out = np.zeros(self.n_unknowns)
        for v in self.dec:
            if self.m.node(v).player != player:
                continue
            r, a = self.shape[v]
            e, _ = cond[v]
            centered = e - shift[v][:, None]
            out[self.sig_at[v]:self.sig_at[v] + r * a] = (
                -(g[v] * centered) / ztilde[v][:, None]).reshape(-1)
            out[self.z_at[v]:self.z_at[v] + r] = -(g[v] * centered).sum(axis=1)
        return out

    # -- vector packing ----------------------------------------------------

    def pack(self, tables, ztilde) -> np.ndarray:
        u = np.empty(self.n_unknowns)
        for v in self.dec:
            r, a = self.shape[v]
            u[self.sig_at[v]:self.sig_at[v] + r * a] = tables[v].reshape(-1)
            u[self.z_at[v]:self.z_at[v] + r] = ztilde[v]
        return u

    def unpack(self, u):
        tables, ztilde = {}, {}
        for v in self.dec:
            r, a = self.shape[v]
            tables[v] = u[self.sig_at[v]:self.sig_at[v] + r * a].reshape(r, a)
            ztilde[v] = u[self.z_at[v]:self.z_at[v] + r]
        return tables, ztilde


def _betas_for(m: Maid, betas: dict[str, float] | None) -> dict[str, float]:
    if betas is None:
        return dict(m.players)
    out = dict(m.players)
    for k, v in betas.items():
        if k not in out:
            raise ValidationError(f"unknown player {k!r}")
        out[k] = float(v)
    return out


def residual(m: Maid, s: StrategyProfile, z: dict[str, np.ndarray],
             p: ParamPoint, betas: dict[str, float] | None = None) -> np.ndarray:
    """The raw stacked residual with unshifted normalizers.

    This is the literal fixed-point system; it overflows once
    beta * max E exceeds the float exponent range (~700), which the
    solver avoids internally via row shifts.
    """
    betas = _betas_for(m, betas)
    eng = _Engine(m, p, betas)
    cond = eng.cond_utilities(s.tables)
    out = np.empty(eng.n_unknowns)
    for v in eng.dec:
        r, a = eng.shape[v]
        e, _ = cond[v]
        g = np.exp(eng.beta_of[v] * e)
        zv = np.asarray(z[v], dtype=float)
        out[eng.sig_at[v]:eng.sig_at[v] + r * a] = (
            s.tables[v] - g / zv[:, None]).reshape(-1)
        out[eng.z_at[v]:eng.z_at[v] + r] = zv - g.sum(axis=1)
    return out


def _renormalize(tables):
    for v, t in tables.items():
        tables[v] = t / t.sum(axis=1, keepdims=True)
    return tables


def _solve_engine(eng: _Engine, init: StrategyProfile, opts: SolveOptions
                  ) -> Equilibrium:
    tables = {v: t.copy() for v, t in init.tables.items()}
    lam = opts.damping
    fp_target = max(opts.tol, 1e-3) if opts.newton_polish else opts.tol
    fp_budget = min(opts.max_iter, 60) if opts.newton_polish else opts.max_iter
    prev = np.inf
    best = (np.inf, None, None)

    def fp_rounds(n):
        nonlocal prev, lam, best, tables
        for _ in range(n):
            cond = eng.cond_utilities(tables)
            br = eng.best_response(cond)
            res = max(float(np.max(np.abs(tables[v] - br[v]))) for v in eng.dec)
            if res < best[0]:
                best = (res, {v: t.copy() for v, t in tables.items()}, cond)
            if res <= fp_target:
                return cond, res
            if res > prev * (1.0 + 1e-12):
                lam = max(0.5 * lam, 1.0 / 64.0)  # oscillating: damp harder
            prev = res
            for v in eng.dec:
                tables[v] = (1.0 - lam) * tables[v] + lam * br[v]
            _renormalize(tables)
        cond = eng.cond_utilities(tables)
        br = eng.best_response(cond)
        return cond, max(float(np.max(np.abs(tables[v] - br[v]))) for v in eng.dec)

    cond, fp_res = fp_rounds(fp_budget)

    if opts.newton_polish:
        for round_ in range(3):
            ok = _newton_polish(eng, tables, cond, opts)
            if ok:
                break
            # singular Jacobian or stalled line search: more fixed point
            cond, fp_res = fp_rounds(200)
        cond = eng.cond_utilities(tables)

    _, _, ztilde = eng.shifted_parts(cond)
    resvec = eng.residual_vec(tables, ztilde, cond)
    norm = float(np.max(np.abs(resvec)))
    eq = _build_equilibrium(eng, tables, cond, norm)
    if norm > opts.tol:
        raise NonConvergence(
            f"residual {norm:.3e} above tolerance {opts.tol:.3e}",
            equilibrium=eq,
            diagnostics={"residual": norm, "fp_residual": fp_res,
                         "damping": lam})
    return eq


def _newton_polish(eng, tables, cond, opts, max_steps: int = 60) -> bool:
    _, _, ztilde = eng.shifted_parts(cond)
    f = eng.residual_vec(tables, ztilde, cond)
    norm = float(np.max(np.abs(f)))
    for _ in range(max_steps):
        if norm <= opts.tol:
            return True
        jac = eng.jacobian(tables, ztilde, cond)
        try:
            step = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            return False
        t = 1.0
        base = np.linalg.norm(f)
        u0 = eng.pack(tables, ztilde)
        while True:
            cand_tab, cand_z = eng.unpack(u0 + t * step)
            if (all(np.all(ct > 0.0) for ct in cand_tab.values())
                    and all(np.all(cz > 0.0) for cz in cand_z.values())):
                _renormalize(cand_tab)
                cand_cond = eng.cond_utilities(cand_tab)
                cand_f = eng.residual_vec(cand_tab, cand_z, cand_cond)
                if np.linalg.norm(cand_f) <= (1.0 - 1e-4 * t) * base:
                    break
            t *= 0.5
            if t < 1e-7:
                return norm <= opts.tol
        for v in eng.dec:
            tables[v][...] = cand_tab[v]
            ztilde[v] = cand_z[v]
        cond.clear()
        cond.update(cand_cond)
        f = cand_f
        norm = float(np.max(np.abs(f)))
    return norm <= opts.tol


def _build_equilibrium(eng: _Engine, tables, cond, norm) -> Equilibrium:
    shift, _, ztilde = eng.shifted_parts(cond)
    profile = StrategyProfile(eng.m, tables)
    return Equilibrium(
        profile=profile,
        z={v: ztilde[v].copy() for v in eng.dec},
        z_shift={v: shift[v].copy() for v in eng.dec},
        betas=dict(eng.betas),
        theta=eng.p,
        residual_norm=norm,
    )


def solve(m: Maid, p: ParamPoint, init: StrategyProfile | None = None,
          opts: SolveOptions | None = None,
          betas: dict[str, float] | None = None) -> Equilibrium:
    """Damped fixed-point iteration followed by a Newton polish."""
    opts = opts or SolveOptions()
    init = init or StrategyProfile.uniform(m)
    eng = _Engine(m, p, _betas_for(m, betas))
    return _solve_engine(eng, init, opts)


def enumerate_equilibria(m: Maid, p: ParamPoint, n_starts: int,
                         opts: SolveOptions | None = None,
                         betas: dict[str, float] | None = None
                         ) -> list[Equilibrium]:
    """Multi-start enumeration with L-infinity deduplication.

    Deterministic for a fixed seed: starts are drawn from one generator and
    results are sorted lexicographically before deduplication.
    """
    if n_starts < 1:
        raise ValidationError("n_starts must be >= 1")
    opts = opts or SolveOptions()
    rng = np.random.default_rng(opts.seed)
    eng = _Engine(m, p, _betas_for(m, betas))
    found = []
    failures = []
    for _ in range(n_starts):
        tables = {}
        for v in m.decision_nodes:
            r, a = eng.shape[v]
            tables[v] = rng.dirichlet(np.ones(a), size=r)
        try:
            found.append(_solve_engine(eng, StrategyProfile(m, tables), opts))
        except NonConvergence as err:
            failures.append(err)
    if not found:
        raise NonConvergence(
            f"all {n_starts} starts failed", diagnostics={"failures": len(failures)})
    found.sort(key=lambda e: tuple(e.profile.as_vector(m)))
    kept: list[Equilibrium] = []
    for eq in found:
        if all(eq.profile.distance(k.profile) >= DEDUP_TOL for k in kept):
            kept.append(eq)
    return kept


def principal_equilibrium(m: Maid, p: ParamPoint,
                          opts: SolveOptions | None = None,
                          betas: dict[str, float] | None = None,
                          ramp_steps: int = 8) -> Equilibrium:
    """The equilibrium continued from uniform play at zero rationality."""
    opts = opts or SolveOptions()
    target = _betas_for(m, betas)
    eq = solve(m, p, StrategyProfile.uniform(m), opts,
               betas={k: 0.0 for k in target})
    for f in np.linspace(0.0, 1.0, ramp_steps + 1)[1:]:
        eq = solve(m, p, eq.profile, opts,
                   betas={k: f * b for k, b in target.items()})
    return eq


def trace_branch(m: Maid, start: Equilibrium, path: PathSpec,
                 opts: SolveOptions | None = None) -> Branch:
    """Predictor-corrector continuation along one parameter component.

    Euler predictor from the implicit-function tangent, warm-started solve
    as corrector, step halving on corrector failure.  Stops and reports a
    fold when the substep collapses or the Jacobian condition number
    exceeds 1e12; the branch up to the last good point is returned.
    """
    opts = opts or SolveOptions()
    values = np.asarray(path.values, dtype=float)
    if path.kind == "beta" and path.name not in start.betas:
        raise ValidationError(f"unknown player {path.name!r}")
    if path.kind == "theta" and path.name not in start.theta.names:
        raise ValidationError(f"unknown parameter {path.name!r}")
    cur_val = (start.betas[path.name] if path.kind == "beta"
               else start.theta.as_dict()[path.name])
    if abs(values[0] - cur_val) > 1e-12:
        raise ValidationError(
            f"path must start at the current value {cur_val}, got {values[0]}")
    branch = Branch(points=[start], path_param=path.param)
    cur = start
    for target in values[1:]:
        cur, fold = _advance(m, cur, path, float(target), opts)
        if fold is not None:
            branch.fold = fold
            break
        branch.points.append(cur)
    return branch


def _setup_engine(m, eq: Equilibrium, path: PathSpec, value: float) -> _Engine:
    if path.kind == "beta":
        betas = dict(eq.betas)
        betas[path.name] = value
        return _Engine(m, eq.theta, betas)
    theta = eq.theta
    return _Engine(m, theta.with_values(
        [value if n == path.name else v
         for n, v in zip(theta.names, theta.values)]), dict(eq.betas))


def _tangent(m, eq: Equilibrium, path: PathSpec) -> dict[str, np.ndarray] | None:
    """d sigma / d path at eq, from the linearized residual system."""
    eng = _setup_engine(m, eq, path,
                        eq.betas[path.name] if path.kind == "beta"
                        else eq.theta.as_dict()[path.name])
    tables = {v: eq.profile.tables[v].copy() for v in eng.dec}
    cond = eng.cond_utilities(tables)
    _, _, ztilde = eng.shifted_parts(cond)
    jac = eng.jacobian(tables, ztilde, cond)
    if path.kind == "beta":
        rhs = -eng.dF_dbeta(tables, ztilde, cond, path.name)
    else:
        k = eq.theta.index(path.name)
        rhs = -eng.dF_dtheta(tables, ztilde, cond)[:, k]
    try:
        du = np.linalg.solve(jac, rhs)
    except np.linalg.LinAlgError:
        return None
    dt, _ = eng.unpack(du)
    return dt


def _advance(m, cur: Equilibrium, path: PathSpec, target: float,
             opts: SolveOptions):
    cur_val = (cur.betas[path.name] if path.kind == "beta"
               else cur.theta.as_dict()[path.name])
    full = target - cur_val
    min_step = abs(full) / 1024.0 if full != 0 else 0.0
    step = full
    while True:
        cur_val = (cur.betas[path.name] if path.kind == "beta"
                   else cur.theta.as_dict()[path.name])
        remaining = target - cur_val
        if abs(remaining) <= 1e-14:
            return cur, None
        h = np.sign(remaining) * min(abs(step), abs(remaining))
        tangent = _tangent(m, cur, path)
        pred = {}
        for v in m.decision_nodes:
            t = cur.profile.tables[v] + (h * tangent[v] if tangent else 0.0)
            t = np.clip(t, 1e-15, None)
            pred[v] = t / t.sum(axis=1, keepdims=True)
        eng = _setup_engine(m, cur, path, cur_val + h)
        predictor = StrategyProfile(m, pred)
        try:
            nxt = _solve_engine(eng, predictor, opts)
            # the predictor captures legitimate motion; anything far from it
            # landed on another branch
            jumped = nxt.profile.distance(predictor) > JUMP_GUARD
        except NonConvergence:
            nxt, jumped = None, True
        if nxt is not None and not jumped:
            cond_num = _condition_number(m, nxt)
            if cond_num > FOLD_CONDITION:
                return cur, {"param_value": cur_val + h, "condition": cond_num,
                             "reason": "singular jacobian"}
            cur = nxt
            continue
        step = h / 2.0
        if abs(step) < min_step:
            return cur, {"param_value": cur_val, "condition":
                         _condition_number(m, cur), "reason": "step collapse"}


def _tangent_scale(tangent) -> float:
    if not tangent:
        return np.inf
    return max(float(np.max(np.abs(t))) for t in tangent.values())


def _condition_number(m: Maid, eq: Equilibrium) -> float:
    eng = _Engine(m, eq.theta, eq.betas)
    tables = {v: eq.profile.tables[v].copy() for v in eng.dec}
    cond = eng.cond_utilities(tables)
    _, _, ztilde = eng.shifted_parts(cond)
    jac = eng.jacobian(tables, ztilde, cond)
    return float(np.linalg.cond(jac))
