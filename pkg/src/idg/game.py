"""N-player input-affine differential game model and feedback strategies."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .expr import (
    Const, Expr, ExprMatrix, compile_exprs, diff, evaluate, jacobian, max_var_index,
)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Dynamics:
    """``xdot = f(x) + sum_i G_i(x) u_i``."""

    f: ExprMatrix  # n x 1
    G: tuple[ExprMatrix, ...]  # one n x p_i matrix per player

    def __post_init__(self):
        n = self.f.shape[0]
        if self.f.shape[1] != 1:
            raise ModelError("f must be a column of expressions")
        for i, g in enumerate(self.G):
            if g.shape[0] != n:
                raise ModelError(f"G[{i}] has {g.shape[0]} rows, expected n={n}")
        used = max([max_var_index(e) for e in self.f.flat()]
                   + [max_var_index(e) for g in self.G for e in g.flat()])
        if used >= n:
            raise ModelError(f"dynamics reference x{used + 1} but n={n}")

    @property
    def n(self) -> int:
        return self.f.shape[0]

    @property
    def N(self) -> int:
        return len(self.G)

    @property
    def p(self) -> tuple[int, ...]:
        return tuple(g.shape[1] for g in self.G)

    def control_offsets(self) -> list[int]:
        return list(np.cumsum((0,) + self.p[:-1]))


@dataclass(frozen=True)
class PlayerModel:
    """Bases and (optionally ground-truth) parameters of one player.

    ``alpha`` stacks the diagonals of ``R_i1, ..., R_iN``.
    """

    phi: tuple[Expr, ...]
    psi: tuple[Expr, ...]
    alpha: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None
    value: Optional[Expr] = None  # raw value function (expression-driven ground truth)
    cost_offset: Optional[Expr] = None  # assumed extra cost term outside beta^T psi

    @property
    def h(self) -> int:
        return len(self.phi)

    @property
    def m(self) -> int:
        return len(self.psi)


@dataclass(frozen=True)
class DomainBox:
    lower: np.ndarray
    upper: np.ndarray
    step: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        st = np.asarray(self.step, dtype=float)
        if not (lo.shape == hi.shape == st.shape):
            raise ModelError("domain bounds and step must have equal length")
        if np.any(lo >= hi):
            raise ModelError("domain lower bound must be below upper bound")
        if np.any(lo > 0) or np.any(hi < 0):
            raise ModelError("domain must contain the origin")
        if np.any(st <= 0):
            raise ModelError("grid step must be positive")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "step", st)

    def axes(self) -> list[np.ndarray]:
        out = []
        for lo, hi, st in zip(self.lower, self.upper, self.step):
            count = int(round((hi - lo) / st)) + 1
            out.append(np.linspace(lo, lo + (count - 1) * st, count))
        return out

    def grid(self) -> np.ndarray:
        """Grid points as an ``n x K`` array (first coordinate varies slowest)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh])


def strategy_from_value(V: Expr, r_diag: Sequence[float], G: ExprMatrix) -> ExprMatrix:
    """Symbolic ``-1/2 R^{-1} G^T (dV/dx)^T`` as a ``p x 1`` matrix."""
    r_diag = np.asarray(r_diag, dtype=float).ravel()
    n, p = G.shape
    if r_diag.shape != (p,):
        raise ModelError(f"R diagonal has {r_diag.size} entries, G has {p} columns")
    if np.any(r_diag <= 0):
        raise ModelError(f"R_ii must be positive definite, got diagonal {r_diag.tolist()}")
    grad = [diff(V, j) for j in range(n)]
    comps = []
    for k in range(p):
        s: Expr = Const(0.0)
        for j in range(n):
            s = s + G[j, k] * grad[j]
        comps.append(Const(-1.0 / (2.0 * r_diag[k])) * s)
    return ExprMatrix.column(comps)


def linear_value(theta: Sequence[float], phi: Sequence[Expr]) -> Expr:
    v: Expr = Const(0.0)
    for t, b in zip(theta, phi):
        v = v + Const(float(t)) * b
    return v


@dataclass(frozen=True)
class GameModel:
    dynamics: Dynamics
    players: tuple[PlayerModel, ...]
    domain: DomainBox
    gt_mode: str = "parameter"  # or "expression"

    def __post_init__(self):
        if len(self.players) != self.dynamics.N:
            raise ModelError(f"{len(self.players)} players but {self.dynamics.N} G matrices")
        if self.gt_mode not in ("parameter", "expression"):
            raise ModelError(f"unknown ground-truth mode {self.gt_mode!r}")
        if self.domain.lower.size != self.dynamics.n:
            raise ModelError("domain dimension differs from state dimension")
        p_total = sum(self.dynamics.p)
        for i, pl in enumerate(self.players):
            for name, basis in (("phi", pl.phi), ("psi", pl.psi)):
                if not basis:
                    raise ModelError(f"players[{i}].{name} is empty")
                if max(max_var_index(e) for e in basis) >= self.dynamics.n:
                    raise ModelError(f"players[{i}].{name} references a state beyond n")
            if pl.alpha is not None and len(pl.alpha) != p_total:
                raise ModelError(f"players[{i}].alpha has length {len(pl.alpha)}, expected p={p_total}")
            if pl.beta is not None and len(pl.beta) != pl.m:
                raise ModelError(f"players[{i}].beta has length {len(pl.beta)}, expected m={pl.m}")
            if pl.theta is not None and len(pl.theta) != pl.h:
                raise ModelError(f"players[{i}].theta has length {len(pl.theta)}, expected h={pl.h}")

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def N(self) -> int:
        return self.dynamics.N

    @property
    def p(self) -> tuple[int, ...]:
        return self.dynamics.p

    @property
    def p_total(self) -> int:
        return sum(self.dynamics.p)

    def r_self(self, i: int, alpha: Optional[Sequence[float]] = None) -> np.ndarray:
        """Diagonal of ``R_ii`` taken from ``alpha`` (defaults to player i's own)."""
        a = self.players[i].alpha if alpha is None else alpha
        off = self.dynamics.control_offsets()[i]
        return np.asarray(a, dtype=float)[off:off + self.p[i]]

    def with_costs(self, alphas, betas) -> "GameModel":
        players = tuple(
            replace(pl, alpha=np.asarray(a, dtype=float), beta=np.asarray(b, dtype=float))
            for pl, a, b in zip(self.players, alphas, betas)
        )
        return replace(self, players=players)

    def gt_value(self, i: int) -> Expr:
        pl = self.players[i]
        if self.gt_mode == "expression":
            if pl.value is None:
                raise ModelError(f"players[{i}] has no ground-truth value expression")
            return pl.value
        if pl.theta is None:
            raise ModelError(f"players[{i}] has no ground-truth theta")
        return linear_value(pl.theta, pl.phi)

    def gt_strategies(self) -> list[ExprMatrix]:
        return [
            strategy_from_value(self.gt_value(i), self.r_self(i), self.dynamics.G[i])
            for i in range(self.N)
        ]

    @cached_property
    def evaluator(self) -> "PointEvaluator":
        return PointEvaluator(self)


class PointEvaluator:
    """All state-dependent model quantities compiled into one numpy call.

    ``at(x)`` accepts a state vector or an ``n x K`` batch and returns a
    :class:`ModelPoint` with leading axes as documented there and a trailing
    batch axis when batched.
    """

    def __init__(self, model: GameModel):
        self.model = model
        n = model.n
        dyn = model.dynamics
        exprs: list[Expr] = []
        self._slices: dict[tuple, tuple[slice, tuple[int, ...]]] = {}

        def put(key, mat: ExprMatrix):
            start = len(exprs)
            exprs.extend(mat.flat())
            self._slices[key] = (slice(start, len(exprs)), mat.shape)

        put(("f",), dyn.f)
        for i, g in enumerate(dyn.G):
            put(("G", i), g)
        for i, pl in enumerate(model.players):
            put(("dphi", i), jacobian(pl.phi, n))
            put(("psi", i), ExprMatrix.column(pl.psi))
            if pl.cost_offset is not None:
                put(("offset", i), ExprMatrix.column([pl.cost_offset]))
        self._fn = compile_exprs(exprs)

    def at(self, x) -> "ModelPoint":
        vals = self._fn(x)
        tail = vals.shape[1:]
        get = {k: vals[s].reshape(shape + tail) for k, (s, shape) in self._slices.items()}
        N = self.model.N
        return ModelPoint(
            f=get[("f",)][:, 0],
            G=[get[("G", i)] for i in range(N)],
            dphi=[get[("dphi", i)] for i in range(N)],
            psi=[get[("psi", i)][:, 0] for i in range(N)],
            offset=[get[("offset", i)][0, 0] if ("offset", i) in get else None for i in range(N)],
        )


@dataclass
class ModelPoint:
    f: np.ndarray  # n
    G: list  # per player n x p_i
    dphi: list  # per player h_i x n
    psi: list  # per player m_i
    offset: list  # per player scalar or None


def strategy_values(model: GameModel, pt: ModelPoint, i: int, theta, r_diag) -> np.ndarray:
    """Numeric ``-1/2 R^{-1} G_i^T dphi_i^T theta`` at an evaluated point."""
    grad_v = np.einsum("h...,hn...->n...", np.asarray(theta, dtype=float), pt.dphi[i])
    gtg = np.einsum("np...,n...->p...", pt.G[i], grad_v)
    r = np.asarray(r_diag, dtype=float).reshape((-1,) + (1,) * (gtg.ndim - 1))
    return -0.5 * gtg / r


# ---------------------------------------------------------------- validation

@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""
    hard: bool = False

    def to_dict(self):
        return {"name": self.name, "ok": self.ok, "detail": self.detail, "hard": self.hard}


@dataclass
class Diagnostics:
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def hard_failures(self) -> list:
        return [c for c in self.checks if not c.ok and c.hard]

    def failures(self) -> list:
        return [c for c in self.checks if not c.ok]

    def to_dict(self):
        return {"ok": self.ok, "checks": [c.to_dict() for c in self.checks]}


def min_cost_on_grid(model: GameModel, i: int, beta, grid: np.ndarray, ball: float = 0.1):
    """Minimum of ``beta^T psi_i (+ offset)`` over grid points outside a ball
    around the origin, with the minimizing point."""
    pts = grid[:, np.linalg.norm(grid, axis=0) > ball]
    pt = model.evaluator.at(pts)
    q = np.asarray(beta, dtype=float) @ pt.psi[i]
    if pt.offset[i] is not None:
        q = q + pt.offset[i]
    k = int(np.argmin(q))
    return float(q[k]), pts[:, k]


def validate(model: GameModel, ball: float = 0.1) -> Diagnostics:
    """Check R, positive definiteness of Q on the grid, and f(0)=0, mu(0)=0.

    Never raises for model-content problems; failures are listed instead.
    """
    diag = Diagnostics()
    zero = np.zeros(model.n)
    f0 = np.array([evaluate(e, zero) for e in model.dynamics.f.flat()])
    diag.checks.append(Check("f(0)=0", bool(np.max(np.abs(f0)) <= 1e-12), f"max |f(0)| = {np.max(np.abs(f0)):.3g}"))
    grid = model.domain.grid()
    offsets = model.dynamics.control_offsets()
    r_ok = True
    for i, pl in enumerate(model.players):
        if pl.alpha is not None:
            a = np.asarray(pl.alpha, dtype=float)
            rii = model.r_self(i)
            ok_self = bool(np.all(rii > 0))
            r_ok &= ok_self
            diag.checks.append(Check(f"player {i + 1}: R_ii > 0", ok_self, f"diag = {rii.tolist()}", hard=True))
            mask = np.ones(a.size, dtype=bool)
            mask[offsets[i]:offsets[i] + model.p[i]] = False
            cross = a[mask]
            ok_cross = bool(np.all(cross >= 0))
            diag.checks.append(Check(f"player {i + 1}: R_ij >= 0 (j != i)", ok_cross, f"entries = {cross.tolist()}", hard=True))
        if pl.beta is not None:
            qmin, where = min_cost_on_grid(model, i, pl.beta, grid, ball)
            diag.checks.append(Check(
                f"player {i + 1}: Q positive on grid", qmin > 0,
                f"min Q = {qmin:.6g} at x = {where.tolist()}"))
    if r_ok and all(pl.alpha is not None for pl in model.players):
        try:
            mus = model.gt_strategies()
            mu0 = max(float(np.max(np.abs(m.evaluate(zero)))) for m in mus)
            diag.checks.append(Check("mu*(0)=0", mu0 <= 1e-12, f"max |mu*(0)| = {mu0:.3g}"))
        except ModelError as exc:
            diag.checks.append(Check("mu*(0)=0", False, str(exc)))
    return diag
