"""Closed-loop simulation with state resets, sampling and NSAE metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .expr import DomainError, ExprMatrix, compile_exprs
from .game import Dynamics


class SimulationDivergence(RuntimeError):
    def __init__(self, t: float, segment: int):
        super().__init__(f"state became non-finite at t = {t:.6g} s (segment {segment})")
        self.t = t
        self.segment = segment


@dataclass
class Trajectory:
    """Uniformly sampled state/control record; ``segment`` marks resets."""

    t0: float
    h: float
    x: np.ndarray  # K x n
    u: np.ndarray  # K x p
    segment: np.ndarray  # K, int

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("step must be positive")
        if not (len(self.x) == len(self.u) == len(self.segment)):
            raise ValueError("state, control and segment sequences differ in length")

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(len(self.x))

    @property
    def n_segments(self) -> int:
        return int(self.segment.max()) + 1 if len(self.segment) else 0

    def segment_slice(self, d: int) -> slice:
        idx = np.flatnonzero(self.segment == d)
        return slice(int(idx[0]), int(idx[-1]) + 1)

    def to_csv(self) -> str:
        n, p = self.x.shape[1], self.u.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{j + 1}" for j in range(n)] + [f"u{j + 1}" for j in range(p)] + ["segment"])
        for tk, xk, uk, sk in zip(self.t, self.x, self.u, self.segment):
            w.writerow([repr(float(tk))] + [repr(float(v)) for v in xk] + [repr(float(v)) for v in uk] + [int(sk)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        n = sum(1 for c in header if c.startswith("x"))
        p = sum(1 for c in header if c.startswith("u"))
        t = body[:, 0]
        h = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(float(t[0]), h, body[:, 1:1 + n], body[:, 1 + n:1 + n + p], body[:, -1].astype(int))


@dataclass
class Demonstrations:
    """Per-demonstration samples ``(x_k, u_k)`` at spacing ``dt``."""

    dt: float
    x: list = field(default_factory=list)  # per segment K x n
    u: list = field(default_factory=list)  # per segment K x p

    @property
    def D(self) -> int:
        return len(self.x)

    @property
    def K(self) -> int:
        return len(self.x[0]) if self.x else 0

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        return np.concatenate(self.x), np.concatenate(self.u)


def _steps(T: float, h: float, what: str) -> int:
    ratio = T / h
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"{what} = {T} is not a positive multiple of the step {h}")
    return k


def closed_loop_field(dyn: Dynamics, strategies: Sequence[ExprMatrix | Callable]):
    """Return ``(rhs, controls, field)`` callables over ``n x B`` state batches.

    When every strategy is symbolic, ``field`` evaluates drift, input
    matrices and controls in a single compiled call.
    """
    p = dyn.p
    offs = dyn.control_offsets()

    def controls(x: np.ndarray) -> np.ndarray:
        parts = []
        for i, s in enumerate(strategies):
            u = s.evaluate(x)[:, 0] if isinstance(s, ExprMatrix) else np.asarray(s(x))
            parts.append(np.broadcast_to(u, (p[i],) + x.shape[1:]))
        return np.concatenate(parts, axis=0)

    def rhs(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        dx = dyn.f.evaluate(x)[:, 0]
        for i, g in enumerate(dyn.G):
            dx = dx + np.einsum("np...,p...->n...", g.evaluate(x), u[offs[i]:offs[i] + p[i]])
        return dx

    if not all(isinstance(s, ExprMatrix) for s in strategies):
        return rhs, controls, lambda x: (lambda u: (rhs(x, u), u))(controls(x))

    n = dyn.n
    exprs = list(dyn.f.flat())
    for g in dyn.G:
        exprs.extend(g.flat())
    for s in strategies:
        exprs.extend(s.flat())
    fn = compile_exprs(exprs)
    n_g = n * sum(p)

    def field(x: np.ndarray):
        v = fn(x)
        dx = v[:n].copy()
        u = v[n + n_g:]
        k = n
        for i in range(len(p)):
            g = v[k:k + n * p[i]].reshape((n, p[i]) + v.shape[1:])
            dx += np.einsum("np...,p...->n...", g, u[offs[i]:offs[i] + p[i]])
            k += n * p[i]
        return dx, u

    return rhs, controls, field


def integrate_closed_loop(dyn: Dynamics, strategies, inits, segment_T: float, h: float,
                          t0: float = 0.0) -> Trajectory:
    """RK4 integration of ``xdot = f + sum G_i mu_i(x)`` with one segment per
    initial state; segments are integrated together as a batch.

    Each segment contributes ``segment_T / h`` samples at its step starts;
    ``u_k`` is ``mu(x_k)``.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    steps = _steps(segment_T, h, "segment_T")
    X0 = np.asarray(inits, dtype=float).T  # n x D
    if X0.ndim != 2 or X0.shape[0] != dyn.n:
        raise ValueError(f"initial states must have dimension {dyn.n}")
    D = X0.shape[1]
    _, _, field = closed_loop_field(dyn, strategies)

    xs = np.empty((steps, dyn.n, D))
    us = np.empty((steps, sum(dyn.p), D))
    x = X0.copy()
    for k in range(steps):
        xs[k] = x
        try:
            k1, us[k] = field(x)
            k2 = field(x + 0.5 * h * k1)[0]
            k3 = field(x + 0.5 * h * k2)[0]
            k4 = field(x + h * k3)[0]
        except DomainError as exc:
            raise SimulationDivergence(t0 + k * h, -1) from exc
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        bad = ~np.all(np.isfinite(x), axis=0)
        if np.any(bad):
            d = int(np.flatnonzero(bad)[0])
            raise SimulationDivergence(t0 + d * segment_T + (k + 1) * h, d)
    # reorder to segment-major
    x_rec = xs.transpose(2, 0, 1).reshape(D * steps, dyn.n)
    u_rec = us.transpose(2, 0, 1).reshape(D * steps, -1)
    seg = np.repeat(np.arange(D), steps)
    return Trajectory(t0, h, x_rec, u_rec, seg)


def integrate_open_loop(dyn: Dynamics, traj: Trajectory) -> np.ndarray:
    """Re-integrate each segment driving the plant with the recorded controls
    (cubic-spline interpolated between samples). Returns states ``K x n``."""
    h = traj.h
    out = np.empty_like(traj.x)
    offs = dyn.control_offsets()
    for d in range(traj.n_segments):
        sl = traj.segment_slice(d)
        xs, us = traj.x[sl], traj.u[sl]
        tt = h * np.arange(len(xs))
        spline = CubicSpline(tt, us, axis=0)
        x = xs[0].copy()

        def field_(t, x):
            u = spline(t)
            dx = dyn.f.evaluate(x)[:, 0]
            for i, g in enumerate(dyn.G):
                dx = dx + g.evaluate(x) @ u[offs[i]:offs[i] + dyn.p[i]]
            return dx

        for k in range(len(xs)):
            out[sl.start + k] = x
            t = tt[k]
            k1 = field_(t, x)
            k2 = field_(t + h / 2, x + 0.5 * h * k1)
            k3 = field_(t + h / 2, x + 0.5 * h * k2)
            k4 = field_(t + h, x + h * k3)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return out


def sample(traj: Trajectory, dt: float) -> Demonstrations:
    """Per segment, samples at ``t_start, t_start + dt, ...``."""
    stride = _steps(dt, traj.h, "dt")
    demos = Demonstrations(dt=dt)
    for d in range(traj.n_segments):
        sl = traj.segment_slice(d)
        demos.x.append(traj.x[sl][::stride].copy())
        demos.u.append(traj.u[sl][::stride].copy())
    return demos


class NSAE(NamedTuple):
    dx: float
    du: float
    flagged: tuple  # channels whose reference was identically zero


def _nsae_block(ref: np.ndarray, est: np.ndarray, prefix: str, flagged: list) -> float:
    total = 0.0
    for j in range(ref.shape[1]):
        scale = float(np.max(np.abs(ref[:, j]))) if len(ref) else 0.0
        if scale == 0.0:
            scale = 1.0
            flagged.append(f"{prefix}{j + 1}")
        total += float(np.sum(np.abs(est[:, j] - ref[:, j]))) / scale
    return total


def nsae(ref: Trajectory, est: Trajectory) -> NSAE:
    """Normalized sums of absolute errors over all samples and channels."""
    if (ref.x.shape != est.x.shape or ref.u.shape != est.u.shape
            or not math.isclose(ref.h, est.h) or not math.isclose(ref.t0, est.t0)):
        raise ValueError("trajectories are on different time grids")
    flagged: list = []
    dx = _nsae_block(ref.x, est.x, "x", flagged)
    du = _nsae_block(ref.u, est.u, "u", flagged)
    return NSAE(dx, du, tuple(flagged))
