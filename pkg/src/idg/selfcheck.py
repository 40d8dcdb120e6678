"""Numerical self-checks: property suites and closed-form forward-solver oracles.

Each check returns a :class:`~idg.game.Check` whose detail carries the
measured quantity, so the same functions back both the test suite and the
``repro-paper`` table.
"""

from __future__ import annotations

import math

import numpy as np

from . import linalg
from .expr import Expr, ExprMatrix, diff, evaluate, parse
from .forward import policy_evaluate, solve_fne_pi
from .game import Check, DomainBox, Dynamics, GameModel, PlayerModel, strategy_from_value
from .offline import (
    REDUCED, assemble_hjb_data, identify_strategies, normalized_reduced_weights, solve_solution_set,
)
from .online import EULER, EXACT, fne_adapt_step, hjb_adapt_step
from .sim import integrate_closed_loop, sample


# ---------------------------------------------------------------- linear algebra

def check_moore_penrose(n_cases: int = 20, seed: int = 0, tol: float = 1e-9) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        m, n = rng.integers(2, 9, size=2)
        r = int(rng.integers(1, min(m, n) + 1))
        A = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
        P = linalg.pinv(A)
        scale = max(1.0, float(np.linalg.norm(A)) * float(np.linalg.norm(P)))
        errs = [
            np.linalg.norm(A @ P @ A - A) / max(np.linalg.norm(A), 1e-300),
            np.linalg.norm(P @ A @ P - P) / max(np.linalg.norm(P), 1e-300),
            np.linalg.norm((A @ P).T - A @ P) / scale,
            np.linalg.norm((P @ A).T - P @ A) / scale,
        ]
        worst = max(worst, max(errs))
    return Check("Moore-Penrose axioms", worst <= tol, f"max relative error {worst:.2e}")


# ---------------------------------------------------------------- expressions

def fixture_expressions(scenarios) -> list[tuple[Expr, int]]:
    """Every expression of the given scenarios paired with the state dimension."""
    out = []
    for sc in scenarios:
        m = sc.model
        exprs = list(m.dynamics.f.flat()) + [e for g in m.dynamics.G for e in g.flat()]
        for pl in m.players:
            exprs += list(pl.phi) + list(pl.psi)
            exprs += [e for e in (pl.value, pl.cost_offset) if e is not None]
        out += [(e, m.n) for e in exprs]
    return out


def check_gradients(exprs, seed: int = 0, points: int = 25, tol: float = 1e-5, step: float = 1e-6) -> Check:
    """Symbolic derivatives against central differences at random states."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for e, n in exprs:
        X = rng.uniform(-2.0, 2.0, size=(n, points))
        for j in range(n):
            g = np.broadcast_to(evaluate(diff(e, j), list(X)), (points,))
            Xp, Xm = X.copy(), X.copy()
            Xp[j] += step
            Xm[j] -= step
            fd = (np.broadcast_to(evaluate(e, list(Xp)), (points,))
                  - np.broadcast_to(evaluate(e, list(Xm)), (points,))) / (2 * step)
            err = np.abs(g - fd) / np.maximum(1.0, np.abs(g))
            worst = max(worst, float(np.max(err)))
    return Check("symbolic vs finite-difference gradients", worst <= tol,
                 f"{len(exprs)} expressions, max relative error {worst:.2e}")


# ---------------------------------------------------------------- integration

def rk4_order_ratio(model: GameModel, x0, h: float = 0.05, T: float = 1.0) -> float:
    """``err(h) / err(h/2)`` at time ``T`` against an ``h/16`` reference."""
    strategies = model.gt_strategies()

    def end(step):
        tr = integrate_closed_loop(model.dynamics, strategies, [x0], T + step, step)
        return tr.x[int(round(T / step))]

    ref = end(h / 16)
    e1 = np.linalg.norm(end(h) - ref)
    e2 = np.linalg.norm(end(h / 2) - ref)
    return float(e1 / e2)


def check_rk4_order(model: GameModel, x0=(3.0, 1.0)) -> Check:
    ratio = rk4_order_ratio(model, x0)
    return Check("RK4 order ratio", 12.0 <= ratio <= 20.0, f"err(h)/err(h/2) = {ratio:.2f}")


# ---------------------------------------------------------------- identification

def random_exact_game(base: GameModel, seed: int) -> GameModel:
    """Same dynamics and bases as ``base`` with random positive-definite
    quadratic value weights and random control penalties."""
    rng = np.random.default_rng(seed)
    players = []
    for pl in base.players:
        a, c = rng.uniform(0.2, 1.5, size=2)
        b = rng.uniform(-0.5, 0.5) * math.sqrt(a * c)
        theta = np.array([a, b, c])[:pl.h] if pl.h == 3 else rng.uniform(0.2, 1.5, size=pl.h)
        alpha = rng.uniform(0.5, 2.0, size=base.p_total)
        players.append(PlayerModel(pl.phi, pl.psi, alpha, pl.beta, theta))
    return GameModel(base.dynamics, tuple(players), base.domain, "parameter")


def check_fne_reconstruction(base: GameModel, seeds=range(20), tol: float = 1e-8) -> Check:
    inits = np.array([[1.0, 0.5], [-0.5, 1.0], [0.3, -1.0]])
    grid = base.domain.grid()
    worst = 0.0
    for s in seeds:
        model = random_exact_game(base, s)
        tr = integrate_closed_loop(model.dynamics, model.gt_strategies(), inits, 0.5, 0.01)
        demos = sample(tr, 0.01)
        X, _ = demos.stacked()
        ident = identify_strategies(model, demos, np.hstack([grid, X.T]), linalg.DEFAULT_RTOL, 1e-9)
        offs = model.dynamics.control_offsets()
        for i, (_, _, res) in enumerate(ident):
            u_hat = res.strategy.evaluate(tr.x.T)[:, 0]
            u = tr.u[:, offs[i]:offs[i] + model.p[i]].T
            worst = max(worst, float(np.max(np.abs(u_hat - u)) / max(1.0, float(np.max(np.abs(u))))))
    return Check("FNE reconstruction on exact-structure games", worst <= tol,
                 f"{len(list(seeds))} seeds, max relative residual {worst:.2e}")


def hjb_system(model: GameModel, offline, i: int):
    pl = offline.players[i]
    strategies = [p.fne.strategy for p in offline.players]
    return assemble_hjb_data(model, i, strategies, pl.split, pl.fne.theta_r, model.domain.grid(), pl.mode)


def check_hjb_residual(model: GameModel, offline, n_elements: int = 20, seed: int = 0,
                       tol: float = 1e-6) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, pl in enumerate(offline.players):
        M, z = hjb_system(model, offline, i)
        scale = max(1.0, float(np.linalg.norm(z)), float(np.linalg.norm(M)))
        for _ in range(n_elements):
            w = rng.uniform(-10, 10, size=pl.sset.dim)
            eta = pl.sset.element(w)
            worst = max(worst, float(np.linalg.norm(M @ eta - z)) / (scale * max(1.0, float(np.linalg.norm(eta)))))
    return Check("HJB residual on solution-set elements", worst <= tol,
                 f"{n_elements} elements per player, max scaled residual {worst:.2e}")


def check_scaling_invariance(model: GameModel, offline, scales=(0.1, 0.5, 3.0, 40.0), tol: float = 1e-8) -> Check:
    """Positive rescaling of a player's whole cost leaves its strategy, its
    normalized reduced weights and its solution-set geometry unchanged."""
    grid = model.domain.grid()
    worst = 0.0
    for i, pl in enumerate(model.players):
        V = model.gt_value(i)
        base_u = strategy_from_value(V, model.r_self(i), model.dynamics.G[i]).evaluate(grid)
        fne = offline.players[i].fne
        M, z = hjb_system(model, offline, i)
        sset = offline.players[i].sset
        P0 = sset.null_basis @ sset.null_basis.T
        for c in scales:
            u = strategy_from_value(c * V, c * model.r_self(i), model.dynamics.G[i]).evaluate(grid)
            worst = max(worst, float(np.max(np.abs(u - base_u))) / max(1.0, float(np.max(np.abs(base_u)))))
            if offline.players[i].mode == REDUCED:
                tr = normalized_reduced_weights(c * fne.theta_bar, fne.p_i)
                worst = max(worst, float(np.max(np.abs(tr - fne.theta_r))))
            s2 = solve_solution_set(c * M, c * z, sset.L.shape[0], sset.mode)
            worst = max(worst, float(np.max(np.abs(s2.null_basis @ s2.null_basis.T - P0))),
                        float(np.linalg.norm(s2.particular - sset.particular)) / max(1.0, float(np.linalg.norm(sset.particular))))
    return Check("scaling-ambiguity invariance", worst <= tol, f"max deviation {worst:.2e}")


def check_uniqueness_flag(n_cases: int = 20, seed: int = 0) -> Check:
    """``unique`` is true exactly when the null space projects to zero in (alpha, beta)."""
    rng = np.random.default_rng(seed)
    bad = 0
    for k in range(n_cases):
        n_ab, n_tot = 3, 6
        # columns of a null-space basis, either confined to the theta block or not
        hidden = k % 2 == 0
        v = np.zeros(n_tot)
        if hidden:
            v[n_ab:] = rng.standard_normal(n_tot - n_ab)
        else:
            v = rng.standard_normal(n_tot)
        Q = np.linalg.qr(np.column_stack([v, rng.standard_normal((n_tot, n_tot - 1))]))[0]
        M = rng.standard_normal((12, n_tot - 1)) @ Q[:, 1:].T
        sset = solve_solution_set(M, M @ rng.standard_normal(n_tot), n_ab, "full")
        projected = float(np.linalg.norm(sset.L @ sset.null_basis))
        if sset.dim != 1 or sset.unique != hidden or sset.unique != (projected <= 1e-9):
            bad += 1
    return Check("uniqueness flag iff projected null space empty", bad == 0, f"{bad} of {n_cases} cases wrong")


def check_online_fixed_point(steps: int = 1000, seed: int = 0, tol: float = 1e-9) -> Check:
    """Started on a consistent fixed point, both adaptation laws do not drift."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for integ in (EULER, EXACT):
        th0 = rng.standard_normal(2)
        th = th0.copy()
        eta0 = rng.standard_normal(6)
        eta = eta0.copy()
        for _ in range(steps):
            M = rng.standard_normal((1, 2))
            th = fne_adapt_step(th, M, M @ th0, 1e-3, 5.0, integ)
            m = rng.standard_normal(6)
            eta = hjb_adapt_step(eta, m, float(m @ eta0), 1e-3, 0.5, integ)
        worst = max(worst, float(np.max(np.abs(th - th0))) / steps, float(np.max(np.abs(eta - eta0))) / steps)
    return Check("online fixed point does not drift", worst <= tol, f"max drift per step {worst:.2e}")


# ---------------------------------------------------------------- forward oracles

def scalar_lq_model(a: float, b: float, q: float, r: float, bound: float = 1.0, step: float = 0.1) -> GameModel:
    dyn = Dynamics(ExprMatrix.column([parse(f"{a!r}*x1")]), (ExprMatrix.column([parse(f"{b!r}")]),))
    x2 = parse("x1^2")
    pl = PlayerModel((x2,), (x2,), np.array([r]), np.array([q]))
    return GameModel(dyn, (pl,), DomainBox(np.array([-bound]), np.array([bound]), np.array([step])))


def lq_evaluation_value(a, b, q, r, k) -> float:
    return (q + r * k * k) / (2 * (b * k - a))


def riccati_value(a, b, q, r) -> float:
    return r * (a + math.sqrt(a * a + b * b * q / r)) / (b * b)


LQ_CASES = [(-1.0, 1.0, 1.0, 1.0, 0.5), (0.5, 2.0, 3.0, 0.5, 1.0), (1.0, 1.0, 2.0, 4.0, 3.0),
            (-0.2, 0.7, 0.1, 2.0, 0.0), (2.0, -1.5, 1.0, 1.0, -4.0)]


def check_lq_evaluation(cases=LQ_CASES, tol: float = 1e-8) -> Check:
    worst = 0.0
    for a, b, q, r, k in cases:
        model = scalar_lq_model(a, b, q, r)
        ev = policy_evaluate(model, [ExprMatrix.column([parse(f"{-k!r}*x1")])])
        worst = max(worst, abs(float(ev.theta[0][0]) - lq_evaluation_value(a, b, q, r, k)))
    return Check("scalar LQ policy evaluation vs closed form", worst <= tol, f"max error {worst:.2e}")


def check_lq_riccati(cases=LQ_CASES, tol: float = 1e-6) -> Check:
    worst = 0.0
    for a, b, q, r, k in cases:
        model = scalar_lq_model(a, b, q, r)
        pi = solve_fne_pi(model, [ExprMatrix.column([parse(f"{-k!r}*x1")])], tol=1e-12, max_iter=200)
        worst = max(worst, abs(float(pi.theta[0][0]) - riccati_value(a, b, q, r)))
    return Check("scalar LQ policy iteration vs Riccati", worst <= tol, f"max error {worst:.2e}")


def check_pi_from_gt(model: GameModel, expected, tol: float = 1e-3) -> Check:
    pi = solve_fne_pi(model, model.gt_strategies())
    err = float(np.max(np.abs(pi.theta[0] - np.asarray(expected, dtype=float))))
    return Check("policy iteration from ground truth", pi.converged and err <= tol,
                 f"theta_1 = {np.round(pi.theta[0], 6).tolist()}, max error {err:.2e}, {pi.iterations} iterations")

