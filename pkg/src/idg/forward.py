"""Policy iteration for the forward game on a state grid.

Policy evaluation solves each player's Lyapunov equation

    theta^T dphi/dx (f + sum_j G_j mu_j) + sum_j mu_j^T R_ij mu_j + Q_i = 0

in the least-squares sense over the grid; policy improvement regenerates
every strategy from the new value weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import linalg
from .expr import ExprMatrix
from .game import GameModel, linear_value, strategy_from_value

log = logging.getLogger(__name__)


class PolicyEvaluationError(RuntimeError):
    pass


@dataclass
class Evaluation:
    theta: list  # per player
    residual: list  # per player, max abs Lyapunov residual on the grid
    rank: list  # per player regressor rank


def _strategy_values(strategies: Sequence[ExprMatrix], grid: np.ndarray) -> np.ndarray:
    return np.concatenate([s.evaluate(grid)[:, 0] for s in strategies], axis=0)


def running_cost(model: GameModel, i: int, u: np.ndarray, pt) -> np.ndarray:
    pl = model.players[i]
    cost = np.asarray(pl.alpha, dtype=float) @ (u * u) + np.asarray(pl.beta, dtype=float) @ pt.psi[i]
    if pt.offset[i] is not None:
        cost = cost + pt.offset[i]
    return cost


def policy_evaluate(model: GameModel, strategies: Sequence[ExprMatrix], grid: Optional[np.ndarray] = None,
                    rtol: float = linalg.DEFAULT_RTOL) -> Evaluation:
    """Grid least-squares value weights for every player under ``strategies``."""
    grid = model.domain.grid() if grid is None else grid
    pt = model.evaluator.at(grid)
    u = _strategy_values(strategies, grid)
    offs = model.dynamics.control_offsets()
    fg = pt.f.copy()
    for j in range(model.N):
        fg = fg + np.einsum("npk,pk->nk", pt.G[j], u[offs[j]:offs[j] + model.p[j]])
    thetas, residuals, ranks = [], [], []
    for i in range(model.N):
        A = np.einsum("hnk,nk->kh", pt.dphi[i], fg)
        b = -running_cost(model, i, u, pt)
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(b)):
            raise PolicyEvaluationError(f"player {i + 1}: non-finite Lyapunov regressor (diverging strategies)")
        fac = linalg.factorize(A, rtol)
        theta = linalg.lstsq_min_norm(A, b, rtol)
        if fac.rank < A.shape[1]:
            log.warning("player %d: Lyapunov regressor rank %d < %d", i + 1, fac.rank, A.shape[1])
        thetas.append(theta)
        residuals.append(float(np.max(np.abs(A @ theta - b))))
        ranks.append(fac.rank)
    return Evaluation(thetas, residuals, ranks)


def policy_improve(model: GameModel, thetas: Sequence[np.ndarray]) -> list[ExprMatrix]:
    return [
        strategy_from_value(linear_value(thetas[i], model.players[i].phi), model.r_self(i), model.dynamics.G[i])
        for i in range(model.N)
    ]


@dataclass
class PIResult:
    theta: list
    strategies: list
    converged: bool
    iterations: int
    history: list = field(default_factory=list)  # max theta change per iteration
    residuals: list = field(default_factory=list)  # final Lyapunov residual per player
    ranks: list = field(default_factory=list)


def solve_fne_pi(model: GameModel, init_strategies: Sequence[ExprMatrix], tol: float = 1e-6,
                 max_iter: int = 100, grid: Optional[np.ndarray] = None,
                 rtol: float = linalg.DEFAULT_RTOL) -> PIResult:
    """Alternate evaluation and improvement until ``max_i |dtheta_i| <= tol``.

    Returns the last iterate flagged ``converged=False`` when ``max_iter``
    is exhausted.
    """
    grid = model.domain.grid() if grid is None else grid
    strategies = list(init_strategies)
    prev = None
    history = []
    ev = None
    for it in range(1, max_iter + 1):
        ev = policy_evaluate(model, strategies, grid, rtol)
        strategies = policy_improve(model, ev.theta)
        if prev is not None:
            change = max(float(np.linalg.norm(a - b)) for a, b in zip(ev.theta, prev))
            history.append(change)
            log.debug("PI iteration %d: max dtheta = %.3e", it, change)
            if change <= tol:
                return PIResult(ev.theta, strategies, True, it, history, ev.residual, ev.rank)
        prev = ev.theta
    return PIResult(ev.theta, strategies, False, max_iter, history, ev.residual, ev.rank)
