"""Offline inverse differential game.

Stage one identifies every player's feedback strategy from demonstrations
by least squares on the reduced value basis. Stage two inserts the
identified strategies into each player's HJB equation, which becomes linear
in ``eta = (alpha, beta, remaining value weights)``, and returns the whole
affine set of solutions on a state grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import linalg
from .expr import Const, DomainError, Expr, ExprMatrix, jacobian
from .forward import PIResult, PolicyEvaluationError, solve_fne_pi
from .game import Check, GameModel, ModelError, ModelPoint
from .sim import NSAE, Demonstrations, SimulationDivergence, Trajectory, integrate_closed_loop, nsae, sample

log = logging.getLogger(__name__)


class IdentificationError(RuntimeError):
    pass


# ---------------------------------------------------------------- basis split

@dataclass(frozen=True)
class BasisSplit:
    reduced: tuple  # indices whose gradient is visible through G_i
    vanishing: tuple  # indices annihilated by G_i^T
    evidence: tuple  # max over probes of |G_i^T grad phi_j| per basis index

    @property
    def h_bar(self) -> int:
        return len(self.reduced)


def split_basis(phi: Sequence[Expr], G: ExprMatrix, probes: np.ndarray, tol: float = 1e-9) -> BasisSplit:
    """Partition ``phi`` by whether ``G^T dphi_j/dx`` vanishes on all probes."""
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[1] == 0:
        raise ValueError("no probe points")
    J = jacobian(phi, G.shape[0]).evaluate(probes)  # h x n x K
    Gv = G.evaluate(probes)  # n x p x K
    vis = np.einsum("hnk,npk->hpk", J, Gv)
    evidence = np.max(np.linalg.norm(vis, axis=1), axis=-1)
    reduced = tuple(int(j) for j in np.flatnonzero(evidence > tol))
    vanishing = tuple(int(j) for j in np.flatnonzero(evidence <= tol))
    return BasisSplit(reduced, vanishing, tuple(float(v) for v in evidence))


def reduced_regressor(model: GameModel, i: int, split: BasisSplit) -> ExprMatrix:
    """Symbolic ``Phi^(r)_i = G_i^T (dphi^(r)/dx)^T`` as a ``p_i x h_bar`` matrix."""
    G = model.dynamics.G[i]
    n, p = G.shape
    J = jacobian([model.players[i].phi[j] for j in split.reduced], n)
    rows = []
    for k in range(p):
        row = []
        for j in range(split.h_bar):
            s: Expr = Const(0.0)
            for a in range(n):
                s = s + G[a, k] * J[j, a]
            row.append(s)
        rows.append(row)
    return ExprMatrix(rows)


def block_regressor(phi_r: np.ndarray) -> np.ndarray:
    """``Phi_bar`` from ``Phi^(r)`` (``p x h_bar [x K]``): row k carries row k of
    ``Phi^(r)`` in column block k."""
    p, hb = phi_r.shape[:2]
    out = np.zeros((p, p * hb) + phi_r.shape[2:])
    for k in range(p):
        out[k, k * hb:(k + 1) * hb] = phi_r[k]
    return out


# ---------------------------------------------------------------- FNE identification

def assemble_fne_data(demos: Demonstrations, phi_r: ExprMatrix, i_controls: slice):
    """Stack ``-1/2 Phi_bar(x_k)`` and ``u_i(x_k)`` over all samples."""
    if demos.D == 0:
        raise ValueError("no demonstrations")
    X, U = demos.stacked()
    blocks = block_regressor(phi_r.evaluate(X.T))  # p x p*hb x K
    p, cols, K = blocks.shape
    M = -0.5 * blocks.transpose(2, 0, 1).reshape(K * p, cols)
    z = U[:, i_controls].reshape(K * p)
    return M, z


@dataclass
class FneIdentResult:
    theta_bar: np.ndarray
    rank: int
    full_rank: bool
    residual: float
    theta_r: Optional[np.ndarray]
    p_i: int
    h_bar: int
    strategy: Optional[ExprMatrix] = None

    def to_dict(self):
        return {
            "theta_bar": self.theta_bar.tolist(),
            "rank": self.rank,
            "full_rank": self.full_rank,
            "residual": self.residual,
            "theta_r": None if self.theta_r is None else self.theta_r.tolist(),
            "strategy": None if self.strategy is None else [r[0] for r in self.strategy.to_text()],
        }


def normalized_reduced_weights(theta_bar: np.ndarray, p_i: int) -> np.ndarray:
    """Average of the unit-normalized per-channel blocks of ``theta_bar``."""
    blocks = np.asarray(theta_bar, dtype=float).reshape(p_i, -1)
    norms = np.linalg.norm(blocks, axis=1)
    if np.any(norms == 0):
        raise IdentificationError("a block of theta_bar is zero; reduced weights are undefined")
    return np.mean(blocks / norms[:, None], axis=0)


def identify_fne(M: np.ndarray, z: np.ndarray, p_i: int, rtol: float = linalg.DEFAULT_RTOL) -> FneIdentResult:
    theta_bar = linalg.lstsq_min_norm(M, z, rtol)
    rank = linalg.numerical_rank(M, rtol)
    cols = M.shape[1]
    full = rank == cols
    theta_r = normalized_reduced_weights(theta_bar, p_i) if full else None
    residual = float(np.linalg.norm(M @ theta_bar - z))
    return FneIdentResult(theta_bar, rank, full, residual, theta_r, p_i, cols // p_i)


def identified_strategy(phi_r: ExprMatrix, theta_bar: np.ndarray) -> ExprMatrix:
    """Symbolic ``-1/2 Phi_bar(x) theta_bar``."""
    p, hb = phi_r.shape
    blocks = np.asarray(theta_bar, dtype=float).reshape(p, hb)
    comps = []
    for k in range(p):
        s: Expr = Const(0.0)
        for j in range(hb):
            s = s + Const(float(blocks[k, j])) * phi_r[k, j]
        comps.append(Const(-0.5) * s)
    return ExprMatrix.column(comps)


# ---------------------------------------------------------------- HJB regression

REDUCED, FULL = "reduced", "full"


def hjb_rows(model: GameModel, i: int, pt: ModelPoint, u_hat: np.ndarray, split: BasisSplit,
             theta_r: Optional[np.ndarray], mode: str):
    """HJB regressor rows and targets for player ``i`` at evaluated points.

    ``u_hat`` stacks all players' identified controls (``p [x K]``). Rows are
    ``[u*u, psi_i, dphi^(-r) f_g]`` (reduced) or ``[u*u, psi_i, dphi f_g]``
    (full); the target is ``-theta_r^T dphi^(r) f_g`` or 0, minus any cost offset.
    """
    offs = model.dynamics.control_offsets()
    fg = pt.f
    for j in range(model.N):
        fg = fg + np.einsum("np...,p...->n...", pt.G[j], u_hat[offs[j]:offs[j] + model.p[j]])
    dphi_fg = np.einsum("hn...,n...->h...", pt.dphi[i], fg)
    if mode == REDUCED:
        if theta_r is None:
            raise IdentificationError("reduced HJB regression needs theta_r")
        value_part = dphi_fg[list(split.vanishing)]
        target = -np.einsum("h,h...->...", np.asarray(theta_r, dtype=float), dphi_fg[list(split.reduced)])
    elif mode == FULL:
        value_part = dphi_fg
        target = np.zeros(dphi_fg.shape[1:])
    else:
        raise ValueError(f"unknown HJB mode {mode!r}")
    if pt.offset[i] is not None:
        target = target - pt.offset[i]
    rows = np.concatenate([u_hat * u_hat, pt.psi[i], value_part], axis=0)
    return rows, target


def assemble_hjb_data(model: GameModel, i: int, strategies: Sequence[ExprMatrix], split: BasisSplit,
                      theta_r: Optional[np.ndarray], grid: np.ndarray, mode: str):
    """``(M_hjb, z_hjb)`` for player ``i`` with one row per grid point."""
    if grid.shape[1] == 0:
        raise ValueError("empty grid")
    pt = model.evaluator.at(grid)
    u_hat = np.concatenate([s.evaluate(grid)[:, 0] for s in strategies], axis=0)
    rows, target = hjb_rows(model, i, pt, u_hat, split, theta_r, mode)
    return rows.T, target


# ---------------------------------------------------------------- solution sets

@dataclass
class SolutionSet:
    mode: str
    particular: np.ndarray
    null_basis: np.ndarray  # columns, orthonormal
    L: np.ndarray  # extracts (alpha, beta)
    residual: float  # |M particular - z|
    rank: int
    z_norm: float = 0.0

    @property
    def dim(self) -> int:
        return self.null_basis.shape[1]

    @property
    def unique(self) -> bool:
        return bool(np.linalg.norm(self.L @ self.null_basis) <= 1e-9)

    def element(self, w) -> np.ndarray:
        w = np.atleast_1d(np.asarray(w, dtype=float))
        if w.size != self.dim:
            raise ValueError(f"w has {w.size} entries, null space has dimension {self.dim}")
        return self.particular + self.null_basis @ w if self.dim else self.particular.copy()

    def to_dict(self):
        return {
            "mode": self.mode,
            "particular": self.particular.tolist(),
            "null_basis": self.null_basis.T.tolist(),  # one list per basis vector
            "L": self.L.tolist(),
            "residual": self.residual,
            "rank": self.rank,
            "unique": self.unique,
        }

    @classmethod
    def from_dict(cls, d) -> "SolutionSet":
        L = np.asarray(d["L"], dtype=float)
        nb = np.asarray(d["null_basis"], dtype=float).reshape(-1, L.shape[1]).T
        return cls(d["mode"], np.asarray(d["particular"], dtype=float), nb, L, d["residual"], d["rank"])


def extraction_matrix(n_ab: int, n_total: int) -> np.ndarray:
    return np.hstack([np.eye(n_ab), np.zeros((n_ab, n_total - n_ab))])


def solve_solution_set(M: np.ndarray, z: np.ndarray, n_ab: int, mode: str,
                       rtol: float = linalg.DEFAULT_RTOL) -> SolutionSet:
    """Minimum-norm particular solution plus orthonormal null-space basis."""
    if M.shape[0] == 0:
        raise IdentificationError("no HJB rows")
    particular = linalg.lstsq_min_norm(M, z, rtol)
    N = linalg.nullspace(M, rtol)
    fac = linalg.factorize(M, rtol)
    L = extraction_matrix(n_ab, M.shape[1])
    res = float(np.linalg.norm(M @ particular - z))
    return SolutionSet(mode, particular, N, L, res, fac.rank, float(np.linalg.norm(z)))


# ---------------------------------------------------------------- selection

@dataclass
class Selection:
    alpha: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    w: Optional[list]
    valid: bool
    violations: list = field(default_factory=list)
    interval: Optional[list] = None  # valid w-range endpoints for 1-dim sets
    scale_resolved: bool = True

    def to_dict(self):
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "eta": self.eta.tolist(),
            "w": self.w,
            "valid": self.valid,
            "violations": self.violations,
            "valid_interval": self.interval,
            "scale_resolved": self.scale_resolved,
        }


class CostTable:
    """``psi_i`` (and any cost offset) evaluated once on the grid outside the origin ball."""

    def __init__(self, model: GameModel, i: int, grid: np.ndarray, ball: float = 0.1):
        self.points = grid[:, np.linalg.norm(grid, axis=0) > ball]
        pt = model.evaluator.at(self.points)
        self.psi = pt.psi[i]
        self.offset = pt.offset[i]

    def min_cost(self, beta):
        q = np.asarray(beta, dtype=float) @ self.psi
        if self.offset is not None:
            q = q + self.offset
        k = int(np.argmin(q))
        return float(q[k]), self.points[:, k]


def check_parameters(model: GameModel, i: int, alpha: np.ndarray, beta: np.ndarray, grid: np.ndarray,
                     ball: float = 0.1, table: Optional[CostTable] = None) -> list:
    """Validity filter: own R entries > 0, cross entries >= 0, Q > 0 on the grid."""
    out = []
    off = model.dynamics.control_offsets()[i]
    own = slice(off, off + model.p[i])
    if np.any(alpha[own] <= 0):
        out.append(f"R_ii diagonal not positive: {alpha[own].tolist()}")
    mask = np.ones(alpha.size, dtype=bool)
    mask[own] = False
    if np.any(alpha[mask] < 0):
        out.append(f"R_ij (j != i) diagonal negative: {alpha[mask].tolist()}")
    table = CostTable(model, i, grid, ball) if table is None else table
    qmin, where = table.min_cost(beta)
    if qmin <= 0:
        out.append(f"Q not positive: Q = {qmin:.6g} at x = {where.tolist()}")
    return out


def _candidate(sset: SolutionSet, w) -> np.ndarray:
    eta = sset.element(w)
    if sset.mode == FULL:
        nrm = np.linalg.norm(eta)
        if nrm > 0:
            eta = eta / nrm
    return eta


def select_parameters(sset: SolutionSet, model: GameModel, i: int, grid: np.ndarray, w=None,
                      w_range=(-10.0, 10.0), w_points: int = 2001, ball: float = 0.1) -> Selection:
    """Pick one element of the solution set and validate it.

    With an explicit ``w`` the element is returned together with its
    validity report. Otherwise a 1-dim set is scanned over ``w_range`` and
    the valid element closest to ``w = 0`` is returned; larger null spaces
    are only tried at ``w = 0``.
    """
    p = model.p_total
    m = model.players[i].m
    table = CostTable(model, i, grid, ball)

    def build(wv):
        eta = _candidate(sset, wv)
        a, b = eta[:p], eta[p:p + m]
        return eta, a, b, check_parameters(model, i, a, b, grid, ball, table)

    scale_ok = sset.mode != FULL
    if w is not None:
        wv = np.atleast_1d(np.asarray(w, dtype=float))
        eta, a, b, bad = build(wv)
        return Selection(a, b, eta, wv.tolist(), not bad, bad, None, scale_ok)

    if sset.dim == 0:
        eta, a, b, bad = build(np.zeros(0))
        return Selection(a, b, eta, [], not bad, bad, None, scale_ok)

    if sset.dim == 1:
        ws = np.linspace(w_range[0], w_range[1], w_points)
        if sset.mode == FULL:
            ws = ws[ws != 0]  # w = 0 is the trivial solution
        ok = np.zeros(ws.size, dtype=bool)
        for k, wk in enumerate(ws):
            ok[k] = not build([wk])[3]
        if not np.any(ok):
            raise IdentificationError(
                f"player {i + 1}: no valid element for w in [{w_range[0]}, {w_range[1]}]")
        valid_ws = ws[ok]
        best = float(valid_ws[np.argmin(np.abs(valid_ws))])
        eta, a, b, bad = build([best])
        return Selection(a, b, eta, [best], True, [], [float(valid_ws.min()), float(valid_ws.max())], scale_ok)

    if sset.mode == FULL:
        for k in range(sset.dim):
            for sgn in (1.0, -1.0):
                wv = np.zeros(sset.dim)
                wv[k] = sgn
                eta, a, b, bad = build(wv)
                if not bad:
                    return Selection(a, b, eta, wv.tolist(), True, [], None, scale_ok)
        raise IdentificationError(f"player {i + 1}: no valid basis direction in the {sset.dim}-dim set")
    eta, a, b, bad = build(np.zeros(sset.dim))
    if bad:
        raise IdentificationError(f"player {i + 1}: w = 0 invalid in {sset.dim}-dim set: {bad}")
    return Selection(a, b, eta, [0.0] * sset.dim, True, [], None, scale_ok)


def membership_residual(sset: SolutionSet, candidate) -> float:
    """Euclidean distance from ``candidate`` to the affine solution set.

    Full-length candidates are compared with ``particular + span(null_basis)``;
    ``(alpha, beta)`` candidates with its image under ``L``.
    """
    c = np.asarray(candidate, dtype=float)
    if c.size == sset.particular.size:
        d = c - sset.particular
        if sset.dim:
            d = d - sset.null_basis @ (sset.null_basis.T @ d)
        return float(np.linalg.norm(d))
    if c.size == sset.L.shape[0]:
        d = c - sset.L @ sset.particular
        if sset.dim:
            B = sset.L @ sset.null_basis
            coef = np.linalg.lstsq(B, d, rcond=None)[0]
            d = d - B @ coef
        return float(np.linalg.norm(d))
    raise ValueError(f"candidate has {c.size} entries; expected {sset.particular.size} or {sset.L.shape[0]}")


# ---------------------------------------------------------------- workflow

def simulate_ground_truth(scenario) -> Trajectory:
    """GT closed loop over the scenario's demonstration plan."""
    dp = scenario.demos
    return integrate_closed_loop(scenario.model.dynamics, scenario.model.gt_strategies(),
                                 dp.inits, dp.segment_T, dp.h)


def simulate_or_none(model: GameModel, strategies, scenario, checks: list, label: str) -> Optional[Trajectory]:
    dp = scenario.demos
    try:
        return integrate_closed_loop(model.dynamics, strategies, dp.inits, dp.segment_T, dp.h)
    except SimulationDivergence as exc:
        checks.append(Check(f"{label}: simulation finite", False, str(exc)))
        return None


@dataclass
class PlayerOffline:
    split: BasisSplit
    fne: FneIdentResult
    mode: str
    sset: SolutionSet
    selection: Optional[Selection]
    hjb_rows: int

    def to_dict(self):
        return {
            "basis_split": {"reduced": list(self.split.reduced), "vanishing": list(self.split.vanishing),
                            "evidence": list(self.split.evidence)},
            "fne": self.fne.to_dict(),
            "mode": self.mode,
            "hjb_rows": self.hjb_rows,
            "solution_set": self.sset.to_dict(),
            "selection": None if self.selection is None else self.selection.to_dict(),
        }


@dataclass
class Verification:
    """Forward solve of the game with estimated parameters plus trajectory errors."""

    pi: Optional[PIResult]
    trajectory: Optional[Trajectory]
    nsae: Optional[NSAE]
    error: Optional[str] = None

    def to_dict(self):
        out = {"error": self.error}
        if self.pi is not None:
            out.update({
                "pi_converged": self.pi.converged,
                "pi_iterations": self.pi.iterations,
                "theta": [t.tolist() for t in self.pi.theta],
                "lyapunov_residual": list(self.pi.residuals),
            })
        out["nsae"] = None if self.nsae is None else {
            "dx": self.nsae.dx, "du": self.nsae.du, "flagged": list(self.nsae.flagged)}
        return out


def verify_parameters(scenario, alphas, betas, init_strategies, reference: Optional[Trajectory],
                      checks: list, label: str) -> Verification:
    """Policy iteration with ``(alphas, betas)`` followed by simulation from the
    scenario's initial states and NSAE against ``reference``."""
    model = scenario.model.with_costs(alphas, betas)
    fw = scenario.forward
    try:
        pi = solve_fne_pi(model, init_strategies, fw["tol"], fw["max_iter"], rtol=scenario.offline["rtol"])
    except (PolicyEvaluationError, ModelError, DomainError) as exc:
        checks.append(Check(f"{label}: forward solve", False, str(exc)))
        return Verification(None, None, None, str(exc))
    checks.append(Check(f"{label}: policy iteration converged", pi.converged,
                        f"{pi.iterations} iterations, last change {pi.history[-1] if pi.history else float('nan'):.3g}"))
    traj = simulate_or_none(model, pi.strategies, scenario, checks, label)
    if traj is None:
        return Verification(pi, None, None, "simulation diverged")
    err = nsae(reference, traj) if reference is not None else None
    return Verification(pi, traj, err)


@dataclass
class OfflineReport:
    players: list
    verification: Verification
    identified_trajectory: Optional[Trajectory]  # closed loop under the identified laws
    nsae_identified_vs_fne: Optional[NSAE]  # identified laws vs. verified FNE
    nsae_identified_vs_gt: Optional[NSAE]
    checks: list = field(default_factory=list)
    ground_truth: Optional[Trajectory] = None

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def alphas(self):
        return [pl.selection.alpha for pl in self.players]

    def betas(self):
        return [pl.selection.beta for pl in self.players]

    def to_dict(self):
        pair = lambda e: None if e is None else {"dx": e.dx, "du": e.du, "flagged": list(e.flagged)}  # noqa: E731
        return {
            "players": [p.to_dict() for p in self.players],
            "verification": self.verification.to_dict(),
            "nsae_identified_vs_fne": pair(self.nsae_identified_vs_fne),
            "nsae_identified_vs_gt": pair(self.nsae_identified_vs_gt),
            "checks": [c.to_dict() for c in self.checks],
            "ok": self.ok,
        }


def identify_strategies(model: GameModel, demos: Demonstrations, probes: np.ndarray,
                        rtol: float, split_tol: float):
    """Basis split and least-squares strategy identification for all players."""
    offs = model.dynamics.control_offsets()
    out = []
    for i in range(model.N):
        split = split_basis(model.players[i].phi, model.dynamics.G[i], probes, split_tol)
        if split.h_bar == 0:
            raise IdentificationError(f"player {i + 1}: no basis function is visible through G_{i + 1}")
        phi_r = reduced_regressor(model, i, split)
        M, z = assemble_fne_data(demos, phi_r, slice(offs[i], offs[i] + model.p[i]))
        res = identify_fne(M, z, model.p[i], rtol)
        res.strategy = identified_strategy(phi_r, res.theta_bar)
        out.append((split, phi_r, res))
    return out


def run_offline(scenario, gt: Optional[Trajectory] = None) -> OfflineReport:
    """Strategy identification, HJB solution sets, parameter selection and
    forward verification for every player of ``scenario``."""
    model = scenario.model
    opts = scenario.offline
    rtol = opts["rtol"]
    checks: list = []
    if gt is None:
        gt = simulate_ground_truth(scenario)
    demos = sample(gt, scenario.demos.dt)
    grid = model.domain.grid()
    X, _ = demos.stacked()
    probes = np.hstack([grid, X.T])

    ident = identify_strategies(model, demos, probes, rtol, opts["split_tol"])
    strategies = [res.strategy for _, _, res in ident]
    X_all = gt.x.T
    offs = model.dynamics.control_offsets()
    for i, (_, _, res) in enumerate(ident):
        u_hat = res.strategy.evaluate(X_all)[:, 0]
        err = float(np.max(np.abs(u_hat - gt.u[:, offs[i]:offs[i] + model.p[i]].T)))
        checks.append(Check(f"player {i + 1}: strategy reconstruction", True, f"max |mu_hat - u*| = {err:.3g}"))
        log.info("player %d: rank(M_u) = %d of %d", i + 1, res.rank, res.p_i * res.h_bar)

    players = []
    w_opts = opts["w"] or [None] * model.N
    for i, (split, _, res) in enumerate(ident):
        mode = REDUCED if res.full_rank else FULL
        M, z = assemble_hjb_data(model, i, strategies, split, res.theta_r, grid, mode)
        sset = solve_solution_set(M, z, model.p_total + model.players[i].m, mode, rtol)
        scale = max(1.0, float(np.linalg.norm(z)))
        checks.append(Check(f"player {i + 1}: HJB particular residual", True,
                            f"|M eta - z| = {sset.residual:.3g} (|z| = {scale:.3g})"))
        try:
            sel = select_parameters(sset, model, i, grid, w_opts[i], tuple(opts["w_range"]),
                                    opts["w_points"], opts["pd_ball"])
            checks.append(Check(f"player {i + 1}: selected parameters valid", sel.valid, "; ".join(sel.violations)))
        except IdentificationError as exc:
            sel = None
            checks.append(Check(f"player {i + 1}: parameter selection", False, str(exc), hard=True))
        players.append(PlayerOffline(split, res, mode, sset, sel, M.shape[0]))

    id_traj = simulate_or_none(model, strategies, scenario, checks, "identified laws")
    if any(p.selection is None for p in players):
        ver = Verification(None, None, None, "no parameters selected")
    else:
        ver = verify_parameters(scenario, [p.selection.alpha for p in players],
                                [p.selection.beta for p in players], strategies, gt, checks, "offline")
    n_id_fne = nsae(id_traj, ver.trajectory) if id_traj is not None and ver.trajectory is not None else None
    n_id_gt = nsae(gt, id_traj) if id_traj is not None else None
    return OfflineReport(players, ver, id_traj, n_id_fne, n_id_gt, checks, gt)
