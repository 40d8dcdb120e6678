"""Online inverse differential game.

Two gradient flows run on the plant clock: one fits the strategy weights
``theta_bar`` to the streamed closed-loop data, the other fits
``eta = (alpha, beta, remaining value weights)`` to the HJB residual
evaluated at a probing state. Each flow freezes when its windowed-average
stopping metric falls below a threshold.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .game import Check, ModelPoint
from .offline import (
    REDUCED, IdentificationError, block_regressor, OfflineReport, identified_strategy, hjb_rows,
    membership_residual, normalized_reduced_weights, reduced_regressor, run_offline,
    simulate_ground_truth, verify_parameters, Verification,
)
from .sim import Trajectory, integrate_closed_loop

log = logging.getLogger(__name__)

EULER, EXACT = "euler", "exact"


class LearnerDivergence(RuntimeError):
    def __init__(self, what: str, t: float, player: int):
        super().__init__(f"{what} of player {player + 1} became non-finite at t = {t:.6g} s")
        self.t = t
        self.player = player


@dataclass
class ExcitationSpec:
    amplitude: float = 3.0
    sines: int = 3
    f_min: float = 0.5
    f_max: float = 5.0
    enabled: bool = True


@dataclass
class OnlineConfig:
    tau: list
    kappa: list
    h: float
    T: float = 1.0
    threshold: float = 1e-3
    horizon: float = 16.0
    integrator: str = EULER
    excitation: ExcitationSpec = field(default_factory=ExcitationSpec)
    seed: int = 0
    init_theta_bar: Optional[list] = None  # per player; default all ones
    init_eta: Optional[list] = None  # per player; default zeros
    trace_decimation: int = 10
    discrepancy_tol: float = 0.05
    membership_tol: float = 1e-3

    def __post_init__(self):
        if self.h <= 0 or self.T <= 0 or self.horizon <= 0 or self.threshold <= 0:
            raise ValueError("h, T, horizon and threshold must be positive")
        if any(v <= 0 for v in list(self.tau) + list(self.kappa)):
            raise ValueError("learning rates must be positive")
        if self.integrator not in (EULER, EXACT):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        ex = self.excitation
        if not (0 < ex.f_min <= ex.f_max < 0.5 / self.h):
            raise ValueError("excitation frequencies must lie in (0, Nyquist)")

    @property
    def window_steps(self) -> int:
        w = int(round(self.T / self.h))
        if w < 1 or abs(w * self.h - self.T) > 1e-9 * self.T:
            raise ValueError("T must be a positive multiple of h")
        return w

    @classmethod
    def from_scenario(cls, sc) -> "OnlineConfig":
        o = sc.online
        return cls(
            tau=sc.per_player(o["tau"], "tau"), kappa=sc.per_player(o["kappa"], "kappa"),
            h=sc.demos.h, T=float(o["T"]), threshold=float(o["threshold"]), horizon=float(o["horizon"]),
            integrator=o["integrator"], excitation=ExcitationSpec(**o["excitation"]),
            seed=int(sc.seed or 0), init_theta_bar=o["init_theta_bar"], init_eta=o["init_eta"],
            trace_decimation=int(o["trace_decimation"]), discrepancy_tol=float(o["discrepancy_tol"]),
            membership_tol=float(o["membership_tol"]),
        )


# ---------------------------------------------------------------- excitation

def excitation_frequencies(spec: ExcitationSpec, seed: int, channel: int, reset_index: int) -> np.ndarray:
    """Frequencies (Hz) for one channel and reset; a pure function of its arguments."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, channel, reset_index]))
    return rng.uniform(spec.f_min, spec.f_max, spec.sines)


def excitation(t, spec: ExcitationSpec, seed: int, channel: int, reset_index: int):
    """Sum of sines ``sum_s A sin(2 pi f_s t)`` on the global clock ``t``."""
    freqs = excitation_frequencies(spec, seed, channel, reset_index)
    t = np.asarray(t, dtype=float)
    return spec.amplitude * np.sum(np.sin(2 * np.pi * np.multiply.outer(t, freqs)), axis=-1)


# ---------------------------------------------------------------- adaptation steps

def _flow_step(theta: np.ndarray, M: np.ndarray, z: np.ndarray, rate: float, h: float, integrator: str) -> np.ndarray:
    """One step of ``theta' = -rate M^T (M theta - z)`` with ``M, z`` held over the step."""
    if integrator == EULER:
        # overflow is left to the caller's finiteness check
        with np.errstate(over="ignore", invalid="ignore"):
            return theta - h * rate * (M.T @ (M @ theta - z))
    r = M @ theta - z
    # zero-order hold: the residual decays as exp(-rate h M M^T), theta moves in the row space
    lam, Q = np.linalg.eigh(M @ M.T)
    lam = np.clip(lam, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(lam * rate * h > 1e-12, -np.expm1(-rate * h * lam) / np.where(lam > 0, lam, 1.0), rate * h)
    return theta - M.T @ (Q @ (g * (Q.T @ r)))


def fne_adapt_step(theta_bar, M_u, z_u, h: float, tau: float, integrator: str = EULER) -> np.ndarray:
    """Strategy-weight update for regressor ``M_u = -1/2 Phi_bar(x*)`` and target ``u_i*``."""
    M = np.atleast_2d(np.asarray(M_u, dtype=float))
    return _flow_step(np.asarray(theta_bar, dtype=float), M, np.atleast_1d(np.asarray(z_u, dtype=float)), tau, h, integrator)


def hjb_adapt_step(eta, m, z: float, h: float, kappa: float, integrator: str = EULER) -> np.ndarray:
    """Cost/value-weight update for HJB regressor vector ``m`` and target ``z``."""
    m = np.asarray(m, dtype=float)
    return _flow_step(np.asarray(eta, dtype=float), m[None, :], np.array([float(z)]), kappa, h, integrator)


# ---------------------------------------------------------------- stopping and PE

def stopping_metric(values: np.ndarray, h: float, T: float) -> float:
    """``|int_{t-T}^t v - int_{t-2T}^{t-T} v| / T`` by trapezoids over samples
    spaced ``h`` covering exactly ``[t-2T, t]``."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    W = int(round(T / h))
    if v.shape[0] < 2 * W + 1:
        raise ValueError(f"need {2 * W + 1} samples for window T = {T}, got {v.shape[0]}")
    v = v[-(2 * W + 1):]
    older = np.trapezoid(v[:W + 1], dx=h, axis=0)
    recent = np.trapezoid(v[W:], dx=h, axis=0)
    return float(np.linalg.norm(recent - older) / T)


class StopTracker:
    """Incremental form of :func:`stopping_metric` over a ring of cumulative integrals."""

    def __init__(self, h: float, T: float):
        self.h = h
        self.T = T
        self.W = int(round(T / h))
        self.ring: deque = deque(maxlen=2 * self.W + 1)
        self._cum = None
        self._last = None

    def push(self, v: np.ndarray) -> float:
        v = np.array(v, dtype=float)
        if self._cum is None:
            self._cum = np.zeros_like(v)
        else:
            self._cum = self._cum + 0.5 * self.h * (self._last + v)
        self._last = v
        self.ring.append(self._cum.copy())
        if len(self.ring) < self.ring.maxlen:
            return math.inf
        c_now, c_mid, c_old = self.ring[-1], self.ring[self.W], self.ring[0]
        return float(np.linalg.norm(c_now - 2 * c_mid + c_old) / self.T)


@dataclass
class PEResult:
    lambda_min: float
    excited_dim: int
    dim: int
    eigenvalues: list

    def to_dict(self):
        return {"lambda_min": self.lambda_min, "excited_dim": self.excited_dim, "dim": self.dim,
                "eigenvalues": self.eigenvalues}


def pe_diagnostic(regressors: np.ndarray, h: float, rel_tol: float = 1e-6) -> PEResult:
    """Eigenvalues of the trapezoidal estimate of ``int m m^T`` over the window.

    ``regressors`` has one sample per row (vectors) or ``samples x rows x
    cols`` for matrix regressors, in which case ``int M^T M`` over the
    parameter space is used.
    """
    R = np.asarray(regressors, dtype=float)
    if R.shape[0] == 0:
        raise ValueError("empty window")
    if R.ndim == 2:
        R = R[:, None, :]
    outer = np.einsum("kri,krj->kij", R, R)
    G = np.trapezoid(outer, dx=h, axis=0) if len(outer) > 1 else outer[0] * h
    lam = np.linalg.eigvalsh(0.5 * (G + G.T))
    top = float(lam[-1]) if lam.size else 0.0
    excited = int(np.sum(lam > rel_tol * top)) if top > 0 else 0
    return PEResult(float(max(lam[0], 0.0)), excited, lam.size, [float(v) for v in lam[::-1]])


# ---------------------------------------------------------------- streamed data

def stream_ground_truth(scenario, horizon: float) -> Trajectory:
    """GT closed loop over ``horizon``, cycling through the initial states."""
    dp = scenario.demos
    n_seg = int(math.ceil(horizon / dp.segment_T - 1e-9))
    inits = np.array([dp.inits[d % len(dp.inits)] for d in range(n_seg)])
    traj = integrate_closed_loop(scenario.model.dynamics, scenario.model.gt_strategies(), inits, dp.segment_T, dp.h)
    K = int(round(horizon / dp.h))
    return Trajectory(traj.t0, traj.h, traj.x[:K], traj.u[:K], traj.segment[:K])


def probe_states(cfg: OnlineConfig, n: int, t: np.ndarray, segment: np.ndarray) -> np.ndarray:
    """Excitation state for the HJB data path, ``n x K``."""
    out = np.empty((n, t.size))
    for d in np.unique(segment):
        sel = segment == d
        for j in range(n):
            out[j, sel] = excitation(t[sel], cfg.excitation, cfg.seed, j, int(d))
    return out


def _point(pt: ModelPoint, k: int) -> ModelPoint:
    return ModelPoint(
        f=pt.f[:, k], G=[g[..., k] for g in pt.G], dphi=[d[..., k] for d in pt.dphi],
        psi=[s[:, k] for s in pt.psi], offset=[None if o is None else o[k] for o in pt.offset],
    )


# ---------------------------------------------------------------- run

@dataclass
class OnlineReport:
    theta_bar: list
    eta: list
    alpha: list
    beta: list
    freeze_fne: list  # time or None per player
    freeze_hjb: list
    membership: list  # (alpha, beta) distance to the offline set's projection (None if not comparable)
    membership_eta: list  # full eta distance to the offline set
    membership_w: list  # least-squares w of the projection
    pe: list  # per player PEResult over the last full window before freezing
    pe_fne: list
    theta_bar_offline: list
    discrepancy: list  # per player: online theta_bar differs from offline
    excursion: list  # per player: per-component [min, max] of eta after the first window
    negative_alpha: list  # per player: first time after the first window that an alpha estimate is negative
    verification: Optional[Verification]
    trace_csv: str
    checks: list = field(default_factory=list)
    diverged: Optional[str] = None

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def to_dict(self):
        ls = lambda v: None if v is None else [float(a) for a in v]  # noqa: E731
        return {
            "theta_bar": [ls(v) for v in self.theta_bar],
            "theta_bar_offline": [ls(v) for v in self.theta_bar_offline],
            "eta": [ls(v) for v in self.eta],
            "alpha": [ls(v) for v in self.alpha],
            "beta": [ls(v) for v in self.beta],
            "freeze_time_fne": self.freeze_fne,
            "freeze_time_hjb": self.freeze_hjb,
            "membership_residual": self.membership,
            "membership_residual_eta": self.membership_eta,
            "membership_w": self.membership_w,
            "pe_hjb": [None if p is None else p.to_dict() for p in self.pe],
            "pe_fne": [None if p is None else p.to_dict() for p in self.pe_fne],
            "discrepancy": self.discrepancy,
            "excursion_band": self.excursion,
            "negative_alpha_time": self.negative_alpha,
            "verification": None if self.verification is None else self.verification.to_dict(),
            "diverged": self.diverged,
            "checks": [c.to_dict() for c in self.checks],
            "ok": self.ok,
        }


def _trace_csv(rows: list, hb: list, ne: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    nt, nn = max(hb), max(ne)
    w.writerow(["t", "player"] + [f"theta_bar{j + 1}" for j in range(nt)] + [f"eta{j + 1}" for j in range(nn)]
               + ["stop_metric_fne", "stop_metric_hjb", "frozen_fne", "frozen_hjb"])
    for t, i, th, et, sf, sh, ff, fh in rows:
        th_cells = [repr(float(v)) for v in th] + [""] * (nt - len(th))
        et_cells = [repr(float(v)) for v in et] + [""] * (nn - len(et))
        metric = lambda v: "" if math.isinf(v) else repr(float(v))  # noqa: E731
        w.writerow([repr(float(t)), i + 1] + th_cells + et_cells + [metric(sf), metric(sh), int(ff), int(fh)])
    return buf.getvalue()


def run_online(scenario, offline: Optional[OfflineReport] = None, cfg: Optional[OnlineConfig] = None,
               gt: Optional[Trajectory] = None) -> OnlineReport:
    """Algorithm loop: plant sample, strategy-weight step, HJB step, per tick."""
    model = scenario.model
    cfg = OnlineConfig.from_scenario(scenario) if cfg is None else cfg
    h = cfg.h
    if offline is None:
        offline = run_offline(scenario, simulate_ground_truth(scenario))
    if gt is None:
        gt = stream_ground_truth(scenario, cfg.horizon)
    K = len(gt.x)
    t = gt.t
    N = model.N
    offs = model.dynamics.control_offsets()
    checks: list = []

    splits = [pl.split for pl in offline.players]
    modes = [pl.mode for pl in offline.players]
    phi_r = [reduced_regressor(model, i, splits[i]) for i in range(N)]
    x_star = gt.x.T
    x_eval = probe_states(cfg, model.n, t, gt.segment) if cfg.excitation.enabled else x_star

    # regressors at the plant state (FNE law) and at the probe state (HJB law)
    Phi_star = [pr.evaluate(x_star) for pr in phi_r]  # p x hb x K
    Phi_eval = [pr.evaluate(x_eval) for pr in phi_r]
    pt_eval = model.evaluator.at(x_eval)

    hb = [splits[i].h_bar for i in range(N)]
    dims_eta = [pl.sset.particular.size for pl in offline.players]
    theta = [np.asarray(cfg.init_theta_bar[i], dtype=float) if cfg.init_theta_bar else np.ones(model.p[i] * hb[i])
             for i in range(N)]
    eta = [np.asarray(cfg.init_eta[i], dtype=float) if cfg.init_eta else np.zeros(dims_eta[i]) for i in range(N)]
    for i in range(N):
        if theta[i].size != model.p[i] * hb[i] or eta[i].size != dims_eta[i]:
            raise ValueError(f"player {i + 1}: initial weights have wrong length")

    trk_f = [StopTracker(h, cfg.T) for _ in range(N)]
    trk_h = [StopTracker(h, cfg.T) for _ in range(N)]
    frozen_f = [None] * N
    frozen_h = [None] * N
    neg_alpha = [None] * N
    m_hist = [np.zeros((K, dims_eta[i])) for i in range(N)]
    eta_hist = [np.zeros((K, dims_eta[i])) for i in range(N)]
    trace = []
    W = cfg.window_steps
    diverged = None
    p_tot = model.p_total
    k_end = K

    def mu_hat(i, k, th):
        P = Phi_eval[i][..., k]  # p x hb
        return -0.5 * np.einsum("pj,pj->p", P, th.reshape(model.p[i], hb[i]))

    for k in range(K):
        tk = t[k]
        sf = [math.inf] * N
        sh = [math.inf] * N
        # strategy-weight laws
        for i in range(N):
            if frozen_f[i] is None:
                M = -0.5 * block_regressor(Phi_star[i][..., k])
                theta[i] = fne_adapt_step(theta[i], M, gt.u[k, offs[i]:offs[i] + model.p[i]], h, cfg.tau[i], cfg.integrator)
                if not np.all(np.isfinite(theta[i])):
                    diverged = str(LearnerDivergence("theta_bar", tk, i))
                    break
                sf[i] = trk_f[i].push(theta[i])
                if sf[i] < cfg.threshold:
                    frozen_f[i] = float(tk)
        if diverged:
            k_end = k
            break
        # HJB laws, with strategies from the current strategy weights
        pt = _point(pt_eval, k)
        u_all = np.concatenate([mu_hat(j, k, theta[j]) for j in range(N)])
        for i in range(N):
            theta_r = None
            mode = modes[i]
            if mode == REDUCED:
                try:
                    theta_r = normalized_reduced_weights(theta[i], model.p[i])
                except IdentificationError:
                    theta_r = None
            if mode == REDUCED and theta_r is None:
                m_hist[i][k] = np.nan
            else:
                m, z = hjb_rows(model, i, pt, u_all, splits[i], theta_r, mode)
                m_hist[i][k] = m
                if frozen_h[i] is None:
                    eta[i] = hjb_adapt_step(eta[i], m, z, h, cfg.kappa[i], cfg.integrator)
                    if not np.all(np.isfinite(eta[i])):
                        diverged = str(LearnerDivergence("eta", tk, i))
                        break
            eta_hist[i][k] = eta[i]
            if frozen_h[i] is None:
                sh[i] = trk_h[i].push(eta[i])
                if sh[i] < cfg.threshold:
                    frozen_h[i] = float(tk)
            if neg_alpha[i] is None and k >= W and np.any(eta[i][:p_tot] < 0):
                neg_alpha[i] = float(tk)
        if diverged:
            k_end = k
            break
        if k % cfg.trace_decimation == 0:
            for i in range(N):
                trace.append((tk, i, theta[i].copy(), eta[i].copy(), sf[i], sh[i],
                              frozen_f[i] is not None, frozen_h[i] is not None))

    if diverged:
        checks.append(Check("online learners finite", False, diverged))

    # diagnostics
    pe, pe_f = [], []
    for i in range(N):
        stop = k_end if frozen_h[i] is None else int(round(frozen_h[i] / h)) + 1
        lo = max(0, stop - W - 1)
        win = m_hist[i][lo:stop]
        win = win[np.all(np.isfinite(win), axis=1)]
        pe.append(pe_diagnostic(win, h) if len(win) else None)
        lo_f = 0
        stop_f = min(k_end, W + 1)
        Mf_bar = -0.5 * np.moveaxis(block_regressor(Phi_star[i][..., lo_f:stop_f]), -1, 0)  # samples x p x p*hb
        pe_f.append(pe_diagnostic(Mf_bar, h) if len(Mf_bar) else None)

    excursion = []
    start = min(W, k_end)
    for i in range(N):
        hist = eta_hist[i][start:k_end]
        excursion.append([[float(a), float(b)] for a, b in zip(hist.min(axis=0), hist.max(axis=0))] if len(hist) else None)

    membership, membership_eta, member_w = [], [], []
    for i in range(N):
        sset = offline.players[i].sset
        n_ab = p_tot + model.players[i].m
        if eta[i].size == sset.particular.size and np.all(np.isfinite(eta[i])):
            membership.append(membership_residual(sset, eta[i][:n_ab]))
            membership_eta.append(membership_residual(sset, eta[i]))
            member_w.append((sset.null_basis.T @ (eta[i] - sset.particular)).tolist() if sset.dim else [])
        else:
            membership.append(None)
            membership_eta.append(None)
            member_w.append(None)

    for i, m in enumerate(membership):
        checks.append(Check(f"player {i + 1}: (alpha, beta) in offline solution set",
                            m is not None and m <= cfg.membership_tol,
                            f"membership residual {m if m is None else format(m, '.3g')} (tol {cfg.membership_tol:g})"))

    th_off = [pl.fne.theta_bar for pl in offline.players]
    discrepancy = []
    for i in range(N):
        d = float(np.max(np.abs(theta[i] - th_off[i])))
        flag = bool(d > cfg.discrepancy_tol * max(1.0, float(np.max(np.abs(th_off[i])))))
        discrepancy.append(flag)
        checks.append(Check(f"player {i + 1}: online strategy weights agree with offline", not flag,
                            f"max |theta_bar_online - theta_bar_offline| = {d:.4g}"))
    for i in range(N):
        checks.append(Check(f"player {i + 1}: strategy law frozen", frozen_f[i] is not None,
                            f"t = {frozen_f[i]}" if frozen_f[i] is not None else "horizon exhausted"))
        checks.append(Check(f"player {i + 1}: HJB law frozen", frozen_h[i] is not None,
                            f"t = {frozen_h[i]}" if frozen_h[i] is not None else "horizon exhausted"))

    alphas = [e[:p_tot].copy() for e in eta]
    betas = [e[p_tot:p_tot + model.players[i].m].copy() for i, e in enumerate(eta)]
    verification = None
    if diverged is None:
        strategies = [identified_strategy(phi_r[i], theta[i]) for i in range(N)]
        verification = verify_parameters(scenario, alphas, betas, strategies, offline.ground_truth,
                                         checks, "online")

    return OnlineReport(
        theta_bar=theta, eta=eta, alpha=alphas, beta=betas, freeze_fne=frozen_f, freeze_hjb=frozen_h,
        membership=membership, membership_eta=membership_eta, membership_w=member_w, pe=pe, pe_fne=pe_f, theta_bar_offline=th_off,
        discrepancy=discrepancy, excursion=excursion, negative_alpha=neg_alpha, verification=verification,
        trace_csv=_trace_csv(trace, [model.p[i] * hb[i] for i in range(N)], dims_eta), checks=checks,
        diverged=diverged,
    )

