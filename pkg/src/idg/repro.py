"""Reproduction of the two-player example study as an acceptance table.

Runs error-free offline and online identification, the value-approximation
and cost-approximation variants, the property suites and the forward-solver
oracles, and compares each quantity with its reference value.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import selfcheck
from .offline import OfflineReport, run_offline, simulate_ground_truth
from .online import OnlineReport, run_online
from .scenario import BUNDLED, Scenario, bundled_path, load_scenario

NULL_DIRECTION = np.array([0.0, 0.0, 0.873, -0.436, 0.0, 0.218])
ONLINE_NSAE_DX = 4.678
ERRORFREE_NSAE_DX = 0.010


@dataclass
class Row:
    criterion: int
    name: str
    reference: str
    computed: Any
    tolerance: str
    ok: bool
    detail: str = ""
    volatile: str = ""  # wall-clock notes; printed, never serialized

    def to_dict(self):
        return {"criterion": self.criterion, "name": self.name, "reference": self.reference,
                "computed": self.computed, "tolerance": self.tolerance, "ok": self.ok, "detail": self.detail}


@dataclass
class ScenarioRuns:
    scenario: Scenario
    offline: OfflineReport
    online: Optional[OnlineReport]
    offline_seconds: float
    online_seconds: float


@dataclass
class ReproResult:
    rows: list
    runs: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    def criteria(self) -> dict:
        out: dict = {}
        for r in self.rows:
            out[r.criterion] = out.get(r.criterion, True) and r.ok
        return out

    def to_dict(self):
        return {"rows": [r.to_dict() for r in self.rows],
                "criteria": {str(k): v for k, v in sorted(self.criteria().items())}, "ok": self.ok}

    def table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["criterion", "name", "reference", "computed", "tolerance", "pass", "detail"])
        for r in self.rows:
            w.writerow([r.criterion, r.name, r.reference, _fmt(r.computed), r.tolerance, int(r.ok), r.detail])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def _rounded(v, digits=6):
    return [round(float(x), digits) for x in np.ravel(v)]


def _within_rel(x, ref, rel) -> bool:
    x, ref = np.asarray(x, dtype=float), np.asarray(ref, dtype=float)
    return bool(np.all(np.abs(x - ref) <= rel * np.abs(ref)))


def run_scenario(sc: Scenario, online: bool = True) -> ScenarioRuns:
    t = time.perf_counter()
    off = run_offline(sc, simulate_ground_truth(sc))
    t_off = time.perf_counter() - t
    on, t_on = None, 0.0
    if online:
        t = time.perf_counter()
        on = run_online(sc, off)
        t_on = time.perf_counter() - t
    return ScenarioRuns(sc, off, on, t_off, t_on)


# ---------------------------------------------------------------- criteria

def rows_errorfree_offline(run: ScenarioRuns) -> list:
    off = run.offline
    rows = []
    ranks = [p.fne.rank for p in off.players]
    rows.append(Row(1, "rank(M_u) per player", "[2, 2]", ranks, "exact", ranks == [2, 2]))
    for i, pl in enumerate(off.players):
        a = pl.selection.alpha if pl.selection else [math.nan] * 2
        rows.append(Row(1, f"alpha_hat_{i + 1} offline", "[2, 2]", _rounded(a), "1% relative",
                        _within_rel(a, [2, 2], 0.01)))
    for i, pl in enumerate(off.players):
        N = pl.sset.null_basis
        if N.shape[1] == 1:
            cos = abs(float(N[:, 0] @ NULL_DIRECTION)) / (np.linalg.norm(N[:, 0]) * np.linalg.norm(NULL_DIRECTION))
            ang = float(np.arccos(min(1.0, cos)))
        else:
            ang = math.nan
        # the reference direction is given to three decimals, so its own rounding sets the floor
        rows.append(Row(1, f"null direction player {i + 1}", _fmt(NULL_DIRECTION), _rounded(N.T.ravel(), 4),
                        "angle <= 1e-3 rad", bool(ang <= 1e-3), f"dim = {N.shape[1]}, angle = {ang:.3g} rad"))
    b3 = [float(p.selection.beta[2]) if p.selection else math.nan for p in off.players]
    rows.append(Row(1, "beta_hat third entries", "[2, 1]", _rounded(b3), "2% relative",
                    _within_rel(b3, [2, 1], 0.02)))
    nz = off.verification.nsae
    dx = nz.dx if nz else math.nan
    du = nz.du if nz else math.nan
    rows.append(Row(1, "verified NSAE dx (error-free)", "0.010", dx, "<= 0.05", bool(dx <= 0.05)))
    rows.append(Row(1, "verified NSAE du (error-free)", "0.011", du, "<= 0.05", bool(du <= 0.05)))
    fast = run.offline_seconds <= 60.0
    rows.append(Row(1, "offline runtime", "<= 60 s", fast, "<= 60 s", fast,
                    volatile=f"measured {run.offline_seconds:.2f} s"))
    return rows


def rows_errorfree_online(run: ScenarioRuns) -> list:
    on = run.online
    rows = []
    stops = list(on.freeze_fne) + list(on.freeze_hjb)
    fired = all(s is not None and s <= 16.0 for s in stops)
    rows.append(Row(2, "stopping criteria fire", "<= 16 s", [s for s in stops], "all <= 16 s", fired,
                    "strategy laws then HJB laws, per player"))
    a1 = on.alpha[0]
    rows.append(Row(2, "alpha_hat_1 online", "[2, 2]", _rounded(a1), "5% relative", _within_rel(a1, [2, 2], 0.05)))
    for i, m in enumerate(on.membership):
        rows.append(Row(2, f"membership residual player {i + 1}", "0", m, "<= 1e-3",
                        m is not None and m <= 1e-3, f"least-squares w = {on.membership_w[i]}"))
    nz = on.verification.nsae if on.verification else None
    dx = nz.dx if nz else math.nan
    lo, hi = ONLINE_NSAE_DX / 3, ONLINE_NSAE_DX * 3
    rows.append(Row(2, "online verified NSAE dx", f"{ONLINE_NSAE_DX}", dx, f"factor 3: [{lo:.3g}, {hi:.3g}]",
                    bool(lo <= dx <= hi)))
    return rows


def rows_value_approx(run: ScenarioRuns) -> list:
    off, on = run.offline, run.online
    rows = []
    tb = [float(p.fne.theta_bar[-1]) for p in off.players]
    sizes = [p.fne.theta_bar.size for p in off.players]
    rows.append(Row(3, "theta_bar offline (value approx.)", "[0.5, 0.5]", _rounded(tb), "+- 0.02",
                    bool(np.all(np.abs(np.array(tb) - 0.5) <= 0.02)), f"weights per player {sizes}"))
    a = off.nsae_identified_vs_fne
    b = off.verification.nsae
    if a is not None and b is not None and b.du > 0:
        ratio = a.du / b.du
        detail = (f"du: {a.du:.4g} vs {b.du:.4g}; dx: {a.dx:.4g} vs {b.dx:.4g} "
                  f"(ratio {a.dx / b.dx:.3g})")
    else:
        ratio, detail = math.nan, "trajectory missing"
    rows.append(Row(3, "NSAE(identified, IDG FNE) / NSAE(IDG FNE, GT)", "<= 0.01", ratio, "<= 1%",
                    bool(ratio <= 0.01), detail))
    th1 = float(on.theta_bar[0][-1])
    rows.append(Row(3, "online theta_bar_1 (value approx.)", "0.7", th1, "[0.6, 0.8]", 0.6 <= th1 <= 0.8))
    rows.append(Row(3, "offline/online discrepancy flagged", "True", bool(on.discrepancy[0]), "flag set",
                    bool(on.discrepancy[0]), f"per player {on.discrepancy}"))
    return rows


def rows_cost_approx(run: ScenarioRuns, errorfree: ScenarioRuns) -> list:
    off, on = run.offline, run.online
    rows = []
    gt = np.asarray(run.scenario.model.players[0].beta, dtype=float)
    b1 = off.players[0].selection.beta if off.players[0].selection else np.full(gt.shape, math.nan)
    flips = int(np.sum((np.sign(b1) != np.sign(gt)) & (np.abs(b1) > 1e-9)))
    rows.append(Row(4, "beta_hat_1 sign flips vs GT", "[-3.568, -5.509, 3.301]", _rounded(b1, 4),
                    ">= 2 flips", flips >= 2, f"{flips} flips against {gt.tolist()}"))
    nc = off.verification.nsae
    ne = errorfree.offline.verification.nsae
    dx = nc.dx if nc else math.nan
    ratio = dx / ne.dx if nc and ne and ne.dx > 0 else math.nan
    rows.append(Row(4, "cost-error NSAE dx / error-free", "1810.7 / 0.010", ratio, ">= 100x",
                    bool(ratio >= 100), f"dx = {dx:.4g} vs {ne.dx if ne else math.nan:.3g}; "
                    f"{dx / ERRORFREE_NSAE_DX:.4g}x the reference error-free value {ERRORFREE_NSAE_DX}"))
    t_neg = on.negative_alpha[0]
    rows.append(Row(4, "negative alpha_hat_1 entry online", "occurs", t_neg, "at least one sample",
                    t_neg is not None, f"excursion band {on.excursion[0][:2] if on.excursion[0] else None}"))
    return rows


def rows_properties(errorfree: ScenarioRuns, scenarios: list) -> list:
    m = errorfree.scenario.model
    off = errorfree.offline
    checks = [
        selfcheck.check_moore_penrose(),
        selfcheck.check_gradients(selfcheck.fixture_expressions(scenarios)),
        selfcheck.check_rk4_order(m),
        selfcheck.check_fne_reconstruction(m),
        selfcheck.check_hjb_residual(m, off),
        selfcheck.check_scaling_invariance(m, off),
        selfcheck.check_uniqueness_flag(),
        selfcheck.check_online_fixed_point(),
    ]
    # determinism: regenerate and re-identify from scratch, compare serialized bytes
    again = run_offline(errorfree.scenario)
    same = (again.ground_truth.to_csv() == off.ground_truth.to_csv()
            and _canon(again.to_dict()) == _canon(off.to_dict()))
    rows = [Row(5, c.name, "pass", c.ok, "", c.ok, c.detail) for c in checks]
    rows.append(Row(5, "determinism under fixed seed", "byte-identical", same, "", same))
    return rows


def _canon(d) -> str:
    from .report import dumps
    return dumps(d)


def rows_oracles(errorfree: ScenarioRuns) -> list:
    model = errorfree.scenario.model
    checks = [
        (selfcheck.check_lq_evaluation(), "(q + r k^2) / (2 (b k - a))", "<= 1e-8"),
        (selfcheck.check_lq_riccati(), "r (a + sqrt(a^2 + b^2 q / r)) / b^2", "<= 1e-6"),
        (selfcheck.check_pi_from_gt(model, [0.5, 0.0, 1.0]), "theta_1 = [0.5, 0, 1]", "<= 1e-3"),
    ]
    return [Row(6, c.name, ref, c.ok, tol, c.ok, c.detail) for c, ref, tol in checks]


def load_bundled(directory=None, seed=None, overrides=None) -> dict:
    out = {}
    for name in BUNDLED:
        path = Path(directory) / f"{name}.json" if directory else bundled_path(name)
        out[name] = load_scenario(path, overrides, seed)
    return out


def run_repro(scenarios: Optional[dict] = None) -> ReproResult:
    scenarios = load_bundled() if scenarios is None else scenarios
    runs = {name: run_scenario(sc) for name, sc in scenarios.items()}
    ef = runs["errorfree"]
    rows = []
    rows += rows_errorfree_offline(ef)
    rows += rows_errorfree_online(ef)
    rows += rows_value_approx(runs["value_approx"])
    rows += rows_cost_approx(runs["cost_approx"], ef)
    rows += rows_properties(ef, list(scenarios.values()))
    rows += rows_oracles(ef)
    return ReproResult(rows, runs)
