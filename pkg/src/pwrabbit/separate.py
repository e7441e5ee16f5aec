"""Wigner / continuum-continuum separation from gauge-fixed partial-wave phases.

For one partial wave seen in both geometries, with the CC phases of the two
pathways antisymmetric,

    (phi_co + phi_counter) / 2 + l pi/2  = [W(E-w) + W(E+w)] / 2
    phi_co - phi_counter                 = -/+ [W(E+w) - W(E-w)] + 2 cc

where the upper sign holds for d2 (absorption in co) and the lower for d0 and
s (emission in co).  Delays follow from forward differences across the
sideband ladder.  Every output column is a linear combination of the input
phases (up to branch constants), so uncertainties propagate exactly through
the coefficient rows kept alongside the values.
"""
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DependencyError, DomainError, GaugeError
from .model import QUANTUM_NUMBERS, WAVES
from .units import HBAR_EV_AS, phase_distance, wrap_phase

PATHWAY = {"d2": "absorption", "d0": "emission", "s": "emission"}
CC_TRUTH_KEY = {"d2": ("absorption", "l2"), "d0": ("emission", "l2"), "s": ("emission", "l0")}


def raw_half_sum(phi_co, phi_counter):
    """(phi_co + phi_counter)/2 on the branch fixed by the nearest-branch difference."""
    return wrap_phase(phi_co - 0.5 * wrap_phase(phi_co - phi_counter))


def wigner_from_sum(phi_co, phi_counter, l):
    """Wigner phase from the co/counter phase sum of one wave, centrifugal term restored."""
    return wrap_phase(raw_half_sum(phi_co, phi_counter) + l * np.pi / 2)


def cc_from_difference(phi_co, phi_counter, wigner_delay, omega, pathway):
    """CC phase of ``pathway`` from the co-minus-counter phase difference.

    ``wigner_delay`` (as) is the Wigner delay at the sideband energy and
    ``omega`` the IR photon energy (eV).  The absorption result comes from
    the d2 wave, the emission result from d0 or s.
    """
    if wigner_delay is None or not np.isfinite(wigner_delay):
        raise DependencyError("Wigner delay at the sideband energy is required")
    if pathway not in ("absorption", "emission"):
        raise DomainError(f"unknown pathway {pathway!r}")
    diff = wrap_phase(phi_co - phi_counter)
    shift = omega * wigner_delay / HBAR_EV_AS
    return wrap_phase(0.5 * diff + shift if pathway == "absorption" else 0.5 * diff - shift)


def _check_ladder(energies, spacing=None):
    e = np.asarray(energies, dtype=float)
    if e.size >= 2:
        steps = np.diff(e)
        if np.any(steps <= 0):
            raise DomainError("energies must be strictly ascending")
        ref = steps[0] if spacing is None else spacing
        if np.max(np.abs(steps - ref)) > 1e-9 * max(abs(ref), 1.0):
            raise DomainError("energy ladder is not uniformly spaced")
    return e


def finite_diff_delay(energies, phases, spacing=None, max_step=np.pi / 2):
    """Forward-difference delays hbar * dphi/dE at interval midpoints.

    Adjacent phase steps are reduced to the branch nearest zero; steps larger
    than ``max_step`` are reported in the returned flag array rather than
    silently unwrapped.  Returns (midpoints, delays_as, step_ok).
    """
    e = _check_ladder(energies, spacing)
    ph = np.asarray(phases, dtype=float)
    if e.size != ph.size:
        raise DomainError("energies and phases differ in length")
    if e.size < 2:
        warnings.warn("finite differences need at least two energies", stacklevel=2)
        return np.array([]), np.array([]), np.array([], dtype=bool)
    step = wrap_phase(np.diff(ph))
    mids = 0.5 * (e[1:] + e[:-1])
    return mids, HBAR_EV_AS * step / np.diff(e), np.abs(step) <= max_step


def delay_at_points(energies, phases, spacing=None):
    """Delay at each ladder energy: mean of the adjacent midpoint delays
    (central difference) inside the ladder, one-sided at its ends."""
    _, mid, ok = finite_diff_delay(energies, phases, spacing)
    n = len(energies)
    if n < 2:
        return np.full(n, np.nan), np.ones(n, dtype=bool)
    out = np.empty(n)
    good = np.empty(n, dtype=bool)
    out[0], out[-1] = mid[0], mid[-1]
    good[0], good[-1] = ok[0], ok[-1]
    if n > 2:
        out[1:-1] = 0.5 * (mid[:-1] + mid[1:])
        good[1:-1] = ok[:-1] & ok[1:]
    return out, good


def propagate_errors(rows, covariance):
    """First-order sigmas sqrt(diag(L Sigma L^T)) for coefficient rows ``L``."""
    rows = np.atleast_2d(rows)
    return np.sqrt(np.clip(np.einsum("ij,jk,ik->i", rows, covariance, rows), 0, None))


def _delay_rows(energies, value_rows):
    e = np.asarray(energies, dtype=float)
    return HBAR_EV_AS * (value_rows[1:] - value_rows[:-1]) / np.diff(e)[:, None]


def _at_point_rows(mid_rows, n):
    out = np.zeros((n, mid_rows.shape[1]))
    if n < 2:
        return out * np.nan
    out[0], out[-1] = mid_rows[0], mid_rows[-1]
    if n > 2:
        out[1:-1] = 0.5 * (mid_rows[:-1] + mid_rows[1:])
    return out


@dataclass
class DelayTable:
    """Separated Wigner and CC phases (per sideband) and delays (per midpoint).

    Per-wave columns are dicts keyed by wave name.  ``cc_phase[w]`` is the
    CC phase of ``PATHWAY[w]`` for the final angular momentum of ``w``.
    """

    orders: np.ndarray
    energies: np.ndarray
    omega: float
    phase_sum: dict
    phase_diff: dict
    wigner_phase: dict
    wigner_delay_at_sideband: dict
    cc_phase: dict
    mid_energies: np.ndarray
    wigner_delay: dict
    cc_delay: dict
    sigma: dict
    step_ok: dict
    regime_flag: np.ndarray
    provenance: dict
    scoring: dict = None
    warnings: list = field(default_factory=list)

    def sideband_rows(self):
        """Flat per-sideband records for tabular output."""
        rows = []
        for k, (n, e) in enumerate(zip(self.orders, self.energies)):
            row = {"order": int(n), "energy_ev": float(e), "near_threshold": bool(self.regime_flag[k])}
            for w in WAVES:
                row[f"phase_sum_{w}"] = self.phase_sum[w][k]
                row[f"phase_diff_{w}"] = self.phase_diff[w][k]
                row[f"wigner_phase_{w}"] = self.wigner_phase[w][k]
                row[f"sigma_wigner_phase_{w}"] = self.sigma["wigner_phase"][w][k]
                row[f"wigner_delay_at_sb_{w}"] = self.wigner_delay_at_sideband[w][k]
                row[f"cc_phase_{PATHWAY[w]}_{w}"] = self.cc_phase[w][k]
                row[f"sigma_cc_phase_{w}"] = self.sigma["cc_phase"][w][k]
            rows.append(row)
        return rows

    def midpoint_rows(self):
        rows = []
        for k, e in enumerate(self.mid_energies):
            row = {"energy_ev": float(e)}
            for w in WAVES:
                row[f"wigner_delay_as_{w}"] = self.wigner_delay[w][k]
                row[f"sigma_wigner_delay_as_{w}"] = self.sigma["wigner_delay"][w][k]
                row[f"cc_delay_as_{w}"] = self.cc_delay[w][k]
                row[f"sigma_cc_delay_as_{w}"] = self.sigma["cc_delay"][w][k]
                row[f"step_ok_{w}"] = bool(self.step_ok[w][k])
            rows.append(row)
        return rows

    def to_dict(self):
        def lists(d):
            return {k: (lists(v) if isinstance(v, dict) else np.asarray(v).tolist()) for k, v in d.items()}

        return {
            "format": "pwrabbit-delays/1",
            "omega_ev": self.omega,
            "orders": self.orders.tolist(),
            "energies_ev": self.energies.tolist(),
            "mid_energies_ev": self.mid_energies.tolist(),
            "pathway": dict(PATHWAY),
            "phase_sum": lists(self.phase_sum),
            "phase_diff": lists(self.phase_diff),
            "wigner_phase": lists(self.wigner_phase),
            "wigner_delay_at_sideband_as": lists(self.wigner_delay_at_sideband),
            "cc_phase": lists(self.cc_phase),
            "wigner_delay_as": lists(self.wigner_delay),
            "cc_delay_as": lists(self.cc_delay),
            "sigma": lists(self.sigma),
            "step_ok": lists(self.step_ok),
            "near_threshold": self.regime_flag.tolist(),
            "provenance": self.provenance,
            "scoring": self.scoring,
            "warnings": list(self.warnings),
        }


def _input_covariance(fits, warn):
    k = len(fits)
    cov = np.zeros((6 * k, 6 * k))
    for i, f in enumerate(fits):
        c = f.covariance
        if c is None or np.shape(c) != (10, 10):
            warn.append(f"SB{f.sideband_order}: covariance missing, using diagonal ci95/1.96")
            for gi, g in enumerate(("co", "counter")):
                for wi, w in enumerate(WAVES):
                    if w != "d2":
                        s = f.ci95.get(f"{g}.phi_{w}", np.nan) / 1.96
                        cov[6 * i + 3 * gi + wi, 6 * i + 3 * gi + wi] = s * s
            continue
        for gi, g in enumerate(("co", "counter")):
            sl = slice(6 * i + 3 * gi, 6 * i + 3 * gi + 3)
            cov[sl, sl] = f.phase_covariance(g)
    return cov


def separate(fits, sidecar=None, near_threshold_floor_ev=0.5, score_slack_rad=1e-6):
    """Build the DelayTable from gauge-fixed FitResults (one per sideband).

    With a ground-truth ``sidecar`` a scoring section compares every column
    to the truth and to the oracle error bounds stored in the sidecar.
    """
    if not fits:
        raise DomainError("no fit results to separate")
    for f in fits:
        if not f.calibrated:
            raise GaugeError(f"SB{f.sideband_order}: phases are not gauge-fixed; each geometry's phase "
                             "constant is arbitrary until fix_gauge applies a calibration")
    fits = sorted(fits, key=lambda f: f.sideband_energy_ev)
    omega = fits[0].omega_ev
    have = [f.sideband_order for f in fits]
    missing = sorted(set(range(have[0], have[-1] + 1, 2)) - set(have))
    if missing:
        raise DomainError("sideband ladder has gaps (missing " + ", ".join(f"SB{n}" for n in missing)
                          + "); finite differences need adjacent sidebands")
    energies = _check_ladder([f.sideband_energy_ev for f in fits], 2 * omega)
    orders = np.array([f.sideband_order for f in fits])
    n = len(fits)
    warn = []
    cov = _input_covariance(fits, warn)

    def unit(k, gi, wi):
        r = np.zeros(6 * n)
        r[6 * k + 3 * gi + wi] = 1.0
        return r

    cols = {name: {} for name in ("phase_sum", "phase_diff", "wigner_phase", "wigner_at", "cc_phase",
                                  "wigner_delay", "cc_delay")}
    rows = {name: {} for name in ("wigner_phase", "phase_diff", "wigner_at", "cc_phase", "wigner_delay",
                                  "cc_delay")}
    step_ok = {}
    for wi, w in enumerate(WAVES):
        l = QUANTUM_NUMBERS[w][0]
        co = np.array([f.phases["co"][w] for f in fits])
        ctr = np.array([f.phases["counter"][w] for f in fits])
        cols["phase_sum"][w] = np.array([raw_half_sum(a, b) for a, b in zip(co, ctr)])
        cols["phase_diff"][w] = wrap_phase(co - ctr)
        cols["wigner_phase"][w] = np.array([wigner_from_sum(a, b, l) for a, b in zip(co, ctr)])
        rows["wigner_phase"][w] = np.array([0.5 * unit(k, 0, wi) + 0.5 * unit(k, 1, wi) for k in range(n)])
        rows["phase_diff"][w] = np.array([unit(k, 0, wi) - unit(k, 1, wi) for k in range(n)])

        _, wd, ok_w = finite_diff_delay(energies, cols["wigner_phase"][w], 2 * omega) if n >= 2 else (
            None, np.array([]), np.array([], dtype=bool))
        cols["wigner_delay"][w] = wd
        rows["wigner_delay"][w] = _delay_rows(energies, rows["wigner_phase"][w]) if n >= 2 else np.zeros((0, 6 * n))
        at, ok_at = delay_at_points(energies, cols["wigner_phase"][w], 2 * omega) if n >= 2 else (
            np.full(n, np.nan), np.zeros(n, dtype=bool))
        cols["wigner_at"][w] = at
        rows["wigner_at"][w] = _at_point_rows(rows["wigner_delay"][w], n)

        if n >= 2:
            cols["cc_phase"][w] = np.array([cc_from_difference(a, b, t, omega, PATHWAY[w])
                                            for a, b, t in zip(co, ctr, at)])
            sgn = 1.0 if PATHWAY[w] == "absorption" else -1.0
            rows["cc_phase"][w] = 0.5 * rows["phase_diff"][w] + sgn * omega / HBAR_EV_AS * rows["wigner_at"][w]
            _, cd, ok_c = finite_diff_delay(energies, cols["cc_phase"][w], 2 * omega)
            cols["cc_delay"][w] = cd
            rows["cc_delay"][w] = _delay_rows(energies, rows["cc_phase"][w])
            step_ok[w] = ok_w & ok_c
        else:
            cols["cc_phase"][w] = np.full(n, np.nan)
            rows["cc_phase"][w] = np.zeros((n, 6 * n))
            cols["cc_delay"][w] = np.array([])
            rows["cc_delay"][w] = np.zeros((0, 6 * n))
            step_ok[w] = np.array([], dtype=bool)
            warn.append(f"{w}: single sideband, no Wigner delay for the CC substitution")
        if not np.all(step_ok[w]):
            warn.append(f"{w}: adjacent phase step exceeds pi/2; delays at those midpoints are unreliable")

    sigma = {}
    for name, key in (("wigner_phase", "wigner_phase"), ("phase_diff", "phase_diff"),
                      ("wigner_delay_at_sideband", "wigner_at"), ("cc_phase", "cc_phase"),
                      ("wigner_delay", "wigner_delay"), ("cc_delay", "cc_delay")):
        sigma[name] = {w: (propagate_errors(rows[key][w], cov) if len(rows[key][w]) else np.array([]))
                       for w in WAVES}
    if n < 2:
        for w in WAVES:
            sigma["cc_phase"][w] = np.full(n, np.nan)
            sigma["wigner_delay_at_sideband"][w] = np.full(n, np.nan)

    if sidecar is not None:
        by_order = {sb["order"]: sb for sb in sidecar["sidebands"]}
        regime = np.array([bool(by_order.get(int(o), {}).get("near_threshold", e - omega < near_threshold_floor_ev))
                           for o, e in zip(orders, energies)])
    else:
        regime = energies - omega < near_threshold_floor_ev

    table = DelayTable(
        orders=orders,
        energies=energies,
        omega=omega,
        phase_sum=cols["phase_sum"],
        phase_diff=cols["phase_diff"],
        wigner_phase=cols["wigner_phase"],
        wigner_delay_at_sideband=cols["wigner_at"],
        cc_phase=cols["cc_phase"],
        mid_energies=0.5 * (energies[1:] + energies[:-1]),
        wigner_delay=cols["wigner_delay"],
        cc_delay=cols["cc_delay"],
        sigma=sigma,
        step_ok=step_ok,
        regime_flag=regime,
        provenance=_provenance(),
        warnings=warn,
    )
    if sidecar is not None:
        table.scoring = score_against_truth(table, sidecar, score_slack_rad)
    return table


def _provenance():
    out = {
        "phase_sum": "raw (phi_co + phi_counter)/2 of the same wave, nearest-branch",
        "phase_diff": "phi_co - phi_counter of the same wave",
        "wigner_delay_at_sideband": "mean of adjacent forward-difference Wigner delays (one-sided at ladder ends)",
        "wigner_delay": "forward difference of wigner_phase across adjacent sidebands, at midpoints",
        "cc_delay": "forward difference of cc_phase across adjacent sidebands, at midpoints",
    }
    for w in WAVES:
        l = QUANTUM_NUMBERS[w][0]
        out[f"wigner_phase.{w}"] = f"{w} in co and counter fits; phase_sum + {l}*pi/2"
        sign = "+" if PATHWAY[w] == "absorption" else "-"
        out[f"cc_phase.{w}"] = (f"{PATHWAY[w]} CC (final l={l}) from {w}: phase_diff/2 {sign} "
                                f"omega*wigner_delay_at_sideband[{w}]/hbar")
    return out


def score_against_truth(table, sidecar, slack_rad=1e-6):
    """Compare a DelayTable with sidecar truth and oracle bounds.

    A column passes when |recovered - truth| <= bound + slack, where slack
    covers fit-level errors (``slack_rad`` in phase, the matching finite-
    difference amount in delay).
    """
    by_order = {sb["order"]: sb for sb in sidecar["sidebands"]}
    omega = table.omega
    delay_slack = HBAR_EV_AS * 2 * slack_rad / (2 * omega)
    out = {"slack_rad": slack_rad, "slack_as": delay_slack, "sidebands": [], "midpoints": []}
    all_ok = True
    for k, order in enumerate(table.orders):
        sb = by_order.get(int(order))
        if sb is None:
            continue
        row = {"order": int(order), "energy_ev": float(table.energies[k])}
        for w in WAVES:
            err_w = phase_distance(table.wigner_phase[w][k], sb["wigner_phase"])
            ok_w = err_w <= sb["wigner_curvature_bound"] + slack_rad
            row[f"wigner_error_{w}"] = err_w
            row[f"wigner_ok_{w}"] = bool(ok_w)
            pathway, lkey = CC_TRUTH_KEY[w]
            truth_cc = sb["cc_phase"][pathway][lkey]
            err_c = phase_distance(table.cc_phase[w][k], truth_cc)
            bound_c = sb["cc_substitution_bound"]
            ok_c = bool(np.isfinite(err_c) and err_c <= bound_c + slack_rad)
            row[f"cc_error_{w}"] = err_c
            row[f"cc_ok_{w}"] = ok_c
            all_ok &= bool(ok_w) and ok_c
        row["wigner_curvature_bound"] = sb["wigner_curvature_bound"]
        row["cc_substitution_bound"] = sb["cc_substitution_bound"]
        out["sidebands"].append(row)
    mids = sidecar.get("midpoints", [])
    for k, e in enumerate(table.mid_energies):
        match = [m for m in mids if abs(m["energy_ev"] - e) < 1e-6]
        if not match:
            continue
        m = match[0]
        row = {"energy_ev": float(e), "analytic_wigner_delay_as": m["wigner_delay_as"],
               "bound_as": m["wigner_delay_bound_as"]}
        for w in WAVES:
            err = abs(table.wigner_delay[w][k] - m["wigner_delay_as"])
            row[f"error_as_{w}"] = err
            row[f"ok_{w}"] = bool(err <= m["wigner_delay_bound_as"] + delay_slack)
            all_ok &= row[f"ok_{w}"]
        out["midpoints"].append(row)
    out["all_within_bounds"] = bool(all_ok)
    return out
