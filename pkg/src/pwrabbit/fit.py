"""Simultaneous least-squares fit of a co/counter trace pair.

Each geometry is blind to a constant added to all three of its phases, so
the fit works in a gauge-reduced parameterization per geometry:

    [ln A_d2, ln A_d0, ln A_s, phi_d0 - phi_d2, phi_s - phi_d2]

i.e. raw phases are reported with phi_d2 := 0.  :func:`fix_gauge` then sets
each geometry's constant from an external calibration.
"""
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .errors import DomainError, GaugeError, NonConvergenceError
from .model import GEOMETRIES, WAVES, Geometry, SidebandModel, bin_gram, delay_phase, oscillation_signs
from .units import wrap_phase

log = logging.getLogger(__name__)

N_GEOM_PARAMS = 5
# poisson: Poisson variance of the fitted model, w = 1/max(model, 1), reached by
#   reweighting from the data-variance start (the fixed point is the Poisson ML fit)
# poisson-data: single pass with w = 1/max(counts, 1)
WEIGHTINGS = ("poisson", "poisson-data", "uniform")
PARAM_NAMES = tuple(f"{g.value}.{p}" for g in GEOMETRIES
                    for p in ("A_d2", "A_d0", "A_s", "phi_d0", "phi_s"))


@dataclass(frozen=True)
class FitOptions:
    starts: int = 32
    seed: int = 0
    weighting: str = "poisson"
    workers: int = 1
    max_nfev: int = 1000
    amp_rel_tol: float = 1e-3
    tol: float = 1e-15
    max_reweight: int = 8

    def __post_init__(self):
        if self.weighting not in WEIGHTINGS:
            raise DomainError(f"unknown weighting {self.weighting!r}")
        if self.starts < 1:
            raise DomainError("need at least one start")


@dataclass
class FitResult:
    """Recovered partial waves of one sideband in both geometries.

    ``amplitudes`` / ``phases`` map geometry -> wave -> value.  Amplitudes
    are in model units when the traces carry ``intensity_scale`` (else in
    sqrt-counts).  ``covariance`` and ``ci95`` follow :data:`PARAM_NAMES`.
    """

    sideband_order: int
    sideband_energy_ev: float
    omega_ev: float
    amplitudes: dict
    phases: dict
    covariance: np.ndarray
    ci95: dict
    gauge: dict
    goodness: dict
    converged: bool
    n_starts_used: int
    identifiable: dict
    amplitude_units: str = "model"
    warnings: list = field(default_factory=list)

    def model(self, geometry):
        g = Geometry.parse(geometry).value
        return SidebandModel.from_arrays(g, [self.amplitudes[g][w] for w in WAVES],
                                         [self.phases[g][w] for w in WAVES], self.omega_ev,
                                         self.sideband_energy_ev)

    @property
    def calibrated(self):
        return all(self.gauge.get(g.value, {}).get("calibrated", False) for g in GEOMETRIES)

    def phase_covariance(self, geometry):
        """3x3 covariance of (phi_d2, phi_d0, phi_s); the gauge reference has zero variance."""
        g = GEOMETRIES.index(Geometry.parse(geometry))
        out = np.zeros((3, 3))
        sl = slice(g * N_GEOM_PARAMS + 3, g * N_GEOM_PARAMS + 5)
        out[1:, 1:] = self.covariance[sl, sl]
        ref = self.gauge.get(Geometry.parse(geometry).value, {}).get("reference_wave", "d2")
        if ref != "d2":
            # re-referencing: phi_w = phi_w' - phi_ref' + const
            k = WAVES.index(ref)
            t = np.eye(3)
            t[:, k] -= 1.0
            out = t @ out @ t.T
        return out

    def to_dict(self):
        return {
            "format": "pwrabbit-fit/1",
            "sideband_order": self.sideband_order,
            "sideband_energy_ev": self.sideband_energy_ev,
            "omega_ev": self.omega_ev,
            "amplitudes": self.amplitudes,
            "phases": self.phases,
            "param_names": list(PARAM_NAMES),
            "covariance": self.covariance.tolist(),
            "ci95": self.ci95,
            "gauge": self.gauge,
            "goodness": self.goodness,
            "converged": self.converged,
            "n_starts_used": self.n_starts_used,
            "identifiable": self.identifiable,
            "amplitude_units": self.amplitude_units,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            sideband_order=int(d["sideband_order"]),
            sideband_energy_ev=float(d["sideband_energy_ev"]),
            omega_ev=float(d["omega_ev"]),
            amplitudes=d["amplitudes"],
            phases=d["phases"],
            covariance=np.asarray(d["covariance"], dtype=float),
            ci95=d["ci95"],
            gauge=d["gauge"],
            goodness=d["goodness"],
            converged=bool(d["converged"]),
            n_starts_used=int(d["n_starts_used"]),
            identifiable=d["identifiable"],
            amplitude_units=d.get("amplitude_units", "model"),
            warnings=list(d.get("warnings", [])),
        )


class PairProblem:
    """Residuals and analytic Jacobian of the weighted co/counter misfit."""

    def __init__(self, trace_co, trace_counter, weighting="poisson"):
        if trace_co.geometry is not Geometry.CO or trace_counter.geometry is not Geometry.COUNTER:
            raise DomainError("expected one co-rotating and one counter-rotating trace")
        if not trace_co.same_axes(trace_counter):
            raise DomainError("co and counter traces do not share theta/tau axes and tau origin")
        self.traces = (trace_co, trace_counter)
        self.gram = bin_gram(trace_co.theta_edges)
        self.gram_flat = self.gram.reshape(len(self.gram), 9)
        self.gram_kbj = np.ascontiguousarray(self.gram.transpose(1, 0, 2))
        self.wt = delay_phase(trace_co.omega_ev, trace_co.tau_samples)
        self.signs = [oscillation_signs(g) for g in GEOMETRIES]
        self.data = [t.counts for t in self.traces]
        if weighting in ("poisson", "poisson-data"):
            self.sqrt_w = [1.0 / np.sqrt(np.maximum(c, 1.0)) for c in self.data]
        else:
            self.sqrt_w = [np.ones_like(c) for c in self.data]
        self.n_points = sum(c.size for c in self.data)

    def _geometry_terms(self, amps, phases, gi, need_jac):
        s = self.signs[gi]
        d = (np.subtract.outer(phases, phases)[:, :, None]
             + np.subtract.outer(s, s)[:, :, None] * self.wt[None, None, :])
        cos_d = np.cos(d)
        aa = np.outer(amps, amps)[:, :, None]
        n_t = self.wt.size
        model = self.gram_flat @ (aa * cos_d).reshape(9, n_t)
        if not need_jac:
            return model, None, None
        # d/dA_k = 2 sum_j G_kj A_j cos D_kj ; d/dphi_k = -2 sum_j G_kj A_k A_j sin D_kj
        d_amp = 2.0 * np.matmul(self.gram_kbj, amps[None, :, None] * cos_d)
        d_phase = -2.0 * np.matmul(self.gram_kbj, aa * np.sin(d))
        return model, d_amp, d_phase

    @staticmethod
    def unpack(x, gi):
        p = x[gi * N_GEOM_PARAMS:(gi + 1) * N_GEOM_PARAMS]
        return np.exp(p[:3]), np.array([0.0, p[3], p[4]])

    def model_counts(self, x):
        return [self._geometry_terms(*self.unpack(x, gi), gi, False)[0] for gi in range(2)]

    def set_model_weights(self, x):
        """Switch to w = 1/max(model(x), 1); returns the largest relative weight change."""
        new = [1.0 / np.sqrt(np.maximum(m, 1.0)) for m in self.model_counts(x)]
        change = max(float(np.max(np.abs(n / o - 1.0))) for n, o in zip(new, self.sqrt_w))
        self.sqrt_w = new
        return change

    def residuals(self, x):
        out = []
        for gi in range(2):
            m, _, _ = self._geometry_terms(*self.unpack(x, gi), gi, False)
            out.append((self.sqrt_w[gi] * (m - self.data[gi])).ravel())
        return np.concatenate(out)

    def jacobian(self, x):
        jac = np.zeros((self.n_points, 2 * N_GEOM_PARAMS))
        row = 0
        for gi in range(2):
            amps, phases = self.unpack(x, gi)
            _, d_amp, d_phase = self._geometry_terms(amps, phases, gi, True)
            w = self.sqrt_w[gi]
            n = w.size
            cols = [amps[k] * d_amp[k] for k in range(3)] + [d_phase[1], d_phase[2]]
            for c, block in enumerate(cols):
                jac[row:row + n, gi * N_GEOM_PARAMS + c] = (w * block).ravel()
            row += n
        return jac

    def full_jacobian(self, amplitudes, phases):
        """Weighted Jacobian w.r.t. all 12 raw parameters (A and absolute phi per geometry).

        Contains the two per-geometry gauge null directions.
        """
        jac = np.zeros((self.n_points, 12))
        row = 0
        for gi in range(2):
            _, d_amp, d_phase = self._geometry_terms(np.asarray(amplitudes[gi], float),
                                                     np.asarray(phases[gi], float), gi, True)
            w = self.sqrt_w[gi]
            n = w.size
            for k in range(3):
                jac[row:row + n, gi * 6 + k] = (w * d_amp[k]).ravel()
                jac[row:row + n, gi * 6 + 3 + k] = (w * d_phase[k]).ravel()
            row += n
        return jac


def _algebraic_start(problem, gi):
    """Direct estimate from per-bin DC and 2w coefficients of one geometry.

    The 2w coefficient of bin b is linear in the two cross products
    c_abs c_em^* (d2 against d0 and s); the DC profile then fixes A_d2^2.
    Returns None when the linear systems are degenerate.
    """
    data = problem.data[gi]
    wt = problem.wt
    design = np.column_stack([np.ones_like(wt), np.cos(2 * wt), np.sin(2 * wt)])
    coef, *_ = np.linalg.lstsq(design, data.T, rcond=None)
    dc = coef[0]
    c2w = 0.5 * (coef[1] - 1j * coef[2])
    g = problem.gram
    # co: C = G[d2,d0] c2 c0* + G[d2,s] c2 cs*; counter: C = G[d0,d2] c0 c2* + G[s,d2] cs c2*
    basis = np.column_stack([g[:, 0, 1], g[:, 0, 2]]).astype(complex)
    cross, *_ = np.linalg.lstsq(basis, c2w, rcond=None)
    p, q = cross
    if gi == 1:
        p, q = np.conj(p), np.conj(q)  # now p = c2 c0*, q = c2 cs* in both cases
    em = (g[:, 1, 1] * abs(p) ** 2 + g[:, 2, 2] * abs(q) ** 2 + 2 * g[:, 1, 2] * np.real(np.conj(p) * q))
    sol, *_ = np.linalg.lstsq(np.column_stack([g[:, 0, 0], em]), dc, rcond=None)
    t = sol[0] if sol[0] > 0 else (1.0 / sol[1] if sol[1] > 0 else None)
    if t is None or not np.isfinite(t) or abs(p) == 0 or abs(q) == 0:
        return None
    a2 = np.sqrt(t)
    return np.array([np.log(a2), np.log(abs(p) / a2), np.log(abs(q) / a2),
                     wrap_phase(-np.angle(p)), wrap_phase(-np.angle(q))])


def _initial_points(problem, options):
    """Deterministic multi-start sequence.

    Start 0 is the algebraic DFT estimate (when available); the rest draw
    amplitudes around the DFT-derived scale and stratified (Latin-hypercube)
    phase differences from ``options.seed``.
    """
    rng = np.random.default_rng(options.seed)
    n = options.starts
    base = []
    for data in problem.data:
        dc_total = data.mean(axis=1).sum()
        norm = np.trace(problem.gram.sum(axis=0))
        base.append(0.5 * np.log(max(dc_total, 1e-300) / norm))
    strata = np.stack([(rng.permutation(n) + rng.random(n)) / n for _ in range(4)], axis=1)
    phases = 2 * np.pi * strata - np.pi
    jitter = rng.uniform(-0.7, 0.7, size=(n, 6))
    starts = np.zeros((n, 2 * N_GEOM_PARAMS))
    for gi in range(2):
        starts[:, gi * N_GEOM_PARAMS:gi * N_GEOM_PARAMS + 3] = base[gi] + jitter[:, 3 * gi:3 * gi + 3]
        starts[:, gi * N_GEOM_PARAMS + 3:gi * N_GEOM_PARAMS + 5] = phases[:, 2 * gi:2 * gi + 2]
    direct = [_algebraic_start(problem, gi) for gi in range(2)]
    for gi, d in enumerate(direct):
        if d is not None and np.all(np.isfinite(d)):
            starts[0, gi * N_GEOM_PARAMS:(gi + 1) * N_GEOM_PARAMS] = d
    return starts


def _canonical(x):
    x = np.array(x, dtype=float)
    for gi in range(2):
        sl = slice(gi * N_GEOM_PARAMS + 3, gi * N_GEOM_PARAMS + 5)
        x[sl] = wrap_phase(x[sl])
    return x


def _run_start(problem, x0, options):
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            res = least_squares(problem.residuals, x0, jac=problem.jacobian, method="lm",
                                xtol=options.tol, ftol=options.tol, gtol=options.tol,
                                max_nfev=options.max_nfev)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return {"ok": False, "message": str(exc)}
    ok = bool(np.all(np.isfinite(res.x)) and np.isfinite(res.cost) and res.status >= 0)
    return {"ok": ok, "x": _canonical(res.x), "cost": float(res.cost), "status": int(res.status),
            "nfev": int(res.nfev), "message": res.message}


def global_fit(trace_co, trace_counter, options=None):
    """Fit one co/counter pair; best of ``options.starts`` LM runs.

    Minimises sum w_ij (counts_ij - model_ij)^2 over both grids.  The
    multi-start stage uses w = 1/max(counts, 1) (or uniform weights); with
    ``weighting="poisson"`` the winner is then refined with model-variance
    weights (see :func:`_reweight`).  Ties in goodness are broken by
    lexicographic parameter order.
    """
    options = options or FitOptions()
    problem = PairProblem(trace_co, trace_counter, options.weighting)
    starts = _initial_points(problem, options)
    if options.workers > 1:
        with ThreadPoolExecutor(max_workers=options.workers) as pool:
            runs = list(pool.map(lambda x0: _run_start(problem, x0, options), starts))
    else:
        runs = [_run_start(problem, x0, options) for x0 in starts]
    good = [r for r in runs if r["ok"]]
    if not good:
        raise NonConvergenceError("all fit starts diverged",
                                  diagnostics=[r.get("message", "") for r in runs])
    best = min(good, key=lambda r: (r["cost"], tuple(r["x"])))
    if options.weighting == "poisson":
        best = _reweight(problem, best, options)
    log.debug("SB%s: best cost %.6g from %d/%d good starts", trace_co.sideband_order, best["cost"],
              len(good), len(runs))
    return _build_result(problem, best, options, len(runs))


def _reweight(problem, best, options):
    """Iterate w = 1/max(model, 1) from ``best`` until the weights stop changing.

    At the fixed point the weighted normal equations coincide with the
    Poisson likelihood score equations, which removes the downward bias of
    data-variance weights in low-count cells.
    """
    for it in range(options.max_reweight):
        change = problem.set_model_weights(best["x"])
        run = _run_start(problem, best["x"], options)
        if not run["ok"]:
            log.warning("reweighting pass %d diverged; keeping the previous solution", it)
            problem.set_model_weights(best["x"])
            best = {**best, "cost": 0.5 * float(np.sum(problem.residuals(best["x"]) ** 2))}
            break
        best = run
        if change < 1e-9:
            break
    return best


def _build_result(problem, best, options, n_starts):
    x = best["x"]
    trace_co, trace_counter = problem.traces
    scales = [t.meta.get("intensity_scale") for t in problem.traces]
    units = "model" if all(scales) else "sqrt_counts"
    amplitudes, phases = {}, {}
    for gi, g in enumerate(GEOMETRIES):
        amps, ph = problem.unpack(x, gi)
        if units == "model":
            amps = amps / np.sqrt(scales[gi])
        amplitudes[g.value] = {w: float(a) for w, a in zip(WAVES, amps)}
        phases[g.value] = {w: float(wrap_phase(p)) for w, p in zip(WAVES, ph)}

    identifiable = {}
    for g in GEOMETRIES:
        a = amplitudes[g.value]
        amax = max(a.values())
        small = {w: a[w] < options.amp_rel_tol * amax for w in WAVES}
        flags = {w: not small[w] for w in WAVES}
        if small["d2"]:
            flags = {w: False for w in WAVES}
        elif all(small[w] for w in WAVES if w != "d2"):
            flags = {"d2": True, "d0": False, "s": False}
        identifiable[g.value] = flags

    n_params = 2 * N_GEOM_PARAMS
    ssr = 2.0 * best["cost"]
    dof = max(problem.n_points - n_params, 1)
    result = FitResult(
        sideband_order=int(trace_co.sideband_order),
        sideband_energy_ev=float(trace_co.sideband_energy_ev),
        omega_ev=float(trace_co.omega_ev),
        amplitudes=amplitudes,
        phases=phases,
        covariance=np.zeros((n_params, n_params)),
        ci95={},
        gauge={
            "convention": "raw fit phases have phi_d2 := 0 in each geometry",
            "null_directions_excluded": ["co: common phase of (d2, d0, s)",
                                         "counter: common phase of (d2, d0, s)"],
            "note": "co and counter phase constants are independent; sum/difference "
                    "separation is meaningful only after fix_gauge",
            "co": {"calibrated": False, "reference_wave": "d2", "offset": 0.0},
            "counter": {"calibrated": False, "reference_wave": "d2", "offset": 0.0},
        },
        goodness={
            "ssr": ssr,
            "weighting": options.weighting,
            "n_points": problem.n_points,
            "n_params": n_params,
            "reduced_chi2": ssr / dof,
            "rms_normalized_residual": float(np.sqrt(ssr / problem.n_points)),
        },
        converged=best["status"] > 0,
        n_starts_used=n_starts,
        identifiable=identifiable,
        amplitude_units=units,
    )
    for g in GEOMETRIES:
        bad = [w for w in WAVES if not identifiable[g.value][w]]
        if bad:
            result.warnings.append(f"{g.value}: phase of {', '.join(bad)} is not identifiable")
    jac = problem.jacobian(x)
    return confidence_intervals(result, jac=jac, scales=scales)


def confidence_intervals(result, jac=None, scales=None, trace_co=None, trace_counter=None, weighting=None):
    """Covariance (J^T W J)^-1 s^2 on the gauge-reduced parameters and 95% half-widths.

    Either pass the weighted Jacobian ``jac`` at the optimum, or the trace
    pair to recompute it.  Covariances are reported for amplitudes (not
    log-amplitudes) and phase differences relative to the gauge reference.
    """
    if jac is None:
        if trace_co is None or trace_counter is None:
            raise DomainError("confidence_intervals needs the Jacobian or the trace pair")
        weighting = weighting or result.goodness["weighting"]
        problem = PairProblem(trace_co, trace_counter, weighting)
        scales = [t.meta.get("intensity_scale") for t in problem.traces]
        x = _result_to_x(result, scales)
        if weighting == "poisson":
            problem.set_model_weights(x)
        jac = problem.jacobian(x)
    n_points, n_params = jac.shape
    dof = max(n_points - n_params, 1)
    s2 = result.goodness["ssr"] / dof
    normal = jac.T @ jac
    warn = []
    eig = np.linalg.eigvalsh(normal)
    if eig[0] <= 1e-12 * max(eig[-1], np.finfo(float).tiny):
        warn.append("normal matrix singular beyond the gauge directions; parameters not all identifiable")
        cov_int = np.linalg.pinv(normal) * s2
    else:
        cov_int = np.linalg.inv(normal) * s2
    # log-amplitude -> amplitude
    t = np.ones(n_params)
    for gi, g in enumerate(GEOMETRIES):
        for k, w in enumerate(WAVES):
            t[gi * N_GEOM_PARAMS + k] = result.amplitudes[g.value][w]
    cov = t[:, None] * cov_int * t[None, :]
    cov = 0.5 * (cov + cov.T)
    half = 1.96 * np.sqrt(np.clip(np.diag(cov), 0, None))
    ci = {name: float(h) for name, h in zip(PARAM_NAMES, half)}
    for g in GEOMETRIES:
        for w in WAVES:
            if not result.identifiable[g.value][w] and w != "d2":
                ci[f"{g.value}.phi_{w}"] = float("inf")
    out = replace(result, covariance=cov, ci95=ci, warnings=list(result.warnings) + warn)
    return out


def _result_to_x(result, scales):
    x = np.zeros(2 * N_GEOM_PARAMS)
    for gi, g in enumerate(GEOMETRIES):
        amps = np.array([result.amplitudes[g.value][w] for w in WAVES])
        if result.amplitude_units == "model" and scales[gi]:
            amps = amps * np.sqrt(scales[gi])
        ph = result.phases[g.value]
        ref = ph["d2"]
        x[gi * N_GEOM_PARAMS:gi * N_GEOM_PARAMS + 3] = np.log(amps)
        x[gi * N_GEOM_PARAMS + 3] = wrap_phase(ph["d0"] - ref)
        x[gi * N_GEOM_PARAMS + 4] = wrap_phase(ph["s"] - ref)
    return x


def fix_gauge(result, calibration, source="user"):
    """Shift each geometry's phases so the named wave matches a reference.

    ``calibration`` maps geometry -> (wave, reference_phase).  All three
    phases of that geometry move by the same constant.
    """
    if not result.converged:
        warnings.warn("calibrating a fit that did not report convergence", stacklevel=2)
    phases = {g: dict(v) for g, v in result.phases.items()}
    gauge = {k: (dict(v) if isinstance(v, dict) else v) for k, v in result.gauge.items()}
    for geometry, (wave, ref) in calibration.items():
        g = Geometry.parse(geometry).value
        if wave not in WAVES:
            raise GaugeError(f"unknown calibration wave {wave!r}")
        if not result.identifiable[g][wave]:
            raise GaugeError(f"{g}: cannot calibrate on {wave}, its phase is not identifiable")
        shift = float(ref) - phases[g][wave]
        phases[g] = {w: float(wrap_phase(p + shift)) for w, p in phases[g].items()}
        phases[g][wave] = float(wrap_phase(ref))
        prev = gauge[g].get("offset", 0.0)
        gauge[g] = {"calibrated": True, "reference_wave": wave, "reference_phase": float(wrap_phase(ref)),
                    "offset": float(wrap_phase(prev + shift)), "source": source}
    return replace(result, phases=phases, gauge=gauge)


def sidecar_calibration(sidecar, order, wave="d2"):
    """Calibration references for one sideband from a ground-truth sidecar."""
    for sb in sidecar["sidebands"]:
        if sb["order"] == order:
            return {g: (wave, sb["geometries"][g]["waves"][wave]["phase"]) for g in ("co", "counter")}
    raise GaugeError(f"sidecar has no calibration for SB{order}")


def model_jacobian_check(trace_co, trace_counter, x, weighting="uniform", rel_step=1e-6):
    """(analytic, central-difference) Jacobians of the residuals at ``x``."""
    problem = PairProblem(trace_co, trace_counter, weighting)
    analytic = problem.jacobian(x)
    numeric = np.zeros_like(analytic)
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        numeric[:, k] = (problem.residuals(xp) - problem.residuals(xm)) / (2 * h)
    return analytic, numeric
