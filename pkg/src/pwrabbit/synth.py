"""Ground truth and synthetic RABBIT campaigns.

The generator stands in for the experiment: Wigner phases come from the
l=1 Coulomb phase shift (or a linear / tabulated override), CC phases from a
smooth parametric family with absorption/emission antisymmetry enforced, and
amplitudes from Fano-ordered anchors.  Traces are bin-integrated over theta
with the solid-angle Jacobian and optionally Poisson-sampled.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import mpmath
import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from .errors import DomainError
from .model import (
    GEOMETRIES,
    QUANTUM_NUMBERS,
    WAVES,
    Geometry,
    SidebandModel,
    absorption_waves,
    bin_gram,
    delay_phase,
    gram_intensity,
    oscillation_signs,
)
from .units import HARTREE_EV, HBAR_EV_AS, HELIUM_IP_EV, ir_period_as, photon_energy_ev, wrap_phase

DEFAULT_ORDERS = (18, 20, 22, 24, 26, 28)

# Fano propensity: the absorption-side wave(s) dominate each geometry.
DEFAULT_AMPLITUDE_ANCHORS = {
    18: {"co": (1.0, 0.4, 0.55), "counter": (0.45, 0.75, 0.35)},
    28: {"co": (1.0, 0.5, 0.6), "counter": (0.8, 0.7, 0.45)},
}


@dataclass(frozen=True)
class WignerModel:
    """Wigner phase of the s -> p1 transition as a function of electron energy.

    kind: "coulomb" (sigma_1 with effective charge ``charge``), "linear"
    (``slope * E + intercept``) or "table" (cubic spline through the table).
    """

    kind: str = "coulomb"
    charge: float = 1.0
    slope: float = 0.0
    intercept: float = 0.0
    table_energies_ev: tuple = ()
    table_phases: tuple = ()

    def __post_init__(self):
        if self.kind not in ("coulomb", "linear", "table"):
            raise DomainError(f"unknown Wigner model {self.kind!r}")
        if self.kind == "table" and len(self.table_energies_ev) < 4:
            raise DomainError("tabulated Wigner phases need at least 4 points")
        if self.charge < 0:
            raise DomainError("effective charge must be nonnegative")

    def _spline(self):
        return CubicSpline(np.asarray(self.table_energies_ev, float), np.asarray(self.table_phases, float))

    def phase(self, energy_ev):
        if self.kind == "coulomb":
            return coulomb_wigner_phase(energy_ev, self.charge)
        if self.kind == "linear":
            return self.slope * np.asarray(energy_ev, dtype=float) + self.intercept
        return self._spline()(energy_ev)

    def derivative(self, energy_ev, n=1):
        """n-th energy derivative in rad/eV^n."""
        if self.kind == "coulomb":
            if n == 1:
                return coulomb_phase_derivative(energy_ev, self.charge)
            return _coulomb_derivative_mp(energy_ev, self.charge, n)
        if self.kind == "linear":
            return self.slope if n == 1 else 0.0
        return float(self._spline()(energy_ev, n))


@dataclass(frozen=True)
class CCModel:
    """Parametric continuum-continuum phase g(E, l).

    g(E, l) = -strength * (reference_ev / E)**exponent + l_offset * [l == 0],
    strictly increasing in E.  With ``antisymmetric`` on, both pathways of a
    sideband evaluate g at E_sideband - w/2 so cc_abs = -cc_em exactly.
    """

    strength: float = 0.6
    reference_ev: float = 1.0
    exponent: float = 0.5
    l_offset: float = 0.05
    antisymmetric: bool = True

    def g(self, energy_ev, l):
        if energy_ev <= 0:
            raise DomainError("CC phase evaluated at nonpositive energy")
        base = -self.strength * (self.reference_ev / energy_ev) ** self.exponent
        return base + (self.l_offset if l == 0 else 0.0)


@dataclass(frozen=True)
class AmplitudeModel:
    """Per-order (d2, d0, s) amplitudes per geometry.

    Anchors are linearly interpolated in sideband order and held constant
    beyond the outermost anchors.
    """

    anchors: dict = field(default_factory=lambda: dict(DEFAULT_AMPLITUDE_ANCHORS))

    def __post_init__(self):
        if not self.anchors:
            raise DomainError("amplitude model needs at least one anchor")
        anchors = {int(k): {g: tuple(float(a) for a in v[g]) for g in ("co", "counter")}
                   for k, v in self.anchors.items()}
        object.__setattr__(self, "anchors", anchors)
        for order, entry in anchors.items():
            for g in ("co", "counter"):
                vals = entry[g]
                if len(vals) != 3 or min(vals) < 0:
                    raise DomainError(f"anchor {order}/{g}: need three nonnegative amplitudes")

    def amplitudes(self, order, geometry):
        g = Geometry.parse(geometry).value
        keys = sorted(self.anchors)
        table = np.array([self.anchors[k][g] for k in keys], dtype=float)
        return np.array([np.interp(order, keys, table[:, i]) for i in range(3)])


@dataclass(frozen=True)
class GroundTruth:
    sideband_orders: tuple = DEFAULT_ORDERS
    ir_photon_ev: float = field(default_factory=lambda: photon_energy_ev(799.0))
    ionization_potential_ev: float = HELIUM_IP_EV
    wigner_model: WignerModel = field(default_factory=WignerModel)
    cc_model: CCModel = field(default_factory=CCModel)
    amplitude_model: AmplitudeModel = field(default_factory=AmplitudeModel)
    near_threshold_floor_ev: float = 0.5
    main_peak_yield: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "sideband_orders", tuple(int(n) for n in self.sideband_orders))
        if not self.ir_photon_ev > 0:
            raise DomainError("IR photon energy must be positive")
        for n in self.sideband_orders:
            if n % 2:
                raise DomainError(f"sideband order {n} is odd")
            if self.sideband_energy(n) <= 0:
                raise DomainError(f"SB{n} lies below threshold")

    def sideband_energy(self, order):
        return order * self.ir_photon_ev - self.ionization_potential_ev

    def near_threshold(self, order):
        return self.sideband_energy(order) - self.ir_photon_ev < self.near_threshold_floor_ev


def coulomb_wigner_phase(energy_ev, charge=1.0):
    """Coulomb phase shift sigma_1(k) = arg Gamma(2 - iZ/k), k in atomic units.

    The continuous branch of log-Gamma is used, so the result is smooth and
    may drop below -pi close to threshold.
    """
    e = np.asarray(energy_ev, dtype=float)
    if np.any(e <= 0):
        raise DomainError("Coulomb phase needs positive electron energy")
    k = np.sqrt(2.0 * e / HARTREE_EV)
    out = special.loggamma(2.0 - 1j * charge / k).imag
    return float(out) if out.ndim == 0 else out


def coulomb_phase_derivative(energy_ev, charge=1.0):
    """d sigma_1 / dE in rad/eV: Z Re psi(2 - iZ/k) / (k^3 E_h)."""
    e = np.asarray(energy_ev, dtype=float)
    if np.any(e <= 0):
        raise DomainError("Coulomb phase needs positive electron energy")
    k = np.sqrt(2.0 * e / HARTREE_EV)
    out = charge * special.psi(2.0 - 1j * charge / k).real / (k ** 3 * HARTREE_EV)
    return float(out) if out.ndim == 0 else out


def _coulomb_derivative_mp(energy_ev, charge, n, dps=30):
    with mpmath.workdps(dps):
        hartree = mpmath.mpf(HARTREE_EV)

        def sigma(e):
            k = mpmath.sqrt(2 * e / hartree)
            return mpmath.im(mpmath.loggamma(2 - 1j * charge / k))

        return float(mpmath.diff(sigma, mpmath.mpf(energy_ev), n))


def wigner_delay_as(truth, energy_ev):
    """Analytic Wigner delay hbar * dW/dE in attoseconds."""
    return HBAR_EV_AS * truth.wigner_model.derivative(energy_ev, 1)


def cc_phase_truth(e_initial, e_final, l_final, params, omega):
    """Ground-truth CC phase for the IR transition e_initial -> e_final.

    Absorption (e_final > e_initial) returns +g, emission -g, with ``g`` from
    :class:`CCModel`.
    """
    if e_initial <= 0 or e_final <= 0:
        raise DomainError("CC phase needs positive energies")
    gap = e_final - e_initial
    if abs(abs(gap) - omega) > 1e-9 * max(omega, 1.0):
        raise DomainError(f"energy gap {gap} differs from the IR photon energy {omega}")
    if gap > 0:
        return params.g(e_final - 0.5 * omega, l_final)
    if params.antisymmetric:
        return -params.g(e_final - 0.5 * omega, l_final)
    return -params.g(e_final + 0.5 * omega, l_final)


def wave_truth_phase(truth, order, wave, pathway):
    """-l pi/2 + W(E_k -/+ w) + CC(E_k -/+ w -> E_k, l), unwrapped."""
    ek = truth.sideband_energy(order)
    w = truth.ir_photon_ev
    l = QUANTUM_NUMBERS[wave][0]
    e_int = ek - w if pathway == "absorption" else ek + w
    return (-l * np.pi / 2 + float(truth.wigner_model.phase(e_int))
            + cc_phase_truth(e_int, ek, l, truth.cc_model, w))


def assemble_sideband_model(truth, order, geometry):
    """Build the three-wave model of one sideband in one geometry from the truth."""
    if order not in truth.sideband_orders:
        raise DomainError(f"SB{order} is not part of the ground truth")
    geometry = Geometry.parse(geometry)
    absorbed = absorption_waves(geometry)
    phases = [wave_truth_phase(truth, order, w, "absorption" if w in absorbed else "emission") for w in WAVES]
    amps = truth.amplitude_model.amplitudes(order, geometry)
    return SidebandModel.from_arrays(geometry, amps, phases, truth.ir_photon_ev, truth.sideband_energy(order))


@dataclass
class TraceGrid:
    """Counts on a (theta-bin, tau) grid for one sideband in one geometry.

    ``tau_samples`` are in attoseconds.  ``meta`` carries at least
    ``intensity_scale`` (counts per unit model yield) when known.
    """

    geometry: Geometry
    sideband_order: int
    sideband_energy_ev: float
    omega_ev: float
    theta_edges: np.ndarray
    tau_samples: np.ndarray
    counts: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.geometry = Geometry.parse(self.geometry)
        self.theta_edges = np.asarray(self.theta_edges, dtype=float)
        self.tau_samples = np.asarray(self.tau_samples, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        if self.theta_edges.ndim != 1 or np.any(np.diff(self.theta_edges) <= 0):
            raise DomainError("theta_edges must be strictly ascending")
        if self.counts.shape != (self.theta_edges.size - 1, self.tau_samples.size):
            raise DomainError(f"counts shape {self.counts.shape} does not match the axes")
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise DomainError("counts must be finite and nonnegative")
        if self.tau_samples.size > 2:
            step = np.diff(self.tau_samples)
            if np.max(np.abs(step - step[0])) > 1e-9 * max(abs(step[0]), 1.0):
                raise DomainError("tau samples must be uniform")

    @property
    def theta_centers(self):
        return 0.5 * (self.theta_edges[1:] + self.theta_edges[:-1])

    @property
    def tau_step(self):
        return float(self.tau_samples[1] - self.tau_samples[0]) if self.tau_samples.size > 1 else 0.0

    def n_periods_2w(self):
        """Number of 2w periods spanned by the samples (N * step / period)."""
        return self.tau_samples.size * self.tau_step / (0.5 * ir_period_as(self.omega_ev))

    def spans_integer_periods(self, tol=1e-6):
        n = self.n_periods_2w()
        return n >= 1 - tol and abs(n - round(n)) < tol

    def scaled(self, factor):
        """Copy with counts and ``intensity_scale`` multiplied by ``factor``."""
        meta = dict(self.meta)
        if "intensity_scale" in meta:
            meta["intensity_scale"] = meta["intensity_scale"] * factor
        return replace(self, counts=self.counts * factor, meta=meta)

    def same_axes(self, other):
        return (self.theta_edges.shape == other.theta_edges.shape
                and np.array_equal(self.theta_edges, other.theta_edges)
                and np.array_equal(self.tau_samples, other.tau_samples)
                and self.omega_ev == other.omega_ev)


@dataclass(frozen=True)
class GridSpec:
    theta_bins: int = 60
    tau_points: int = 24
    tau_cycles: int = 1


@dataclass(frozen=True)
class NoiseSpec:
    mode: str = "none"
    counts_budget: float = 1e6
    seed: int = 0


def tau_axis(omega_ev, tau_points, tau_cycles=1):
    """Uniform delays covering ``tau_cycles`` IR cycles (2*tau_cycles 2w periods)."""
    return np.arange(tau_points) * (tau_cycles * ir_period_as(omega_ev) / tau_points)


def expected_counts(model, theta_edges, tau_samples):
    """Bin-integrated model yield (n_bins, n_tau), solid-angle Jacobian included."""
    gram = bin_gram(theta_edges)
    return gram_intensity(gram, model.amplitudes, model.phases, oscillation_signs(model.geometry),
                          delay_phase(model.omega, tau_samples))


def generate_trace(model, theta_bins=60, tau_points=24, counts_budget=1e6, noise="none", seed=0,
                   tau_cycles=1, order=None):
    """Sample one sideband model on a (theta, tau) grid.

    Expected counts are scaled so their grid total equals ``counts_budget``;
    with ``noise="poisson"`` every cell is an independent Poisson draw from
    ``numpy.random.default_rng(seed)`` (``seed`` may be an int or a sequence
    of ints).
    """
    if tau_points < 6:
        raise DomainError("need at least 6 tau samples")
    if theta_bins < 3:
        raise DomainError("need at least 3 theta bins")
    if not counts_budget > 0:
        raise DomainError("counts_budget must be positive")
    if noise not in ("none", "poisson"):
        raise DomainError(f"unknown noise mode {noise!r}")
    theta_edges = np.linspace(0.0, np.pi, theta_bins + 1)
    tau = tau_axis(model.omega, tau_points, tau_cycles)
    mu = expected_counts(model, theta_edges, tau)
    mu = np.clip(mu, 0.0, None)
    total = mu.sum()
    if not total > 0:
        raise DomainError("model has zero total yield")
    scale = counts_budget / total
    counts = mu * scale
    if noise == "poisson":
        counts = np.random.default_rng(seed).poisson(counts).astype(float)
    meta = {
        "seed": list(seed) if isinstance(seed, (list, tuple)) else seed,
        "noise": noise,
        "counts_budget": float(counts_budget),
        "intensity_scale": float(scale),
    }
    return TraceGrid(model.geometry, order if order is not None else -1, model.sideband_energy, model.omega,
                     theta_edges, tau, counts, meta)


def trace_seed(master_seed, order, geometry):
    """Per-grid random stream key derived from (master seed, order, geometry)."""
    return [int(master_seed), int(order), GEOMETRIES.index(Geometry.parse(geometry))]


def _max_abs_derivative(wigner, lo, hi, n, samples=65):
    grid = np.linspace(lo, hi, samples)
    return 1.1 * max(abs(wigner.derivative(e, n)) for e in grid)


def separation_bounds(truth):
    """Oracle error bounds for the sum/difference separation on the ladder.

    Returns per-sideband Wigner curvature and CC-substitution bounds (rad)
    and per-midpoint Wigner-delay truncation bounds (as), matching the
    stencils used by :mod:`pwrabbit.separate` (central differences inside the
    ladder, one-sided at its ends, forward differences at midpoints).
    """
    w = truth.ir_photon_ev
    wm = truth.wigner_model
    orders = sorted(truth.sideband_orders)
    energies = [truth.sideband_energy(n) for n in orders]
    rows = []
    for i, e in enumerate(energies):
        curv = abs(float(wm.phase(e + w)) + float(wm.phase(e - w)) - 2 * float(wm.phase(e))) / 2
        if len(energies) < 2:
            cc_bound = float("nan")
        elif 0 < i < len(energies) - 1:
            cc_bound = 1.25 * w ** 3 * _max_abs_derivative(wm, e - 3 * w, e + 3 * w, 3)
        elif i == 0:
            cc_bound = w ** 2 * _max_abs_derivative(wm, e - w, e + 3 * w, 2)
        else:
            cc_bound = w ** 2 * _max_abs_derivative(wm, e - 3 * w, e + w, 2)
        rows.append({"wigner_curvature_bound": curv, "cc_substitution_bound": cc_bound})
    mids = []
    for e0, e1 in zip(energies[:-1], energies[1:]):
        m = 0.5 * (e0 + e1)
        h = 0.5 * (e1 - e0) + w  # half-width of the effective central stencil on W
        m3 = _max_abs_derivative(wm, m - h, m + h, 3)
        mids.append({"energy_ev": m, "wigner_delay_bound_as": HBAR_EV_AS * h * h / 6 * m3})
    return rows, mids


def build_sidecar(truth, traces=()):
    """Machine-readable ground-truth record for scoring."""
    w = truth.ir_photon_ev
    orders = sorted(truth.sideband_orders)
    bounds, mids = separation_bounds(truth) if orders else ([], [])
    scales = {(t.sideband_order, t.geometry.value): t.meta.get("intensity_scale") for t in traces}
    sidebands = []
    for i, n in enumerate(orders):
        ek = truth.sideband_energy(n)
        geoms = {}
        for g in GEOMETRIES:
            m = assemble_sideband_model(truth, n, g)
            geoms[g.value] = {
                "waves": {wv: {"amplitude": m[wv].amplitude, "phase": m[wv].phase} for wv in WAVES},
                "intensity_scale": scales.get((n, g.value)),
            }
        cc = {
            pathway: {f"l{l}": cc_phase_truth(ek + sgn * w, ek, l, truth.cc_model, w) for l in (0, 2)}
            for pathway, sgn in (("absorption", -1), ("emission", +1))
        }
        sidebands.append({
            "order": n,
            "energy_ev": ek,
            "near_threshold": bool(truth.near_threshold(n)),
            "wigner_phase": float(truth.wigner_model.phase(ek)),
            "wigner_phase_minus": float(truth.wigner_model.phase(ek - w)),
            "wigner_phase_plus": float(truth.wigner_model.phase(ek + w)),
            "wigner_delay_as": wigner_delay_as(truth, ek),
            "cc_phase": cc,
            "geometries": geoms,
            **bounds[i],
        })
    midpoints = [{**mid, "wigner_delay_as": wigner_delay_as(truth, mid["energy_ev"])} for mid in mids]
    return {
        "format": "pwrabbit-truth/1",
        "ir_photon_ev": w,
        "ionization_potential_ev": truth.ionization_potential_ev,
        "cc_antisymmetric": bool(truth.cc_model.antisymmetric),
        "wigner_model": truth.wigner_model.kind,
        "sidebands": sidebands,
        "midpoints": midpoints,
    }


def main_peak_lines(truth):
    """Geometry-independent harmonic (main-peak) lines bracketing the ladder."""
    if not truth.sideband_orders or truth.main_peak_yield <= 0:
        return []
    orders = sorted(truth.sideband_orders)
    harmonics = sorted({n - 1 for n in orders} | {n + 1 for n in orders})
    return [(q, q * truth.ir_photon_ev - truth.ionization_potential_ev, truth.main_peak_yield)
            for q in harmonics if q * truth.ir_photon_ev > truth.ionization_potential_ev]


def generate_campaign(truth, grid=GridSpec(), noise=NoiseSpec(), workers=1):
    """Traces for every (sideband, geometry) plus the ground-truth sidecar.

    All grids share theta/tau axes and tau origin.  Random streams are keyed
    by (seed, order, geometry), so ``workers`` does not change the output.
    """
    jobs = [(n, g) for n in sorted(truth.sideband_orders) for g in GEOMETRIES]

    def run(job):
        n, g = job
        return generate_trace(assemble_sideband_model(truth, n, g), grid.theta_bins, grid.tau_points,
                              noise.counts_budget, noise.mode, trace_seed(noise.seed, n, g),
                              grid.tau_cycles, order=n)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(run, jobs))
    else:
        traces = [run(j) for j in jobs]
    return traces, build_sidecar(truth, traces)


def truth_phase_table(truth):
    """Canonical truth phases {(order, geometry): array(d2, d0, s)}."""
    return {(n, g.value): assemble_sideband_model(truth, n, g).phases
            for n in truth.sideband_orders for g in GEOMETRIES}
