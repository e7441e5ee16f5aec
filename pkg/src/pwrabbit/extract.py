"""Model-free observables from RABBIT traces.

Per theta bin the delay-dependent counts are reduced to a DC offset and a
complex 2w coefficient, ``counts(tau) ~ offset + 2*amp*cos(2 w tau + phase)``.
"""
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, InsufficientSamplingError
from .model import delay_phase
from .units import wrap_phase


@dataclass
class AngularPhaseProfile:
    theta_centers: np.ndarray
    phase: np.ndarray
    amplitude_2w: np.ndarray
    offset_dc: np.ndarray
    sigma_phase: np.ndarray
    flagged: np.ndarray
    low_snr: np.ndarray
    geometry: str = ""
    sideband_order: int = -1
    method: str = "dft"

    def __post_init__(self):
        n = len(self.theta_centers)
        for name in ("phase", "amplitude_2w", "offset_dc", "sigma_phase", "flagged", "low_snr"):
            if len(getattr(self, name)) != n:
                raise DomainError(f"profile column {name} has the wrong length")


def _lstsq_2w(counts, wt):
    """Least-squares fit of a + b cos(2wt) + c sin(2wt) at the known frequency."""
    design = np.column_stack([np.ones_like(wt), np.cos(2 * wt), np.sin(2 * wt)])
    coef, *_ = np.linalg.lstsq(design, counts.T, rcond=None)
    dc = coef[0]
    # b cos x + c sin x = 2|C| cos(x + arg C) with C = (b - i c) / 2
    return dc, 0.5 * (coef[1] - 1j * coef[2])


def fourier_rabbit(trace, zero_tol=1e-12):
    """Angle-resolved RABBIT phase by single-bin DFT at exactly 2w.

    Grids that do not span an integer number of 2w periods fall back to a
    least-squares cosine fit at the same fixed frequency.  Bins whose 2w
    amplitude is numerically zero are flagged and carry a NaN phase.
    """
    n_tau = trace.tau_samples.size
    if n_tau < 6:
        raise InsufficientSamplingError(f"{n_tau} tau samples; at least 6 are required")
    wt = delay_phase(trace.omega_ev, trace.tau_samples)
    if trace.spans_integer_periods():
        dc = trace.counts.mean(axis=1)
        coeff = trace.counts @ np.exp(-2j * wt) / n_tau
        method = "dft"
    else:
        dc, coeff = _lstsq_2w(trace.counts, wt)
        method = "lstsq"
    amp = np.abs(coeff)
    flagged = amp <= zero_tol * np.maximum(np.abs(dc), np.finfo(float).tiny)
    phase = np.where(flagged, np.nan, wrap_phase(np.angle(coeff)))
    return AngularPhaseProfile(
        theta_centers=trace.theta_centers,
        phase=phase,
        amplitude_2w=np.where(flagged, 0.0, amp),
        offset_dc=dc,
        sigma_phase=np.full(amp.shape, np.nan),
        flagged=flagged,
        low_snr=flagged.copy(),
        geometry=trace.geometry.value,
        sideband_order=trace.sideband_order,
        method=method,
    )


def phase_uncertainty(trace, profile, k_sigma=3.0):
    """Background-over-amplitude phase error per bin.

    For Poisson counts the single-bin DFT coefficient has variance DC/(2N)
    per quadrature, so ``sigma = sqrt(total_bin_counts / 2) / (N * amp)``.
    Bins with ``amp < k_sigma * sqrt(DC / (2N))`` are marked ``low_snr``;
    flagged (zero-amplitude) bins get an infinite sigma.
    """
    n_tau = trace.tau_samples.size
    total = trace.counts.sum(axis=1)
    noise = np.sqrt(np.clip(total, 0, None) / 2.0) / n_tau
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma = np.where(profile.flagged, np.inf, noise / profile.amplitude_2w)
    low = profile.flagged | (profile.amplitude_2w < k_sigma * noise)
    return replace(profile, sigma_phase=sigma, low_snr=low)


def extract_profile(trace, k_sigma=3.0):
    return phase_uncertainty(trace, fourier_rabbit(trace), k_sigma)


def delay_trace_average(trace, integrate_theta=False, physical=False):
    """Mean over tau of the counts per theta bin.

    ``integrate_theta`` sums the bins; ``physical`` divides by the trace's
    ``intensity_scale`` to return model-yield units.
    """
    avg = trace.counts.mean(axis=1)
    if integrate_theta:
        avg = avg.sum()
    if physical:
        scale = trace.meta.get("intensity_scale")
        if not scale:
            raise DomainError("trace carries no intensity_scale")
        avg = avg / scale
    return avg


def sideband_spectrum(traces):
    """Delay-averaged, angle-integrated yields of one geometry, sorted by energy."""
    rows = sorted((t.sideband_energy_ev, t.sideband_order,
                   delay_trace_average(t, integrate_theta=True, physical=True)) for t in traces)
    return (np.array([r[0] for r in rows]), np.array([r[1] for r in rows], dtype=int),
            np.array([r[2] for r in rows]))


@dataclass
class CDResult:
    cd: np.ndarray
    flagged: np.ndarray
    norm_co: np.ndarray
    norm_counter: np.ndarray


def cd_spectrum(co_spectra, counter_spectra, energies_co=None, energies_counter=None):
    """Energy-resolved circular dichroism (Y_co - Y_counter) / (Y_co + Y_counter).

    Each spectrum is first normalised to its own count sum.  Bins with zero
    total are flagged and return NaN.
    """
    co = np.asarray(co_spectra, dtype=float)
    counter = np.asarray(counter_spectra, dtype=float)
    if co.shape != counter.shape:
        raise DomainError("co and counter spectra are on different grids")
    if energies_co is not None or energies_counter is not None:
        if energies_co is None or energies_counter is None or not np.allclose(
                energies_co, energies_counter, rtol=0, atol=1e-9):
            raise DomainError("co and counter spectra are on different energy grids")
    if np.any(co < 0) or np.any(counter < 0):
        raise DomainError("spectra must be nonnegative")
    sum_co, sum_counter = co.sum(), counter.sum()
    if sum_co <= 0 or sum_counter <= 0:
        raise DomainError("a spectrum has zero total counts")
    a = co / sum_co
    b = counter / sum_counter
    total = a + b
    flagged = total <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        cd = np.where(flagged, np.nan, (a - b) / total)
    return CDResult(cd, flagged, a, b)
