"""Physical constants and phase arithmetic.

Energies are in eV, delays in attoseconds.  ``HBAR_EV_AS`` converts between
the two: a phase ``E * t / HBAR_EV_AS`` is dimensionless.
"""
import numpy as np
from scipy import constants as sc

HBAR_EV_AS = sc.hbar / sc.e * 1e18
HARTREE_EV = sc.physical_constants["Hartree energy in eV"][0]
HELIUM_IP_EV = 24.587389011


def photon_energy_ev(wavelength_nm):
    """Photon energy in eV for a vacuum wavelength in nm."""
    return sc.h * sc.c / sc.e / (wavelength_nm * 1e-9)


def ir_period_as(omega_ev):
    """Optical period of a photon of energy ``omega_ev`` in attoseconds."""
    return 2 * np.pi * HBAR_EV_AS / omega_ev


def wrap_phase(phase):
    """Reduce phase(s) to the canonical range (-pi, pi]."""
    out = np.pi - np.mod(np.pi - np.asarray(phase, dtype=float), 2 * np.pi)
    if np.ndim(out) == 0:
        return float(out)
    return out


def phase_distance(a, b):
    """Branch-safe distance min(|a-b|, 2pi-|a-b|) between phases."""
    d = np.abs(np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), 2 * np.pi))
    out = np.minimum(d, 2 * np.pi - d)
    if np.ndim(out) == 0:
        return float(out)
    return out
