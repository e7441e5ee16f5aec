"""Three-wave sideband interference model.

A sideband photoelectron at azimuth zero is the coherent sum of the d2, d0
and s continuum waves.  The waves reached by IR absorption oscillate as
``exp(+i w tau)`` and those reached by emission as ``exp(-i w tau)``; which
waves sit on which side is fixed by the relative helicity of XUV and IR.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainError, UndefinedPhaseError
from .units import HBAR_EV_AS, wrap_phase

WAVES = ("d2", "d0", "s")
QUANTUM_NUMBERS = {"d2": (2, 2), "d0": (2, 0), "s": (0, 0)}
_NAME_OF = {lm: name for name, lm in QUANTUM_NUMBERS.items()}

_Y00 = 0.5 / np.sqrt(np.pi)
_Y20 = np.sqrt(5.0 / (16.0 * np.pi))
_Y22 = 0.25 * np.sqrt(15.0 / (2.0 * np.pi))


class Geometry(str, Enum):
    CO = "co"
    COUNTER = "counter"

    @classmethod
    def parse(cls, value):
        if isinstance(value, Geometry):
            return value
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"co": cls.CO, "corotating": cls.CO, "counter": cls.COUNTER, "counterrotating": cls.COUNTER}
        try:
            return aliases[key]
        except KeyError:
            raise DomainError(f"unknown geometry {value!r}") from None


GEOMETRIES = (Geometry.CO, Geometry.COUNTER)


def absorption_waves(geometry):
    """Waves populated by IR absorption (carrying exp(+i w tau))."""
    return ("d2",) if Geometry.parse(geometry) is Geometry.CO else ("d0", "s")


def emission_waves(geometry):
    return ("d0", "s") if Geometry.parse(geometry) is Geometry.CO else ("d2",)


def oscillation_signs(geometry):
    """Sign of the w*tau exponent for (d2, d0, s)."""
    absorbed = absorption_waves(geometry)
    return np.array([1.0 if w in absorbed else -1.0 for w in WAVES])


@dataclass(frozen=True)
class PartialWave:
    l: int
    m: int
    amplitude: float
    phase: float = 0.0

    def __post_init__(self):
        if self.l < 0 or abs(self.m) > self.l:
            raise DomainError(f"invalid quantum numbers (l={self.l}, m={self.m})")
        if not self.amplitude >= 0:
            raise DomainError(f"amplitude must be nonnegative, got {self.amplitude}")
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "phase", wrap_phase(self.phase))

    @property
    def name(self):
        try:
            return _NAME_OF[(self.l, self.m)]
        except KeyError:
            raise DomainError(f"(l={self.l}, m={self.m}) is not one of d2, d0, s") from None

    @classmethod
    def named(cls, name, amplitude, phase=0.0):
        l, m = QUANTUM_NUMBERS[name]
        return cls(l, m, amplitude, phase)


@dataclass(frozen=True)
class SidebandModel:
    """Forward model of one sideband in one geometry.

    ``omega`` is the IR photon energy in eV; delays are in attoseconds.
    Waves are stored in the canonical (d2, d0, s) order.
    """

    geometry: Geometry
    waves: tuple
    omega: float
    sideband_energy: float
    _lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "geometry", Geometry.parse(self.geometry))
        waves = tuple(self.waves)
        names = [w.name for w in waves]
        if len(waves) != 3 or sorted(names) != sorted(WAVES):
            raise DomainError(f"a sideband model needs exactly the waves d2, d0, s; got {names}")
        if not self.omega > 0 or not self.sideband_energy > 0:
            raise DomainError("omega and sideband_energy must be positive")
        lookup = dict(zip(names, waves))
        object.__setattr__(self, "waves", tuple(lookup[n] for n in WAVES))
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def from_arrays(cls, geometry, amplitudes, phases, omega, sideband_energy):
        waves = tuple(PartialWave.named(n, a, p) for n, a, p in zip(WAVES, amplitudes, phases))
        return cls(geometry, waves, omega, sideband_energy)

    def __getitem__(self, name):
        return self._lookup[name]

    @property
    def amplitudes(self):
        return np.array([w.amplitude for w in self.waves])

    @property
    def phases(self):
        return np.array([w.phase for w in self.waves])

    def with_phases(self, phases):
        return SidebandModel.from_arrays(self.geometry, self.amplitudes, phases, self.omega, self.sideband_energy)

    def with_geometry(self, geometry):
        return SidebandModel(geometry, self.waves, self.omega, self.sideband_energy)


def sph_harm_theta(l, m, theta):
    """Y_lm(theta, phi=0) for the three sideband waves.

    Orthonormal convention with the Condon-Shortley phase; all three values
    are real at zero azimuth.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0) or np.any(theta > np.pi):
        raise DomainError("theta must lie in [0, pi]")
    if (l, m) == (0, 0):
        out = np.full_like(theta, _Y00)
    elif (l, m) == (2, 0):
        c = np.cos(theta)
        out = _Y20 * (3.0 * c * c - 1.0)
    elif (l, m) == (2, 2):
        s = np.sin(theta)
        out = _Y22 * s * s
    else:
        raise DomainError(f"unsupported (l, m) = ({l}, {m})")
    return float(out) if out.ndim == 0 else out


def wave_basis(theta):
    """Array (..., 3) of Y_lm(theta, 0) in (d2, d0, s) order."""
    return np.stack([sph_harm_theta(*QUANTUM_NUMBERS[w], theta) for w in WAVES], axis=-1)


def point_gram(theta):
    """Outer products Y_i Y_j at each angle, shape (n, 3, 3)."""
    y = wave_basis(np.atleast_1d(np.asarray(theta, dtype=float)))
    return y[..., :, None] * y[..., None, :]


def bin_gram(theta_edges, order=4):
    """Solid-angle integrals of Y_i Y_j over each theta bin, shape (n_bins, 3, 3).

    The integrand is a degree-4 polynomial in cos(theta), so Gauss-Legendre
    quadrature with ``order`` >= 3 nodes in cos(theta) is exact.  The sin(theta)
    Jacobian is included (azimuth fixed, no 2pi factor).
    """
    edges = np.asarray(theta_edges, dtype=float)
    x_hi = np.cos(edges[:-1])
    x_lo = np.cos(edges[1:])
    nodes, weights = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (x_hi - x_lo)
    mid = 0.5 * (x_hi + x_lo)
    x = mid[:, None] + half[:, None] * nodes[None, :]
    theta = np.arccos(np.clip(x, -1.0, 1.0))
    g = point_gram(theta.ravel()).reshape(theta.shape + (3, 3))
    return np.einsum("bq,bqij->bij", half[:, None] * weights[None, :], g)


def delay_phase(omega, tau):
    """Dimensionless w*tau for photon energy in eV and delay in as."""
    return omega * np.asarray(tau, dtype=float) / HBAR_EV_AS


def gram_intensity(gram, amplitudes, phases, signs, wt):
    """Sum_ij G_ij A_i A_j cos(phi_i - phi_j + (s_i - s_j) w tau).

    ``gram`` is (n, 3, 3), ``wt`` is (T,); returns (n, T).
    """
    a = np.asarray(amplitudes, dtype=float)
    d = (np.subtract.outer(phases, phases)[:, :, None]
         + np.subtract.outer(signs, signs)[:, :, None] * np.asarray(wt)[None, None, :])
    return np.einsum("bij,ij,ijt->bt", gram, np.outer(a, a), np.cos(d))


def intensity(model, theta, tau):
    """Sideband yield per unit solid angle at fixed azimuth.

    Broadcasts over ``theta`` (radians) and ``tau`` (attoseconds) and returns
    an array of shape ``broadcast(theta, tau)``.
    """
    theta, tau = np.broadcast_arrays(np.asarray(theta, dtype=float), np.asarray(tau, dtype=float))
    y = wave_basis(theta)
    signs = oscillation_signs(model.geometry)
    wt = delay_phase(model.omega, tau)
    c = model.amplitudes * np.exp(1j * model.phases)
    field_ = np.sum(y * c * np.exp(1j * signs * wt[..., None]), axis=-1)
    out = np.abs(field_) ** 2
    return float(out) if out.ndim == 0 else out


def rabbit_coefficient(model, gram):
    """Complex 2w coefficient C per gram entry; yield = DC + 2 Re(C exp(2i w tau))."""
    c = model.amplitudes * np.exp(1j * model.phases)
    signs = oscillation_signs(model.geometry)
    up = signs > 0
    return np.einsum("bij,i,j->b", gram[:, up][:, :, ~up], c[up], np.conj(c[~up]))


def rabbit_phase_analytic(model, theta):
    """Angle-resolved RABBIT phase from the analytic cross terms.

    Defined so that ``intensity = const + 2|C| cos(2 w tau + phase)``; equals
    arg(absorption-side sum) - arg(emission-side sum).
    """
    scalar = np.ndim(theta) == 0
    gram = point_gram(theta)
    coeff = rabbit_coefficient(model, gram)
    dc = np.einsum("bii,i->b", gram, model.amplitudes ** 2)
    if np.any(np.abs(coeff) <= 1e-15 * np.maximum(dc, np.finfo(float).tiny)):
        raise UndefinedPhaseError("2w oscillation amplitude vanishes; RABBIT phase undefined")
    out = wrap_phase(np.angle(coeff))
    return float(out[0]) if scalar else out
