import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from pwrabbit.errors import DomainError, UndefinedPhaseError
from pwrabbit.model import (
    Geometry,
    PartialWave,
    SidebandModel,
    bin_gram,
    delay_phase,
    intensity,
    oscillation_signs,
    rabbit_phase_analytic,
    sph_harm_theta,
)
from pwrabbit.units import HBAR_EV_AS, phase_distance, wrap_phase

OMEGA = 1.5517421581
angles = st.floats(0.0, np.pi)
phases = st.floats(-np.pi, np.pi)
amps = st.floats(0.0, 2.0)


def model_from(geometry, a, p, omega=OMEGA):
    return SidebandModel.from_arrays(geometry, a, p, omega, 3.34)


def dft_phase(model, theta, n=48):
    period = np.pi * HBAR_EV_AS / model.omega
    tau = np.arange(n) * period / n
    y = intensity(model, theta, tau)
    c = y @ np.exp(-2j * delay_phase(model.omega, tau)) / n
    return np.angle(c)


def test_closed_form_harmonics():
    assert sph_harm_theta(0, 0, 1.234) == pytest.approx(1 / (2 * np.sqrt(np.pi)), abs=1e-15)
    assert sph_harm_theta(0, 0, 0.3) == pytest.approx(0.2820948, abs=1e-7)
    assert sph_harm_theta(2, 2, 0.0) == 0.0
    assert sph_harm_theta(2, 0, np.pi / 2) == pytest.approx(-0.3153916, abs=1e-7)


@pytest.mark.parametrize("l,m", [(0, 0), (2, 0), (2, 2)])
def test_harmonics_match_scipy(l, m):
    theta = np.linspace(0, np.pi, 17)
    if hasattr(special, "sph_harm_y"):
        ref = special.sph_harm_y(l, m, theta, 0.0)
    else:
        ref = special.sph_harm(m, l, 0.0, theta)
    np.testing.assert_allclose(sph_harm_theta(l, m, theta), ref.real, atol=1e-14)
    assert np.max(np.abs(ref.imag)) < 1e-14


def test_harmonics_orthonormal():
    # at phi = 0 only same-m pairs are orthogonal in theta alone; |e^{i m phi}|^2 integrates to 2 pi
    def overlap(a, b):
        f = lambda t: sph_harm_theta(*a, t) * sph_harm_theta(*b, t) * np.sin(t)
        return 2 * np.pi * integrate.quad(f, 0, np.pi)[0]

    for lm in [(0, 0), (2, 0), (2, 2)]:
        assert overlap(lm, lm) == pytest.approx(1.0, abs=1e-12)
    assert overlap((0, 0), (2, 0)) == pytest.approx(0.0, abs=1e-12)


def test_harmonic_errors():
    with pytest.raises(DomainError):
        sph_harm_theta(1, 0, 0.5)
    with pytest.raises(DomainError):
        sph_harm_theta(0, 0, -0.1)


def test_partial_wave_validation():
    with pytest.raises(DomainError):
        PartialWave(2, 3, 1.0)
    with pytest.raises(DomainError):
        PartialWave(2, 0, -1.0)
    assert PartialWave(2, 0, 1.0, 3 * np.pi).phase == pytest.approx(np.pi)
    assert PartialWave(0, 0, 1.0, -np.pi).phase == pytest.approx(np.pi)


def test_sideband_model_validation():
    with pytest.raises(DomainError):
        SidebandModel("co", (PartialWave(2, 2, 1), PartialWave(2, 2, 1), PartialWave(0, 0, 1)), OMEGA, 3.0)
    with pytest.raises(DomainError):
        model_from("co", [1, 1, 1], [0, 0, 0], omega=0.0)
    with pytest.raises(DomainError):
        Geometry.parse("sideways")
    m = SidebandModel("counter", (PartialWave(0, 0, 0.3), PartialWave(2, 2, 1.0), PartialWave(2, 0, 0.5)), OMEGA, 3)
    assert [w.name for w in m.waves] == ["d2", "d0", "s"]
    assert Geometry.parse("Counter-Rotating") is Geometry.COUNTER


def test_oscillation_signs():
    np.testing.assert_array_equal(oscillation_signs("co"), [1, -1, -1])
    np.testing.assert_array_equal(oscillation_signs("counter"), [-1, 1, 1])


def _cosine_fit(y, wt):
    design = np.column_stack([np.ones_like(wt), np.cos(2 * wt), np.sin(2 * wt)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def test_two_wave_reduction():
    m = model_from("co", [1.0, 1.0, 0.0], [0.3, 0.3, 0.0])
    tau = np.linspace(0, 2000, 97)
    wt = delay_phase(OMEGA, tau)
    # Y22 Y20 > 0 below the Y20 node: pure c1 + c2 cos(2 w tau) with c2 > 0
    y = intensity(m, np.radians(30.0), tau)
    c1, c2, c3 = _cosine_fit(y, wt)
    assert c2 > 0 and abs(c3) < 1e-12
    np.testing.assert_allclose(y, c1 + c2 * np.cos(2 * wt), atol=1e-12)
    # in the polarization plane Y20 < 0 flips the cross term: offset pi
    y = intensity(m, np.pi / 2, tau)
    c1, c2, c3 = _cosine_fit(y, wt)
    assert c2 < 0 and abs(c3) < 1e-12
    np.testing.assert_allclose(y, c1 + c2 * np.cos(2 * wt), atol=1e-12)


def test_zero_amplitudes():
    m = model_from("counter", [0, 0, 0], [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(intensity(m, np.linspace(0, np.pi, 5)[:, None], np.linspace(0, 900, 7)), 0.0)
    with pytest.raises(UndefinedPhaseError):
        rabbit_phase_analytic(m, 1.0)


def test_intensity_broadcasts():
    m = model_from("co", [1, 0.5, 0.3], [0, 1, 2])
    out = intensity(m, np.linspace(0, np.pi, 4)[:, None], np.linspace(0, 1000, 6)[None, :])
    assert out.shape == (4, 6)
    assert isinstance(intensity(m, 0.4, 10.0), float)


def test_single_cross_term_phase():
    pa, pe = 0.7, -1.9
    m = model_from("co", [1.0, 0.0, 0.8], [pa, 0.0, pe])
    assert phase_distance(rabbit_phase_analytic(m, 1.1), pa - pe) < 1e-14


def test_equal_d2_s_isotropic():
    m = model_from("co", [1.0, 0.0, 1.0], [0.0, 0.0, 0.0])
    theta = np.linspace(1e-3, np.pi - 1e-3, 181)
    ph = rabbit_phase_analytic(m, theta)
    assert np.std(ph) < 1e-9
    assert np.max(np.abs(ph)) < 1e-12


def test_equal_d2_d0_pi_step():
    for g in ("co", "counter"):
        m = model_from(g, [1.0, 1.0, 0.0], [0.0, 0.0, 0.0])
        axis_side = rabbit_phase_analytic(m, np.radians([1e-4, 1.0, 30.0]))
        plane = rabbit_phase_analytic(m, np.pi / 2)
        assert np.ptp(axis_side) < 1e-12
        assert phase_distance(plane - axis_side[0], np.pi) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(amps, min_size=3, max_size=3), st.lists(phases, min_size=3, max_size=3), phases,
       angles, st.floats(-3000, 3000), st.sampled_from(["co", "counter"]))
def test_gauge_invariance(a, p, c, theta, tau, g):
    m = model_from(g, a, p)
    shifted = m.with_phases(np.asarray(p) + c)
    assert intensity(shifted, theta, tau) == pytest.approx(intensity(m, theta, tau), rel=1e-12, abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.lists(amps, min_size=3, max_size=3), st.lists(phases, min_size=3, max_size=3), angles,
       st.floats(-3000, 3000))
def test_mirror_tau_reversal(a, p, theta, tau):
    co = model_from("co", a, p)
    counter = co.with_geometry("counter")
    assert intensity(counter, theta, tau) == pytest.approx(intensity(co, theta, -tau), rel=1e-12, abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.lists(amps, min_size=3, max_size=3), st.lists(phases, min_size=3, max_size=3), angles,
       st.floats(-3000, 3000), st.sampled_from(["co", "counter"]))
def test_periodicity_and_nonnegativity(a, p, theta, tau, g):
    m = model_from(g, a, p)
    half_period = np.pi * HBAR_EV_AS / OMEGA
    y = intensity(m, theta, tau)
    assert y >= 0
    assert intensity(m, theta, tau + half_period) == pytest.approx(y, rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.1, 2.0), min_size=3, max_size=3), st.lists(phases, min_size=3, max_size=3),
       st.floats(0.05, np.pi - 0.05), st.sampled_from(["co", "counter"]))
def test_analytic_phase_matches_dft(a, p, theta, g):
    m = model_from(g, a, p)
    try:
        ana = rabbit_phase_analytic(m, theta)
    except UndefinedPhaseError:
        return
    assert phase_distance(ana, dft_phase(m, theta)) < 1e-9


def test_analytic_phase_random_models():
    rng = np.random.default_rng(11)
    for _ in range(50):
        m = model_from(rng.choice(["co", "counter"]), rng.uniform(0.1, 2, 3), rng.uniform(-np.pi, np.pi, 3))
        theta = rng.uniform(0.05, np.pi - 0.05, 5)
        for t, ana in zip(theta, rabbit_phase_analytic(m, theta)):
            assert phase_distance(ana, dft_phase(m, t, n=64)) < 1e-9


def test_bin_gram_matches_quadrature():
    edges = np.linspace(0, np.pi, 7)
    g = bin_gram(edges)
    y = [(2, 2), (2, 0), (0, 0)]
    for b in range(6):
        for i in range(3):
            for j in range(3):
                ref = integrate.quad(lambda t: sph_harm_theta(*y[i], t) * sph_harm_theta(*y[j], t) * np.sin(t),
                                     edges[b], edges[b + 1], epsabs=1e-14)[0]
                assert g[b, i, j] == pytest.approx(ref, abs=1e-14)


def test_wrap_phase_range():
    x = np.array([-np.pi, np.pi, 3 * np.pi, -3 * np.pi + 1e-3, 0.0])
    w = wrap_phase(x)
    assert np.all(w > -np.pi) and np.all(w <= np.pi)
    np.testing.assert_allclose(np.cos(w), np.cos(x), atol=1e-12)
