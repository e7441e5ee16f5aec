import mpmath
import numpy as np
import pytest
from scipy import integrate

from pwrabbit import synth
from pwrabbit.errors import DomainError
from pwrabbit.model import QUANTUM_NUMBERS, WAVES, intensity, sph_harm_theta
from pwrabbit.units import HARTREE_EV, HBAR_EV_AS, HELIUM_IP_EV, ir_period_as, phase_distance, photon_energy_ev


def mp_sigma1(energy_ev, z=1, dps=40):
    """Independent arbitrary-precision arg Gamma(2 - iZ/k) on the continuous log-Gamma branch."""
    with mpmath.workdps(dps):
        k = mpmath.sqrt(2 * mpmath.mpf(energy_ev) / mpmath.mpf(HARTREE_EV))
        return float(mpmath.im(mpmath.loggamma(2 - 1j * z / k)))


def test_photon_energy_799nm():
    # hc = 1239.841984 eV nm
    assert photon_energy_ev(799.0) == pytest.approx(1239.841984 / 799.0, rel=1e-9)
    assert photon_energy_ev(799.0) == pytest.approx(1.5517, abs=1e-4)


def test_coulomb_phase_oracle():
    assert synth.coulomb_wigner_phase(3.34, 1.0) == pytest.approx(mp_sigma1(3.34), abs=1e-13)
    assert synth.coulomb_wigner_phase(3.34, 1.0) == pytest.approx(-1.2535911483387168, abs=1e-12)
    for e in (0.3, 1.0, 7.7, 40.0):
        assert synth.coulomb_wigner_phase(e) == pytest.approx(mp_sigma1(e), abs=1e-12)


def test_coulomb_phase_limits():
    assert synth.coulomb_wigner_phase(2.5, 0.0) == 0.0
    assert abs(synth.coulomb_wigner_phase(1e9)) < 1e-3
    e = np.linspace(0.5, 60, 200)
    ph = synth.coulomb_wigner_phase(e)
    assert np.all(np.diff(ph) > 0) and np.all(ph < 0)
    with pytest.raises(DomainError):
        synth.coulomb_wigner_phase(0.0)
    with pytest.raises(DomainError):
        synth.WignerModel(charge=-1)


@pytest.mark.parametrize("energy", [1.8, 3.34, 9.55, 18.9])
def test_coulomb_derivative(energy):
    h = 1e-3
    fd = (synth.coulomb_wigner_phase(energy + h) - synth.coulomb_wigner_phase(energy - h)) / (2 * h)
    ana = synth.coulomb_phase_derivative(energy)
    assert ana == pytest.approx(fd, rel=1e-6)
    assert synth.WignerModel().derivative(energy, 2) == pytest.approx(
        (synth.coulomb_phase_derivative(energy + h) - synth.coulomb_phase_derivative(energy - h)) / (2 * h),
        rel=1e-5)


def test_sidecar_wigner_delays(truth, campaign):
    _, sidecar = campaign
    h = 1e-3
    for sb in sidecar["sidebands"]:
        e = sb["energy_ev"]
        fd = (synth.coulomb_wigner_phase(e + h) - synth.coulomb_wigner_phase(e - h)) / (2 * h)
        assert sb["wigner_delay_as"] == pytest.approx(HBAR_EV_AS * fd, rel=1e-6)
        assert sb["wigner_delay_as"] > 0


def test_other_wigner_models():
    lin = synth.WignerModel("linear", slope=0.02, intercept=-0.3)
    assert lin.phase(5.0) == pytest.approx(-0.2)
    assert lin.derivative(5.0) == 0.02 and lin.derivative(5.0, 3) == 0.0
    e = np.linspace(1, 20, 12)
    tab = synth.WignerModel("table", table_energies_ev=tuple(e), table_phases=tuple(0.01 * e ** 2))
    assert tab.phase(7.3) == pytest.approx(0.01 * 7.3 ** 2, rel=1e-3)
    with pytest.raises(DomainError):
        synth.WignerModel("table", table_energies_ev=(1, 2), table_phases=(0, 0))
    with pytest.raises(DomainError):
        synth.WignerModel("spline")


def test_cc_phase_truth():
    w = photon_energy_ev(799.0)
    cc = synth.CCModel()
    e = 6.4
    for l in (0, 2):
        a = synth.cc_phase_truth(e - w, e, l, cc, w)
        em = synth.cc_phase_truth(e + w, e, l, cc, w)
        assert a + em == 0.0
    flat = synth.CCModel(l_offset=0.0)
    assert synth.cc_phase_truth(e - w, e, 0, flat, w) == synth.cc_phase_truth(e - w, e, 2, flat, w)
    assert synth.cc_phase_truth(e - w, e, 0, cc, w) - synth.cc_phase_truth(e - w, e, 2, cc, w) == pytest.approx(0.05)
    with pytest.raises(DomainError):
        synth.cc_phase_truth(e - 1.0, e, 2, cc, w)
    loose = synth.CCModel(antisymmetric=False)
    assert synth.cc_phase_truth(e + w, e, 2, loose, w) == pytest.approx(-loose.g(e + 0.5 * w, 2))
    # monotone in energy
    vals = [cc.g(x, 2) for x in np.linspace(0.5, 30, 50)]
    assert np.all(np.diff(vals) > 0)


def test_centrifugal_offset():
    t = synth.GroundTruth(wigner_model=synth.WignerModel("linear"), cc_model=synth.CCModel(strength=0, l_offset=0))
    for g in ("co", "counter"):
        m = synth.assemble_sideband_model(t, 20, g)
        assert phase_distance(m["s"].phase - m["d0"].phase, np.pi) < 1e-15
        assert phase_distance(m["d2"].phase, m["d0"].phase) < 1e-15


def test_zero_truth_co_counter_identical_up_to_sign_swap():
    t = synth.GroundTruth(wigner_model=synth.WignerModel("linear"), cc_model=synth.CCModel(strength=0, l_offset=0),
                          amplitude_model=synth.AmplitudeModel({18: {"co": (1, .5, .3), "counter": (1, .5, .3)}}))
    co = synth.assemble_sideband_model(t, 18, "co")
    counter = synth.assemble_sideband_model(t, 18, "counter")
    np.testing.assert_array_equal(co.phases, counter.phases)
    np.testing.assert_array_equal(co.amplitudes, counter.amplitudes)
    theta, tau = 0.9, 123.0
    assert intensity(counter, theta, tau) == pytest.approx(intensity(co, theta, -tau), rel=1e-13)


def test_assemble_pathways(truth):
    w = truth.ir_photon_ev
    ek = truth.sideband_energy(22)
    co = synth.assemble_sideband_model(truth, 22, "co")
    expect = -np.pi + synth.coulomb_wigner_phase(ek - w) + truth.cc_model.g(ek - 0.5 * w, 2)
    assert phase_distance(co["d2"].phase, expect) < 1e-14
    expect_s = synth.coulomb_wigner_phase(ek + w) - truth.cc_model.g(ek - 0.5 * w, 0)
    assert phase_distance(co["s"].phase, expect_s) < 1e-14
    counter = synth.assemble_sideband_model(truth, 22, "counter")
    expect_s = synth.coulomb_wigner_phase(ek - w) + truth.cc_model.g(ek - 0.5 * w, 0)
    assert phase_distance(counter["s"].phase, expect_s) < 1e-14
    with pytest.raises(DomainError):
        synth.assemble_sideband_model(truth, 30, "co")


def test_amplitudes_fano_ordering(truth):
    for n in truth.sideband_orders:
        co = truth.amplitude_model.amplitudes(n, "co")
        counter = truth.amplitude_model.amplitudes(n, "counter")
        assert co[0] == co.max()  # d2 rides absorption in co
        assert max(counter[1], counter[2]) > counter[0] or n > 24


def test_truth_validation():
    with pytest.raises(DomainError):
        synth.GroundTruth(sideband_orders=(19,))
    with pytest.raises(DomainError):
        synth.GroundTruth(sideband_orders=(14,))
    t = synth.GroundTruth()
    assert t.near_threshold(18) is False
    assert synth.GroundTruth(sideband_orders=(18,), near_threshold_floor_ev=2.0).near_threshold(18)


def test_ladder_spacing(truth):
    e = [truth.sideband_energy(n) for n in truth.sideband_orders]
    np.testing.assert_allclose(np.diff(e), 2 * truth.ir_photon_ev, rtol=0, atol=1e-12)
    assert truth.sideband_orders == (18, 20, 22, 24, 26, 28)
    assert truth.ionization_potential_ev == HELIUM_IP_EV


def test_trace_layout_and_budget(truth):
    m = synth.assemble_sideband_model(truth, 18, "co")
    tr = synth.generate_trace(m, order=18)
    assert tr.counts.shape == (60, 24)
    assert tr.tau_step * 24 == pytest.approx(ir_period_as(truth.ir_photon_ev), rel=1e-12)
    assert tr.spans_integer_periods() and tr.n_periods_2w() == pytest.approx(2.0)
    assert tr.counts.sum() == pytest.approx(1e6, rel=1e-12)
    assert tr.tau_samples[0] == 0.0
    np.testing.assert_allclose(tr.theta_edges, np.linspace(0, np.pi, 61))


def test_trace_errors(truth):
    m = synth.assemble_sideband_model(truth, 18, "co")
    with pytest.raises(DomainError):
        synth.generate_trace(m, tau_points=5)
    with pytest.raises(DomainError):
        synth.generate_trace(m, theta_bins=2)
    with pytest.raises(DomainError):
        synth.generate_trace(m, counts_budget=0)
    with pytest.raises(DomainError):
        synth.generate_trace(m, noise="gauss")


def test_jacobian_sum_matches_quadrature(truth):
    m = synth.assemble_sideband_model(truth, 24, "counter")
    tr = synth.generate_trace(m, theta_bins=37, tau_points=10, counts_budget=1.0)
    scale = tr.meta["intensity_scale"]
    for j, tau in enumerate(tr.tau_samples):
        ref = integrate.quad(lambda t: intensity(m, t, tau) * np.sin(t), 0, np.pi, epsabs=1e-14, epsrel=1e-13)[0]
        assert tr.counts[:, j].sum() / scale == pytest.approx(ref, rel=1e-9)


def test_poisson_statistics(truth):
    m = synth.assemble_sideband_model(truth, 18, "co")
    mu = synth.generate_trace(m, order=18).counts
    draws = np.array([synth.generate_trace(m, noise="poisson", seed=[77, i], order=18).counts[30, 5]
                      for i in range(1000)])
    assert abs(draws.mean() - mu[30, 5]) < 5 * np.sqrt(mu[30, 5]) / np.sqrt(1000)
    assert np.all(draws == np.round(draws))


def test_determinism(truth):
    grid, noise = synth.GridSpec(), synth.NoiseSpec("poisson", 1e6, 42)
    a, side_a = synth.generate_campaign(truth, grid, noise)
    b, side_b = synth.generate_campaign(truth, grid, noise, workers=3)
    for x, y in zip(a, b):
        assert x.counts.tobytes() == y.counts.tobytes()
        assert x.meta == y.meta
    assert side_a == side_b
    c, _ = synth.generate_campaign(truth, grid, synth.NoiseSpec("poisson", 1e6, 43))
    assert c[0].counts.tobytes() != a[0].counts.tobytes()
    # streams are keyed per (seed, order, geometry)
    assert a[0].meta["seed"] == synth.trace_seed(42, 18, "co") == [42, 18, 0]


def test_campaign_structure(truth, campaign):
    traces, sidecar = campaign
    assert len(traces) == 12
    ref = traces[(18, "co")]
    for t in traces.values():
        assert t.same_axes(ref)
    assert sidecar["format"] == "pwrabbit-truth/1"
    assert sidecar["cc_antisymmetric"] is True
    assert [s["order"] for s in sidecar["sidebands"]] == list(truth.sideband_orders)
    sb = sidecar["sidebands"][0]
    for g in ("co", "counter"):
        m = synth.assemble_sideband_model(truth, 18, g)
        for w in WAVES:
            assert sb["geometries"][g]["waves"][w]["phase"] == m[w].phase
    for l in ("l0", "l2"):
        assert sb["cc_phase"]["absorption"][l] + sb["cc_phase"]["emission"][l] == 0.0
    assert len(sidecar["midpoints"]) == 5


def test_cc_truth_table(truth, campaign):
    _, sidecar = campaign
    w = truth.ir_photon_ev
    for sb in sidecar["sidebands"]:
        ek = sb["energy_ev"]
        assert sb["cc_phase"]["absorption"]["l2"] == truth.cc_model.g(ek - 0.5 * w, 2)
        assert sb["cc_phase"]["absorption"]["l0"] == truth.cc_model.g(ek - 0.5 * w, 0)


def test_empty_campaign():
    t = synth.GroundTruth(sideband_orders=())
    traces, sidecar = synth.generate_campaign(t)
    assert traces == [] and sidecar["sidebands"] == [] and sidecar["midpoints"] == []


def test_main_peak_lines(truth):
    lines = synth.main_peak_lines(truth)
    assert [q for q, _, _ in lines] == [17, 19, 21, 23, 25, 27, 29]
    for q, e, y in lines:
        assert e == pytest.approx(q * truth.ir_photon_ev - truth.ionization_potential_ev)
        assert y == truth.main_peak_yield


def test_trace_grid_validation(truth):
    m = synth.assemble_sideband_model(truth, 18, "co")
    tr = synth.generate_trace(m, theta_bins=4, tau_points=8)
    with pytest.raises(DomainError):
        synth.TraceGrid("co", 18, 1.0, 1.5, tr.theta_edges, tr.tau_samples, -tr.counts)
    with pytest.raises(DomainError):
        synth.TraceGrid("co", 18, 1.0, 1.5, tr.theta_edges[::-1], tr.tau_samples, tr.counts)
    with pytest.raises(DomainError):
        synth.TraceGrid("co", 18, 1.0, 1.5, tr.theta_edges, tr.tau_samples ** 1.1, tr.counts)
    scaled = tr.scaled(3.0)
    assert scaled.meta["intensity_scale"] == 3.0 * tr.meta["intensity_scale"]


def test_harmonic_spot_values():
    # spot check of the factors the generator integrates
    assert sph_harm_theta(*QUANTUM_NUMBERS["d2"], np.pi / 2) == pytest.approx(0.25 * np.sqrt(15 / (2 * np.pi)))
