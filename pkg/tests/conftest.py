import numpy as np
import pytest

from pwrabbit import fit, synth


@pytest.fixture(scope="session")
def truth():
    return synth.GroundTruth()


@pytest.fixture(scope="session")
def campaign(truth):
    traces, sidecar = synth.generate_campaign(truth)
    return {(t.sideband_order, t.geometry.value): t for t in traces}, sidecar


@pytest.fixture(scope="session")
def noiseless_fits(truth, campaign):
    """Sidecar-calibrated fits of the default noiseless ladder."""
    traces, sidecar = campaign
    out = []
    for n in truth.sideband_orders:
        r = fit.global_fit(traces[(n, "co")], traces[(n, "counter")], fit.FitOptions(starts=4))
        out.append(fit.fix_gauge(r, fit.sidecar_calibration(sidecar, n), "sidecar"))
    return out


def random_model(rng, geometry="co", omega=1.55, energy=5.0):
    from pwrabbit.model import SidebandModel

    return SidebandModel.from_arrays(geometry, rng.uniform(0.2, 1.5, 3), rng.uniform(-np.pi, np.pi, 3),
                                     omega, energy)
