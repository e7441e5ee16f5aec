"""Pipeline configuration from TOML.

Every key is optional; missing keys take the built-in defaults, so running
without a config file reproduces the default SB18-SB28 campaign.  Example::

    seed = 7

    [paths]
    out = "run"

    [truth]
    sideband_orders = [18, 20, 22]
    ir_wavelength_nm = 799.0

    [truth.wigner]
    kind = "linear"
    slope = 0.02

    [noise]
    mode = "poisson"
    counts_budget = 1e6

    [fit]
    starts = 16
    weighting = "poisson"

    [calibration]
    source = "sidecar"   # or "file" (with file = "calib.json") or "none"
"""
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import DomainError
from .fit import FitOptions
from .synth import (
    DEFAULT_AMPLITUDE_ANCHORS,
    DEFAULT_ORDERS,
    AmplitudeModel,
    CCModel,
    GridSpec,
    GroundTruth,
    NoiseSpec,
    WignerModel,
)
from .units import HELIUM_IP_EV, photon_energy_ev


@dataclass
class PipelineConfig:
    seed: int = 0
    out: str = "pwrabbit_out"
    sideband_orders: tuple = DEFAULT_ORDERS
    ir_wavelength_nm: float = 799.0
    ionization_potential_ev: float = HELIUM_IP_EV
    near_threshold_floor_ev: float = 0.5
    main_peak_yield: float = 2.0
    wigner: dict = field(default_factory=dict)
    cc: dict = field(default_factory=dict)
    amplitudes: dict = field(default_factory=dict)
    theta_bins: int = 60
    tau_points: int = 24
    tau_cycles: int = 1
    noise_mode: str = "none"
    counts_budget: float = 1e6
    starts: int = 32
    weighting: str = "poisson"
    max_nfev: int = 1000
    workers: int = 1
    calibration_source: str = "sidecar"
    calibration_wave: str = "d2"
    calibration_file: str = ""
    plots: bool = True

    def __post_init__(self):
        if self.calibration_source not in ("sidecar", "file", "none"):
            raise DomainError(f"unknown calibration source {self.calibration_source!r}")
        if self.calibration_source == "file" and not self.calibration_file:
            raise DomainError("calibration source 'file' needs calibration.file")
        self.sideband_orders = tuple(int(n) for n in self.sideband_orders)

    def ground_truth(self):
        anchors = {int(k): v for k, v in self.amplitudes.items()} or dict(DEFAULT_AMPLITUDE_ANCHORS)
        wigner = dict(self.wigner)
        for key in ("table_energies_ev", "table_phases"):
            if key in wigner:
                wigner[key] = tuple(wigner[key])
        return GroundTruth(
            sideband_orders=self.sideband_orders,
            ir_photon_ev=photon_energy_ev(self.ir_wavelength_nm),
            ionization_potential_ev=self.ionization_potential_ev,
            wigner_model=WignerModel(**wigner),
            cc_model=CCModel(**self.cc),
            amplitude_model=AmplitudeModel(anchors),
            near_threshold_floor_ev=self.near_threshold_floor_ev,
            main_peak_yield=self.main_peak_yield,
        )

    def grid(self):
        return GridSpec(self.theta_bins, self.tau_points, self.tau_cycles)

    def noise(self):
        return NoiseSpec(self.noise_mode, self.counts_budget, self.seed)

    def fit_options(self):
        return FitOptions(starts=self.starts, seed=self.seed, weighting=self.weighting, workers=self.workers,
                          max_nfev=self.max_nfev)

    def to_dict(self):
        d = asdict(self)
        d["sideband_orders"] = list(self.sideband_orders)
        d["amplitudes"] = {str(k): {g: list(v) for g, v in e.items()} for k, e in self.amplitudes.items()}
        return d

    def sha256(self):
        """Hash of every setting that can change an output; the output location is excluded."""
        d = self.to_dict()
        del d["out"]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_SECTIONS = {
    "paths": {"out": "out"},
    "truth": {"sideband_orders": "sideband_orders", "ir_wavelength_nm": "ir_wavelength_nm",
              "ionization_potential_ev": "ionization_potential_ev",
              "near_threshold_floor_ev": "near_threshold_floor_ev", "main_peak_yield": "main_peak_yield",
              "wigner": "wigner", "cc": "cc", "amplitudes": "amplitudes"},
    "grid": {"theta_bins": "theta_bins", "tau_points": "tau_points", "tau_cycles": "tau_cycles"},
    "noise": {"mode": "noise_mode", "counts_budget": "counts_budget"},
    "fit": {"starts": "starts", "weighting": "weighting", "max_nfev": "max_nfev", "workers": "workers"},
    "calibration": {"source": "calibration_source", "wave": "calibration_wave", "file": "calibration_file"},
    "report": {"plots": "plots"},
}


def from_mapping(data):
    kwargs = {}
    for key, value in data.items():
        if key == "seed":
            kwargs["seed"] = int(value)
            continue
        if key not in _SECTIONS or not isinstance(value, dict):
            raise DomainError(f"unknown config entry {key!r}")
        for sub, v in value.items():
            if sub not in _SECTIONS[key]:
                raise DomainError(f"unknown config key {key}.{sub}")
            kwargs[_SECTIONS[key][sub]] = v
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise DomainError(f"bad config: {exc}") from exc


def load_config(path=None):
    """Built-in defaults when ``path`` is None; a named but missing file is an error."""
    if path is None:
        return PipelineConfig()
    p = Path(path)
    if not p.is_file():
        raise DomainError(f"config file not found: {p}")
    try:
        data = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise DomainError(f"{p}: invalid TOML ({exc})") from exc
    return from_mapping(data)


def with_overrides(config, **overrides):
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
