"""Scenario files: flat ``key = value`` sections parsed with configparser.

Every section maps onto a small dataclass whose defaults reproduce the
bundled ``nanofiber_default`` scenario. Values can be overridden from the
environment as ``NANOTRAP_<SECTION>_<KEY>`` (upper case).
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ScenarioError

ENV_PREFIX = "NANOTRAP_"


def _floats(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


@dataclass
class RunSection:
    name: str = "nanofiber_default"
    seed: int = 20100301
    output: str = "out"

    def validate(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise ScenarioError("seed must be an unsigned 64-bit integer")


@dataclass
class FiberSection:
    radius_nm: float = 250.0
    n_clad: float = 1.0
    wavelengths_nm: tuple = (780.0, 852.0, 1064.0)
    map_half_width_nm: float = 750.0
    map_points: int = 61

    def validate(self):
        if not self.radius_nm > 0:
            raise ScenarioError("fiber radius must be positive")
        if not self.n_clad >= 1:
            raise ScenarioError("cladding index must be >= 1")
        if not self.wavelengths_nm or min(self.wavelengths_nm) <= 0:
            raise ScenarioError("wavelengths must be positive")
        if self.map_points < 2:
            raise ScenarioError("map_points must be >= 2")


@dataclass
class TrapSection:
    blue_wavelength_nm: float = 780.0
    blue_power_mw: float = 25.0
    red_wavelength_nm: float = 1064.0
    red_power_mw: float = 2.2  # per propagation direction
    blue_pol_deg: float = -90.0
    red_pol_deg: float = 0.0
    c3_hz_um3: float = 0.0
    power_scale: float = 1.0
    contour_levels_uk: tuple = (40.0, 125.0)

    def validate(self):
        if min(self.blue_power_mw, self.red_power_mw) < 0:
            raise ScenarioError("powers must be non-negative")
        if min(self.blue_wavelength_nm, self.red_wavelength_nm) <= 0:
            raise ScenarioError("wavelengths must be positive")
        if self.power_scale < 0:
            raise ScenarioError("power_scale must be non-negative")


@dataclass
class ThermometrySection:
    e0_grid: tuple = (0.05, 0.1, 0.2, 0.35, 0.5, 0.7)
    n_traj: int = 1000
    levels: int = 8
    epsilon: float = 0.1
    temperature_uk: float = 30.0
    p_max: float = 0.92
    noise: float = 0.02
    n_points: int = 30
    u_low_min: float = 1e-3  # lower points carry no information at 20-45 uK
    dos_points: int = 50

    def validate(self):
        if not self.e0_grid or not all(0 < e < 1 for e in self.e0_grid):
            raise ScenarioError("e0_grid values must lie in (0, 1)")
        if self.n_traj < 10 or self.levels < 3:
            raise ScenarioError("n_traj >= 10 and levels >= 3 required")
        if not self.epsilon > 0:
            raise ScenarioError("epsilon must be positive")
        if not (self.temperature_uk > 0 and 0 < self.p_max <= 1 and self.noise >= 0):
            raise ScenarioError("invalid synthetic survival parameters")
        if self.n_points < 5 or not 0 < self.u_low_min < 1:
            raise ScenarioError("need >= 5 survival points and 0 < u_low_min < 1")


@dataclass
class PolarizationSection:
    wavelength_nm: float = 1064.0
    n_scatterers: int = 10_000
    surface_fraction: float = 0.8
    segment_um: float = 50.0
    aperture_deg: float = 5.0
    background: float = 0.12
    n_phi: int = 73
    birefringence: str = "random"
    restarts: int = 8
    check_wavelengths_nm: tuple = (780.0, 852.0)

    def validate(self):
        if self.n_scatterers < 1 or not 0 <= self.surface_fraction <= 1:
            raise ScenarioError("invalid scatterer ensemble")
        if not self.aperture_deg > 0:
            raise ScenarioError("aperture must be positive")
        if not 0 <= self.background < 1:
            raise ScenarioError("background fraction must lie in [0, 1)")
        if self.n_phi < 8:
            raise ScenarioError("n_phi must be >= 8")
        if self.birefringence not in ("random", "identity"):
            raise ScenarioError("birefringence must be 'random' or 'identity'")


@dataclass
class LoadingSection:
    r_max: float = 1.0e3
    z0_mm: float = 0.0
    sigma_mot_mm: float = 0.21
    gamma: float = 1.0
    beta2_cm3: float = 1.0e-10
    volume_cm3: float = 2.7e-16
    site_density_per_um: float = 4.0
    duration_s: float = 0.05
    n_sites: int = 10_000
    od: float = 1.0
    clip: float = 0.23
    filling: float = 0.5
    grid_points: int = 2048
    noise: float = 0.02
    offset: float = 0.1
    cross_section_m2: float = 0.0  # 0 means the resonant D2 value
    probe_distance_nm: float = 230.0

    def validate(self):
        for name in ("sigma_mot_mm", "volume_cm3", "site_density_per_um", "duration_s", "od"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be positive")
        if min(self.r_max, self.gamma, self.beta2_cm3, self.cross_section_m2) < 0:
            raise ScenarioError("rates and cross section must be non-negative")
        if not 0 < self.clip <= 1:
            raise ScenarioError("clip must lie in (0, 1]")
        if self.n_sites < 1 or self.grid_points < 16:
            raise ScenarioError("n_sites >= 1 and grid_points >= 16 required")


SECTIONS = {
    "run": RunSection,
    "fiber": FiberSection,
    "trap": TrapSection,
    "thermometry": ThermometrySection,
    "polarization": PolarizationSection,
    "loading": LoadingSection,
}


@dataclass
class Scenario:
    run: RunSection = field(default_factory=RunSection)
    fiber: FiberSection = field(default_factory=FiberSection)
    trap: TrapSection = field(default_factory=TrapSection)
    thermometry: ThermometrySection = field(default_factory=ThermometrySection)
    polarization: PolarizationSection = field(default_factory=PolarizationSection)
    loading: LoadingSection = field(default_factory=LoadingSection)

    def validate(self) -> "Scenario":
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    @property
    def seed(self) -> int:
        return self.run.seed

    def to_ini(self) -> str:
        """Canonical text form (used for hashing and for the manifest)."""
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for f in dataclasses.fields(getattr(self, name)):
                v = getattr(getattr(self, name), f.name)
                if isinstance(v, tuple):
                    v = ", ".join(repr(float(x)) for x in v)
                elif isinstance(v, float):
                    v = repr(v)
                lines.append(f"{f.name} = {v}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()

    # ---- physical objects
    def trap_configuration(self):
        from .constants import H
        from .trap_potential import LightField, TrapConfiguration

        t, s = self.trap, self.trap.power_scale
        return TrapConfiguration(
            radius=self.fiber.radius_nm * 1e-9,
            blue=LightField(t.blue_wavelength_nm * 1e-9, t.blue_power_mw * 1e-3 * s,
                            np.deg2rad(t.blue_pol_deg)),
            red=LightField(t.red_wavelength_nm * 1e-9, t.red_power_mw * 1e-3 * s,
                           np.deg2rad(t.red_pol_deg), True),
            c3=t.c3_hz_um3 * H * 1e-24,
            n_clad=self.fiber.n_clad,
        )

    def loading_model(self):
        from .loading_fluorescence import LoadingModel

        lo = self.loading
        return LoadingModel(
            r_max=lo.r_max, z0=lo.z0_mm * 1e-3, sigma_mot=lo.sigma_mot_mm * 1e-3,
            gamma=lo.gamma, beta2=lo.beta2_cm3, volume=lo.volume_cm3,
            site_density=lo.site_density_per_um * 1e6, duration=lo.duration_s,
        )


def _convert(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            return _floats(value)
        return value.strip()
    except ValueError as exc:
        raise ScenarioError(f"bad value for {key}: {value!r}") from exc


def parse_scenario(text: str, env=None) -> Scenario:
    """Parse scenario text, apply environment overrides and validate."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(f"unparsable scenario: {exc}".replace("\n", " ")) from exc
    env = os.environ if env is None else env
    values = {}
    for name, cls in SECTIONS.items():
        defaults = cls()
        kwargs = {}
        known = {f.name for f in dataclasses.fields(cls)}
        if parser.has_section(name):
            unknown = set(parser[name]) - known
            if unknown:
                raise ScenarioError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
        for key in sorted(known):
            raw = env.get(f"{ENV_PREFIX}{name.upper()}_{key.upper()}")
            if raw is None and parser.has_option(name, key):
                raw = parser.get(name, key)
            if raw is not None:
                kwargs[key] = _convert(raw, getattr(defaults, key), f"{name}.{key}")
        values[name] = cls(**kwargs)
    extra = set(parser.sections()) - set(SECTIONS)
    if extra:
        raise ScenarioError(f"unknown section(s): {', '.join(sorted(extra))}")
    return Scenario(**values).validate()


def bundled(name: str = "nanofiber_default") -> str:
    try:
        return resources.files("nanotrap").joinpath("data", f"{name}.ini").read_text("utf-8")
    except FileNotFoundError as exc:
        raise ScenarioError(f"no bundled scenario named {name!r}") from exc


def load_scenario(source: str | os.PathLike | None = None, env=None) -> Scenario:
    """Load a scenario from a path or a bundled name (default ``nanofiber_default``)."""
    if source is None:
        return parse_scenario(bundled(), env)
    path = Path(source)
    if path.is_file():
        return parse_scenario(path.read_text("utf-8"), env)
    if not path.suffix and os.sep not in str(source):
        return parse_scenario(bundled(str(source)), env)
    raise ScenarioError(f"scenario file not found: {source}")
