"""Physical macro parameters and TOML config loading."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

BOLTZMANN_OVER_Q = 8.617333262e-5  # V/K

# Allowed bitline swing below VDD before the unit current leaves its 1% band.
DR_PRESETS = {
    "rudc": 0.70,
    "cascode": 0.51,
    "single": 0.25,
}


@dataclass(frozen=True)
class MacroConfig:
    clock_period: float = 10e-9
    c_bl: float = 100e-15
    i_u: float = 36.8e-9
    sigma_iu: float = 0.05
    vdd: float = 1.0
    v_rwl: float = 0.8
    vdd_core: float = 0.45
    v_t1: float = 0.35
    kappa: float = 0.7
    temperature: float = 300.0
    rows: int = 160
    cols: int = 100
    adc_rows: int = 30
    dr_preset: str = "rudc"
    sa_offset: float = 0.0  # fixed input-referred comparator offset, V
    sa_offset_sigma: float = 0.015  # column-to-column comparator/bitline offset spread, V

    def __post_init__(self):
        for name in ("clock_period", "c_bl", "i_u", "vdd", "v_rwl", "vdd_core", "v_t1", "kappa", "temperature"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.vdd_core < self.v_rwl < self.vdd:
            raise ConfigError("need vdd_core < v_rwl < vdd")
        if self.sigma_iu < 0 or self.sa_offset_sigma < 0:
            raise ConfigError("mismatch sigmas must be non-negative")
        if min(self.rows, self.cols, self.adc_rows) <= 0:
            raise ConfigError("array dimensions must be positive")
        if self.dr_preset not in DR_PRESETS:
            raise ConfigError(f"unknown dr_preset {self.dr_preset!r}; choose from {sorted(DR_PRESETS)}")

    @property
    def unit_step(self) -> float:
        """Bitline voltage drop of one unit cell discharging for one clock period."""
        return self.i_u * self.clock_period / self.c_bl

    @property
    def thermal_voltage(self) -> float:
        return BOLTZMANN_OVER_Q * self.temperature

    @property
    def dr_limit(self) -> float:
        return DR_PRESETS[self.dr_preset]

    @property
    def cascode_floor(self) -> float:
        """Lowest bitline voltage at which the upper device still acts as a cascode."""
        return self.v_rwl - self.v_t1

    def ideal(self) -> "MacroConfig":
        return replace(self, sigma_iu=0.0, sa_offset=0.0, sa_offset_sigma=0.0)


def load_toml(path) -> dict:
    """Parse a TOML file; syntax errors become ConfigError naming file, line and column."""
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None


def macro_from_dict(d: dict | None) -> MacroConfig:
    d = dict(d or {})
    known = {f.name for f in fields(MacroConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown [macro] keys: {', '.join(unknown)}")
    try:
        return MacroConfig(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
