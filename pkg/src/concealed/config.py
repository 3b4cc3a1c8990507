"""Plain-text scenario configuration.

Format: one ``key = value`` per line (several may share a line when
separated by commas), ``#`` starts a comment, and ``[physical]``,
``[numerics]`` or ``[toggles]`` open a section.  ``scenario`` must appear
before the first section.  Keys placed before any section are accepted as
long as they exist somewhere; keys under the wrong section are rejected.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .scenarios import GaussianPacket, coherent_width

log = logging.getLogger(__name__)

SCENARIOS = ("gaussian-free", "gaussian-boosted", "harmonic-coherent", "routh-demo", "custom")

SECTIONS = {
    "physical": ("hbar", "mass", "sigma0", "p0", "omega", "x0"),
    "numerics": ("n_labels", "m_grid", "dt", "t_final", "output_stride", "half_width",
                 "label_modes", "tolerance"),
    "toggles": ("run_reference", "run_concealed", "convergence_levels"),
}
KEY_SECTION = {k: s for s, keys in SECTIONS.items() for k in keys}
INT_KEYS = {"n_labels", "m_grid", "output_stride", "label_modes"}
BOOL_KEYS = {"run_reference", "run_concealed"}

SCENARIO_DEFAULTS = {
    "gaussian-free": {},
    "gaussian-boosted": {"p0": 10.0, "t_final": 0.5, "m_grid": 4096},
    "harmonic-coherent": {"omega": 1.0, "x0": 1.0, "t_final": 2 * math.pi},
    "routh-demo": {"t_final": 1.0},
    "custom": {},
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated run configuration (natural units set by ``hbar`` and ``mass``)."""

    scenario: str
    hbar: float = 1.0
    mass: float = 1.0
    sigma0: float = 1.0
    p0: float = 0.0
    omega: float = 0.0
    x0: float = 0.0
    n_labels: int = 1024
    m_grid: int = 2048
    dt: float = 1e-3
    t_final: float = 2.0
    output_stride: int = 100
    half_width: float = 12.0
    label_modes: int = 0
    tolerance: float = 5e-3
    run_reference: bool = True
    run_concealed: bool = True
    convergence_levels: tuple = (1, 2, 4)
    warnings: tuple = field(default=(), compare=False)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def packet(self) -> GaussianPacket:
        return GaussianPacket(sigma0=self.sigma0, x0=self.x0, p0=self.p0,
                              hbar=self.hbar, mass=self.mass, omega=self.omega)

    def refined(self, level: int) -> "ScenarioConfig":
        """Labels, grid points and steps scaled together by ``level``."""
        return replace(self, n_labels=self.n_labels * level, m_grid=self.m_grid * level,
                       dt=self.dt / level, output_stride=self.output_stride * level)


def _convert(key, raw, lineno):
    if key in BOOL_KEYS:
        low = raw.lower()
        if low in ("on", "true", "yes", "1"):
            return True
        if low in ("off", "false", "no", "0"):
            return False
        raise ConfigError(f"line {lineno}: {key} must be on/off, got {raw!r}")
    if key == "convergence_levels":
        try:
            levels = tuple(int(p) for p in re.split(r"[,\s]+", raw.strip()) if p)
        except ValueError:
            raise ConfigError(f"line {lineno}: convergence_levels must be integers, got {raw!r}") from None
        return levels
    try:
        if key in INT_KEYS:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        value = float(raw)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} must be numeric, got {raw!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"line {lineno}: {key} must be finite")
    return value


def _split_pairs(line):
    """Split ``k=v, k=v`` while keeping commas inside list values."""
    pieces = []
    for chunk in line.split(","):
        if "=" in chunk or not pieces:
            pieces.append(chunk)
        else:
            pieces[-1] += "," + chunk
    return pieces


def parse_config(text: str) -> ScenarioConfig:
    values, where = {}, {}
    section = None
    scenario = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]", line)
        if m:
            section = m.group(1).lower()
            if section not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        for piece in _split_pairs(line):
            if "=" not in piece:
                raise ConfigError(f"line {lineno}: expected key=value, got {piece.strip()!r}")
            key, raw = (s.strip() for s in piece.split("=", 1))
            key = key.lower()
            if key == "scenario":
                if section is not None:
                    raise ConfigError(f"line {lineno}: scenario must come before any section")
                if raw not in SCENARIOS:
                    raise ConfigError(f"line {lineno}: unknown scenario {raw!r}; choose from {', '.join(SCENARIOS)}")
                scenario = raw
                continue
            if key not in KEY_SECTION:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if section is not None and KEY_SECTION[key] != section:
                raise ConfigError(f"line {lineno}: key {key!r} belongs in [{KEY_SECTION[key]}], not [{section}]")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {where[key]})")
            values[key] = _convert(key, raw, lineno)
            where[key] = lineno
    if scenario is None:
        raise ConfigError("missing scenario (e.g. scenario=gaussian-free)")
    return build_config(scenario, values, where)


def build_config(scenario: str, values: dict | None = None, where: dict | None = None) -> ScenarioConfig:
    """Apply scenario defaults to ``values`` and validate."""
    values = dict(values or {})
    where = where or {}

    def at(key):
        return f"line {where[key]}: " if key in where else ""

    merged = dict(SCENARIO_DEFAULTS[scenario])
    merged.update(values)
    warnings = []
    if scenario == "harmonic-coherent":
        if "sigma0" in values:
            raise ConfigError(f"{at('sigma0')}sigma0 is fixed by the trap for harmonic-coherent; remove it")
        if not merged["omega"] > 0:
            raise ConfigError(f"{at('omega')}omega must be positive for harmonic-coherent")
        merged["sigma0"] = coherent_width(merged.get("hbar", 1.0), merged.get("mass", 1.0), merged["omega"])

    for key in ("hbar", "mass", "sigma0", "dt", "tolerance", "half_width"):
        if key in merged and not merged[key] > 0:
            raise ConfigError(f"{at(key)}{key} must be positive, got {merged[key]}")
    for key in ("n_labels", "m_grid", "output_stride"):
        if key in merged and not merged[key] > 0:
            raise ConfigError(f"{at(key)}{key} must be a positive count, got {merged[key]}")
    if merged.get("omega", 0.0) < 0:
        raise ConfigError(f"{at('omega')}omega must be non-negative")
    if merged.get("t_final", 0.0) < 0:
        raise ConfigError(f"{at('t_final')}t_final must be non-negative")
    if merged.get("label_modes", 0) < 0:
        raise ConfigError(f"{at('label_modes')}label_modes must be >= 0 (0 selects automatically)")
    if merged.get("n_labels", 1024) < 64:
        raise ConfigError(f"{at('n_labels')}n_labels must be at least 64")
    if merged.get("m_grid", 2048) < 64:
        raise ConfigError(f"{at('m_grid')}m_grid must be at least 64")
    levels = merged.get("convergence_levels", (1, 2, 4))
    if not levels or any(k <= 0 for k in levels):
        raise ConfigError(f"{at('convergence_levels')}convergence_levels must be a nonempty list of positive integers")

    cfg = ScenarioConfig(scenario=scenario, **merged)
    if scenario != "routh-demo":
        needed = 6 * float(cfg.packet().width(cfg.t_final))
        if cfg.half_width < needed:
            warnings.append(f"half_width {cfg.half_width:g} < 6 sigma(t_final); widened to {needed:.4g}")
            cfg = replace(cfg, half_width=needed)
    for w in warnings:
        log.warning(w)
    return replace(cfg, warnings=tuple(warnings))


def config_fields() -> list[str]:
    return [f.name for f in fields(ScenarioConfig) if f.name != "warnings"]
