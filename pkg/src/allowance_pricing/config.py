"""Run configuration: a sectioned key-value file mapped onto the solvers.

The file format is INI with sections [model], [noise], [abatement], [basis],
[solver] and [run]. Parsing is fail-closed: unknown sections or keys are
errors, as are keys that do not belong to the declared noise or abatement
kind. Every message names the offending section.key so a bad file can be
fixed without reading this module.

Serialization writes floats at full precision, so parse -> serialize ->
parse is the identity on the parsed values.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .errors import ConfigurationError, ModelError
from .fixedpoint import EXPECTATION_METHODS, SolverSettings
from .lsmc import HutBasis, LsmcSettings
from .model import AbatementFunction, NoiseModel, PricingConfig
from .pde import DiffusionSpec, PdeGrid


@dataclass(frozen=True)
class RunConfig:
    """Validated run parameters, one field per config key."""

    penalty: float
    horizon: int

    noise_kind: str = "normal"
    noise_mean: float = 0.0
    noise_stddev: float = 1.0
    noise_atoms: Optional[Tuple[Tuple[float, float], ...]] = None

    abatement_kind: str = "none"
    abatement_scale: float = 0.0
    abatement_exponent: float = 1.0
    abatement_points: Optional[Tuple[Tuple[float, float], ...]] = None

    basis_size: int = 16
    basis_spacing: float = 1.0

    sample_size: int = 1000
    inner_tolerance: Optional[float] = None
    max_inner: int = 50
    relaxation: float = 1.0
    tolerance: Optional[float] = None
    max_iterations: int = 60
    expectation_method: str = "exact"
    quadrature_nodes: int = 64
    grid_min: float = -7.5
    grid_max: float = 7.5
    grid_points: int = 601
    extrapolate: bool = False
    pde_n_time: int = 2000
    pde_n_space: int = 801
    pde_g_min: float = -8.0
    pde_g_max: float = 8.0
    sigma: Tuple[float, ...] = (1.0,)

    seed: int = 0
    initial_state: float = 0.0
    paths: int = 100_000
    buckets: int = 20

    # ---- domain-object factories -------------------------------------

    def pricing_config(self) -> PricingConfig:
        return PricingConfig(penalty=self.penalty, horizon=self.horizon)

    def noise(self) -> NoiseModel:
        if self.noise_kind == "normal":
            return NoiseModel.normal(self.noise_mean, self.noise_stddev)
        return NoiseModel.discrete(list(self.noise_atoms))

    def abatement(self) -> AbatementFunction:
        if self.abatement_kind == "none":
            return AbatementFunction.zero()
        if self.abatement_kind == "power":
            return AbatementFunction.power(self.abatement_scale, self.abatement_exponent)
        prices = [p for p, _ in self.abatement_points]
        volumes = [v for _, v in self.abatement_points]
        return AbatementFunction.from_table(prices, volumes)

    def basis(self) -> HutBasis:
        return HutBasis(size=self.basis_size, spacing=self.basis_spacing)

    def lsmc_settings(self) -> LsmcSettings:
        return LsmcSettings(
            sample_size=self.sample_size,
            seed=self.seed,
            inner_tolerance=self.inner_tolerance,
            max_inner=self.max_inner,
            relaxation=self.relaxation,
        )

    def solver_settings(self) -> SolverSettings:
        import numpy as np

        return SolverSettings(
            tolerance=self.tolerance,
            max_iterations=self.max_iterations,
            expectation_method=self.expectation_method,
            quadrature_nodes=self.quadrature_nodes,
            grid=np.linspace(self.grid_min, self.grid_max, self.grid_points),
            extrapolate=self.extrapolate,
        )

    def pde_grid(self) -> PdeGrid:
        return PdeGrid(
            n_time=self.pde_n_time,
            n_space=self.pde_n_space,
            g_min=self.pde_g_min,
            g_max=self.pde_g_max,
        )

    def diffusion(self) -> DiffusionSpec:
        sig = self.sigma
        return DiffusionSpec(sig[0] if len(sig) == 1 else list(sig))


def _parse_pairs(section: str, key: str, raw: str) -> Tuple[Tuple[float, float], ...]:
    pairs = []
    for chunk in raw.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 2:
            raise ConfigurationError(
                f"{section}.{key}: expected 'a:b' pairs separated by commas, got {chunk!r}"
            )
        try:
            pairs.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ConfigurationError(f"{section}.{key}: non-numeric pair {chunk!r}")
    if not pairs:
        raise ConfigurationError(f"{section}.{key}: no pairs given")
    return tuple(pairs)


def _parse_float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigurationError(f"{section}.{key}: expected a number, got {raw!r}")


def _parse_int(section: str, key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigurationError(f"{section}.{key}: expected an integer, got {raw!r}")


def _parse_bool(section: str, key: str, raw: str) -> bool:
    val = raw.strip().lower()
    if val in ("true", "false"):
        return val == "true"
    raise ConfigurationError(f"{section}.{key}: expected true or false, got {raw!r}")


def _parse_floats(section: str, key: str, raw: str) -> Tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigurationError(f"{section}.{key}: expected numbers, got {raw!r}")
    if not vals:
        raise ConfigurationError(f"{section}.{key}: no values given")
    return vals


# section -> key -> parser; None marks keys handled by kind-specific logic
_SCHEMA = {
    "model": {"penalty": _parse_float, "horizon": _parse_int},
    "noise": {"kind": None, "mean": _parse_float, "stddev": _parse_float, "atoms": _parse_pairs},
    "abatement": {
        "kind": None,
        "scale": _parse_float,
        "exponent": _parse_float,
        "points": _parse_pairs,
    },
    "basis": {"size": _parse_int, "spacing": _parse_float},
    "solver": {
        "sample_size": _parse_int,
        "inner_tolerance": _parse_float,
        "max_inner": _parse_int,
        "relaxation": _parse_float,
        "tolerance": _parse_float,
        "max_iterations": _parse_int,
        "expectation_method": None,
        "quadrature_nodes": _parse_int,
        "grid_min": _parse_float,
        "grid_max": _parse_float,
        "grid_points": _parse_int,
        "extrapolate": _parse_bool,
        "pde_n_time": _parse_int,
        "pde_n_space": _parse_int,
        "pde_g_min": _parse_float,
        "pde_g_max": _parse_float,
        "sigma": _parse_floats,
    },
    "run": {
        "seed": _parse_int,
        "initial_state": _parse_float,
        "paths": _parse_int,
        "buckets": _parse_int,
    },
}

_KIND_KEYS = {
    ("noise", "normal"): {"kind", "mean", "stddev"},
    ("noise", "discrete"): {"kind", "atoms"},
    ("abatement", "none"): {"kind"},
    ("abatement", "power"): {"kind", "scale", "exponent"},
    ("abatement", "table"): {"kind", "points"},
}


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config does not parse: {exc}")

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigurationError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigurationError(f"unknown key {section}.{key}")

    if not parser.has_section("model"):
        raise ConfigurationError("missing required section [model]")
    for key in ("penalty", "horizon"):
        if key not in parser["model"]:
            raise ConfigurationError(f"model.{key} is required")

    values = {}
    values["penalty"] = _parse_float("model", "penalty", parser["model"]["penalty"])
    values["horizon"] = _parse_int("model", "horizon", parser["model"]["horizon"])

    if parser.has_section("noise"):
        sec = parser["noise"]
        kind = sec.get("kind", "normal").strip()
        if ("noise", kind) not in _KIND_KEYS:
            raise ConfigurationError(f"noise.kind: expected normal or discrete, got {kind!r}")
        allowed = _KIND_KEYS[("noise", kind)]
        for key in sec:
            if key not in allowed:
                raise ConfigurationError(f"noise.{key} does not apply to kind {kind!r}")
        values["noise_kind"] = kind
        if kind == "normal":
            if "mean" in sec:
                values["noise_mean"] = _parse_float("noise", "mean", sec["mean"])
            if "stddev" in sec:
                values["noise_stddev"] = _parse_float("noise", "stddev", sec["stddev"])
        else:
            if "atoms" not in sec:
                raise ConfigurationError("noise.atoms is required for discrete noise")
            values["noise_atoms"] = _parse_pairs("noise", "atoms", sec["atoms"])

    if parser.has_section("abatement"):
        sec = parser["abatement"]
        kind = sec.get("kind", "none").strip()
        if ("abatement", kind) not in _KIND_KEYS:
            raise ConfigurationError(
                f"abatement.kind: expected none, power or table, got {kind!r}"
            )
        allowed = _KIND_KEYS[("abatement", kind)]
        for key in sec:
            if key not in allowed:
                raise ConfigurationError(f"abatement.{key} does not apply to kind {kind!r}")
        values["abatement_kind"] = kind
        if kind == "power":
            for key in ("scale", "exponent"):
                if key not in sec:
                    raise ConfigurationError(f"abatement.{key} is required for power abatement")
            values["abatement_scale"] = _parse_float("abatement", "scale", sec["scale"])
            values["abatement_exponent"] = _parse_float(
                "abatement", "exponent", sec["exponent"]
            )
        elif kind == "table":
            if "points" not in sec:
                raise ConfigurationError("abatement.points is required for table abatement")
            values["abatement_points"] = _parse_pairs("abatement", "points", sec["points"])

    for section, prefix in (("basis", "basis_"), ("run", "")):
        if parser.has_section(section):
            for key, raw in parser[section].items():
                values[prefix + key] = _SCHEMA[section][key](section, key, raw)

    if parser.has_section("solver"):
        for key, raw in parser["solver"].items():
            if key == "expectation_method":
                method = raw.strip()
                if method not in EXPECTATION_METHODS:
                    raise ConfigurationError(
                        f"solver.expectation_method: expected one of "
                        f"{EXPECTATION_METHODS}, got {method!r}"
                    )
                values["expectation_method"] = method
            else:
                values[key] = _SCHEMA["solver"][key]("solver", key, raw)

    config = RunConfig(**values)
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    # construct every domain object once so field errors surface at parse time,
    # and surface them all as configuration errors since they came from a file
    try:
        config.pricing_config()
        config.noise()
        config.abatement()
        config.basis()
        config.lsmc_settings()
        config.solver_settings()
        config.pde_grid()
        config.diffusion().schedule(config.horizon)
    except ConfigurationError:
        raise
    except ModelError as exc:
        raise ConfigurationError(str(exc))
    if config.paths < 1:
        raise ConfigurationError(f"run.paths must be >= 1, got {config.paths}")
    if config.buckets < 1:
        raise ConfigurationError(f"run.buckets must be >= 1, got {config.buckets}")


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc}")
    if not text.strip():
        raise ConfigurationError(f"config {path!r} is empty")
    return parse_config_text(text)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def serialize_config(config: RunConfig) -> str:
    """Render the configuration back to its file form, full precision."""
    out = io.StringIO()

    def section(name: str, items: List[Tuple[str, str]]):
        out.write(f"[{name}]\n")
        for key, val in items:
            out.write(f"{key} = {val}\n")
        out.write("\n")

    section("model", [("penalty", _fmt(config.penalty)), ("horizon", _fmt(config.horizon))])

    if config.noise_kind == "normal":
        section(
            "noise",
            [
                ("kind", "normal"),
                ("mean", _fmt(config.noise_mean)),
                ("stddev", _fmt(config.noise_stddev)),
            ],
        )
    else:
        atoms = ", ".join(f"{_fmt(v)}:{_fmt(p)}" for v, p in config.noise_atoms)
        section("noise", [("kind", "discrete"), ("atoms", atoms)])

    if config.abatement_kind == "none":
        section("abatement", [("kind", "none")])
    elif config.abatement_kind == "power":
        section(
            "abatement",
            [
                ("kind", "power"),
                ("scale", _fmt(config.abatement_scale)),
                ("exponent", _fmt(config.abatement_exponent)),
            ],
        )
    else:
        points = ", ".join(f"{_fmt(p)}:{_fmt(v)}" for p, v in config.abatement_points)
        section("abatement", [("kind", "table"), ("points", points)])

    section("basis", [("size", _fmt(config.basis_size)), ("spacing", _fmt(config.basis_spacing))])

    solver_items = [("sample_size", _fmt(config.sample_size))]
    if config.inner_tolerance is not None:
        solver_items.append(("inner_tolerance", _fmt(config.inner_tolerance)))
    solver_items += [
        ("max_inner", _fmt(config.max_inner)),
        ("relaxation", _fmt(config.relaxation)),
    ]
    if config.tolerance is not None:
        solver_items.append(("tolerance", _fmt(config.tolerance)))
    solver_items += [
        ("max_iterations", _fmt(config.max_iterations)),
        ("expectation_method", config.expectation_method),
        ("quadrature_nodes", _fmt(config.quadrature_nodes)),
        ("grid_min", _fmt(config.grid_min)),
        ("grid_max", _fmt(config.grid_max)),
        ("grid_points", _fmt(config.grid_points)),
        ("extrapolate", "true" if config.extrapolate else "false"),
        ("pde_n_time", _fmt(config.pde_n_time)),
        ("pde_n_space", _fmt(config.pde_n_space)),
        ("pde_g_min", _fmt(config.pde_g_min)),
        ("pde_g_max", _fmt(config.pde_g_max)),
        ("sigma", ", ".join(_fmt(s) for s in config.sigma)),
    ]
    section("solver", solver_items)

    section(
        "run",
        [
            ("seed", _fmt(config.seed)),
            ("initial_state", _fmt(config.initial_state)),
            ("paths", _fmt(config.paths)),
            ("buckets", _fmt(config.buckets)),
        ],
    )
    return out.getvalue()
