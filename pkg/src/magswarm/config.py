"""Scenario configuration: YAML files whose keys carry their SI units; unknown or missing keys are errors."""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

CONFIG_VERSION = 1
KINDS = ("track", "formation", "allocation", "design", "certify", "normalize")
MODELS = ("exact", "far", "surrogate")
PRESET_DIR = Path(__file__).parent / "presets"


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists one 'path: message' entry per field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class CoilSection:
    turns: int
    radius_m: float
    resistance_ohm: float


@dataclass
class TrackSection:
    """Anchored coil at the origin, floating coil on a tilted track (coaxial, one axis each)."""

    mass_kg: float
    coil: CoilSection
    initial_separation_m: float
    target_separation_m: float
    disturbance_N_per_kg: float
    compensate_disturbance: bool
    k_p_N_per_m: float
    k_d_N_s_per_m: float
    mu_max_A_m2: float
    omega_rad_s: float
    t_final_s: float
    steps_per_period: int
    steady_fraction: float


@dataclass
class FormationSection:
    masses_kg: list
    coil: CoilSection
    side_m: float
    perturbation_m: float
    edges: list
    frequencies_rad_s: list
    k_p_N_per_m: float
    k_d_N_s_per_m: float
    control_dt_s: float
    steps_per_control: int
    t_final_s: float
    starts: int


@dataclass
class AllocationSection:
    """Satellite poses and the commands of the first n-1 satellites; the last follows from momentum balance."""

    positions_m: list
    attitudes_mrp: list
    coil: CoilSection
    commands_N_Nm: list
    omega_rad_s: float
    starts: int


@dataclass
class DesignSection:
    wires: str
    m_coil_max_kg: float
    disturbance_N_per_kg: float
    H_coil_m: float
    d0_over_D: float
    thickness_ratio: float
    voltages_V: list
    D_range_m: list
    D_step_m: float
    half_factor: bool


@dataclass
class SurrogateSection:
    """Load ``model_path`` (relative paths: inside the output directory) when it exists, else train and save it there."""

    model_path: str
    samples: int
    epochs: int
    hidden: list
    annulus_loop_radii: list
    seed: int


@dataclass
class CertifySection:
    quant_levels: int
    quant_bits: int
    protect: int
    flips: list
    trials: int
    lipschitz_pairs: int
    track: TrackSection


@dataclass
class NormalizeSection:
    n: int
    edges: list
    k_A_per_s: float
    gamma: float
    k1: float
    omega_xy_rad_s: float
    theta11: float
    dt_orb_s: float
    dt_gnd_s: float
    trace: str


@dataclass
class ScenarioConfig:
    version: int
    scenario: str
    description: str
    kind: str
    seed: int
    model: str
    output_dir: str
    track: TrackSection = None
    formation: FormationSection = None
    allocation: AllocationSection = None
    design: DesignSection = None
    surrogate: SurrogateSection = None
    certify: CertifySection = None
    normalize: NormalizeSection = None
    source: str = field(default="", metadata={"internal": True})


OPTIONAL_SECTIONS = {"track", "formation", "allocation", "design", "surrogate", "certify", "normalize"}
REQUIRED_SECTION = {"track": "track", "formation": "formation", "allocation": "allocation", "design": "design",
                    "certify": "certify", "normalize": "normalize"}


def _strip_optional(tp):
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0]
    return tp


def _convert(value, tp, path, problems):
    tp = _strip_optional(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path, problems)
    if tp is bool:
        if not isinstance(value, bool):
            problems.append(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{path}: expected a number, got {value!r}")
            return value
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            problems.append(f"{path}: expected a string, got {value!r}")
        return value
    if tp is list:
        if not isinstance(value, list):
            problems.append(f"{path}: expected a list, got {value!r}")
        return value
    return value


def _build(cls, data, path, problems):
    if not isinstance(data, dict):
        problems.append(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
        return None
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    for key in data:
        if key not in fields:
            problems.append(f"{path + '.' if path else ''}{key}: unknown key")
    kwargs = {}
    for name, f in fields.items():
        sub = f"{path + '.' if path else ''}{name}"
        if name not in data:
            if f.default is dataclasses.MISSING or (cls is ScenarioConfig and name not in OPTIONAL_SECTIONS):
                problems.append(f"{sub}: missing")
            continue
        kwargs[name] = _convert(data[name], hints[name], sub, problems)
    if problems:
        return None
    return cls(**kwargs)


def _positive(obj, keys, path, problems):
    for k in keys:
        v = getattr(obj, k)
        if not (isinstance(v, (int, float)) and v > 0):
            problems.append(f"{path}.{k}: must be positive (got {v!r})")


def _matrix(value, cols, path, problems, rows=None):
    try:
        ok = all(len(r) == cols and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in r)
                 for r in value)
    except TypeError:
        ok = False
    if not ok or (rows is not None and len(value) != rows):
        want = f"{rows} x {cols}" if rows is not None else f"rows of {cols}"
        problems.append(f"{path}: expected a numeric list of {want}")


def _edges(edges, n, path, problems):
    for e in edges:
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(i, int) and 0 <= i < n for i in e) and e[0] != e[1]):
            problems.append(f"{path}: bad edge {e!r} (pairs of distinct indices below {n})")
            return


def _check_coil(c, path, problems):
    _positive(c, ("turns", "radius_m", "resistance_ohm"), path, problems)


def _check_track(t, path, problems):
    _positive(t, ("mass_kg", "initial_separation_m", "target_separation_m", "k_p_N_per_m", "k_d_N_s_per_m",
                  "mu_max_A_m2", "omega_rad_s", "t_final_s", "steps_per_period", "steady_fraction"), path, problems)
    _check_coil(t.coil, path + ".coil", problems)
    if t.steady_fraction >= 1:
        problems.append(f"{path}.steady_fraction: must be below 1")
    if t.disturbance_N_per_kg < 0:
        problems.append(f"{path}.disturbance_N_per_kg: must be non-negative")


def validate(cfg: ScenarioConfig):
    problems = []
    if cfg.version != CONFIG_VERSION:
        problems.append(f"version: unsupported config version {cfg.version} (expected {CONFIG_VERSION})")
    if cfg.kind not in KINDS:
        problems.append(f"kind: {cfg.kind!r} not one of {', '.join(KINDS)}")
    if cfg.model not in MODELS:
        problems.append(f"model: {cfg.model!r} not one of {', '.join(MODELS)}")
    need = REQUIRED_SECTION.get(cfg.kind)
    if need and getattr(cfg, need) is None:
        problems.append(f"{need}: section required for kind {cfg.kind!r}")
    if ((cfg.kind == "track" and cfg.model == "surrogate") or cfg.kind == "certify") and cfg.surrogate is None:
        problems.append("surrogate: section required for the surrogate model")
    if cfg.kind == "formation" and cfg.model == "surrogate":
        problems.append("model: the formation scenario supports 'exact' and 'far'")
    if cfg.kind == "allocation" and cfg.model == "surrogate":
        problems.append("model: allocation runs on the 'exact' or 'far' geometry")
    if cfg.track is not None:
        _check_track(cfg.track, "track", problems)
    if cfg.formation is not None:
        f = cfg.formation
        _positive(f, ("side_m", "k_p_N_per_m", "k_d_N_s_per_m", "control_dt_s", "steps_per_control", "t_final_s",
                      "starts"), "formation", problems)
        _check_coil(f.coil, "formation.coil", problems)
        if len(f.masses_kg) != 3 or not all(isinstance(m, (int, float)) and m > 0 for m in f.masses_kg):
            problems.append("formation.masses_kg: expected three positive masses")
        _edges(f.edges, 3, "formation.edges", problems)
        if len(f.frequencies_rad_s) < 2 or not all(isinstance(w, (int, float)) and w > 0 for w in f.frequencies_rad_s):
            problems.append("formation.frequencies_rad_s: need at least two positive frequencies")
    if cfg.allocation is not None:
        a = cfg.allocation
        n = len(a.positions_m)
        if n < 2:
            problems.append("allocation.positions_m: need at least two satellites")
        _matrix(a.positions_m, 3, "allocation.positions_m", problems)
        _matrix(a.attitudes_mrp, 3, "allocation.attitudes_mrp", problems, rows=n)
        _matrix(a.commands_N_Nm, 6, "allocation.commands_N_Nm", problems, rows=n - 1)
        _check_coil(a.coil, "allocation.coil", problems)
        _positive(a, ("omega_rad_s", "starts"), "allocation", problems)
    if cfg.design is not None:
        d = cfg.design
        _positive(d, ("m_coil_max_kg", "disturbance_N_per_kg", "H_coil_m", "d0_over_D", "thickness_ratio",
                      "D_step_m"), "design", problems)
        if len(d.D_range_m) != 2 or not 0 < d.D_range_m[0] < d.D_range_m[1]:
            problems.append("design.D_range_m: expected [low, high] with 0 < low < high")
        if not d.voltages_V or not all(isinstance(v, (int, float)) and v > 0 for v in d.voltages_V):
            problems.append("design.voltages_V: expected positive voltages")
    if cfg.surrogate is not None:
        s = cfg.surrogate
        _positive(s, ("samples", "epochs"), "surrogate", problems)
        if len(s.annulus_loop_radii) != 2 or not 2.0 < s.annulus_loop_radii[0] < s.annulus_loop_radii[1]:
            problems.append("surrogate.annulus_loop_radii: expected [low, high] with 2 < low < high")
        if not s.hidden or not all(isinstance(h, int) and h > 0 for h in s.hidden):
            problems.append("surrogate.hidden: expected positive layer widths")
    if cfg.certify is not None:
        c = cfg.certify
        _positive(c, ("quant_levels", "quant_bits", "trials", "lipschitz_pairs"), "certify", problems)
        if not 0 <= c.protect < c.quant_levels:
            problems.append("certify.protect: must leave at least one unprotected level")
        if not all(isinstance(k, int) and k >= 0 for k in c.flips):
            problems.append("certify.flips: expected non-negative integers")
        _check_track(c.track, "certify.track", problems)
    if cfg.normalize is not None:
        z = cfg.normalize
        _positive(z, ("n", "k_A_per_s", "gamma", "k1", "omega_xy_rad_s", "theta11", "dt_orb_s", "dt_gnd_s"),
                  "normalize", problems)
        _edges(z.edges, z.n, "normalize.edges", problems)
        if len(z.edges) != z.n - 1:
            problems.append("normalize.edges: expected a tree (n - 1 edges)")
    if problems:
        raise ConfigError(problems)
    return cfg


def from_dict(data, source=""):
    problems = []
    cfg = _build(ScenarioConfig, data, "", problems)
    if problems:
        raise ConfigError(problems)
    cfg.source = source
    return validate(cfg)


def load_config(path):
    """Read a config file, or a preset by name (``distance-1d`` etc.)."""
    p = Path(path)
    if not p.exists() and (PRESET_DIR / f"{path}.yaml").exists():
        p = PRESET_DIR / f"{path}.yaml"
    try:
        with open(p) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError([f"{path}: no such file or preset"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from None
    return from_dict(data, str(p))


def preset_names():
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml") if p.stem != "wires")


def resolve(cfg: ScenarioConfig, relative):
    """Paths in a config are relative to the config file (presets: to the preset directory)."""
    p = Path(relative)
    if p.is_absolute() or not cfg.source:
        return p
    return Path(cfg.source).parent / p
