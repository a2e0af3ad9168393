"""Run configuration files for the command-line front-end.

A run config is a YAML mapping with a ``schema_version`` header. Every
section is optional except ``seeds``; missing keys take the defaults of the
owning type. Example::

    schema_version: 1
    scenario: six_site
    mode: double            # single (sites at IP1) or double (sites at IP2);
                            # defaults to double when a pupil is given
    optics:
      superpixel: 1
    target:
      x0: [3.0e-3, 0.0]
      waist: 12.0e-6
    sites: [4, -4, 8, -8, 12, -12]
    pupil:
      d: 5.0                # IP1 waists from the pupil centre
      shape: square
    seeds: [0, 1, 2]
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .config import OpticalConfig
from .errors import ConfigError, DmdXtalkError
from .hologram import AddressingTarget
from .optics import DEFAULT_TERMS, ZERNIKE_TERMS
from .scenario import DEFAULT_BASELINE_DB, DEFAULT_CHARACTERIZED_RMS

SCHEMA_VERSION = 1
MODES = ("single", "double")


@dataclass(frozen=True)
class AberrationRecipe:
    """Synthetic FP1 aberration: characterized map plus an uncompensated residual.

    ``residual_rms=None`` tunes the residual so the baseline single-pass
    crosstalk at ``tune_site`` waists equals ``baseline_db``.
    """

    rms: float = DEFAULT_CHARACTERIZED_RMS
    terms: tuple = DEFAULT_TERMS
    residual_rms: float | None = None
    baseline_db: float = DEFAULT_BASELINE_DB
    tune_site: float = 4.0


@dataclass(frozen=True)
class RelayRecipe:
    rms: float | None = None
    seed: int = 0
    stray_floor: float = 0.0


@dataclass(frozen=True)
class PupilRecipe:
    """Pupil of size ``d`` IP1 waists, centred by beam-center calibration."""

    d: float = 5.0
    shape: str = "square"


@dataclass(frozen=True)
class ScanSettings:
    phase_points: int = 16
    amplitude_points: int = 8
    exclusion_threshold: float = 0.9
    seed_target: float = 0.4
    repair_rounds: int = 2


@dataclass(frozen=True)
class SweepSettings:
    d_values: tuple = (2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 16.0)
    include_open: bool = True


@dataclass(frozen=True)
class RunConfig:
    optics: OpticalConfig = field(default_factory=OpticalConfig)
    target: AddressingTarget = field(default_factory=AddressingTarget)
    sites: tuple = ()
    pupil: PupilRecipe | None = None
    aberration: AberrationRecipe = field(default_factory=AberrationRecipe)
    relay: RelayRecipe = field(default_factory=RelayRecipe)
    ifta_iterations: int = 10
    scans: ScanSettings = field(default_factory=ScanSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    seeds: tuple = (0,)
    output_dir: str = "out"
    scenario: str = "default"
    mode: str = "single"

    def with_overrides(self, seed: int | None = None, output_dir=None) -> "RunConfig":
        out = self
        if seed is not None:
            out = dataclasses.replace(out, seeds=(int(seed),))
        if output_dir is not None:
            out = dataclasses.replace(out, output_dir=str(output_dir))
        return out

    def to_dict(self) -> dict:
        opt = dataclasses.asdict(self.optics)
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "mode": self.mode,
            "optics": opt,
            "target": {"x0": list(self.target.X0), "waist": self.target.waist_request},
            "sites": list(self.sites),
            "pupil": None if self.pupil is None else dataclasses.asdict(self.pupil),
            "aberration": {**dataclasses.asdict(self.aberration), "terms": list(self.aberration.terms)},
            "relay": dataclasses.asdict(self.relay),
            "hologram": {"ifta_iterations": self.ifta_iterations},
            "scans": dataclasses.asdict(self.scans),
            "sweep": {"d_values": list(self.sweep.d_values), "include_open": self.sweep.include_open},
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)


# ----------------------------------------------------------------- loading


class _Located:
    """Source line of every mapping key and list item, keyed by path."""

    def __init__(self, node):
        self.lines: dict = {}
        self._walk(node, ())

    def _walk(self, node, path):
        self.lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            seen = set()
            for key_node, value_node in node.value:
                key = key_node.value
                if key in seen:
                    raise ConfigError(f"line {key_node.start_mark.line + 1}: duplicate key {_dotted(path + (key,))}")
                seen.add(key)
                self.lines[path + (key,)] = key_node.start_mark.line + 1
                self._walk(value_node, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                self._walk(item, path + (i,))


def _dotted(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


class _Reader:
    def __init__(self, located: _Located, source: str):
        self.located = located
        self.source = source

    def fail(self, path, message):
        line = self.located.lines.get(tuple(path))
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: {_dotted(path)}: {message}")

    def section(self, data, path, allowed):
        if data is None:
            return {}
        if not isinstance(data, dict):
            self.fail(path, "expected a mapping")
        for key in data:
            if key not in allowed:
                self.fail(tuple(path) + (key,), f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return data

    def number(self, value, path, integer=False, optional=False):
        if value is None and optional:
            return None
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a decimal point (12e-6) as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"expected a number, got {value!r}")
        if integer:
            if int(value) != value:
                self.fail(path, f"expected an integer, got {value!r}")
            return int(value)
        return float(value)

    def numbers(self, value, path, integer=False, length=None):
        if not isinstance(value, list):
            self.fail(path, "expected a list")
        if length is not None and len(value) != length:
            self.fail(path, f"expected {length} values, got {len(value)}")
        return tuple(self.number(v, tuple(path) + (i,), integer) for i, v in enumerate(value))

    def build(self, make, path):
        try:
            return make()
        except DmdXtalkError as exc:
            self.fail(path, str(exc))


def _fields(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls)}


def loads(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate a run config.

    Raises
    ------
    ConfigError
        With the file, line and dotted field path of the first problem.
    """
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}{line}: not valid YAML ({getattr(exc, 'problem', exc)})") from None
    if node is None:
        raise ConfigError(f"{source}: empty config")
    located = _Located(node)
    r = _Reader(located, source)
    top = r.section(yaml.safe_load(text), (), {"schema_version", "scenario", "mode", "optics", "target", "sites",
                                       "pupil", "aberration", "relay", "hologram", "scans", "sweep",
                                       "seeds", "output_dir"})
    if "schema_version" not in top:
        r.fail(("schema_version",), "missing; this reader understands version 1")
    if top["schema_version"] != SCHEMA_VERSION:
        r.fail(("schema_version",), f"unsupported version {top['schema_version']!r}; expected {SCHEMA_VERSION}")

    kw = {}
    if "scenario" in top:
        name = top["scenario"]
        if not isinstance(name, str) or not name or "/" in name or name.startswith("."):
            r.fail(("scenario",), "expected a non-empty name usable as a directory")
        kw["scenario"] = name
    if "mode" in top:
        if top["mode"] not in MODES:
            r.fail(("mode",), f"expected one of {', '.join(MODES)}")
        kw["mode"] = top["mode"]
    elif top.get("pupil") is not None:
        kw["mode"] = "double"
    if kw.get("mode") == "single" and top.get("pupil") is not None:
        r.fail(("pupil",), "a pupil needs mode: double")

    optics_fields = _fields(OpticalConfig)
    opt = r.section(top.get("optics"), ("optics",), set(optics_fields))
    values = {}
    for key, value in opt.items():
        ftype = optics_fields[key].type
        path = ("optics", key)
        if ftype == "str":
            if not isinstance(value, str):
                r.fail(path, "expected a string")
            values[key] = value
        else:
            values[key] = r.number(value, path, integer=(ftype == "int"))
    kw["optics"] = r.build(lambda: OpticalConfig(**values), ("optics",))

    tgt = r.section(top.get("target"), ("target",), {"x0", "waist"})
    tkw = {}
    if "x0" in tgt:
        tkw["X0"] = r.numbers(tgt["x0"], ("target", "x0"), length=2)
    if "waist" in tgt:
        tkw["waist_request"] = r.number(tgt["waist"], ("target", "waist"))
    target = r.build(lambda: AddressingTarget(**tkw), ("target",))
    r.build(lambda: target.check_inside(kw["optics"]), ("target", "x0") if "x0" in tgt else ("target",))
    kw["target"] = target

    if top.get("sites") is not None:
        sites = r.numbers(top["sites"], ("sites",))
        if len(set(sites)) != len(sites):
            r.fail(("sites",), "sites must be distinct")
        if any(s == 0 for s in sites):
            r.fail(("sites",), "a site cannot coincide with the addressed spot")
        kw["sites"] = sites

    if top.get("pupil") is not None:
        pup = r.section(top["pupil"], ("pupil",), {"d", "shape"})
        pkw = {}
        if "d" in pup:
            pkw["d"] = r.number(pup["d"], ("pupil", "d"))
            if not pkw["d"] > 0:
                r.fail(("pupil", "d"), "must be positive")
        if "shape" in pup:
            if pup["shape"] not in ("square", "circle"):
                r.fail(("pupil", "shape"), "expected square or circle")
            pkw["shape"] = pup["shape"]
        kw["pupil"] = PupilRecipe(**pkw)

    ab = r.section(top.get("aberration"), ("aberration",), set(_fields(AberrationRecipe)))
    akw = {}
    for key in ("rms", "baseline_db", "tune_site"):
        if key in ab:
            akw[key] = r.number(ab[key], ("aberration", key))
    if "residual_rms" in ab:
        akw["residual_rms"] = r.number(ab["residual_rms"], ("aberration", "residual_rms"), optional=True)
    if "terms" in ab:
        terms = ab["terms"]
        if not isinstance(terms, list) or not terms:
            r.fail(("aberration", "terms"), "expected a non-empty list")
        for i, t in enumerate(terms):
            if t not in ZERNIKE_TERMS:
                r.fail(("aberration", "terms", i), f"unknown term {t!r} (known: {', '.join(ZERNIKE_TERMS)})")
        akw["terms"] = tuple(terms)
    for key in ("rms", "residual_rms"):
        if akw.get(key) is not None and akw[key] < 0:
            r.fail(("aberration", key), "must be non-negative")
    kw["aberration"] = AberrationRecipe(**akw)

    rel = r.section(top.get("relay"), ("relay",), set(_fields(RelayRecipe)))
    rkw = {}
    if "rms" in rel:
        rkw["rms"] = r.number(rel["rms"], ("relay", "rms"), optional=True)
    if "seed" in rel:
        rkw["seed"] = r.number(rel["seed"], ("relay", "seed"), integer=True)
    if "stray_floor" in rel:
        rkw["stray_floor"] = r.number(rel["stray_floor"], ("relay", "stray_floor"))
    for key in ("rms", "stray_floor"):
        if rkw.get(key) is not None and rkw[key] < 0:
            r.fail(("relay", key), "must be non-negative")
    kw["relay"] = RelayRecipe(**rkw)

    holo = r.section(top.get("hologram"), ("hologram",), {"ifta_iterations"})
    if "ifta_iterations" in holo:
        n = r.number(holo["ifta_iterations"], ("hologram", "ifta_iterations"), integer=True)
        if n < 1:
            r.fail(("hologram", "ifta_iterations"), "must be at least 1")
        kw["ifta_iterations"] = n

    sc = r.section(top.get("scans"), ("scans",), set(_fields(ScanSettings)))
    skw = {}
    for key, f in _fields(ScanSettings).items():
        if key in sc:
            skw[key] = r.number(sc[key], ("scans", key), integer=(f.type == "int"))
    scans = ScanSettings(**skw)
    if scans.phase_points < 8:
        r.fail(("scans", "phase_points"), "need at least 8 phase samples")
    if scans.amplitude_points < 6:
        r.fail(("scans", "amplitude_points"), "need at least 6 amplitude samples")
    if not 0 < scans.exclusion_threshold <= 1:
        r.fail(("scans", "exclusion_threshold"), "must lie in (0, 1]")
    if not 0 < scans.seed_target <= 1:
        r.fail(("scans", "seed_target"), "must lie in (0, 1]")
    if scans.repair_rounds < 0:
        r.fail(("scans", "repair_rounds"), "must be non-negative")
    kw["scans"] = scans

    sw = r.section(top.get("sweep"), ("sweep",), {"d_values", "include_open"})
    wkw = {}
    if "d_values" in sw:
        d = r.numbers(sw["d_values"], ("sweep", "d_values"))
        if any(b < a for a, b in zip(d, d[1:])):
            r.fail(("sweep", "d_values"), "must be sorted ascending")
        if any(v <= 0 for v in d):
            r.fail(("sweep", "d_values"), "must be positive")
        wkw["d_values"] = d
    if "include_open" in sw:
        if not isinstance(sw["include_open"], bool):
            r.fail(("sweep", "include_open"), "expected true or false")
        wkw["include_open"] = sw["include_open"]
    kw["sweep"] = SweepSettings(**wkw)

    if "seeds" not in top:
        r.fail(("seeds",), "missing; give at least one integer seed")
    seeds = r.numbers(top["seeds"], ("seeds",), integer=True)
    if not seeds:
        r.fail(("seeds",), "must not be empty")
    if any(s < 0 for s in seeds):
        r.fail(("seeds",), "seeds must be non-negative")
    kw["seeds"] = seeds

    if "output_dir" in top:
        if not isinstance(top["output_dir"], str) or not top["output_dir"]:
            r.fail(("output_dir",), "expected a path")
        kw["output_dir"] = top["output_dir"]
    return RunConfig(**kw)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return loads(text, str(path))


def dump(config: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(config.dumps())
    return path
