"""Run configuration: JSON documents validated against a strict schema."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from json.decoder import scanstring

import jsonschema
import numpy as np

from .errors import InvalidArgument
from .network import CertifyOptions, DynamicAgent, NetworkSpec, StaticGainAgent, TopologyMode, UavFleet, build_uav_network, canonical_uav_modes
from .riccati import QuadrotorParams, StateSpace, randomize_fleet

BUILTIN_UAV = "paper-uav-4modes"

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_matrix = {"type": "array", "items": {"type": "array", "items": _num}}
_diag = {"type": "array", "items": _pos, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj(
    {
        "fleet": _obj(
            {
                "nominal": _obj({k: _pos for k in QuadrotorParams.__dataclass_fields__}),
                "count": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "range": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
            }
        ),
        "lqr": _obj({"Q_diag": _diag, "R_diag": _diag}),
        "topology": {
            "oneOf": [
                _obj({"builtin": {"enum": [BUILTIN_UAV]}}, ["builtin"]),
                _obj(
                    {
                        "agents": {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "oneOf": [
                                    _obj(
                                        {"kind": {"const": "dynamic"}, "name": {"type": "string"}, "A": _matrix, "B": _matrix},
                                        ["kind", "A", "B"],
                                    ),
                                    _obj(
                                        {"kind": {"const": "static"}, "name": {"type": "string"}, "K": _matrix},
                                        ["kind", "K"],
                                    ),
                                ]
                            },
                        },
                        "modes": {
                            "type": "array",
                            "minItems": 1,
                            "items": _obj({"id": {"type": "integer"}, "H": _matrix}, ["id", "H"]),
                        },
                    },
                    ["agents", "modes"],
                ),
            ]
        },
        "certify": _obj(
            {
                "box_bound": _pos,
                "coupling_margin": {"type": "number", "minimum": 0},
                "agent_margin": {"type": "number", "minimum": 0},
                "tol": {"type": "number", "minimum": 0},
                "iter_cap": {"type": "integer", "minimum": 1},
                "gap_tol": _pos,
                "time_limit": _pos,
            }
        ),
        "simulate": _obj(
            {
                "dt": _pos,
                "horizon": _pos,
                "n_switches": {"type": "integer", "minimum": 0},
                "min_dwell": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "rotor_scale": {"type": "number", "minimum": 0},
                "input_scale": {"type": "number", "minimum": 0},
            }
        ),
        "bench": _obj(
            {
                "repetitions": {"type": "integer", "minimum": 1},
                "full_time_limit": _pos,
            }
        ),
    }
)


class ConfigError(InvalidArgument):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


def _skip_ws(text, pos):
    while pos < len(text) and text[pos] in " \t\r\n":
        pos += 1
    return pos


def locate(text: str, path) -> int:
    """1-based line of the value at ``path`` (keys and list indices) in JSON ``text``.

    Falls back to the deepest container that exists.
    """
    dec = json.JSONDecoder()
    pos = _skip_ws(text, 0)
    for key in path:
        if pos >= len(text):
            break
        ch = text[pos]
        found = None
        if ch == "{" and isinstance(key, str):
            p = _skip_ws(text, pos + 1)
            while p < len(text) and text[p] == '"':
                name, p = scanstring(text, p + 1)
                p = _skip_ws(text, p)
                p = _skip_ws(text, p + 1)  # ':'
                if name == key:
                    found = p
                    break
                _, p = dec.raw_decode(text, p)
                p = _skip_ws(text, p)
                if p < len(text) and text[p] == ",":
                    p = _skip_ws(text, p + 1)
        elif ch == "[" and isinstance(key, int):
            p = _skip_ws(text, pos + 1)
            i = 0
            while p < len(text) and text[p] != "]":
                if i == key:
                    found = p
                    break
                _, p = dec.raw_decode(text, p)
                p = _skip_ws(text, p)
                if p < len(text) and text[p] == ",":
                    p = _skip_ws(text, p + 1)
                i += 1
        if found is None:
            break
        pos = found
    return text.count("\n", 0, pos) + 1


@dataclass
class FleetConfig:
    nominal: QuadrotorParams = field(default_factory=QuadrotorParams)
    count: int = 9
    seed: int = 0
    range: tuple[float, float] = (2 / 3, 4 / 3)


@dataclass
class LqrConfig:
    Q_diag: tuple[float, ...] = (100.0,) * 6 + (10.0,) * 6
    R_diag: tuple[float, ...] = (1.0,) * 4


@dataclass
class SimulateConfig:
    dt: float = 1 / 24
    horizon: float = 180.0
    n_switches: int = 15
    min_dwell: float = 1.0
    seed: int = 0
    rotor_scale: float = 1000.0
    input_scale: float = 1.0


@dataclass
class BenchConfig:
    repetitions: int = 3
    full_time_limit: float | None = None


@dataclass
class RunConfig:
    fleet: FleetConfig = field(default_factory=FleetConfig)
    lqr: LqrConfig = field(default_factory=LqrConfig)
    topology: dict = field(default_factory=lambda: {"builtin": BUILTIN_UAV})
    certify: CertifyOptions = field(default_factory=CertifyOptions)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    @property
    def builtin(self) -> bool:
        return "builtin" in self.topology

    def with_seed(self, seed: int) -> "RunConfig":
        """Same configuration with fleet and simulation seeds replaced."""
        from dataclasses import replace

        return replace(
            self, fleet=replace(self.fleet, seed=int(seed)), simulate=replace(self.simulate, seed=int(seed))
        )

    def to_dict(self) -> dict:
        d = {
            "fleet": {
                "nominal": asdict(self.fleet.nominal),
                "count": self.fleet.count,
                "seed": self.fleet.seed,
                "range": list(self.fleet.range),
            },
            "lqr": {"Q_diag": list(self.lqr.Q_diag), "R_diag": list(self.lqr.R_diag)},
            "topology": self.topology,
            "certify": {k: v for k, v in asdict(self.certify).items() if v is not None},
            "simulate": asdict(self.simulate),
            "bench": {k: v for k, v in asdict(self.bench).items() if v is not None},
        }
        return d


def _section(cls, doc, convert=None):
    kwargs = dict(doc or {})
    if convert:
        kwargs = convert(kwargs)
    return cls(**kwargs)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse and validate a JSON configuration; errors carry the source line."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", exc.lineno, source) from exc
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        where = "/".join(str(p) for p in path) or "(root)"
        raise ConfigError(f"{where}: {err.message}", locate(text, path), source)

    def fleet(d):
        if "nominal" in d:
            d["nominal"] = QuadrotorParams(**d["nominal"])
        if "range" in d:
            lo, hi = d["range"]
            if lo > hi:
                raise ConfigError("fleet/range: lower bound exceeds upper bound", locate(text, ["fleet", "range"]), source)
            d["range"] = (float(lo), float(hi))
        return d

    def lqr(d):
        return {k: tuple(float(x) for x in v) for k, v in d.items()}

    try:
        return RunConfig(
            fleet=_section(FleetConfig, doc.get("fleet"), fleet),
            lqr=_section(LqrConfig, doc.get("lqr"), lqr),
            topology=doc.get("topology", {"builtin": BUILTIN_UAV}),
            certify=_section(CertifyOptions, doc.get("certify")),
            simulate=_section(SimulateConfig, doc.get("simulate")),
            bench=_section(BenchConfig, doc.get("bench")),
        )
    except ConfigError:
        raise
    except InvalidArgument as exc:
        raise ConfigError(str(exc), None, source) from exc


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, str(path))


@dataclass
class Instance:
    """Network built from a configuration plus what the simulator needs to know."""

    network: NetworkSpec
    fleet: UavFleet | None
    disturbance_scales: np.ndarray
    state_groups: list


def build_instance(cfg: RunConfig) -> Instance:
    if cfg.builtin:
        if cfg.fleet.count != 9:
            raise InvalidArgument("the builtin formation needs count = 9")
        lo, hi = cfg.fleet.range
        params = randomize_fleet(cfg.fleet.nominal, cfg.fleet.count, cfg.fleet.seed, lo, hi)
        Q = np.diag(cfg.lqr.Q_diag)
        R = np.diag(cfg.lqr.R_diag)
        fleet = build_uav_network(params, Q, R, canonical_uav_modes(12))
        net = fleet.network
        n_rotor = sum(a.in_dim for a in net.agents if isinstance(a, DynamicAgent))
        n_ctrl = sum(a.in_dim for a in net.agents if isinstance(a, StaticGainAgent))
        scales = np.concatenate([np.full(n_rotor, cfg.simulate.rotor_scale), np.full(n_ctrl, cfg.simulate.input_scale)])
    else:
        agents = []
        for k, a in enumerate(cfg.topology["agents"]):
            name = a.get("name", f"agent{k}")
            if a["kind"] == "dynamic":
                agents.append(DynamicAgent(StateSpace(np.array(a["A"], float), np.array(a["B"], float)), name))
            else:
                agents.append(StaticGainAgent(np.array(a["K"], float), name))
        rows = tuple(a.in_dim for a in agents)
        cols = tuple(a.out_dim for a in agents)
        modes = [TopologyMode(int(m["id"]), np.array(m["H"], float).reshape(sum(rows), sum(cols)), rows, cols) for m in cfg.topology["modes"]]
        net = NetworkSpec(agents, modes)
        fleet = None
        scales = np.full(sum(rows), cfg.simulate.input_scale)
    ox = net.offsets(net.state_dims)
    groups = [slice(int(ox[k]), int(ox[k + 1])) for k, a in enumerate(net.agents) if a.state_dim > 0]
    return Instance(net, fleet, scales, groups)
