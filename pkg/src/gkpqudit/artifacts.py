"""Run configuration, CSV tables and run manifests.

Configs and manifests are JSON, numeric tables are CSV. Floats are written
with a fixed ``%.12g`` format so that repeated runs give identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import re
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .channels import NOISE_PRESETS, NoiseModel, noise_preset
from .errors import ConfigError

__all__ = [
    "COMMANDS",
    "RunConfig",
    "parse_rounds",
    "format_value",
    "write_csv",
    "csv_text",
    "write_json",
    "config_hash",
    "write_manifest",
    "load_config",
]

COMMANDS = (
    "build-code",
    "sbs-run",
    "measure-backaction",
    "lifetime",
    "error-budget",
    "tomo",
    "prep-optimize",
    "fidelity-sweep",
)

_NOISE_KEYS = {f.name for f in fields(NoiseModel)}

# filled in for fields left as None
COMMAND_DEFAULTS: dict[str, dict[str, Any]] = {
    "build-code": {"delta": 0.3, "rounds": (0,), "state": "mixed"},
    "sbs-run": {"delta": 0.3, "rounds": tuple(range(0, 301, 50)), "state": "vacuum"},
    "measure-backaction": {"delta": 0.3, "rounds": (0,), "state": "mixed"},
    "lifetime": {"delta": 0.3, "rounds": tuple(range(0, 101, 10)), "state": "mixed"},
    "error-budget": {"delta": "budget", "rounds": tuple(range(0, 81, 10)), "state": "mixed"},
    "tomo": {"delta": 0.3, "rounds": (300,), "state": "mixed"},
    "prep-optimize": {"delta": 0.34, "rounds": (0,), "state": "mixed", "fock": 80},
    "fidelity-sweep": {"delta": 0.3, "rounds": (0,), "state": "mixed"},
}


def parse_rounds(spec: str | Sequence[int]) -> tuple[int, ...]:
    """Parse ``"0,10,...,100"`` style round lists.

    ``...`` continues the arithmetic progression set by the two preceding
    entries up to the entry that follows it.

    Raises:
        ConfigError: On malformed input.
    """
    if not isinstance(spec, str):
        try:
            return tuple(int(x) for x in spec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"rounds must be integers: {spec!r}") from exc
    parts = [p.strip() for p in spec.split(",") if p.strip()]
    out: list[int] = []
    i = 0
    try:
        while i < len(parts):
            if parts[i] == "...":
                if len(out) < 2 or i + 1 >= len(parts):
                    raise ConfigError(f"'...' needs two entries before and one after: {spec!r}")
                step = out[-1] - out[-2]
                stop = int(parts[i + 1])
                if step <= 0 or (stop - out[-1]) % step:
                    raise ConfigError(f"'...' progression does not reach {stop}: {spec!r}")
                out.extend(range(out[-1] + step, stop, step))
                i += 1
                continue
            out.append(int(parts[i]))
            i += 1
    except ValueError as exc:
        raise ConfigError(f"cannot parse rounds {spec!r}") from exc
    if not out or out != sorted(set(out)) or out[0] < 0:
        raise ConfigError(f"rounds must be distinct, increasing and non-negative: {spec!r}")
    return tuple(out)


@dataclass
class RunConfig:
    """Validated settings of one CLI run.

    Attributes:
        command: One of :data:`COMMANDS`.
        d: Qudit dimension.
        delta: Envelope width; ``None`` picks the command default.
        fock: Cavity truncation; ``None`` picks the code default.
        tail_limit: Codeword weight allowed in the top Fock levels.
        noise_preset: Named noise model.
        noise: Overrides of individual :class:`NoiseModel` fields.
        rounds: Round checkpoints.
        seed: RNG seed.
        out: Output directory.
        threads: Worker count; 0 reads ``GKPSIM_THREADS``.
        grid: Phase-space grid ``{"extent", "points"}`` for ``tomo`` and ``sbs-run``.
        deltas: Sweep list for ``fidelity-sweep``.
        bases: Basis names; empty means all bases of ``d``.
        configs: Error-budget configurations; empty means all.
        mode: ``"dm"`` or ``"trajectory"``.
        shots: Trajectories per state.
        ecd_alpha: Conditional-displacement drive amplitude.
        min_round: First round used in decay fits.
        state: Input state: ``"vacuum"``, ``"mixed"``, ``"steady"`` or ``"<basis>:<k>"``.
        target: Target for ``prep-optimize``, ``"<basis>:<k>"``.
        target_fidelity: ``prep-optimize`` fails with exit code 3 below this value.
        depth: ECD circuit depth.
        restarts: Optimizer restarts.
        budget: Objective evaluations per restart.
        include_displacement: Restore the measurement back-action displacement.
    """

    command: str
    d: int = 2
    delta: float | None = None
    fock: int | None = None
    tail_limit: float = 1e-6
    noise_preset: str = "paper-device"
    noise: dict = field(default_factory=dict)
    rounds: tuple | str | None = None
    seed: int = 0
    out: str = "out"
    threads: int = 0
    grid: dict = field(default_factory=lambda: {"extent": 4.0, "points": 81})
    deltas: tuple = (0.25, 0.3, 0.35, 0.4, 0.45)
    bases: tuple = ()
    configs: tuple = ()
    mode: str = "dm"
    shots: int = 200
    ecd_alpha: float = 20.0
    min_round: int = 0
    state: str | None = None
    target: str = "Z:0"
    target_fidelity: float | None = None
    depth: int = 8
    restarts: int = 10
    budget: int = 2000
    include_displacement: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        for key, value in COMMAND_DEFAULTS[self.command].items():
            if getattr(self, key) is None:
                if value == "budget":
                    from .simulate import BUDGET_DELTA

                    value = BUDGET_DELTA.get(self.d, 0.3)
                setattr(self, key, value)
        if self.d not in (1, 2, 3, 4):
            raise ConfigError(f"d must be 1..4, got {self.d}")
        if self.delta is not None and not 0.05 <= float(self.delta) <= 0.6:
            raise ConfigError(f"delta must lie in [0.05, 0.6], got {self.delta}")
        if self.fock is not None and int(self.fock) < 10:
            raise ConfigError("fock truncation must be at least 10")
        if self.noise_preset not in NOISE_PRESETS:
            raise ConfigError(f"unknown noise preset {self.noise_preset!r}; choose from {sorted(NOISE_PRESETS)}")
        bad = set(self.noise) - _NOISE_KEYS
        if bad:
            raise ConfigError(f"unknown noise override keys {sorted(bad)}")
        self.rounds = parse_rounds(self.rounds)
        self.deltas = tuple(float(x) for x in self.deltas)
        self.bases = tuple(self.bases)
        self.configs = tuple(self.configs)
        if set(self.grid) - {"extent", "points"}:
            raise ConfigError(f"unknown grid keys {sorted(set(self.grid) - {'extent', 'points'})}")
        if self.mode not in ("dm", "trajectory"):
            raise ConfigError("mode must be 'dm' or 'trajectory'")
        for name in ("shots", "depth", "restarts", "budget"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.threads < 0 or self.min_round < 0 or self.seed < 0:
            raise ConfigError("threads, min_round and seed must be >= 0")
        if self.ecd_alpha <= 0:
            raise ConfigError("ecd_alpha must be > 0")
        if self.target_fidelity is not None and not 0 < self.target_fidelity <= 1:
            raise ConfigError("target_fidelity must lie in (0, 1]")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        """Build from a mapping, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "command" not in data:
            raise ConfigError("config needs a 'command'")
        try:
            return cls(**dict(data))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def noise_model(self) -> NoiseModel:
        try:
            return noise_preset(self.noise_preset).with_(**self.noise)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid noise overrides: {exc}") from exc


def load_config(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


# ------------------------------------------------------------------ output


def format_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float) or hasattr(v, "dtype") and getattr(v.dtype, "kind", "") == "f":
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.12g}"
    return str(v)


def csv_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.write_text(csv_text(columns, rows))
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    return obj


def write_json(path: str | Path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(data), sort_keys=True, indent=2) + "\n")
    return path


# settings that do not change results
_HASH_EXCLUDE = ("out", "threads")


def config_hash(config: Mapping) -> str:
    """SHA-256 of the canonical JSON config, ignoring output location and worker count."""
    data = {k: v for k, v in dict(config).items() if k not in _HASH_EXCLUDE}
    blob = json.dumps(_jsonable(data), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"gkpqudit": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def write_manifest(out_dir: str | Path, config: RunConfig, files: Sequence[Path], wall_time: float) -> Path:
    """Write ``manifest.json`` next to the data files.

    The manifest embeds the full config, its hash, package versions, the wall
    time and a SHA-256 digest of every data file. Only ``wall_time_s`` and
    ``timestamp`` change between identical runs.
    """
    cfg = config.to_dict()
    digests = {Path(p).name: hashlib.sha256(Path(p).read_bytes()).hexdigest() for p in files}
    manifest = {
        "config": cfg,
        "config_hash": config_hash(cfg),
        "versions": _versions(),
        "files": dict(sorted(digests.items())),
        "wall_time_s": round(wall_time, 3),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    return write_json(Path(out_dir) / "manifest.json", manifest)


_SAFE = re.compile(r"[^A-Za-z0-9_.-]+")


def safe_name(text: str) -> str:
    return _SAFE.sub("_", text)
