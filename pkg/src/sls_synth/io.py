"""Output files: deterministic JSON and CSV, tube/iteration/rollout tables, run manifests.

Floats in CSV are written with ``%.17g`` and JSON floats use the shortest
round-trip repr, so re-running with the same inputs and seed reproduces the
files byte for byte.  Non-finite floats become ``null`` in JSON.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import os
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__

RNG_NAME = "numpy Philox via SeedSequence"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=1, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps_json(obj))
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and a float array of the body (``nan`` for empty cells)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    body = np.array([[float(c) if c != "" else np.nan for c in r] for r in rows[1:] if r], float)
    return header, body.reshape(-1, len(header))


# --------------------------------------------------------------------------
# tables
# --------------------------------------------------------------------------


def _state_labels(spec) -> list[str]:
    names = spec.dynamics.field_.state_names if spec.dynamics.field_ is not None else ()
    return list(names) if len(names) == spec.nx else [f"x{i}" for i in range(spec.nx)]


def _input_labels(spec) -> list[str]:
    return [f"u{i}" for i in range(spec.nu)]


def tube_rows(result):
    """Long format: one row per (k, coordinate); indices below ``nx`` are states, the rest inputs."""
    spec = result.spec
    labels = _state_labels(spec) + _input_labels(spec)
    for k in range(spec.T + 1):
        nominal = np.concatenate([result.z[k], result.v[k] if k < spec.T else np.full(spec.nu, np.nan)])
        b = spec.observation.noise_scale(result.z[k])
        for i, name in enumerate(labels):
            if k == spec.T and i >= spec.nx:
                continue
            yield k, i, result.radii[k, i], nominal[i], name, b


TUBE_HEADER = ("k", "state_index", "halfwidth", "nominal", "coord", "envelope")


def write_tubes_csv(path, result) -> Path:
    return write_csv(path, TUBE_HEADER, tube_rows(result))


ITERATION_HEADER = ("iteration", "step_norm", "J_traj", "J_tube", "merit", "violation", "min_slack",
                    "max_margin", "trust_radius", "accepted", "elastic", "boosted_rows", "qp_status",
                    "qp_iterations")


def write_iterations_csv(path, records) -> Path:
    return write_csv(path, ITERATION_HEADER, ([asdict(r)[h] for h in ITERATION_HEADER] for r in records))


ROLLOUT_HEADER = ("rollout_id", "k", "state_index", "value", "tube_lo", "tube_hi", "contained", "violated",
                  "terminal_ok", "diverged")


def rollout_rows(result, rollouts):
    """Long format: one row per (rollout, k, coordinate).

    Indices below ``nx`` are states, the rest inputs (absent at ``k = T``).
    The flags repeat per row: ``contained`` is for this coordinate, ``violated``
    for the whole step, ``terminal_ok`` and ``diverged`` for the whole rollout.
    """
    spec = result.spec
    for n, r in enumerate(rollouts):
        for k in range(spec.T + 1):
            nominal = np.concatenate([result.z[k], result.v[k]]) if k < spec.T else result.z[k]
            value = np.concatenate([r.x[k], r.u[k]]) if k < spec.T else r.x[k]
            for i in range(len(nominal)):
                rad = result.radii[k, i]
                yield [n, k, i, value[i], nominal[i] - rad, nominal[i] + rad, bool(r.contained[k, i]),
                       bool(r.violated[k]), r.terminal_ok, r.diverged]


def write_rollouts_csv(path, result, rollouts) -> Path:
    return write_csv(path, ROLLOUT_HEADER, rollout_rows(result, rollouts))


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(json.dumps(_clean(obj), sort_keys=True).encode()).hexdigest()


def _timestamp() -> str:
    """UTC time, pinned by ``SOURCE_DATE_EPOCH`` when set so manifests are reproducible."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (_dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc) if epoch
            else _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0))
    return when.isoformat()


@dataclass
class RunManifest:
    command: str
    seed: Optional[int]
    spec_sha256: Optional[str] = None
    tool_version: str = __version__
    rng: str = RNG_NAME
    python: str = field(default_factory=platform.python_version)
    numpy: str = np.__version__
    started: str = field(default_factory=_timestamp)
    finished: Optional[str] = None
    files: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def add(self, path) -> None:
        path = Path(path)
        self.files[path.name] = sha256_file(path)

    def write(self, out_dir) -> Path:
        """``manifest.json`` for synthesize, ``manifest_<command>.json`` otherwise, so runs sharing a
        directory keep each other's manifests."""
        self.finished = _timestamp()
        d = asdict(self)
        d["files"] = dict(sorted(self.files.items()))
        name = "manifest.json" if self.command == "synthesize" else f"manifest_{self.command.replace('-', '_')}.json"
        return write_json(Path(out_dir) / name, d)
