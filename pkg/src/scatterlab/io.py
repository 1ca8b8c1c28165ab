"""Reading configurations and writing tables, JSON records and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError


def load_yaml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping at the top level")
    return data


def dump_yaml(data, path):
    Path(path).write_text(yaml.safe_dump(to_plain(data), sort_keys=True, default_flow_style=None))


def to_plain(obj):
    """Convert numpy scalars/arrays (recursively) into plain Python objects."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows):
    """CSV with a fixed header; floats in shortest round-trip form."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def read_points_csv(path, n):
    """Initial conditions from a CSV with columns ``q1..qn,p1..pn`` (extra columns ignored)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"initial_conditions.file: not found: {path}")
    cols = [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in cols if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigurationError(f"initial_conditions.file: missing columns {missing}")
        return [[float(r[c]) for c in cols] for r in reader]


class _Encoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        return super().default(o)


def _clean(obj):
    # JSON has no nan/inf; write them as null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(to_plain(obj)), indent=1, sort_keys=True, cls=_Encoder) + "\n")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(to_plain(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict:
    import scipy
    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "pyyaml": yaml.__version__, "scatterlab": __version__}
