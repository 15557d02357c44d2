"""
Plain-text artifacts: delimited tables with a provenance header and JSON
documents.

Every table starts with ``#`` lines carrying the package version, the
config hash, the seed and the column schema, followed by a CSV header row.
Floats are written with ``repr`` so reruns produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .gp import Dataset, GpModel, KernelSpec, posterior


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def provenance(cfg_hash: str, seed) -> dict:
    return {"version": __version__, "config_hash": cfg_hash, "seed": seed}


def write_table(path: Path, columns: Sequence[str], rows: Iterable[Sequence], cfg_hash: str,
                seed, note: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# skillset {__version__} config={cfg_hash} seed={seed}\n")
        if note:
            fh.write(f"# {note}\n")
        fh.write(f"# columns: {','.join(columns)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def read_table(path: Path) -> tuple[dict, list[dict]]:
    """Return ``(header fields, rows)``; numeric cells are parsed as floats."""
    meta, body = {}, []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            body.append(line)
    rows = []
    for rec in csv.DictReader(body):
        out = {}
        for k, v in rec.items():
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
        rows.append(out)
    return meta, rows


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return None if math.isnan(x) else x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# datasets and models
# ---------------------------------------------------------------------------


def dataset_columns(d_theta: int, d_alpha: int) -> list[str]:
    return [f"theta{i}" for i in range(d_theta)] + [f"alpha{i}" for i in range(d_alpha)] + ["y"]


def write_dataset(path: Path, data: Dataset, d_theta: int, cfg_hash: str, seed) -> Path:
    cols = dataset_columns(d_theta, data.dim - d_theta)
    rows = (list(x) + [y] for x, y in zip(data.points, data.values))
    return write_table(path, cols, rows, cfg_hash, seed, note=f"noise_std={data.noise_std!r} d_theta={d_theta}")


def read_dataset(path: Path) -> tuple[Dataset, int]:
    meta, rows = read_table(path)
    d_theta = int(meta["d_theta"])
    cols = [c for c in rows[0] if c != "y"] if rows else []
    X = np.array([[r[c] for c in cols] for r in rows], dtype=float)
    y = np.array([r["y"] for r in rows], dtype=float)
    if not rows:
        return Dataset.empty(d_theta, float(meta["noise_std"])), d_theta
    return Dataset(X, y, float(meta["noise_std"])), d_theta


def model_document(model: GpModel, d_theta: int, cfg_hash: str, seed, lml: float | None = None) -> dict:
    return {
        **provenance(cfg_hash, seed),
        "d_theta": d_theta,
        "d_alpha": model.dim - d_theta,
        "kernel": model.kernel.to_dict(),
        "noise_std": model.data.noise_std,
        "mean": model.mean,
        "lml": lml,
        "points": model.data.points,
        "values": model.data.values,
    }


def load_model(path: Path) -> tuple[GpModel, int, dict]:
    """Rebuild the posterior from a self-contained model document."""
    doc = read_json(path)
    spec = KernelSpec.from_dict(doc["kernel"])
    dim = doc["d_theta"] + doc["d_alpha"]
    X = np.asarray(doc["points"], dtype=float).reshape(-1, dim)
    data = Dataset(X, np.asarray(doc["values"], dtype=float), float(doc["noise_std"]))
    return posterior(data, spec, mean=float(doc.get("mean", 0.0))), int(doc["d_theta"]), doc
