"""Deterministic CSV/JSON output with provenance headers."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .pmf import SparsePmf


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def model_hash(source: str) -> str:
    return hashlib.sha256(source.encode()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, columns, rows, chash: str) -> Path:
    """CSV preceded by ``#`` lines carrying the toolkit version and config hash."""
    path = Path(path)
    lines = [f"# tauleap {__version__}", f"# config_sha256 {chash}", ",".join(columns)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return rows[0].split(","), [r.split(",") for r in rows[1:]]


def write_json(path, payload: dict, chash: str) -> Path:
    path = Path(path)
    doc = {"tauleap_version": __version__, "config_sha256": chash, **payload}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


def write_pmf_csv(path, pmf: SparsePmf, species, chash: str) -> Path:
    states, w = pmf.to_arrays(len(species))
    rows = [list(s) + [p] for s, p in zip(states.tolist(), w.tolist())]
    return write_csv(path, list(species) + ["weight"], rows, chash)


def read_pmf_csv(path) -> SparsePmf:
    header, rows = read_csv(path)
    n = len(header) - 1
    return SparsePmf({tuple(int(v) for v in r[:n]): float(r[n]) for r in rows})
