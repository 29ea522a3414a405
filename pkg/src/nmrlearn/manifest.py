"""
Run manifests and deterministic output writers.

A manifest pins everything that can change an output: command, validated
config, input file hashes, seed and tool version. Its id is a hash of those
fields, so re-running with the same manifest must give byte-identical files.
Wall-clock times and the thread count are deliberately left out; times go to
a ``run.log`` sidecar that is not an output.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__

MANIFEST_NAME = "manifest.json"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become the strings ``"inf"``, ``"-inf"``, ``"nan"``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def canonical_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    input_hashes: dict = field(default_factory=dict)
    tool_version: str = __version__
    outputs: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return sha256_bytes(canonical_json(self.config).encode())

    @property
    def manifest_id(self) -> str:
        key = {
            "command": self.command,
            "config_hash": self.config_hash,
            "input_hashes": self.input_hashes,
            "seed": self.seed,
            "tool_version": self.tool_version,
        }
        return sha256_bytes(canonical_json(key).encode())[:16]

    def add_input(self, name: str, path) -> None:
        self.input_hashes[name] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "manifest_id": self.manifest_id,
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "input_hashes": dict(sorted(self.input_hashes.items())),
            "seed": self.seed,
            "tool_version": self.tool_version,
            "outputs": dict(sorted(self.outputs.items())),
        }


class OutputWriter:
    """Writes files under ``out_dir`` and records their hashes in the manifest."""

    def __init__(self, out_dir, manifest: RunManifest):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = manifest

    def _write(self, name: str, text: str) -> Path:
        path = self.out / name
        data = text.encode("utf-8")
        path.write_bytes(data)
        self.manifest.outputs[name] = sha256_bytes(data)
        return path

    def json(self, name: str, obj) -> Path:
        body = {"manifest_id": self.manifest.manifest_id, **obj}
        return self._write(name, json.dumps(to_jsonable(body), indent=2, sort_keys=True, allow_nan=False) + "\n")

    def csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# manifest: {self.manifest.manifest_id}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])
        return self._write(name, buf.getvalue())

    def text(self, name: str, text: str) -> Path:
        return self._write(name, text)

    def finish(self) -> Path:
        path = self.out / MANIFEST_NAME
        path.write_text(json.dumps(to_jsonable(self.manifest.to_dict()), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def read_csv_rows(path) -> list[dict]:
    """Rows of a CSV written by :class:`OutputWriter` (``#`` lines skipped)."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
