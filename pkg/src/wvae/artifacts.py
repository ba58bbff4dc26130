"""On-disk formats: parameter files, PGM images, run-log CSVs and flat config files.

Parameter file layout (all integers little-endian uint32)::

    b"WVAE" | version | array count | per array: rows, cols, rows*cols float64 LE

Run-log and trace CSVs start with ``# key: value`` lines; the first one
names the schema and its version, and reading a different version fails.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import struct
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .idx import SIDE, to_bytes

MAGIC = b"WVAE"
PARAMS_VERSION = 1
RUNLOG_SCHEMA = "wvae-runlog/1"
TRACE_SCHEMA = "wvae-trace/1"
RUNLOG_COLUMNS = ("iteration", "recon", "kl", "w2sq", "t", "t_hat", "beta", "lambda", "total")
TRACE_COLUMNS = ("iteration", "T", "T_hat", "beta", "lambda")
PGM_HEADER = b"P5\n28 28\n255\n"


class ParamsFormatError(ValueError):
    pass


class SchemaVersionError(ValueError):
    pass


class ConfigError(ValueError):
    pass


# --- parameter files -----------------------------------------------------------------


def params_bytes(arrays: Sequence[np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<II", PARAMS_VERSION, len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype="<f8")
        if a.ndim != 2:
            raise ValueError("parameter arrays must be 2-D")
        out.append(struct.pack("<II", *a.shape))
        out.append(np.ascontiguousarray(a).tobytes())
    return b"".join(out)


def write_params(path, arrays: Sequence[np.ndarray]) -> None:
    Path(path).write_bytes(params_bytes(arrays))


def read_params(path) -> list[np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ParamsFormatError(f"{path}: not a parameter file (bad magic)")
    if len(data) < 12:
        raise ParamsFormatError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != PARAMS_VERSION:
        raise ParamsFormatError(f"{path}: format version {version}, expected {PARAMS_VERSION}")
    pos = 12
    arrays = []
    for _ in range(count):
        if pos + 8 > len(data):
            raise ParamsFormatError(f"{path}: truncated")
        rows, cols = struct.unpack_from("<II", data, pos)
        pos += 8
        nbytes = rows * cols * 8
        if pos + nbytes > len(data):
            raise ParamsFormatError(f"{path}: truncated")
        arrays.append(np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols).copy())
        pos += nbytes
    if pos != len(data):
        raise ParamsFormatError(f"{path}: trailing bytes")
    return arrays


# --- images ----------------------------------------------------------------------------


def pgm_bytes(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=np.float64).reshape(SIDE * SIDE)
    return PGM_HEADER + to_bytes(image).tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(pgm_bytes(image))


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(PGM_HEADER) or len(data) != len(PGM_HEADER) + SIDE * SIDE:
        raise ValueError(f"{path}: not a 28x28 binary PGM")
    return np.frombuffer(data, dtype=np.uint8, offset=len(PGM_HEADER)) / 255.0


# --- hashing / json ----------------------------------------------------------------------


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_json(path, obj: Any) -> None:
    Path(path).write_text(canonical_json(obj))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- CSV ---------------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _csv_text(schema: str, meta: dict, columns: Sequence[str], rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    for key in sorted(meta):
        buf.write(f"# {key}: {json.dumps(meta[key], sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def runlog_rows(log) -> list[tuple]:
    return [(r.iteration, r.recon, r.kl, r.w2sq, r.t, r.t_hat, r.beta, r.lam, r.total) for r in log.rows]


def write_runlog(path, log, meta: dict) -> None:
    Path(path).write_text(_csv_text(RUNLOG_SCHEMA, meta, RUNLOG_COLUMNS, runlog_rows(log)))


def _read_csv(path, schema: str, columns: Sequence[str]) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text().splitlines()
    meta = {}
    body_start = 0
    for i, line in enumerate(lines):
        if not line.startswith("# "):
            body_start = i
            break
        key, _, value = line[2:].partition(": ")
        meta[key] = value if key == "schema" else json.loads(value)
    else:
        body_start = len(lines)
    found = meta.get("schema")
    if found != schema:
        raise SchemaVersionError(f"{path}: schema {found!r}, expected {schema!r}")
    reader = csv.DictReader(lines[body_start:])
    if tuple(reader.fieldnames or ()) != tuple(columns):
        raise SchemaVersionError(f"{path}: unexpected columns {reader.fieldnames}")

    def parse(v: str):
        return None if v == "" else float(v)

    rows = [{k: parse(v) for k, v in row.items()} for row in reader]
    return meta, rows


def read_runlog(path) -> tuple[dict, list[dict]]:
    return _read_csv(path, RUNLOG_SCHEMA, RUNLOG_COLUMNS)


def write_trace(path, runlog_path) -> None:
    """Extract the schedule columns (iteration, T, T_hat, beta, lambda) of a run log."""
    meta, rows = read_runlog(runlog_path)
    meta = {k: v for k, v in meta.items() if k != "schema"}
    meta["source_sha256"] = file_hash(runlog_path)
    out = [
        (int(r["iteration"]), r["t"], r["t_hat"], r["beta"], r["lambda"])
        for r in rows
    ]
    Path(path).write_text(_csv_text(TRACE_SCHEMA, meta, TRACE_COLUMNS, out))


def read_trace(path) -> tuple[dict, list[dict]]:
    return _read_csv(path, TRACE_SCHEMA, TRACE_COLUMNS)


def write_table(path, columns: Sequence[str], rows, schema: str, meta: dict) -> None:
    Path(path).write_text(_csv_text(schema, meta, columns, rows))


# --- flat config files -----------------------------------------------------------------------


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str, defaults: dict) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, defaults[key])
    return values


def resolve_config(defaults: dict, file_path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file, then explicit overrides (highest precedence)."""
    config = dict(defaults)
    if file_path is not None:
        config.update(parse_config_text(Path(file_path).read_text(), defaults))
    for key, raw in (overrides or {}).items():
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r}")
        config[key] = _coerce(key, raw, defaults[key]) if isinstance(raw, str) else raw
    return config
