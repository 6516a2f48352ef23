"""Field snapshot files.

Layout: one line of JSON (terminated by ``\\n``) followed by a flat
little-endian float64 block.  Fields are stored one after another in the
order listed in the header, each in row-major order with ``u`` slowest;
complex fields are interleaved ``(re, im)``.  The validity mask (the
intersection of the field masks) is bit-packed and hex-encoded in the header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SnapshotFormatError
from .grid import Grid3, ScalarField

FORMAT = "unimodcr-snapshot"
VERSION = 1


@dataclass
class Snapshot:
    grid: Grid3
    fields: dict
    meta: dict


def write_snapshot(path, fields: dict, meta: dict | None = None) -> Path:
    if not fields:
        raise ValueError("nothing to write")
    grids = {f.grid for f in fields.values()}
    if len(grids) != 1:
        raise ValueError("all fields must share one grid")
    grid = grids.pop()
    mask = np.logical_and.reduce([f.mask for f in fields.values()])
    header = {
        "format": FORMAT,
        "version": VERSION,
        "dims": {"nx": grid.nx, "ny": grid.ny, "nu": grid.nu},
        "spacings": {"hx": grid.hx, "hy": grid.hy, "hu": grid.hu},
        "origin": list(grid.origin),
        "boundary_mode": grid.boundary_mode,
        "order": "row-major, u slowest (nu, ny, nx)",
        "fields": [{"name": k, "complex": not f.is_real} for k, f in fields.items()],
        "mask": np.packbits(mask.ravel()).tobytes().hex(),
        "meta": meta or {},
    }
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for f in fields.values():
            v = np.where(f.mask, f.values, np.nan) if f.is_real else np.where(f.mask, f.values, np.nan + 0j)
            if f.is_real:
                data = np.ascontiguousarray(v, dtype="<f8")
            else:
                data = np.ascontiguousarray(v, dtype=np.complex128).view("<f8")
            fh.write(data.tobytes())
    return path


def read_snapshot(path) -> Snapshot:
    with open(path, "rb") as fh:
        line = fh.readline()
        data = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotFormatError(f"{path} has no snapshot header") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise SnapshotFormatError(f"{path} is not a snapshot file")
    if header.get("version") != VERSION:
        raise SnapshotFormatError(f"{path}: unsupported snapshot version {header.get('version')}")
    if len(data) % 8:
        raise SnapshotFormatError(f"{path}: truncated data block")
    raw = np.frombuffer(data, dtype="<f8")
    d, h = header["dims"], header["spacings"]
    grid = Grid3(d["nx"], d["ny"], d["nu"], h["hx"], h["hy"], h["hu"], tuple(header["origin"]),
                 header["boundary_mode"])
    n = grid.size
    mask = np.unpackbits(np.frombuffer(bytes.fromhex(header["mask"]), dtype=np.uint8))[:n]
    mask = mask.astype(bool).reshape(grid.shape)
    expected = sum(2 * n if spec["complex"] else n for spec in header["fields"])
    if raw.size != expected:
        raise SnapshotFormatError(f"{path}: data block length does not match the header")
    fields = {}
    pos = 0
    for spec in header["fields"]:
        if spec["complex"]:
            v = raw[pos:pos + 2 * n].view(np.complex128).reshape(grid.shape)
            pos += 2 * n
        else:
            v = raw[pos:pos + n].reshape(grid.shape)
            pos += n
        fields[spec["name"]] = ScalarField(grid, v.copy(), mask)
    return Snapshot(grid, fields, header.get("meta", {}))
