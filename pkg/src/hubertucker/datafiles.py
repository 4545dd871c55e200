"""On-disk formats: the dataset container, result CSV/JSON writers and the
resolved-config sidecars.

Dataset container (byte layout, version 1)
------------------------------------------
A dataset file is, in order:

1. the 8 magic bytes ``b"HTKDATA1"``;
2. a little-endian uint64 giving the byte length of the header;
3. the header: UTF-8 JSON with sorted keys holding ``format_version``,
   ``dims``, ``n``, ``seed``, ``noise`` (family/param/scale or null),
   ``spectrum`` (or null), ``has_ground_truth`` and free-form ``extra``;
4. the arrays ``design`` (n, p1, p2, p3), ``responses`` (n,) and, when
   present, ``ground_truth`` (p1, p2, p3), each serialized in the standard
   npy format, concatenated.

All arrays are float64, so the container round-trips bit-exactly, and no
timestamps or other environment-dependent bytes are written: identical
inputs give identical files.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format

from .samples import SampleSet
from .simulation import ERROR_TABLE_COLUMNS, ErrorTable, NoiseModel, SyntheticSpec

MAGIC = b"HTKDATA1"
FORMAT_VERSION = 1


def canonical_json(payload) -> str:
    """JSON with sorted keys and fixed separators; used for every JSON output
    so byte-identical content means identical results."""
    return json.dumps(payload, sort_keys=True, separators=(",", ": "),
                      indent=1, allow_nan=True)


def write_json(path, payload) -> None:
    Path(path).write_text(canonical_json(payload) + "\n", encoding="utf-8")


def write_config_sidecar(out_path, config: dict) -> Path:
    """Resolved-config JSON next to a non-JSON output file."""
    sidecar = Path(str(out_path) + ".config.json")
    write_json(sidecar, config)
    return sidecar


def save_dataset(path, samples: SampleSet, spec: SyntheticSpec | None = None,
                 extra: dict | None = None) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "dims": list(samples.dims),
        "n": samples.n,
        "seed": spec.seed if spec is not None else None,
        "noise": asdict(spec.noise) if spec is not None else None,
        "spectrum": list(spec.spectrum) if spec is not None else None,
        "has_ground_truth": samples.ground_truth is not None,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        npy_format.write_array(fh, np.ascontiguousarray(samples.design, dtype=float))
        npy_format.write_array(fh, np.ascontiguousarray(samples.responses, dtype=float))
        if samples.ground_truth is not None:
            npy_format.write_array(fh, np.ascontiguousarray(samples.ground_truth,
                                                            dtype=float))


def load_dataset(path) -> tuple[SampleSet, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a dataset container (bad magic)")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset format version "
                             f"{header.get('format_version')!r}")
        design = npy_format.read_array(fh)
        responses = npy_format.read_array(fh)
        ground_truth = npy_format.read_array(fh) if header["has_ground_truth"] else None
    return SampleSet(design=design, responses=responses,
                     ground_truth=ground_truth), header


def spec_from_header(header: dict) -> SyntheticSpec | None:
    """Rebuild the generating spec recorded in a dataset header, if any."""
    extra = header.get("extra") or {}
    if header.get("noise") is None or header.get("seed") is None \
            or "ranks" not in extra:
        return None
    return SyntheticSpec(
        dims=tuple(header["dims"]),
        ranks=tuple(extra["ranks"]),
        n=header["n"],
        noise=NoiseModel(**header["noise"]),
        spectrum=tuple(header["spectrum"]),
        seed=header["seed"],
    )


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_error_table_csv(path, table: ErrorTable) -> None:
    """Fixed column set, floats in full-precision repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ERROR_TABLE_COLUMNS)
        for row in table.rows:
            writer.writerow([_csv_cell(row[c]) for c in ERROR_TABLE_COLUMNS])


def write_rows_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(row[c]) for c in columns])
