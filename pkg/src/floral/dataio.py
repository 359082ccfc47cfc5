"""On-disk formats: dataset manifests with raw float64 blobs, checkpoints.

A dataset directory holds ``manifest.json`` plus one ``<field>.bin`` per
field.  Blobs are raw little-endian float64, channel-major then row-major,
so any language can read them with the manifest alone.  Checkpoints are a
single file: a short preamble giving the byte length of a JSON header
(model/training config, parameter names, shapes, byte offsets) followed by
one little-endian float64 blob holding all parameters.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .grid import Domain
from .problems import Dataset, FieldSet, ICSpec, DegradeSpec, ProblemConfig


SCHEMA_VERSION = 1
_CKPT_MAGIC = b"FLORAL-CKPT v1\n"


class FormatError(ValueError):
    """Malformed manifest, truncated blob, or bad checkpoint."""


# ---------------------------------------------------------------------------
# Config and domain (de)serialization.

def problem_config_to_dict(config: ProblemConfig) -> dict:
    return dataclasses.asdict(config)


def problem_config_from_dict(data: dict) -> ProblemConfig:
    data = dict(data)
    known = {f.name for f in dataclasses.fields(ProblemConfig)}
    unknown = set(data) - known
    if unknown:
        raise FormatError(f"unknown problem config keys: {sorted(unknown)}")
    if "ic" in data:
        ic = dict(data["ic"])
        for key in ("amplitude_range", "phase_range"):
            if key in ic:
                ic[key] = tuple(ic[key])
        data["ic"] = ICSpec(**ic)
    if "degrade" in data:
        data["degrade"] = DegradeSpec(**data["degrade"])
    return ProblemConfig(**data)


def domain_to_dict(domain: Domain) -> dict:
    return {"bounds": [list(b) for b in domain.bounds],
            "periodic": list(domain.periodic)}


def domain_from_dict(data: dict) -> Domain:
    return Domain(tuple(tuple(float(x) for x in b) for b in data["bounds"]),
                  tuple(bool(p) for p in data["periodic"]))


# ---------------------------------------------------------------------------
# Dataset manifest + blobs.

def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Write manifest.json and one raw blob per field; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    descriptors = []
    for name, f in dataset.fields.items():
        blob = np.ascontiguousarray(f.values, dtype="<f8")
        file_name = f"{name}.bin"
        (out / file_name).write_bytes(blob.tobytes())
        descriptors.append({
            "name": name,
            "role": f.role,
            "shape": list(f.shape),
            "channels": f.channels,
            "dtype": "f64-le",
            "file": file_name,
            "byte_offset": 0,
            "domain": domain_to_dict(f.domain),
            "mean": float(np.mean(f.values)),
            "std": float(np.std(f.values)),
        })
    manifest = {
        "problem": dataset.problem,
        "schema_version": SCHEMA_VERSION,
        "count": dataset.count,
        "seed": dataset.seed,
        "config": problem_config_to_dict(dataset.config),
        "fields": descriptors,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path) -> Dataset:
    """Load a dataset directory (or its manifest path), validating blob sizes."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema version {manifest.get('schema_version')}")
    count = int(manifest["count"])
    fields = {}
    for desc in manifest["fields"]:
        if desc["dtype"] != "f64-le":
            raise FormatError(f"unsupported dtype {desc['dtype']!r}")
        shape = tuple(int(n) for n in desc["shape"])
        channels = int(desc["channels"])
        blob_path = path.parent / desc["file"]
        expected = count * channels * int(np.prod(shape)) * 8
        if not blob_path.exists():
            raise FormatError(f"missing blob {blob_path}")
        offset = int(desc.get("byte_offset", 0))
        actual = blob_path.stat().st_size - offset
        if actual != expected:
            raise FormatError(
                f"blob {blob_path.name}: {actual} bytes, expected {expected}")
        raw = np.fromfile(blob_path, dtype="<f8", offset=offset)
        values = raw.astype(np.float64).reshape((count, channels) + shape)
        fields[desc["name"]] = FieldSet(
            name=desc["name"], role=desc["role"],
            domain=domain_from_dict(desc["domain"]),
            shape=shape, channels=channels, values=values,
        )
    return Dataset(
        problem=manifest["problem"],
        config=problem_config_from_dict(manifest["config"]),
        count=count,
        seed=int(manifest["seed"]),
        fields=fields,
    )


# ---------------------------------------------------------------------------
# Checkpoints.

def save_checkpoint(path, config: dict, params: dict) -> None:
    """Write a single-file checkpoint: JSON header + float64 parameter blob."""
    names = sorted(params)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape),
                        "byte_offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = json.dumps({"config": config, "parameters": entries,
                         "blob_bytes": offset}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(f"{len(header)}\n".encode())
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint file; returns (config dict, name -> float64 array)."""
    try:
        with open(path, "rb") as fh:
            if fh.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
                raise FormatError(f"{path}: not a checkpoint file")
            length_line = fh.readline()
            try:
                header_len = int(length_line)
            except ValueError as exc:
                raise FormatError(f"{path}: bad header length") from exc
            header = json.loads(fh.read(header_len))
            blob = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) != header["blob_bytes"]:
        raise FormatError(
            f"{path}: blob is {len(blob)} bytes, header says {header['blob_bytes']}")
    params = {}
    for entry in header["parameters"]:
        shape = tuple(int(n) for n in entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = int(entry["byte_offset"])
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=start)
        params[entry["name"]] = arr.astype(np.float64).reshape(shape)
    return header["config"], params


# ---------------------------------------------------------------------------
# CSV helpers.

def write_metrics_csv(path, report) -> None:
    """Per-sample metric rows plus a final aggregate row."""
    lines = ["sample_index,rmse,nrmse,crmse,l2_error,pred_std"]
    for i, s in enumerate(report.samples):
        lines.append(f"{i},{s.rmse:.17g},{s.nrmse:.17g},{s.crmse:.17g},"
                     f"{s.l2_error:.17g},{s.pred_std:.17g}")
    lines.append(f"aggregate,{report.rmse:.17g},{report.nrmse:.17g},"
                 f"{report.crmse:.17g},{report.mean_l2_error:.17g},"
                 f"{report.mean_predictive_std:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_loss_csv(path, train_losses, validation_losses=None) -> None:
    lines = ["epoch,train_loss,validation_loss"]
    for i, loss in enumerate(train_losses):
        val = ""
        if validation_losses:
            val = f"{validation_losses[i]:.17g}"
        lines.append(f"{i},{loss:.17g},{val}")
    Path(path).write_text("\n".join(lines) + "\n")
