"""Serialization: model description JSON, raw field binaries, batches.

Model documents carry dims, run-length encoded labels, and per-region
(mean, kernel) entries; spectra are recomputed on load, so a document
pins a model exactly.  Field realizations are raw little-endian
float32/float64 row-major arrays with a JSON sidecar, the layout used by
scientific compressor benchmarks, so external arrays ingest directly.

All JSON is written with sorted keys and fixed indentation; byte-for-byte
reproducibility of outputs is part of the CLI contract.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .distortion import FieldArray
from .errors import ConfigError
from .field_model import (
    CovarianceKernel,
    Lattice,
    Partition,
    PiecewiseField,
    RegionModel,
    bccb_spectrum,
    region_spectrum,
    _rectangular_extent,
)
from .sampler import SampleBatch

MODEL_FORMAT = "latticerd-model"
BATCH_FORMAT = "latticerd-batch"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def dump_json(obj, path):
    """Deterministic JSON writer (sorted keys, fixed indent, trailing NL)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def encode_rle(labels):
    """Run-length encode a flat label array as [value, count] pairs."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    runs = []
    if labels.size == 0:
        return runs
    start = 0
    for i in range(1, labels.size + 1):
        if i == labels.size or labels[i] != labels[start]:
            runs.append([int(labels[start]), int(i - start)])
            start = i
    return runs


def decode_rle(runs, n):
    out = np.empty(n, dtype=np.int64)
    pos = 0
    for value, count in runs:
        out[pos : pos + count] = int(value)
        pos += count
    if pos != n:
        raise ConfigError(f"label runs cover {pos} sites, lattice has {n}")
    return out


def kernel_to_json(kernel):
    doc = {"kind": kernel.kind, "variance": kernel.variance}
    if kernel.length_scale is not None:
        doc["length_scale"] = kernel.length_scale
    if kernel.kind == "tabulated":
        lags = sorted(kernel.table)
        doc["table"] = {
            "lags": [list(h) for h in lags],
            "values": [kernel.table[h] for h in lags],
        }
        doc["compact_support"] = bool(kernel.compact_support)
    return doc


def kernel_from_json(doc):
    try:
        kind = doc["kind"]
        variance = float(doc["variance"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed kernel document: {exc}") from exc
    table = None
    if "table" in doc:
        table = {
            tuple(int(v) for v in h): float(val)
            for h, val in zip(doc["table"]["lags"], doc["table"]["values"])
        }
    try:
        return CovarianceKernel(
            kind=kind,
            variance=variance,
            length_scale=doc.get("length_scale"),
            table=table,
            compact_support=bool(doc.get("compact_support", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def model_to_json(field):
    regions = []
    for r in field.regions:
        entry = {"mean": r.mean, "kernel": kernel_to_json(r.kernel)}
        entry["spectrum_method"] = r.spectrum_method
        if r.tile_shape is not None:
            entry["tile_shape"] = list(r.tile_shape)
            entry["margin_sites"] = int(r.margin_sites)
        regions.append(entry)
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "dims": list(field.lattice.dims),
        "labels_rle": encode_rle(field.partition.labels),
        "regions": regions,
    }


def model_from_json(doc):
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"not a {MODEL_FORMAT} document")
    try:
        lattice = Lattice(tuple(int(d) for d in doc["dims"]))
        labels = decode_rle(doc["labels_rle"], lattice.n)
        region_docs = doc["regions"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed model document: {exc}") from exc
    partition = Partition.from_labels(labels)
    if partition.K != len(region_docs):
        raise ConfigError(
            f"{len(region_docs)} region entries for K={partition.K} labels"
        )
    coords = lattice.site_coords()
    regions = []
    for r, entry in enumerate(region_docs, start=1):
        kernel = kernel_from_json(entry["kernel"])
        mean = float(entry.get("mean", 0.0))
        tile_shape = entry.get("tile_shape")
        if tile_shape is not None:
            tile_shape = tuple(int(v) for v in tile_shape)
            margin = int(entry.get("margin_sites", 0))
            n_r = int(partition.region_sizes[r - 1])
            per_tile = int(np.prod(tile_shape))
            if (n_r - margin) % per_tile:
                raise ConfigError(
                    f"region {r}: {n_r} sites minus {margin} margin not a "
                    f"multiple of tile {tile_shape}"
                )
            lam = np.maximum(bccb_spectrum(kernel, tile_shape), 0.0)
            spectrum = np.concatenate(
                [np.tile(lam, (n_r - margin) // per_tile), np.full(margin, kernel.variance)]
            )
            spectrum = np.sort(spectrum)[::-1]
            regions.append(
                RegionModel(mean, kernel, spectrum, "bccb", tile_shape, margin)
            )
        else:
            sites = coords[partition.region_indices(r)]
            method = entry.get("spectrum_method", "auto")
            if method == "auto":
                method = "bccb" if _rectangular_extent(sites) is not None else "dense"
            spectrum = region_spectrum(kernel, sites, method=method)
            regions.append(RegionModel(mean, kernel, spectrum, method))
    return PiecewiseField(lattice=lattice, partition=partition, regions=tuple(regions))


def save_model(field, path):
    dump_json(model_to_json(field), path)


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return model_from_json(doc)


def save_field(field_array, base_path, dtype="float64"):
    """Write <base>.bin (raw little-endian row-major) and <base>.json."""
    if dtype not in _DTYPES:
        raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")
    data = field_array.values.astype(_DTYPES[dtype])
    with open(base_path + ".bin", "wb") as fh:
        fh.write(data.tobytes())
    dump_json(
        {
            "dims": list(field_array.lattice.dims),
            "dtype": dtype,
            "order": "row_major",
            "count": int(data.size),
        },
        base_path + ".json",
    )


def load_field(base_path):
    with open(base_path + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    if sidecar.get("order") != "row_major":
        raise ConfigError("only row_major field binaries are supported")
    dtype = sidecar["dtype"]
    if dtype not in _DTYPES:
        raise ConfigError(f"unsupported dtype {dtype!r}")
    data = np.fromfile(base_path + ".bin", dtype=_DTYPES[dtype])
    if data.size != sidecar["count"]:
        raise ConfigError(
            f"{base_path}.bin holds {data.size} values, sidecar says {sidecar['count']}"
        )
    lattice = Lattice(tuple(int(d) for d in sidecar["dims"]))
    return FieldArray(lattice=lattice, values=data.astype(np.float64))


def save_batch(batch, out_dir, dtype="float64", model_doc=None):
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for t, fa in enumerate(batch.fields):
        base = f"realization_{t:04d}"
        save_field(fa, os.path.join(out_dir, base), dtype=dtype)
        files.append(base)
    manifest = {
        "format": BATCH_FORMAT,
        "version": 1,
        "T": batch.T,
        "seed": batch.seed,
        "dims": list(batch.fields[0].lattice.dims),
        "dtype": dtype,
        "files": files,
        "model": model_doc,
    }
    dump_json(manifest, os.path.join(out_dir, "manifest.json"))


def load_batch(batch_dir):
    path = os.path.join(batch_dir, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no manifest.json in {batch_dir}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if manifest.get("format") != BATCH_FORMAT:
        raise ConfigError(f"not a {BATCH_FORMAT} directory")
    fields = [
        load_field(os.path.join(batch_dir, base)) for base in manifest["files"]
    ]
    model = None
    if manifest.get("model"):
        model = model_from_json(manifest["model"])
    return SampleBatch(fields=tuple(fields), seed=int(manifest.get("seed", 0)), model=model)
