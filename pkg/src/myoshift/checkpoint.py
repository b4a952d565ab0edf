"""Model checkpoints: a JSON manifest plus one raw binary blob.

The blob holds every parameter array as little-endian float64, row-major,
concatenated in manifest order. The manifest records names, shapes, byte
offsets, model dimensions and a SHA-256 of the blob.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, MissingFileError
from .model import AdaptParams, HeadParams, LstmLayerParams, Model, RnnLayerParams, GATES

FORMAT = "myoshift-checkpoint"
VERSION = 1
LE_F64 = np.dtype("<f8")


def _blob_path(manifest_path: Path, manifest: dict) -> Path:
    return manifest_path.parent / manifest["blob"]


def save_checkpoint(model: Model, path) -> Path:
    """Write ``<path>`` (manifest) and ``<path stem>.bin``; returns the manifest path."""
    path = Path(path)
    if path.suffix != ".json":
        path = path / "checkpoint.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, arr in model.named_params().items():
        raw = np.ascontiguousarray(arr, dtype=LE_F64).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    blob_name = path.with_suffix(".bin").name
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": "<f8",
        "dims": model.dims(),
        "rnn_activations": (
            {"sigma_h": model.layers[0].sigma_h, "sigma_y": model.layers[0].sigma_y} if model.cell == "rnn" else None
        ),
        "params": entries,
        "blob": blob_name,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": model.meta,
    }
    (path.parent / blob_name).write_bytes(blob)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=False))
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoint.json"
    if not path.exists():
        raise MissingFileError(f"checkpoint manifest not found: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != FORMAT:
        raise FormatError(f"{path} is not a checkpoint manifest")
    if manifest.get("version") != VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('version')}")
    manifest["_path"] = str(path)
    return manifest


def load_checkpoint(path) -> Model:
    manifest = read_manifest(path)
    path = Path(manifest["_path"])
    blob_path = _blob_path(path, manifest)
    if not blob_path.exists():
        raise MissingFileError(f"checkpoint blob not found: {blob_path}")
    blob = blob_path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ChecksumError(f"checksum mismatch for {blob_path}")
    arrays = {}
    for e in manifest["params"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["nbytes"] != count * 8 or e["offset"] + e["nbytes"] > len(blob):
            raise FormatError(f"bad extent for parameter {e['name']}")
        arr = np.frombuffer(blob, dtype=LE_F64, count=count, offset=e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    dims = manifest["dims"]
    try:
        adapt = AdaptParams(arrays["adapt.M"], arrays["adapt.b"])
        layers = []
        for k in range(dims["layers"]):
            pre = f"layers.{k}."
            if dims["cell"] == "lstm":
                layers.append(LstmLayerParams(
                    **{"W_" + g: arrays[pre + "W_" + g] for g in GATES},
                    **{"b_" + g: arrays[pre + "b_" + g] for g in GATES},
                ))
            else:
                acts = manifest.get("rnn_activations") or {}
                layers.append(RnnLayerParams(
                    **{n: arrays[pre + n] for n in ("w_h", "u_h", "b_n", "w_y", "b_y")}, **acts
                ))
        head = HeadParams(
            arrays["head.W_fc"], arrays["head.b_fc"], arrays["head.W_out"], arrays["head.b_out"],
            activation=dims["head_activation"],
        )
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing parameter {exc}") from None
    return Model(adapt=adapt, layers=layers, head=head, dropout_p=dims["dropout_p"], meta=manifest.get("meta", {}))


def param_digests(path) -> dict[str, str]:
    """Per-parameter SHA-256 of the raw bytes, handy for diffing checkpoints."""
    manifest = read_manifest(path)
    blob = _blob_path(Path(manifest["_path"]), manifest).read_bytes()
    return {
        e["name"]: hashlib.sha256(blob[e["offset"]: e["offset"] + e["nbytes"]]).hexdigest()
        for e in manifest["params"]
    }
