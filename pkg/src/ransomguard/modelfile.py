"""Versioned JSON model files.

Arrays are stored as base64 little-endian buffers so a save/load round trip
reproduces scores bit for bit.
"""
from __future__ import annotations

import base64
import datetime as _dt
import hashlib
import json

import numpy as np

from .classifiers import ClassifierSpec, TrainedModel, build_estimator
from .preprocess import Standardizer

FORMAT_NAME = "ransomguard-model"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def _encode(obj):
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        dtype = arr.dtype.newbyteorder("<")
        return {"__ndarray__": dtype.str, "shape": list(arr.shape),
                "data": base64.b64encode(arr.astype(dtype).tobytes()).decode("ascii")}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            raw = base64.b64decode(obj["data"])
            return np.frombuffer(raw, dtype=np.dtype(obj["__ndarray__"])).reshape(obj["shape"]).copy()
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def fingerprint_array(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def fingerprint_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def model_to_dict(model: TrainedModel, dataset_fingerprint: str | None = None,
                  created: str | None = None) -> dict:
    if created is None:
        created = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "spec": model.spec.to_dict(),
        "features": list(model.features),
        "standardizer": _encode(model.standardizer.to_dict()
                                | {"mean": model.standardizer.mean,
                                   "scale": model.standardizer.scale}),
        "params": _encode(model.estimator.get_params()),
        "metadata": {
            **_encode(model.metadata),
            "seed": model.spec.seed,
            "dataset_sha256": dataset_fingerprint,
            "created": created,
        },
    }


def model_from_dict(d: dict) -> TrainedModel:
    if d.get("format") != FORMAT_NAME:
        raise ModelFileError("not a ransomguard model file")
    if d.get("version") != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model file version {d.get('version')!r}")
    try:
        spec = ClassifierSpec(d["spec"]["kind"], d["spec"]["params"], d["spec"]["seed"])
        est = build_estimator(spec).set_params(_decode(d["params"]))
        std = Standardizer.from_dict(_decode(d["standardizer"]))
        features = tuple(d["features"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model file: {exc}") from None
    return TrainedModel(spec.kind, est, std, features, spec, dict(d.get("metadata", {})))


def save_model(model: TrainedModel, path, dataset_fingerprint: str | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, dataset_fingerprint), fh)


def load_model(path) -> TrainedModel:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(d)
