"""CSV ingestion and model persistence."""

import csv
import json
import math
import os

import numpy as np

from .errors import DataError, EmptyFileError, MissingTargetError, ModelFormatError, \
    UnsupportedVersionError
from .learners import Dataset, FittedLearner
from .stacking import BaselineNet, ConstantWeights, StackedModel, StackNet

FORMAT_NAME = "featstack-model"
FORMAT_VERSION = 1


def read_numeric_csv(path):
    """Header and ``n x m`` float matrix of a headered, all-numeric CSV.

    Row numbers in errors count data rows from 1.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyFileError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}",
                            row=i)
        for j, cell in enumerate(row):
            text = cell.strip()
            if text == "":
                raise DataError(f"{path}: missing value at row {i}, column {header[j]!r}",
                                row=i, column=header[j])
            try:
                v = float(text)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell {text!r} at row {i}, column {header[j]!r}",
                    row=i, column=header[j]) from None
            if not math.isfinite(v):
                raise DataError(f"{path}: non-finite value {text!r} at row {i}, "
                                f"column {header[j]!r}", row=i, column=header[j])
            values[i - 1, j] = v
    return header, values


def load_csv(path, target_column):
    """Read a headered, all-numeric CSV into a :class:`Dataset`.

    Features are every non-target column in header order.
    """
    header, values = read_numeric_csv(path)
    if target_column not in header:
        raise MissingTargetError(
            f"{path}: target column {target_column!r} not found; available columns: "
            + ", ".join(header), column=target_column)
    if values.shape[0] == 0:
        raise EmptyFileError(f"{path}: header present but no data rows")
    t = header.index(target_column)
    feature_cols = [j for j in range(len(header)) if j != t]
    return Dataset(values[:, feature_cols], values[:, t], [header[j] for j in feature_cols])


def write_csv(path, data, target_column="y"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.column_names) + [target_column])
        for row, y in zip(data.features, data.target):
            w.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def _meta_to_dict(meta):
    if isinstance(meta, StackNet):
        return {"type": "stack_net", **meta.to_dict()}
    if isinstance(meta, ConstantWeights):
        return {"type": "constant", **meta.to_dict()}
    if isinstance(meta, BaselineNet):
        return {"type": "baseline", **meta.to_dict()}
    raise TypeError(f"cannot persist meta-learner of type {type(meta).__name__}")


def _meta_from_dict(d):
    kind = d["type"]
    if kind == "stack_net":
        return StackNet.from_dict(d)
    if kind == "constant":
        return ConstantWeights.from_dict(d)
    if kind == "baseline":
        return BaselineNet.from_dict(d)
    raise ModelFormatError(f"unknown meta-learner type {kind!r}")


def model_to_json(model, config=None, seed=None):
    payload = {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "feature_names": model.feature_names,
        "seed": seed,
        "config": config,
        "learners": [m.to_dict() for m in model.base_models],
        "meta": _meta_to_dict(model.meta),
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def model_from_json(text):
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model payload is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_NAME:
        raise ModelFormatError("payload is not a featstack model")
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(version, FORMAT_VERSION)
    try:
        learners = [FittedLearner.from_dict(d) for d in payload["learners"]]
        meta = _meta_from_dict(payload["meta"])
        return StackedModel(payload["kind"], meta, learners, payload["feature_names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"model payload is incomplete: {exc!r}") from exc


def save_model(model, path, config=None, seed=None):
    """Write ``model`` as versioned JSON; atomic via a temporary sibling file."""
    text = model_to_json(model, config, seed)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_model(path):
    with open(path) as fh:
        return model_from_json(fh.read())


def read_model_metadata(path):
    """The ``config`` and ``seed`` fields stored next to a model."""
    with open(path) as fh:
        payload = json.loads(fh.read())
    return {"config": payload.get("config"), "seed": payload.get("seed")}
