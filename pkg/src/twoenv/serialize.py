"""On-disk formats: headered binary matrices, CSV export, JSON reports.

Dataset files: magic ``TEMX0001``, then little-endian uint64 row count N
and column count d, then N*d float64 sample values row-major, then N int8
labels, then N int8 environment tags.  Model files: magic ``TEVC0001``,
uint64 d, then d float64 weights.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import TwoEnvError
from .estimators import TwoPhaseDiagnostics
from .model import LabeledDataset, LinearModel
from .training import TrainTrace

DATASET_MAGIC = b"TEMX0001"
MODEL_MAGIC = b"TEVC0001"


def save_dataset(data: LabeledDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<QQ", data.n, data.d))
        fh.write(np.ascontiguousarray(data.X, dtype="<f8").tobytes())
        fh.write(data.y.astype(np.int8).tobytes())
        fh.write(data.env.astype(np.int8).tobytes())


def load_dataset(path) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if raw[:8] != DATASET_MAGIC:
        raise TwoEnvError(f"{path}: not a dataset file (bad magic)")
    n, d = struct.unpack("<QQ", raw[8:24])
    need = 24 + n * d * 8 + 2 * n
    if len(raw) != need:
        raise TwoEnvError(f"{path}: truncated or oversized dataset file")
    off = 24
    X = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    off += n * d * 8
    y = np.frombuffer(raw, dtype=np.int8, count=n, offset=off).astype(np.int64)
    off += n
    env = np.frombuffer(raw, dtype=np.int8, count=n, offset=off).astype(np.int64)
    return LabeledDataset(X.copy(), y, env)


def save_model(model: LinearModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", model.d))
        fh.write(np.ascontiguousarray(model.w, dtype="<f8").tobytes())


def load_model(path) -> LinearModel:
    raw = Path(path).read_bytes()
    if raw[:8] != MODEL_MAGIC:
        raise TwoEnvError(f"{path}: not a model file (bad magic)")
    (d,) = struct.unpack("<Q", raw[8:16])
    if len(raw) != 16 + d * 8:
        raise TwoEnvError(f"{path}: truncated or oversized model file")
    w = np.frombuffer(raw, dtype="<f8", count=d, offset=16)
    return LinearModel(w.copy())


def dataset_to_csv(data: LabeledDataset, path) -> None:
    """Human-inspectable export: y, env, then the d coordinates."""
    header = "y,env," + ",".join(f"x{j}" for j in range(data.d))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(data.n):
            coords = ",".join(repr(float(v)) for v in data.X[i])
            fh.write(f"{int(data.y[i])},{int(data.env[i])},{coords}\n")


def trace_to_csv(trace: TrainTrace, path) -> None:
    with open(path, "w") as fh:
        fh.write("iter,loss,penalty,train_err,margin\n")
        for row in zip(trace.iters, trace.loss, trace.penalty, trace.train_err, trace.margin):
            fh.write("%d,%.9g,%.9g,%.9g,%.9g\n" % row)


def diagnostics_to_json(diag: TwoPhaseDiagnostics, path=None) -> str:
    payload = {
        "w_1": [float(v) for v in diag.w_1],
        "w_2": [float(v) for v in diag.w_2],
        "constraint_coeffs": list(diag.constraint_coeffs),
        "v_pos": list(diag.v_pos),
        "v_neg": list(diag.v_neg),
        "chosen": diag.chosen,
        "scores": list(diag.scores),
        "split_seed": diag.split_seed,
    }
    text = json.dumps(payload, indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
