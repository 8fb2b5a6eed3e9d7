"""Desk-scale victim classifier: softmax regression over hashed n-grams.

A bag-of-words model provably cannot learn a reposition trigger (the token
multiset never changes), so features include bigrams and trigrams over a
boundary-padded sequence. Hashing uses FNV-1a with a fixed offset basis, so
feature indices are identical across platforms and runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from orderbkd.corpus import LabeledExample, tokenize

HASH_BITS = 18
DIM = 1 << HASH_BITS

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_PAD_L = "<s>"
_PAD_R = "</s>"
_SEP = "\x1f"


class VictimError(Exception):
    pass


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def hash_feature(feature: str) -> int:
    return _fnv1a(feature.encode("utf-8")) & (DIM - 1)


def featurize(tokens: Sequence[str]) -> dict[int, int]:
    """Hashed counts of unigrams plus boundary-padded bigrams and trigrams."""
    counts: dict[int, int] = {}

    def add(feature: str) -> None:
        idx = hash_feature(feature)
        counts[idx] = counts.get(idx, 0) + 1

    padded = [_PAD_L, *tokens, _PAD_R]
    for tok in tokens:
        add("1" + _SEP + tok)
    for i in range(len(padded) - 1):
        add("2" + _SEP + padded[i] + _SEP + padded[i + 1])
    for i in range(len(padded) - 2):
        add("3" + _SEP + padded[i] + _SEP + padded[i + 1] + _SEP + padded[i + 2])
    return counts


@dataclass
class VictimModel:
    weights: np.ndarray  # (DIM, class_count)
    bias: np.ndarray  # (class_count,)
    class_count: int
    meta: dict = field(default_factory=dict)


def _to_csr(feature_maps: list[dict[int, int]]) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for fm in feature_maps:
        for idx in sorted(fm):
            indices.append(idx)
            data.append(float(fm[idx]))
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(feature_maps), DIM),
    )


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def train_victim(
    data: Sequence[LabeledExample],
    epochs: int = 13,
    learning_rate: float = 0.1,
    seed: int = 0,
    batch_size: int = 32,
    class_count: int | None = None,
) -> VictimModel:
    """Mini-batch cross-entropy training, shuffled per epoch under ``seed``."""
    if not data:
        raise VictimError("training data is empty")
    labels = np.array([ex.label for ex in data], dtype=np.int64)
    present = np.unique(labels)
    if class_count is None:
        class_count = int(labels.max()) + 1
    if len(present) < 2:
        raise VictimError("training data must contain at least two classes")
    if class_count < 2 or labels.max() >= class_count:
        raise VictimError(f"labels exceed class_count={class_count}")

    x = _to_csr([featurize(tokenize(ex.text).tokens) for ex in data])
    n = x.shape[0]
    onehot = np.zeros((n, class_count))
    onehot[np.arange(n), labels] = 1.0

    w = np.zeros((DIM, class_count))
    b = np.zeros(class_count)
    rng = np.random.default_rng(seed)
    loss_curve: list[float] = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, batch_size):
            rows = perm[start : start + batch_size]
            xb = x[rows]
            scores = xb @ w + b
            probs = _softmax(scores)
            total_loss += -float(np.log(probs[np.arange(len(rows)), labels[rows]] + 1e-300).sum())
            grad = (probs - onehot[rows]) / len(rows)
            b -= learning_rate * grad.sum(axis=0)
            per_nnz = np.repeat(np.arange(len(rows)), np.diff(xb.indptr))
            np.subtract.at(w, xb.indices, learning_rate * grad[per_nnz] * xb.data[:, None])
        epoch_loss = total_loss / n
        if not np.isfinite(epoch_loss):
            raise VictimError("training diverged: non-finite loss")
        loss_curve.append(epoch_loss)

    return VictimModel(
        weights=w,
        bias=b,
        class_count=class_count,
        meta={
            "epochs": epochs,
            "learning_rate": learning_rate,
            "seed": seed,
            "batch_size": batch_size,
            "loss_curve": loss_curve,
            "hash_bits": HASH_BITS,
        },
    )


def predict(model: VictimModel, tokens: Sequence[str]) -> tuple[int, np.ndarray]:
    """Argmax of affine scores; ties go to the lowest class index."""
    scores = model.bias.copy()
    for idx, count in featurize(tokens).items():
        scores += model.weights[idx] * count
    return int(np.argmax(scores)), scores


def predict_example(model: VictimModel, example: LabeledExample) -> int:
    return predict(model, tokenize(example.text).tokens)[0]


def save_victim(model: VictimModel, path: str | Path) -> None:
    header = json.dumps(
        {"version": 1, "dim": DIM, "class_count": model.class_count, "hash": "fnv1a64", **model.meta},
        sort_keys=True,
    )
    np.savez_compressed(Path(path), weights=model.weights, bias=model.bias, header=np.array(header))


def load_victim(path: str | Path) -> VictimModel:
    with np.load(Path(path), allow_pickle=False) as payload:
        header = json.loads(str(payload["header"]))
        if header.get("version") != 1 or header.get("dim") != DIM:
            raise VictimError(f"{path}: incompatible victim checkpoint header {header!r}")
        meta = {k: header[k] for k in header if k not in ("version", "dim", "class_count", "hash")}
        return VictimModel(
            weights=payload["weights"],
            bias=payload["bias"],
            class_count=int(header["class_count"]),
            meta=meta,
        )
