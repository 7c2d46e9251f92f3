"""Linear attribute probes: what a frozen embedding exposes to a linear
readout (softmax logistic regression, full-batch gradient descent).

Splits are identity-disjoint: identities carrying the attribute are
shuffled by a seeded generator and the first ``ceil(fraction * n)`` go to
the training side, so no identity straddles the split. The attribute name
``"dataset"`` reads the record's dataset tag instead of the attribute map,
which gives the dataset-of-origin probe over merged corpora.

Training standardizes features with train-split statistics and then folds
the standardization into the exported weights, so a ``ProbeModel`` always
predicts on raw embedding vectors.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import EmbeddingCorpus
from .metrics import roc_auc

_MAGIC = b"EMB1"


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 0.1
    max_epochs: int = 500
    l2: float = 1e-4
    tolerance: float = 1e-6


@dataclass(frozen=True)
class ProbeSplit:
    attribute: str
    fraction: float
    seed: int
    train_identities: tuple[str, ...]
    test_identities: tuple[str, ...]


@dataclass(eq=False)
class ProbeModel:
    weights: np.ndarray  # (classes, dim)
    bias: np.ndarray  # (classes,)
    classes: tuple[str, ...]
    config: ProbeConfig

    def logits(self, vectors) -> np.ndarray:
        x = np.asarray(vectors, dtype=np.float64)
        return x @ self.weights.T + self.bias

    def predict(self, vectors) -> np.ndarray:
        idx = np.argmax(self.logits(vectors), axis=1)
        return np.asarray(self.classes)[idx]


@dataclass(eq=False)
class ProbeReport:
    attribute: str
    accuracy: float
    per_class: list[tuple[str, float | None, int]]  # (label, accuracy, support)
    auc: float | None
    train_size: int
    test_size: int
    split: ProbeSplit

    def to_json_dict(self, config: dict | None = None) -> dict:
        obj: dict = {"kind": "probe_report"}
        if config is not None:
            obj["config"] = config
        obj.update(
            {
                "attribute": self.attribute,
                "accuracy": self.accuracy,
                "per_class": [
                    {"label": label, "accuracy": acc, "support": support}
                    for label, acc, support in self.per_class
                ],
                "auc": self.auc,
                "train_size": self.train_size,
                "test_size": self.test_size,
                "split": {
                    "fraction": self.split.fraction,
                    "seed": self.split.seed,
                    "train_identities": list(self.split.train_identities),
                    "test_identities": list(self.split.test_identities),
                },
            }
        )
        return obj


def _attribute_value(record, attribute: str) -> str | None:
    if attribute == "dataset":
        return record.dataset
    return record.attributes.get(attribute)


def identity_split(
    corpus: EmbeddingCorpus, attribute: str, fraction: float = 0.5, seed: int = 0
) -> ProbeSplit:
    """Identity-disjoint split over identities that carry the attribute."""
    if not (0.0 < fraction < 1.0):
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    labeled: list[str] = []
    seen = set()
    for rec in corpus.records:
        if rec.identity_id in seen:
            continue
        if _attribute_value(rec, attribute) is not None:
            labeled.append(rec.identity_id)
            seen.add(rec.identity_id)
    if not labeled:
        raise ValueError(f"attribute {attribute!r} is absent from all records")
    if len(labeled) < 2:
        raise ValueError(f"attribute {attribute!r} needs at least 2 labeled identities")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labeled))
    n_train = math.ceil(fraction * len(labeled))
    train = tuple(labeled[i] for i in order[:n_train])
    test = tuple(labeled[i] for i in order[n_train:])
    return ProbeSplit(
        attribute=attribute, fraction=fraction, seed=seed,
        train_identities=train, test_identities=test,
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_grad(weights, bias, x, onehot, l2):
    """Mean cross-entropy plus (l2/2)*||W||^2 and its gradients."""
    n = x.shape[0]
    logits = x @ weights.T + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[onehot.astype(bool)]))
    loss += 0.5 * l2 * float(np.sum(weights * weights))
    p = _softmax(logits)
    delta = (p - onehot) / n
    grad_w = delta.T @ x + l2 * weights
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


def train_probe(vectors, labels, config: ProbeConfig = ProbeConfig()) -> ProbeModel:
    """Full-batch gradient descent from zero init until the gradient's
    infinity norm drops below the tolerance or epochs run out."""
    x = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != labels.shape[0]:
        raise ValueError("vectors and labels must align")
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite training input")
    classes = tuple(sorted(set(labels.tolist())))
    if len(classes) < 2:
        raise ValueError("training labels contain a single class")
    index = {c: i for i, c in enumerate(classes)}
    onehot = np.zeros((x.shape[0], len(classes)))
    onehot[np.arange(x.shape[0]), [index[l] for l in labels.tolist()]] = 1.0

    weights = np.zeros((len(classes), x.shape[1]))
    bias = np.zeros(len(classes))
    for _ in range(config.max_epochs):
        _, grad_w, grad_b = _loss_and_grad(weights, bias, x, onehot, config.l2)
        grad_norm = max(np.abs(grad_w).max(), np.abs(grad_b).max())
        if grad_norm < config.tolerance:
            break
        weights -= config.learning_rate * grad_w
        bias -= config.learning_rate * grad_b
    return ProbeModel(weights=weights, bias=bias, classes=classes, config=config)


def eval_probe(model: ProbeModel, vectors, labels) -> dict:
    """Accuracy, per-class accuracy, and binary AUC from the positive-class
    logit (classes[1]); AUC is None for more than two classes."""
    x = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    known = set(model.classes)
    unknown = [l for l in labels.tolist() if l not in known]
    if unknown:
        raise ValueError(f"label {unknown[0]!r} was not in the training classes")
    predictions = model.predict(x)
    correct = predictions == labels
    accuracy = float(np.mean(correct))
    per_class: list[tuple[str, float | None, int]] = []
    for cls in model.classes:
        mask = labels == cls
        support = int(mask.sum())
        acc = float(np.mean(correct[mask])) if support else None
        per_class.append((cls, acc, support))
    auc = None
    if len(model.classes) == 2:
        scores = model.logits(x)[:, 1]
        positive = scores[labels == model.classes[1]]
        negative = scores[labels == model.classes[0]]
        if positive.size and negative.size:
            auc = roc_auc(positive, negative)
    return {"accuracy": accuracy, "per_class": per_class, "auc": auc}


def _gather(corpus: EmbeddingCorpus, identities: set[str], attribute: str):
    rows, labels = [], []
    for i, rec in enumerate(corpus.records):
        if rec.identity_id not in identities:
            continue
        value = _attribute_value(rec, attribute)
        if value is None:
            continue
        rows.append(i)
        labels.append(value)
    return corpus.vectors[rows].astype(np.float64), np.asarray(labels)


def run_attribute_probe(
    corpus: EmbeddingCorpus,
    attribute: str,
    fraction: float = 0.5,
    seed: int = 0,
    config: ProbeConfig = ProbeConfig(),
) -> tuple[ProbeReport, ProbeModel]:
    """Split, standardize, train, and evaluate one attribute probe."""
    split = identity_split(corpus, attribute, fraction, seed)
    x_train, y_train = _gather(corpus, set(split.train_identities), attribute)
    x_test, y_test = _gather(corpus, set(split.test_identities), attribute)
    if x_train.shape[0] == 0 or x_test.shape[0] == 0:
        raise ValueError("split left one side without labeled images")
    if len(set(y_train.tolist())) < 2:
        raise ValueError("training side has a single class; reseed the split")
    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0)
    std[std == 0.0] = 1.0
    model = train_probe((x_train - mean) / std, y_train, config)
    # fold the standardization into the affine map: W'(x-m)/s + b'
    weights = model.weights / std[None, :]
    bias = model.bias - weights @ mean
    folded = ProbeModel(weights=weights, bias=bias, classes=model.classes, config=config)
    result = eval_probe(folded, x_test, y_test)
    report = ProbeReport(
        attribute=attribute,
        accuracy=result["accuracy"],
        per_class=result["per_class"],
        auc=result["auc"],
        train_size=int(x_train.shape[0]),
        test_size=int(x_test.shape[0]),
        split=split,
    )
    return report, folded


# ---------------------------------------------------------------------------
# Serialization: weights in the EMB1 layout + JSON sidecar

def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_probe_model(model: ProbeModel, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", model.weights.shape[0], model.weights.shape[1]))
        fh.write(np.ascontiguousarray(model.weights, dtype="<f4").tobytes())
    meta = {
        "kind": "probe_model",
        "classes": list(model.classes),
        "bias": [float(b) for b in model.bias],
        "config": asdict(model.config),
    }
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, indent=2) + "\n")


def load_probe_model(path) -> ProbeModel:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not an EMB1 file (bad magic)")
        count, dim = struct.unpack("<II", fh.read(8))
        payload = fh.read(count * dim * 4)
    if len(payload) != count * dim * 4:
        raise ValueError(f"{path}: truncated payload")
    weights = np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float64)
    with open(_sidecar_path(path), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("kind") != "probe_model":
        raise ValueError(f"{path}: sidecar is not a probe_model descriptor")
    return ProbeModel(
        weights=weights,
        bias=np.asarray(meta["bias"], dtype=np.float64),
        classes=tuple(meta["classes"]),
        config=ProbeConfig(**meta["config"]),
    )
