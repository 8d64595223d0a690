"""Performance-to-topology classification.

A 5-layer MLP (hidden width 256, relu) maps the z-scored 16-metric vector
to a distribution over candidate topologies. Missing metrics are imputed
with zeros after normalization, so the validity pattern itself carries
signal. Argmax ties break toward the lowest class index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad, save_weights, load_weights, softmax
from .dataset import Record, metric_arrays, stratified_split
from .nn import MLP, load_mlp_params, snapshot, restore
from .optim import Adam, PlateauScheduler
from .perf import N_METRICS, NormStats, PerformanceVector

HIDDEN = 256
N_AFFINE_LAYERS = 5


def normalize(y_raw: PerformanceVector, stats: NormStats) -> PerformanceVector:
    """Z-score present entries; absent entries become 0 with mask 0."""
    return stats.normalize(y_raw)


class ClassifierModel:
    def __init__(self, class_labels: list[str], stats: NormStats,
                 seed: int = 0, hidden: int = HIDDEN):
        self.class_labels = list(class_labels)
        self.stats = stats
        dims = [N_METRICS] + [hidden] * (N_AFFINE_LAYERS - 1) + [len(class_labels)]
        self.mlp = MLP(dims, np.random.default_rng(seed))

    def params(self) -> list[Tensor]:
        return self.mlp.params()

    def logits(self, x: Tensor) -> Tensor:
        return self.mlp(x)

    def probabilities(self, values: np.ndarray) -> np.ndarray:
        """Softmax class distribution for a batch of normalized vectors."""
        with no_grad():
            out = softmax(self.logits(Tensor(np.atleast_2d(values))), axis=-1)
        return out.data

    def save(self, stem: str | Path) -> None:
        stem = Path(stem)
        save_weights(stem.with_suffix(".weights.json"), self.mlp.named_params("mlp"))
        meta = {
            "class_labels": self.class_labels,
            "stats": self.stats.to_dict(),
            "hidden": HIDDEN,
        }
        stem.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, stem: str | Path) -> "ClassifierModel":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".meta.json").read_text())
        model = cls(meta["class_labels"], NormStats.from_dict(meta["stats"]),
                    hidden=meta["hidden"])
        named = load_weights(stem.with_suffix(".weights.json"))
        load_mlp_params(model.mlp, named, "mlp")
        return model


def predict_topology(y: PerformanceVector, model: ClassifierModel,
                     ) -> tuple[str, dict[str, float]]:
    """Most likely topology for a normalized target; ties go to the lowest index."""
    probs = model.probabilities(y.values)[0]
    best = int(np.argmax(probs))  # argmax returns the first (lowest) max index
    return model.class_labels[best], {
        label: float(p) for label, p in zip(model.class_labels, probs)}


def _cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    probs = softmax(logits, axis=-1)
    # clip-free: probs are strictly positive by construction
    return -(probs.log() * Tensor(onehot)).sum() * (1.0 / onehot.shape[0])


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[t, p] += 1
    return cm


def classification_report(cm: np.ndarray) -> dict:
    """Accuracy plus macro/micro aggregates from a confusion matrix.

    Macro metrics average per-class scores without weighting; micro pools
    counts (equal to accuracy in the single-label multiclass setting).
    """
    total = cm.sum()
    diag = np.diag(cm).astype(np.float64)
    row = cm.sum(axis=1).astype(np.float64)  # true counts
    col = cm.sum(axis=0).astype(np.float64)  # predicted counts
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(row > 0, diag / row, 0.0)
        precision = np.where(col > 0, diag / col, 0.0)
        f1 = np.where(precision + recall > 0,
                      2 * precision * recall / (precision + recall), 0.0)
    present = row > 0
    return {
        "accuracy": float(diag.sum() / total),
        "balanced_accuracy": float(recall[present].mean()),
        "macro_precision": float(precision[present].mean()),
        "macro_recall": float(recall[present].mean()),
        "macro_f1": float(f1[present].mean()),
        "micro_f1": float(diag.sum() / total),
    }


def _prepare(records: list[Record], labels: list[str], stats: NormStats,
             ) -> tuple[np.ndarray, np.ndarray]:
    values, masks = metric_arrays(records)
    x = stats.normalize_array(values, masks)
    label_idx = {c: i for i, c in enumerate(labels)}
    y = np.array([label_idx[r.topology_id] for r in records], dtype=np.intp)
    return x, y


def train_classifier(records: list[Record], seed: int = 42, epochs: int = 200,
                     batch_size: int = 256, lr: float = 1e-3,
                     patience: int = 10, ratios=(0.8, 0.1, 0.1),
                     ) -> tuple[ClassifierModel, dict]:
    """Cross-entropy training with Adam (batch 256) and early stopping."""
    train, val, test = stratified_split(records, ratios=ratios, seed=seed)
    labels = sorted({r.topology_id for r in records})
    for label in labels:
        if not any(r.topology_id == label for r in train):
            raise ValueError(f"class {label!r} empty in training split")

    values, masks = metric_arrays(train)
    stats = NormStats.fit(values, masks)
    model = ClassifierModel(labels, stats, seed=seed)
    x_train, y_train = _prepare(train, labels, stats)
    x_val, y_val = _prepare(val, labels, stats)
    x_test, y_test = _prepare(test, labels, stats)

    n_classes = len(labels)
    eye = np.eye(n_classes)
    opt = Adam(model.params(), lr=lr)
    sched = PlateauScheduler(opt)
    rng = np.random.default_rng(seed)
    best_val = np.inf
    best_state = snapshot(model.params())
    wait = 0
    history = []

    for epoch in range(epochs):
        order = rng.permutation(len(x_train))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            logits = model.logits(Tensor(x_train[idx]))
            loss = _cross_entropy(logits, eye[y_train[idx]])
            opt.zero_grad()
            loss.backward()
            opt.step()
        with no_grad():
            val_loss = _cross_entropy(model.logits(Tensor(x_val)), eye[y_val]).item()
        history.append(val_loss)
        sched.step(val_loss)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_state = snapshot(model.params())
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                break
    restore(model.params(), best_state)

    y_pred = np.argmax(model.probabilities(x_test), axis=1)
    cm = confusion_matrix(y_test, y_pred, n_classes)
    report = classification_report(cm)
    report["n_test"] = len(y_test)
    report["epochs_run"] = len(history)
    return model, report
