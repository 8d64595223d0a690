"""Dataset records (JSON-lines) and stratified splitting."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .perf import METRICS, N_METRICS, PerformanceVector


@dataclass
class Record:
    """One labeled sample: topology code, SI parameter values, raw metrics."""

    topology_id: str
    params: dict[str, float]
    metrics: dict[str, float | None]

    def performance(self) -> PerformanceVector:
        return PerformanceVector.from_dict(self.metrics)

    def to_json(self) -> str:
        return json.dumps({
            "topology_id": self.topology_id,
            "params": self.params,
            "metrics": {m: self.metrics.get(m) for m in METRICS},
        })

    @classmethod
    def from_json(cls, line: str) -> "Record":
        doc = json.loads(line)
        return cls(doc["topology_id"], doc["params"], doc["metrics"])


def save_jsonl(records: list[Record], path: str | Path) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records))


def load_jsonl(path: str | Path) -> list[Record]:
    lines = Path(path).read_text().splitlines()
    return [Record.from_json(line) for line in lines if line.strip()]


def metric_arrays(records: list[Record]) -> tuple[np.ndarray, np.ndarray]:
    """Stack raw metric values and masks into (n, 16) arrays."""
    values = np.zeros((len(records), N_METRICS))
    masks = np.zeros((len(records), N_METRICS))
    for i, rec in enumerate(records):
        pv = rec.performance()
        values[i] = pv.values
        masks[i] = pv.mask
    return values, masks


def stratified_split(records: list[Record], ratios=(0.8, 0.1, 0.1),
                     seed: int = 42, min_per_class: int = 10,
                     ) -> tuple[list[Record], list[Record], list[Record]]:
    """Shuffle within each class and split preserving class balance.

    Per-class proportions land within one sample of the requested ratios.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    by_class: dict[str, list[Record]] = {}
    for rec in records:
        by_class.setdefault(rec.topology_id, []).append(rec)
    splits: tuple[list[Record], ...] = ([], [], [])
    for label in sorted(by_class):
        group = by_class[label]
        n = len(group)
        if n < min_per_class:
            raise ValueError(f"class {label!r} has only {n} samples (need {min_per_class})")
        order = np.random.default_rng([seed, len(label), *map(ord, label)]).permutation(n)
        n_train = int(n * ratios[0] + 0.5)
        n_val = int(n * (ratios[0] + ratios[1]) + 0.5) - n_train
        cuts = (0, n_train, n_train + n_val, n)
        for part, lo, hi in zip(splits, cuts[:-1], cuts[1:]):
            part.extend(group[i] for i in order[lo:hi])
    return splits
