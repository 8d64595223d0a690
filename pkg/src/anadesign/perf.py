"""The 16-metric performance vector, validity masks, and z-score statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# canonical metric order; fixed forever (dataset files, masks, and model
# outputs all index into this order)
METRICS = ("DCP", "VGain", "PGain", "CGain", "S11", "S22", "NF", "BW",
           "OscF", "TR", "OutP", "PSAT", "DE", "PAE", "PN", "VSwg")
METRIC_INDEX = {name: i for i, name in enumerate(METRICS)}
N_METRICS = len(METRICS)


def mask_from_names(names) -> np.ndarray:
    mask = np.zeros(N_METRICS)
    for name in names:
        if name not in METRIC_INDEX:
            raise KeyError(f"unknown metric {name!r}")
        mask[METRIC_INDEX[name]] = 1.0
    return mask


@dataclass
class PerformanceVector:
    """16 metric slots plus a per-slot validity mask (1 = defined)."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.values.shape != (N_METRICS,) or self.mask.shape != (N_METRICS,):
            raise ValueError(f"expected {N_METRICS} metric slots")

    @classmethod
    def from_dict(cls, metrics: dict[str, float | None]) -> "PerformanceVector":
        values = np.zeros(N_METRICS)
        mask = np.zeros(N_METRICS)
        for name, value in metrics.items():
            if name not in METRIC_INDEX:
                raise KeyError(f"unknown metric {name!r}")
            if value is None:
                continue
            idx = METRIC_INDEX[name]
            values[idx] = float(value)
            mask[idx] = 1.0
        return cls(values, mask)

    def to_dict(self, include_masked: bool = True) -> dict[str, float | None]:
        out: dict[str, float | None] = {}
        for i, name in enumerate(METRICS):
            out[name] = float(self.values[i]) if self.mask[i] else (None if include_masked else out.get(name))
        if not include_masked:
            out = {k: v for k, v in out.items() if v is not None}
        return out


@dataclass
class NormStats:
    """Per-metric mean/std fitted on masked-present training entries."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray, masks: np.ndarray,
            on_zero_std: str = "raise") -> "NormStats":
        """``values``/``masks`` are (n, 16); masked-out entries are ignored."""
        values = np.asarray(values, dtype=np.float64)
        masks = np.asarray(masks, dtype=np.float64)
        counts = masks.sum(axis=0)
        mean = np.zeros(N_METRICS)
        std = np.ones(N_METRICS)
        present = counts > 0
        mean[present] = (values * masks).sum(axis=0)[present] / counts[present]
        var = (masks * (values - mean) ** 2).sum(axis=0)
        std_raw = np.sqrt(np.where(present, var / np.maximum(counts, 1), 0.0))
        zero = present & (std_raw == 0.0)
        if zero.any():
            if on_zero_std == "raise":
                bad = [METRICS[i] for i in np.nonzero(zero)[0]]
                raise ValueError(f"zero std for present metric(s): {', '.join(bad)}")
            std_raw[zero] = 1.0
        std[present] = std_raw[present]
        return cls(mean, std)

    def normalize(self, pv: PerformanceVector) -> PerformanceVector:
        """Z-score present entries; absent entries are imputed with zeros."""
        z = np.where(pv.mask > 0, (pv.values - self.mean) / self.std, 0.0)
        return PerformanceVector(z, pv.mask.copy())

    def normalize_array(self, values: np.ndarray, masks: np.ndarray) -> np.ndarray:
        return np.where(masks > 0, (values - self.mean) / self.std, 0.0)

    def denormalize_array(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "NormStats":
        return cls(np.array(doc["mean"], dtype=np.float64),
                   np.array(doc["std"], dtype=np.float64))


def mean_relative_error(predicted: np.ndarray, target: np.ndarray,
                        mask: np.ndarray, floor: float = 1e-12) -> float:
    """Mean of |pred-target|/|target| over masked-present metrics."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no metrics defined under the mask")
    denom = np.maximum(np.abs(target[mask]), floor)
    return float(np.mean(np.abs(predicted[mask] - target[mask]) / denom))
