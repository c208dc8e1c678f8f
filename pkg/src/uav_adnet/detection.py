"""Reconstruction-based anomaly detection on grid vectors.

A cell is anomalous when it is occupied in the input but the model declines
to reproduce it: ``input == 1`` and ``binarize(reconstruction) == 0``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grid import GridCell, GridVector, decode_index
from .nn import Network, reconstruct_batch

DEFAULT_THRESHOLD = 0.5
SWEEP_THRESHOLDS = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True, eq=False)
class AnomalyReport:
    input: GridVector
    reconstruction: np.ndarray
    m_grid: GridVector
    anomalous_cells: tuple[GridCell, ...]
    scene_anomalous: bool
    threshold: float

    def to_dict(self):
        return {
            "input": "".join(map(str, self.input.bits)),
            "reconstruction": [float(v) for v in self.reconstruction],
            "m_grid": "".join(map(str, self.m_grid.bits)),
            "anomalous_cells": [[c.row, c.col, c.category.label] for c in self.anomalous_cells],
            "scene_anomalous": self.scene_anomalous,
            "threshold": self.threshold,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _gps_arg(net, gps):
    return gps if net.config.use_gps else None


def reconstruct(net: Network, grid: GridVector, gps=None) -> np.ndarray:
    return reconstruct_batch(net, grid.bits, gps)[0]


def check_threshold(threshold) -> float:
    threshold = float(threshold)
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {threshold}")
    return threshold


def binarize(probs, threshold: float, spec=None) -> GridVector | np.ndarray:
    """``1`` where ``prob > threshold``. Returns a GridVector when ``spec`` is given."""
    threshold = check_threshold(threshold)
    bits = (np.asarray(probs, dtype=np.float64) > threshold).astype(np.uint8)
    return bits if spec is None else GridVector(spec, bits)


def flag_cells(input_grid: GridVector, m_grid: GridVector) -> tuple[GridCell, ...]:
    idx = np.flatnonzero((input_grid.bits == 1) & (m_grid.bits == 0))
    return tuple(decode_index(int(i), input_grid.spec) for i in idx)


def _report(grid, recon, threshold):
    m_grid = binarize(recon, threshold, grid.spec)
    cells = flag_cells(grid, m_grid)
    return AnomalyReport(grid, recon, m_grid, cells, bool(cells), threshold)


def detect(net: Network, sample, threshold: float = DEFAULT_THRESHOLD) -> AnomalyReport:
    threshold = check_threshold(threshold)
    recon = reconstruct(net, sample.grid, _gps_arg(net, sample.gps))
    return _report(sample.grid, recon, threshold)


def detect_many(net: Network, samples, threshold: float = DEFAULT_THRESHOLD) -> list[AnomalyReport]:
    """Batched :func:`detect` over a list of samples."""
    threshold = check_threshold(threshold)
    if not samples:
        return []
    X = np.stack([s.grid.bits for s in samples]).astype(np.float64)
    G = np.stack([s.gps for s in samples]) if net.config.use_gps else None
    recon = reconstruct_batch(net, X, G)
    return [_report(s.grid, r, threshold) for s, r in zip(samples, recon)]
