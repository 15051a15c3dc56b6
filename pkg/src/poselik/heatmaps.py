"""Heatmap storage, local-maxima extraction and peak normalization.

A heatmap is one dense score grid per joint. Candidate keypoints are the
strict 8-connected local maxima of each grid; their scores are softmax
normalized into a per-joint probability distribution over candidate
locations, which is the representation every downstream likelihood
computation consumes.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    BadMagic,
    EmptyInput,
    JointOutOfRange,
    NonFiniteValue,
    OutOfBoundsCoordinate,
    SchemaError,
    TruncatedPayload,
    VersionUnsupported,
)
from .model import Pose

# Defaults for peak extraction: peaks below threshold_ratio * (global max)
# are dropped, and at most max_peaks survive per joint. Bounds the
# refinement search space without ever discarding the global maximum.
DEFAULT_THRESHOLD_RATIO = 0.05
DEFAULT_MAX_PEAKS = 10

_MAGIC = b"PSHM"
_VERSION = 1
_HEADER = struct.Struct("<4sIIII")  # magic, version, joints, height, width


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Per-joint score grids, shape (joints, height, width), float32."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise SchemaError(f"heatmap must be (joints, H, W), got shape {values.shape}")
        n, h, w = values.shape
        if n < 1 or h < 3 or w < 3:
            raise SchemaError(f"heatmap needs >=1 joint and a >=3x3 grid, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue("heatmap contains NaN or infinite scores")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def joints(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


class Peak(NamedTuple):
    """One candidate keypoint: grid cell, raw score, normalized probability."""

    loc: tuple[int, int]  # (row, col)
    score: float
    prob: float


@dataclass(frozen=True)
class PeakSet:
    """Per-joint candidate peaks, sorted by descending score."""

    peaks: tuple[tuple[Peak, ...], ...]

    @property
    def joint_count(self) -> int:
        return len(self.peaks)

    def counts(self) -> tuple[int, ...]:
        return tuple(len(p) for p in self.peaks)

    def locations(self, joint: int) -> np.ndarray:
        """(k, 2) float64 array of grid coordinates for one joint."""
        return np.array([p.loc for p in self.peaks[joint]], dtype=np.float64)

    def probs(self, joint: int) -> np.ndarray:
        return np.array([p.prob for p in self.peaks[joint]], dtype=np.float64)

    def argmax_locations(self) -> np.ndarray:
        """(N, 2) array of each joint's highest-scoring peak location."""
        return np.array([p[0].loc for p in self.peaks], dtype=np.float64)


def normalize_peaks(scores: Sequence[float]) -> list[float]:
    """Softmax of raw scores, computed with max subtraction for stability."""
    if len(scores) == 0:
        raise EmptyInput("cannot normalize an empty score list")
    arr = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("scores must be finite")
    shifted = np.exp(arr - arr.max())
    return list(shifted / shifted.sum())


def local_maxima(
    heatmap: Heatmap,
    joint: int,
    threshold_ratio: float = DEFAULT_THRESHOLD_RATIO,
    max_peaks: int = DEFAULT_MAX_PEAKS,
) -> tuple[Peak, ...]:
    """Candidate peaks for one joint.

    A peak is a cell strictly greater than its 8-connected neighbors
    (border cells compare only existing neighbors) with score at least
    ``threshold_ratio`` times the joint's global maximum. The global
    maximum cell is always kept, so a constant grid yields the single
    row-major-first cell with probability 1. Results are sorted by
    descending score, ties by row-major location, and truncated to the
    top ``max_peaks`` before softmax normalization.
    """
    if not 0 <= joint < heatmap.joints:
        raise JointOutOfRange(f"joint {joint} outside [0, {heatmap.joints})")
    if max_peaks < 1:
        raise SchemaError(f"max_peaks must be >= 1, got {max_peaks}")
    grid = heatmap.values[joint].astype(np.float64)
    h, w = grid.shape

    padded = np.full((h + 2, w + 2), -np.inf)
    padded[1:-1, 1:-1] = grid
    strict = np.ones((h, w), dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            strict &= grid > padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w]

    # np.argmax scans in row-major order, so ties resolve to the first cell.
    top_flat = int(np.argmax(grid))
    top_cell = (top_flat // w, top_flat % w)
    threshold = threshold_ratio * grid[top_cell]

    cells = [tuple(rc) for rc in np.argwhere(strict & (grid >= threshold))]
    if top_cell not in cells:
        # Plateaued or negative-valued global maximum: no strict cell
        # qualifies, or the threshold excluded it. Keep it regardless.
        cells.append(top_cell)

    cells.sort(key=lambda rc: (-grid[rc], rc[0], rc[1]))
    cells = cells[:max_peaks]
    scores = [float(grid[rc]) for rc in cells]
    probs = normalize_peaks(scores)
    return tuple(
        Peak(loc=(int(r), int(c)), score=s, prob=p)
        for (r, c), s, p in zip(cells, scores, probs)
    )


def extract_peaks(
    heatmap: Heatmap,
    threshold_ratio: float = DEFAULT_THRESHOLD_RATIO,
    max_peaks: int = DEFAULT_MAX_PEAKS,
) -> PeakSet:
    """Run :func:`local_maxima` on every joint of a heatmap."""
    return PeakSet(
        peaks=tuple(
            local_maxima(heatmap, j, threshold_ratio, max_peaks)
            for j in range(heatmap.joints)
        )
    )


# --- binary heatmap files ---------------------------------------------------

def write_heatmap_file(heatmap: Heatmap, path) -> None:
    """Write the PSHM binary format: 20-byte header + float32 LE payload."""
    n, h, w = heatmap.values.shape
    payload = np.ascontiguousarray(heatmap.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, n, h, w))
        fh.write(payload)


def read_heatmap_file(path) -> Heatmap:
    """Read a PSHM file, validating header fields against the payload."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        payload = fh.read()
    if len(header) < _HEADER.size or header[:4] != _MAGIC:
        raise BadMagic(f"{path}: not a PSHM heatmap file")
    _, version, n, h, w = _HEADER.unpack(header)
    if version != _VERSION:
        raise VersionUnsupported(f"{path}: version {version} unsupported (expected {_VERSION})")
    expected = n * h * w * 4
    if len(payload) != expected:
        raise TruncatedPayload(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(n, h, w)
    return Heatmap(values=values)


# --- synthetic rendering ----------------------------------------------------

def render_gaussian_heatmap(
    pose: Pose,
    height: int,
    width: int,
    peak_sigma: float,
    distractors: Iterable[tuple[int, tuple[float, float], float]] | None = None,
) -> Heatmap:
    """Render an isotropic Gaussian bump (amplitude 1) at each joint.

    ``distractors`` adds extra bumps as (joint, (row, col), amplitude)
    entries. Values are clipped to [0, 1]. Coordinates are (row, col) at
    grid resolution and must lie inside the grid.
    """
    if pose.dimension != 2:
        raise OutOfBoundsCoordinate("rendering requires 2D poses")
    if peak_sigma <= 0:
        raise SchemaError(f"peak_sigma must be > 0, got {peak_sigma}")
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    inv = 1.0 / (2.0 * peak_sigma * peak_sigma)

    def bump(row: float, col: float) -> np.ndarray:
        if not (0 <= row <= height - 1 and 0 <= col <= width - 1):
            raise OutOfBoundsCoordinate(
                f"coordinate ({row}, {col}) outside {height}x{width} grid"
            )
        return np.exp(-((rows - row) ** 2 + (cols - col) ** 2) * inv)

    maps = np.zeros((pose.n_joints, height, width), dtype=np.float64)
    for j in range(pose.n_joints):
        if pose.present[j]:
            row, col = pose.coordinates[j]
            maps[j] += bump(row, col)
    for joint, (row, col), amplitude in distractors or ():
        if not 0 <= joint < pose.n_joints:
            raise JointOutOfRange(f"distractor joint {joint} outside [0, {pose.n_joints})")
        maps[joint] += amplitude * bump(row, col)
    return Heatmap(values=np.clip(maps, 0.0, 1.0).astype(np.float32))


# --- manifests ----------------------------------------------------------------

def read_manifest(path) -> list[tuple[str, str]]:
    """Read a JSONL manifest of ``{"id": ..., "path": ...}`` lines.

    Relative paths resolve against the manifest's directory. Ids must be
    unique.
    """
    base = os.path.dirname(os.path.abspath(path))
    entries: list[tuple[str, str]] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                raise SchemaError(f"{path}:{lineno}: invalid JSON") from None
            if not isinstance(record, dict) or "id" not in record or "path" not in record:
                raise SchemaError(f"{path}:{lineno}: expected an object with 'id' and 'path'")
            sample_id = str(record["id"])
            if sample_id in seen:
                raise SchemaError(f"{path}:{lineno}: duplicate sample id {sample_id!r}")
            seen.add(sample_id)
            target = record["path"]
            if not os.path.isabs(target):
                target = os.path.join(base, target)
            entries.append((sample_id, target))
    return entries


def entropy_of_probs(probs: Sequence[float]) -> float:
    """Shannon entropy in nats; zero-probability entries contribute 0."""
    total = 0.0
    for p in probs:
        if p > 0.0:
            total -= p * math.log(p)
    return total
