"""Closed-form maximum-likelihood fitting of link parameters.

Distance links fit a weighted mean and population standard deviation of
the parent-child distances; offset links fit the mean displacement and
its sample covariance (with a minimal ridge so the Cholesky
factorization succeeds). Both are exact MLE solutions, no iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, InsufficientData, PoseLikError, SchemaError
from .model import (
    SIGMA_FLOOR,
    DistanceParams,
    OffsetParams,
    Pose,
    PoseModelParams,
    Skeleton,
    _link_params_from_dict,
    _load_json,
    model_to_dict,
)

RIDGE_START = 1e-6


@dataclass(frozen=True, eq=False)
class LabeledPoseSet:
    """Complete poses over one skeleton, with optional per-pose weights."""

    skeleton: Skeleton
    poses: tuple[Pose, ...]
    weights: np.ndarray  # (n_poses,) positive float64

    def __post_init__(self) -> None:
        if len(self.poses) < 2:
            raise InsufficientData(
                f"need at least 2 labeled poses, got {len(self.poses)}"
            )
        for i, pose in enumerate(self.poses):
            if pose.n_joints != self.skeleton.n_joints:
                raise SchemaError(
                    f"pose #{i} has {pose.n_joints} joints, skeleton has "
                    f"{self.skeleton.n_joints}"
                )
            if pose.dimension != self.skeleton.dimension:
                raise SchemaError(
                    f"pose #{i} dimension {pose.dimension} != skeleton "
                    f"dimension {self.skeleton.dimension}"
                )
            if not pose.complete:
                raise InsufficientData(f"pose #{i} has missing joints")
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (len(self.poses),):
            raise SchemaError(
                f"weights shape {weights.shape} != ({len(self.poses)},)"
            )
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0.0):
            raise SchemaError("pose weights must be finite and positive")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    @classmethod
    def of(cls, skeleton: Skeleton, poses, weights=None) -> "LabeledPoseSet":
        poses = tuple(poses)
        if weights is None:
            weights = np.ones(len(poses))
        return cls(skeleton=skeleton, poses=poses, weights=weights)

    @property
    def n_poses(self) -> int:
        return len(self.poses)

    def displacements(self, parent: int, child: int) -> np.ndarray:
        """(n_poses, D) child-minus-parent displacement per pose."""
        return np.array(
            [pose.coordinates[child] - pose.coordinates[parent] for pose in self.poses]
        )


def fit_distance_params(data: LabeledPoseSet, parent: int, child: int) -> DistanceParams:
    """Weighted MLE of the distance-model normal for one link.

    Mean is the weighted average distance; sigma is the weighted population
    (biased, 1/n-style) standard deviation, floored at ``SIGMA_FLOOR`` so a
    degenerate sample still yields a usable density.
    """
    disp = data.displacements(parent, child)
    dist = np.sqrt((disp * disp).sum(axis=1))
    w = data.weights / data.weights.sum()
    mean = float(w @ dist)
    var = float(w @ (dist - mean) ** 2)
    sigma = max(np.sqrt(var), SIGMA_FLOOR)
    return DistanceParams(mean_distance=mean, sigma=float(sigma))


def fit_offset_params(data: LabeledPoseSet, parent: int, child: int) -> OffsetParams:
    """Weighted MLE of the offset-model multivariate normal for one link.

    Needs at least D+1 poses for a meaningful covariance. The sample
    covariance gets ``ridge * I`` added, with ridge escalating through
    powers of 10 from :data:`RIDGE_START` until the Cholesky
    factorization succeeds; the ridge is always applied so the result is
    strictly positive definite even for degenerate samples.
    """
    d = data.skeleton.dimension
    if data.n_poses < d + 1:
        raise InsufficientData(
            f"offset fit needs at least {d + 1} poses for dimension {d}, "
            f"got {data.n_poses}"
        )
    disp = data.displacements(parent, child)
    w = data.weights / data.weights.sum()
    mean = w @ disp
    centered = disp - mean
    cov = (w[:, None] * centered).T @ centered
    ridge = RIDGE_START
    while True:
        candidate = cov + ridge * np.eye(d)
        try:
            np.linalg.cholesky(candidate)
            break
        except np.linalg.LinAlgError:
            ridge *= 10.0
            if ridge > 1e12:  # pragma: no cover - covariance would be absurd
                raise
    return OffsetParams(offset=mean, covariance=candidate)


def fit_model(
    data: LabeledPoseSet,
    model_kind: str,
    root_params=None,
) -> PoseModelParams:
    """Fit every link of the skeleton from the labeled poses."""
    if model_kind not in ("distance", "offset"):
        raise SchemaError(f"unknown model_kind {model_kind!r}")
    fit = fit_distance_params if model_kind == "distance" else fit_offset_params
    link_params = tuple(
        fit(data, parent, child) for parent, child in data.skeleton.links
    )
    return PoseModelParams(
        skeleton=data.skeleton,
        link_params=link_params,
        model_kind=model_kind,
        root_params=root_params,
    )


# --- labeled-pose and per-image parameter files --------------------------------

def read_labeled_poses(path) -> list[tuple[str, Pose]]:
    """JSON-lines reader: one ``{"id": ..., "pose": [[...], ...]}`` per line."""
    records: list[tuple[str, Pose]] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or "id" not in record or "pose" not in record:
                raise SchemaError(f"{path}:{line_no}: expected keys 'id' and 'pose'")
            sample_id = str(record["id"])
            if sample_id in seen:
                raise SchemaError(f"{path}:{line_no}: duplicate pose id {sample_id!r}")
            seen.add(sample_id)
            try:
                coords = np.asarray(record["pose"], dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{line_no}: malformed pose array") from exc
            if coords.ndim != 2:
                raise SchemaError(f"{path}:{line_no}: pose must be a 2D array")
            records.append((sample_id, Pose.of(coords)))
    if not records:
        raise EmptyInput(f"{path}: no labeled poses")
    return records


def load_image_params(path, skeleton: Skeleton) -> dict[str, PoseModelParams]:
    """Per-image link parameters keyed by image id.

    The file holds ``{"model_kind": ..., "per_image": {id: entry}}`` where
    each entry has ``{"links": [...], "root": optional}`` in the same
    per-link layout as the shared model file. Every error names the image
    id it came from.
    """
    doc = _load_json(path)
    if not isinstance(doc, dict) or "per_image" not in doc:
        raise SchemaError(f"{path}: expected an object with a 'per_image' key")
    model_kind = doc.get("model_kind")
    if model_kind not in ("distance", "offset"):
        raise SchemaError(f"{path}: model_kind must be 'distance' or 'offset'")
    per_image = doc["per_image"]
    if not isinstance(per_image, dict):
        raise SchemaError(f"{path}: 'per_image' must be an object")
    out: dict[str, PoseModelParams] = {}
    for image_id, entry in per_image.items():
        if not isinstance(entry, dict) or "links" not in entry:
            raise SchemaError(f"{path}: image {image_id!r}: expected a 'links' array")
        links = entry["links"]
        if not isinstance(links, list) or len(links) != skeleton.n_links:
            raise SchemaError(
                f"{path}: image {image_id!r}: expected {skeleton.n_links} link entries"
            )
        try:
            link_params = tuple(
                _link_params_from_dict(item, where=f"links[{i}]")
                for i, item in enumerate(links)
            )
            root_entry = entry.get("root")
            root_params = (
                _link_params_from_dict(root_entry, where="root")
                if root_entry is not None
                else None
            )
            out[str(image_id)] = PoseModelParams(
                skeleton=skeleton,
                link_params=link_params,
                model_kind=model_kind,
                root_params=root_params,
            )
        except PoseLikError as exc:
            raise type(exc)(f"{path}: image {image_id!r}: {exc}") from exc
    return out


def save_model_with_meta(path, params: PoseModelParams, sample_count: int) -> None:
    """Write a fitted model plus the number of poses that produced it."""
    doc = model_to_dict(params)
    doc["fit"] = {"sample_count": int(sample_count)}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(doc, handle, indent=2, sort_keys=True)
        handle.write("\n")
