"""Core skeletal model: joint tree, poses and per-link Gaussian parameters.

A skeleton is a directed tree over named joints with a designated root.
Each parent->child link carries Gaussian parameters in one of two shapes:

* distance model: a univariate normal over the euclidean parent-child
  distance (bone length),
* offset model: a multivariate normal over the child-minus-parent
  displacement vector.

All types are immutable after validation and safe to share between
threads.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .errors import (
    BadRootIndex,
    CovarianceNotSPD,
    CycleDetected,
    DimensionMismatch,
    DisconnectedJoint,
    DuplicateJointName,
    SchemaError,
    SigmaNonPositive,
)

# Smallest standard deviation accepted when loading or fitting parameters,
# in pixels. Keeps log-densities finite when a calibration collapses.
SIGMA_FLOOR = 1e-3

# Relative tolerance for the covariance symmetry check.
_SYMMETRY_RTOL = 1e-9


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Skeleton:
    """Directed joint tree. Build instances through :func:`validate_skeleton`."""

    joints: tuple[str, ...]
    root: int
    links: tuple[tuple[int, int], ...]
    dimension: int = 2

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @cached_property
    def parents(self) -> tuple[int, ...]:
        """Parent joint index per joint; -1 for the root."""
        out = [-1] * self.n_joints
        for parent, child in self.links:
            out[child] = parent
        return tuple(out)

    @cached_property
    def children_links(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per joint, the (link_index, child_joint) pairs hanging off it."""
        out: list[list[tuple[int, int]]] = [[] for _ in self.joints]
        for idx, (parent, child) in enumerate(self.links):
            out[parent].append((idx, child))
        return tuple(tuple(entries) for entries in out)

    @cached_property
    def bfs_joints(self) -> tuple[int, ...]:
        """Joint indices in breadth-first order from the root."""
        order, _ = _breadth_first(self.n_joints, self.root, self.links)
        return order

    @cached_property
    def link_order(self) -> tuple[int, ...]:
        """Link indices ordered so every parent joint is introduced first."""
        _, link_order = _breadth_first(self.n_joints, self.root, self.links)
        return link_order


def _breadth_first(
    n_joints: int,
    root: int,
    links: Sequence[tuple[int, int]],
    joint_names: Sequence[str] | None = None,
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """BFS over the link structure, raising on revisits and unreachable joints.

    Returns (joints in BFS order, link indices in parent-before-child order).
    """

    def name(j: int) -> str:
        return joint_names[j] if joint_names is not None else f"#{j}"

    by_parent: list[list[tuple[int, int]]] = [[] for _ in range(n_joints)]
    for idx, (parent, child) in enumerate(links):
        by_parent[parent].append((idx, child))

    seen = [False] * n_joints
    seen[root] = True
    joint_order = [root]
    link_order: list[int] = []
    queue = deque([root])
    while queue:
        joint = queue.popleft()
        for idx, child in by_parent[joint]:
            if seen[child]:
                raise CycleDetected(
                    f"joint {name(child)!r} is reachable along more than one "
                    f"path (second entry via link {idx})"
                )
            seen[child] = True
            joint_order.append(child)
            link_order.append(idx)
            queue.append(child)
    for joint, visited in enumerate(seen):
        if not visited:
            raise DisconnectedJoint(f"joint {name(joint)!r} is unreachable from the root")
    return tuple(joint_order), tuple(link_order)


def validate_skeleton(candidate: dict) -> Skeleton:
    """Validate a raw skeleton description and return a :class:`Skeleton`.

    ``candidate`` is a parsed configuration document::

        {"joints": ["head", "neck", ...],
         "root": "head",            # name or index
         "dimension": 2,
         "links": [["head", "neck"], ...]}   # name pairs or index pairs

    Raises :class:`DuplicateJointName`, :class:`BadRootIndex`,
    :class:`CycleDetected`, :class:`DisconnectedJoint` or
    :class:`SchemaError` naming the offending joint or link.
    """
    if not isinstance(candidate, dict):
        raise SchemaError("skeleton description must be a JSON object")
    try:
        raw_joints = candidate["joints"]
        raw_links = candidate["links"]
    except KeyError as exc:
        raise SchemaError(f"skeleton description missing key {exc.args[0]!r}") from None
    raw_root = candidate.get("root", 0)
    dimension = candidate.get("dimension", 2)

    if not isinstance(raw_joints, (list, tuple)) or not raw_joints:
        raise SchemaError("'joints' must be a non-empty list of names")
    joints: list[str] = []
    index_of: dict[str, int] = {}
    for pos, name in enumerate(raw_joints):
        if not isinstance(name, str) or not name:
            raise SchemaError(f"joint #{pos} has an empty or non-string name")
        if name in index_of:
            raise DuplicateJointName(f"joint name {name!r} appears more than once")
        index_of[name] = pos
        joints.append(name)
    n = len(joints)

    if dimension not in (2, 3):
        raise SchemaError(f"dimension must be 2 or 3, got {dimension!r}")

    if isinstance(raw_root, str):
        if raw_root not in index_of:
            raise BadRootIndex(f"root joint {raw_root!r} is not in the joint list")
        root = index_of[raw_root]
    elif isinstance(raw_root, int) and not isinstance(raw_root, bool):
        if not 0 <= raw_root < n:
            raise BadRootIndex(f"root index {raw_root} outside [0, {n})")
        root = raw_root
    else:
        raise BadRootIndex(f"root must be a joint name or index, got {raw_root!r}")

    def resolve(end, link_pos: int) -> int:
        if isinstance(end, str):
            if end not in index_of:
                raise SchemaError(f"link #{link_pos} names unknown joint {end!r}")
            return index_of[end]
        if isinstance(end, int) and not isinstance(end, bool):
            if not 0 <= end < n:
                raise SchemaError(f"link #{link_pos} index {end} outside [0, {n})")
            return end
        raise SchemaError(f"link #{link_pos} endpoint {end!r} is neither name nor index")

    if not isinstance(raw_links, (list, tuple)):
        raise SchemaError("'links' must be a list of [parent, child] pairs")
    links: list[tuple[int, int]] = []
    for pos, pair in enumerate(raw_links):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise SchemaError(f"link #{pos} is not a [parent, child] pair")
        parent, child = resolve(pair[0], pos), resolve(pair[1], pos)
        if parent == child:
            raise CycleDetected(f"link #{pos} connects joint {joints[parent]!r} to itself")
        links.append((parent, child))

    # One BFS proves the tree property: a revisit is a cycle or a second
    # parent, an unvisited joint is disconnected. Run it here with joint
    # names so errors read well.
    _breadth_first(n, root, links, joints)
    skeleton = Skeleton(
        joints=tuple(joints), root=root, links=tuple(links), dimension=dimension
    )
    skeleton.link_order  # cache the parent-before-child ordering
    return skeleton


def topological_link_order(skeleton: Skeleton) -> list[int]:
    """Link indices ordered so each link's parent joint appears first."""
    return list(skeleton.link_order)


@dataclass(frozen=True, eq=False)
class Pose:
    """One keypoint location per joint plus per-joint presence flags."""

    coordinates: np.ndarray  # (N, D) float64
    present: np.ndarray      # (N,) bool

    def __post_init__(self):
        coords = np.asarray(self.coordinates, dtype=np.float64)
        if coords.ndim != 2:
            raise DimensionMismatch(f"coordinates must be (N, D), got shape {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise SchemaError("pose coordinates must be finite")
        present = np.asarray(self.present, dtype=bool)
        if present.shape != (coords.shape[0],):
            raise DimensionMismatch("present flags must have one entry per joint")
        object.__setattr__(self, "coordinates", _freeze(coords))
        object.__setattr__(self, "present", _freeze(present))

    @classmethod
    def of(cls, coordinates, present=None) -> "Pose":
        coords = np.asarray(coordinates, dtype=np.float64)
        if present is None:
            present = np.ones(coords.shape[0], dtype=bool)
        return cls(coordinates=coords, present=present)

    @property
    def n_joints(self) -> int:
        return self.coordinates.shape[0]

    @property
    def dimension(self) -> int:
        return self.coordinates.shape[1]

    @property
    def complete(self) -> bool:
        return bool(self.present.all())


@dataclass(frozen=True)
class DistanceParams:
    """Univariate normal over the parent-child euclidean distance."""

    mean_distance: float
    sigma: float

    def __post_init__(self):
        mean = float(self.mean_distance)
        sigma = float(self.sigma)
        if not np.isfinite(mean) or mean < 0:
            raise SchemaError(f"mean_distance must be finite and >= 0, got {mean!r}")
        if not np.isfinite(sigma) or sigma <= 0:
            raise SigmaNonPositive(f"sigma must be > 0, got {sigma!r}")
        object.__setattr__(self, "mean_distance", mean)
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True, eq=False)
class OffsetParams:
    """Multivariate normal over the child-minus-parent displacement."""

    offset: np.ndarray      # (D,)
    covariance: np.ndarray  # (D, D), symmetric positive-definite

    def __post_init__(self):
        offset = np.asarray(self.offset, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        if offset.ndim != 1:
            raise SchemaError(f"offset must be a vector, got shape {offset.shape}")
        d = offset.shape[0]
        if cov.shape != (d, d):
            raise SchemaError(f"covariance must be ({d}, {d}), got {cov.shape}")
        if not np.all(np.isfinite(offset)) or not np.all(np.isfinite(cov)):
            raise SchemaError("offset parameters must be finite")
        scale = max(np.abs(cov).max(), 1.0)
        if np.abs(cov - cov.T).max() > _SYMMETRY_RTOL * scale:
            raise CovarianceNotSPD("covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise CovarianceNotSPD("covariance is not positive-definite") from None
        object.__setattr__(self, "offset", _freeze(offset))
        object.__setattr__(self, "covariance", _freeze(cov))
        object.__setattr__(self, "_cholesky", _freeze(chol))

    @property
    def dimension(self) -> int:
        return self.offset.shape[0]

    @property
    def cholesky(self) -> np.ndarray:
        """Lower-triangular Cholesky factor of the covariance."""
        return self._cholesky

    @property
    def log_det(self) -> float:
        return float(2.0 * np.log(np.diagonal(self._cholesky)).sum())


LinkParams = Union[DistanceParams, OffsetParams]


@dataclass(frozen=True, eq=False)
class PoseModelParams:
    """Per-link Gaussian parameters tied to one skeleton.

    ``root_params`` is an optional prior over the root joint location;
    when absent the root contributes nothing (uniform prior). A distance
    variant is read as a normal over the root's distance from the grid
    origin, an offset variant as a normal centred at the absolute location
    stored in ``offset``.
    """

    skeleton: Skeleton
    link_params: tuple[LinkParams, ...]
    model_kind: str  # "distance" | "offset"
    root_params: LinkParams | None = None

    def __post_init__(self):
        if self.model_kind not in ("distance", "offset"):
            raise SchemaError(f"model_kind must be 'distance' or 'offset', got {self.model_kind!r}")
        params = tuple(self.link_params)
        if len(params) != self.skeleton.n_links:
            raise SchemaError(
                f"expected {self.skeleton.n_links} link parameter entries, got {len(params)}"
            )
        want = DistanceParams if self.model_kind == "distance" else OffsetParams
        for idx, p in enumerate(params):
            if not isinstance(p, want):
                raise SchemaError(
                    f"link #{idx} parameters do not match model_kind={self.model_kind!r}"
                )
            if isinstance(p, OffsetParams) and p.dimension != self.skeleton.dimension:
                raise DimensionMismatch(
                    f"link #{idx} offset dimension {p.dimension} != skeleton "
                    f"dimension {self.skeleton.dimension}"
                )
        if isinstance(self.root_params, OffsetParams):
            if self.root_params.dimension != self.skeleton.dimension:
                raise DimensionMismatch("root prior dimension != skeleton dimension")
        object.__setattr__(self, "link_params", params)


# --- JSON schema ----------------------------------------------------------

def skeleton_to_dict(skeleton: Skeleton) -> dict:
    return {
        "joints": list(skeleton.joints),
        "root": skeleton.joints[skeleton.root],
        "dimension": skeleton.dimension,
        "links": [
            [skeleton.joints[parent], skeleton.joints[child]]
            for parent, child in skeleton.links
        ],
    }


def _link_params_to_dict(params: LinkParams) -> dict:
    if isinstance(params, DistanceParams):
        return {"mean": params.mean_distance, "sigma": params.sigma}
    return {
        "offset": [float(v) for v in params.offset],
        "covariance": [[float(v) for v in row] for row in params.covariance],
    }


def _link_params_from_dict(entry: dict, *, where: str) -> LinkParams:
    if not isinstance(entry, dict):
        raise SchemaError(f"{where}: parameter entry must be an object")
    if "mean" in entry or "sigma" in entry:
        try:
            mean, sigma = float(entry["mean"]), float(entry["sigma"])
        except (KeyError, TypeError, ValueError):
            raise SchemaError(f"{where}: distance entry needs numeric 'mean' and 'sigma'") from None
        if np.isfinite(sigma) and sigma > 0:
            sigma = max(sigma, SIGMA_FLOOR)
        return DistanceParams(mean_distance=mean, sigma=sigma)
    if "offset" in entry or "covariance" in entry:
        try:
            return OffsetParams(offset=entry["offset"], covariance=entry["covariance"])
        except KeyError:
            raise SchemaError(f"{where}: offset entry needs 'offset' and 'covariance'") from None
    raise SchemaError(f"{where}: unrecognized parameter entry {sorted(entry)!r}")


def model_to_dict(params: PoseModelParams) -> dict:
    doc = skeleton_to_dict(params.skeleton)
    doc["model_kind"] = params.model_kind
    doc["params"] = [_link_params_to_dict(p) for p in params.link_params]
    if params.root_params is not None:
        doc["root_params"] = _link_params_to_dict(params.root_params)
    return doc


def model_from_dict(doc: dict) -> PoseModelParams:
    skeleton = validate_skeleton(doc)
    if "model_kind" not in doc or "params" not in doc:
        raise SchemaError("model document needs 'model_kind' and 'params'")
    raw = doc["params"]
    if not isinstance(raw, list):
        raise SchemaError("'params' must be a list aligned with 'links'")
    link_params = tuple(
        _link_params_from_dict(entry, where=f"params[{i}]") for i, entry in enumerate(raw)
    )
    root_params = None
    if doc.get("root_params") is not None:
        root_params = _link_params_from_dict(doc["root_params"], where="root_params")
    return PoseModelParams(
        skeleton=skeleton,
        link_params=link_params,
        model_kind=doc["model_kind"],
        root_params=root_params,
    )


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top-level value must be an object")
    return doc


def load_skeleton_file(path) -> Skeleton:
    return validate_skeleton(_load_json(path))


def load_model_file(path) -> PoseModelParams:
    return model_from_dict(_load_json(path))


def save_model_file(params: PoseModelParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(params), fh, indent=2, sort_keys=True)
        fh.write("\n")
