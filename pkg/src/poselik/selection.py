"""Active-learning sample selection over a pool of unlabeled heatmaps.

Each strategy scores every unlabeled sample, and the annotation budget
goes to the extreme-B under the strategy's ordering:

* ``vl4pose``: pose log-likelihood under the fitted skeletal model
  (expected over the peak distributions, or the refined maximum);
  lowest scores selected first.
* ``entropy``: total peak entropy; highest selected first.
* ``random``: seeded hash of the sample id; lowest selected first.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BudgetExceedsPool,
    EmptyClass,
    EmptyInput,
    MissingHeatmap,
    MissingParams,
    SchemaError,
)
from .heatmaps import (
    DEFAULT_MAX_PEAKS,
    DEFAULT_THRESHOLD_RATIO,
    Heatmap,
    PeakSet,
    extract_peaks,
)
from .likelihood import expected_log_likelihood, multi_peak_entropy, refine_pose
from .model import Pose, PoseModelParams

STRATEGIES = ("vl4pose", "entropy", "random")
# Strategies whose highest scores are selected first; all others select lowest.
_HIGHEST_FIRST = frozenset({"entropy"})


def _canonical_strategy(strategy: str) -> str:
    if strategy == "multi_peak_entropy":
        return "entropy"
    if strategy not in STRATEGIES:
        raise SchemaError(
            f"unknown strategy {strategy!r}; expected one of {STRATEGIES}"
        )
    return strategy


@dataclass
class SamplePool:
    """Labeled poses plus unlabeled heatmaps, with optional hidden truth.

    ``truth`` and ``is_ood`` exist only for simulation bookkeeping; the
    selection strategies never read them.
    """

    labeled: dict[str, Pose]
    unlabeled: dict[str, Heatmap]
    truth: dict[str, Pose] = field(default_factory=dict)
    is_ood: dict[str, bool] = field(default_factory=dict)
    _peak_cache: dict[str, PeakSet] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        overlap = set(self.labeled) & set(self.unlabeled)
        if overlap:
            raise SchemaError(
                f"samples cannot be both labeled and unlabeled: {sorted(overlap)[:5]}"
            )

    def clone(self) -> "SamplePool":
        return SamplePool(
            labeled=dict(self.labeled),
            unlabeled=dict(self.unlabeled),
            truth=dict(self.truth),
            is_ood=dict(self.is_ood),
            _peak_cache=self._peak_cache,  # peaks depend only on the heatmap
        )

    def peaks_for(
        self,
        sample_id: str,
        threshold_ratio: float = DEFAULT_THRESHOLD_RATIO,
        max_peaks: int = DEFAULT_MAX_PEAKS,
    ) -> PeakSet:
        if sample_id not in self.unlabeled:
            raise MissingHeatmap(f"no unlabeled heatmap for sample {sample_id!r}")
        cached = self._peak_cache.get(sample_id)
        if cached is None:
            cached = extract_peaks(
                self.unlabeled[sample_id],
                threshold_ratio=threshold_ratio,
                max_peaks=max_peaks,
            )
            self._peak_cache[sample_id] = cached
        return cached

    def move_to_labeled(self, sample_id: str, pose: Pose) -> None:
        if sample_id not in self.unlabeled:
            raise MissingHeatmap(f"sample {sample_id!r} is not in the unlabeled pool")
        del self.unlabeled[sample_id]
        self.labeled[sample_id] = pose


@dataclass(frozen=True)
class SelectionResult:
    """One acquisition round: ids chosen and the scores of every candidate."""

    strategy: str
    selected: tuple[str, ...]
    scores: dict[str, float]


def _random_score(seed: int, sample_id: str) -> float:
    """Deterministic uniform in [0, 1) from the seed and sample id."""
    digest = hashlib.sha256(f"{seed}:{sample_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def score_pool(
    pool: SamplePool,
    strategy: str,
    params: PoseModelParams | dict[str, PoseModelParams] | None = None,
    *,
    mode: str = "expected",
    seed: int = 0,
    threshold_ratio: float = DEFAULT_THRESHOLD_RATIO,
    max_peaks: int = DEFAULT_MAX_PEAKS,
) -> dict[str, float]:
    """Score every unlabeled sample under one strategy.

    ``params`` is either one fitted model shared by every sample or a
    per-sample map keyed by id; it is required for ``vl4pose`` only.
    ``mode`` picks the vl4pose flavor: the expectation over peak
    distributions (default) or the refined maximum.
    """
    strategy = _canonical_strategy(strategy)
    if mode not in ("expected", "max"):
        raise SchemaError(f"unknown vl4pose mode {mode!r}; expected 'expected' or 'max'")
    if strategy == "vl4pose" and params is None:
        raise MissingParams("vl4pose scoring needs fitted model parameters")
    if not pool.unlabeled:
        raise EmptyInput("unlabeled pool is empty")

    scores: dict[str, float] = {}
    for sample_id in pool.unlabeled:
        if strategy == "random":
            scores[sample_id] = _random_score(seed, sample_id)
            continue
        peaks = pool.peaks_for(sample_id, threshold_ratio, max_peaks)
        if strategy == "entropy":
            scores[sample_id] = multi_peak_entropy(peaks)
            continue
        if isinstance(params, dict):
            sample_params = params.get(sample_id)
            if sample_params is None:
                raise MissingParams(f"no model parameters for sample {sample_id!r}")
        else:
            sample_params = params
        if mode == "expected":
            scores[sample_id] = expected_log_likelihood(peaks, sample_params).total
        else:
            scores[sample_id] = refine_pose(peaks, sample_params).log_likelihood
    return scores


def select_batch(scores: dict[str, float], strategy: str, budget: int) -> SelectionResult:
    """Pick the extreme-``budget`` ids under the strategy's ordering.

    Likelihood and random scores select lowest-first; entropy selects
    highest-first. Ties always break on ascending sample id, so the
    result is invariant to the input's iteration order.
    """
    strategy = _canonical_strategy(strategy)
    if budget < 0:
        raise SchemaError(f"budget must be non-negative, got {budget}")
    if budget > len(scores):
        raise BudgetExceedsPool(
            f"budget {budget} exceeds pool of {len(scores)} scored samples"
        )
    sign = -1.0 if strategy in _HIGHEST_FIRST else 1.0
    ranked = sorted(scores.items(), key=lambda item: (sign * item[1], item[0]))
    return SelectionResult(
        strategy=strategy,
        selected=tuple(sample_id for sample_id, _ in ranked[:budget]),
        scores=dict(scores),
    )


def ood_ranking_auc(id_scores, ood_scores) -> float:
    """Probability that a random OOD score falls below a random ID score.

    Mann-Whitney statistic with 0.5 credit for ties, computed through
    tie-averaged ranks over the pooled scores.
    """
    id_scores = [float(s) for s in id_scores]
    ood_scores = [float(s) for s in ood_scores]
    if not id_scores or not ood_scores:
        raise EmptyClass(
            f"need both classes for a ranking: {len(id_scores)} in-distribution, "
            f"{len(ood_scores)} out-of-distribution"
        )
    pooled = np.array(id_scores + ood_scores)
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(len(pooled))
    ranks[order] = np.arange(1, len(pooled) + 1)
    # Average ranks within tied groups.
    for value in np.unique(pooled):
        mask = pooled == value
        if mask.sum() > 1:
            ranks[mask] = ranks[mask].mean()
    ood_ranks = ranks[len(id_scores):]
    n_ood, n_id = len(ood_scores), len(id_scores)
    u_ood = ood_ranks.sum() - n_ood * (n_ood + 1) / 2.0  # pairs won (+ half-ties) by OOD
    return float(1.0 - u_ood / (n_ood * n_id))
