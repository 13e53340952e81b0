"""Automatic rank selection for NMF via perturbation ensembles.

For each candidate rank, a batch of multiplicatively perturbed copies of the
input is factorized, the resulting signature columns are matched across
ensemble members, and the stability of the matched clusters is summarized
with cosine-distance silhouettes.  The selected rank is the largest one whose
least stable cluster still clears the silhouette threshold.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, SigArchiveError, ValidationError
from .linalg import FactorPair, FeatureMatrix, SolverOptions, nmf_factorize, relative_error
from .seeding import STREAM_PERTURB, generator

logger = logging.getLogger(__name__)

RULE_THRESHOLD = "threshold"
RULE_FALLBACK = "fallback_best_silhouette"
RULE_FORCED = "forced_single_candidate"

_ERROR_SLACK = 0.02  # ensemble-noise allowance for the error-monotonicity diagnostic


@dataclass(frozen=True)
class EnsembleConfig:
    """Configuration of one rank-selection sweep."""

    k_min: int
    k_max: int
    n_perturbations: int = 30
    noise_epsilon: float = 0.03
    silhouette_threshold: float = 0.75
    base_seed: int = 0

    def __post_init__(self):
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ValidationError(
                f"need 1 <= k_min <= k_max, got [{self.k_min}, {self.k_max}]")
        if self.n_perturbations < 2:
            raise ValidationError("n_perturbations must be >= 2")
        if not (0 <= self.noise_epsilon < 1):
            raise ValidationError("noise_epsilon must lie in [0, 1)")
        if not (-1 < self.silhouette_threshold <= 1):
            raise ValidationError("silhouette_threshold must lie in (-1, 1]")


@dataclass(frozen=True)
class RankStats:
    """Stability and fit summary for one candidate rank."""

    k: int
    min_silhouette: float
    mean_silhouette: float
    mean_relative_error: float


@dataclass(frozen=True)
class RankSelectionReport:
    per_k: tuple[RankStats, ...]
    selected_k: int
    selection_rule_fired: str

    def __post_init__(self):
        ks = [s.k for s in self.per_k]
        if not ks or ks != list(range(ks[0], ks[-1] + 1)):
            raise ValidationError("per_k must cover a contiguous rank range exactly once")
        if self.selected_k not in ks:
            raise ValidationError(f"selected_k={self.selected_k} not among scanned ranks {ks}")
        for s in self.per_k:
            if not (-1 - 1e-9 <= s.min_silhouette <= 1 + 1e-9):
                raise ValidationError(f"silhouette out of range at k={s.k}")
        if self.selection_rule_fired not in (RULE_THRESHOLD, RULE_FALLBACK, RULE_FORCED):
            raise ValidationError(f"unknown selection rule {self.selection_rule_fired!r}")

    def stats_for(self, k: int) -> RankStats:
        return self.per_k[k - self.per_k[0].k]


def perturb(x: FeatureMatrix, epsilon: float, seed: int) -> FeatureMatrix:
    """Entrywise multiplicative noise: ``x * (1 + epsilon * u)``, u ~ U[-1, 1].

    Zero entries stay exactly zero and ``epsilon = 0`` returns an identical
    copy.  Deterministic for a given ``seed``.
    """
    if not (0 <= epsilon < 1) or not math.isfinite(epsilon):
        raise ValidationError(f"epsilon must lie in [0, 1), got {epsilon}")
    if epsilon == 0:
        return FeatureMatrix(x.values, x.sample_ids, x.feature_names)
    u = generator(seed, STREAM_PERTURB).uniform(-1.0, 1.0, size=x.values.shape)
    return FeatureMatrix(x.values * (1.0 + epsilon * u), x.sample_ids, x.feature_names)


def _unit_columns(w: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(w, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    return w / safe


@dataclass(frozen=True, eq=False)
class SignatureClusters:
    """Matched ensemble signatures: one cluster per column of the reference member.

    ``clusters[c]`` holds one unit vector per ensemble member (rows), and
    ``medoids[:, c]`` is the member of cluster ``c`` minimizing the summed
    cosine distance to the rest.
    """

    clusters: tuple[np.ndarray, ...]
    medoids: np.ndarray


def cluster_ensemble_signatures(signature_sets: Sequence[np.ndarray]) -> SignatureClusters:
    """Group ensemble signature columns into k clusters by greedy matching.

    The first member's columns anchor the clusters.  Each later member's
    columns are matched to anchors one pair at a time, taking the highest
    cosine similarity among the still-unmatched pairs (ties resolved by the
    lowest column index, then the lowest anchor index), so every member
    contributes exactly one column to every cluster.
    """
    members = [np.asarray(s, dtype=np.float64) for s in signature_sets]
    if not members:
        raise ValidationError("need at least one signature set")
    n, k = members[0].shape
    for s in members:
        if s.shape != (n, k):
            raise ValidationError("signature sets must share one shape")
    units = [_unit_columns(s) for s in members]

    anchors = units[0]
    assigned = [np.empty((len(members), n)) for _ in range(k)]
    for c in range(k):
        assigned[c][0] = anchors[:, c]
    for i, cols in enumerate(units[1:], start=1):
        sim = anchors.T @ cols  # sim[c, j]: anchor c vs member column j
        open_anchor = np.ones(k, dtype=bool)
        open_col = np.ones(k, dtype=bool)
        for _ in range(k):
            best = -np.inf
            best_pair = None
            for j in range(k):
                if not open_col[j]:
                    continue
                for c in range(k):
                    if open_anchor[c] and sim[c, j] > best:
                        best = sim[c, j]
                        best_pair = (c, j)
            c, j = best_pair
            assigned[c][i] = cols[:, j]
            open_anchor[c] = False
            open_col[j] = False

    medoids = np.empty((n, k))
    for c in range(k):
        pts = assigned[c]
        dist = 1.0 - pts @ pts.T
        medoids[:, c] = pts[int(np.argmin(dist.sum(axis=1)))]
    return SignatureClusters(tuple(a.copy() for a in assigned), medoids)


def silhouette_scores(clusters: Sequence[np.ndarray]) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """Cosine-distance silhouettes for clustered unit vectors.

    Parameters
    ----------
    clusters : sequence of ndarray
        At least two clusters, each an ``(m_c, n)`` array of row vectors.

    Returns
    -------
    (per_point, per_cluster_min)
        Per-point silhouette arrays aligned with ``clusters``, and the
        minimum silhouette within each cluster.  Points in singleton
        clusters score 0 by convention, as does a point whose separation
        and cohesion are both zero.
    """
    pts = [np.asarray(c, dtype=np.float64) for c in clusters]
    if len(pts) < 2:
        raise ValidationError("silhouettes require at least two clusters")
    if any(c.ndim != 2 or c.shape[0] == 0 for c in pts):
        raise ValidationError("every cluster must be a nonempty 2-d array")

    labels = np.concatenate([np.full(len(c), i) for i, c in enumerate(pts)])
    stacked = np.vstack(pts)
    dist = np.clip(1.0 - stacked @ stacked.T, 0.0, 2.0)

    scores = np.zeros(len(stacked))
    for idx in range(len(stacked)):
        own = labels[idx]
        same = labels == own
        if same.sum() == 1:
            continue
        mask = same.copy()
        mask[idx] = False
        a = dist[idx, mask].mean()
        b = min(dist[idx, labels == other].mean()
                for other in range(len(pts)) if other != own)
        denom = max(a, b)
        scores[idx] = (b - a) / denom if denom > 0 else 0.0
    np.clip(scores, -1.0, 1.0, out=scores)
    per_cluster = tuple(scores[labels == i] for i in range(len(pts)))
    return per_cluster, np.array([c.min() for c in per_cluster])


def ensemble_stability(clusters: SignatureClusters) -> tuple[float, float]:
    """(min, mean) silhouette of a matched ensemble; a single cluster scores 1."""
    if len(clusters.clusters) == 1:
        return 1.0, 1.0
    per_cluster, cluster_min = silhouette_scores(clusters.clusters)
    pooled = np.concatenate(per_cluster)
    return float(cluster_min.min()), float(pooled.mean())


def select_rank(
    x: FeatureMatrix,
    cfg: EnsembleConfig,
    *,
    solver: SolverOptions = SolverOptions(),
    workers: int | None = None,
) -> RankSelectionReport:
    """Scan ``[cfg.k_min, cfg.k_max]`` and pick the largest stable rank.

    A rank qualifies when the minimum cluster silhouette of its matched
    ensemble reaches ``cfg.silhouette_threshold`` (rank 1 scores 1 by
    convention).  If no rank qualifies the best-silhouette rank is returned
    with the fallback rule flagged; a single-candidate scan is flagged as
    forced.  Identical inputs yield identical reports regardless of
    ``workers``.
    """
    n, m = x.values.shape
    if cfg.k_max > min(n, m):
        raise ValidationError(
            f"k_max={cfg.k_max} exceeds min(n={n}, m={m})")

    perturbed = [perturb(x, cfg.noise_epsilon, cfg.base_seed + i)
                 for i in range(cfg.n_perturbations)]

    def run_member(args: tuple[int, int]) -> tuple[int, FactorPair | None]:
        k, i = args
        try:
            return i, nmf_factorize(perturbed[i], k, cfg.base_seed + i, solver)
        except SigArchiveError:
            return i, None

    stats: list[RankStats] = []
    for k in range(cfg.k_min, cfg.k_max + 1):
        jobs = [(k, i) for i in range(cfg.n_perturbations)]
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_member, jobs))
        else:
            results = [run_member(j) for j in jobs]
        pairs = [(i, fp) for i, fp in results if fp is not None]
        if len(pairs) < 2:
            raise DegenerateInputError(
                f"ensemble degenerate at k={k}: {len(pairs)} of "
                f"{cfg.n_perturbations} factorizations succeeded")
        if len(pairs) < len(jobs):
            logger.warning("k=%d: %d ensemble member(s) failed and were skipped",
                           k, len(jobs) - len(pairs))
        clusters = cluster_ensemble_signatures([fp.w for _, fp in pairs])
        min_sil, mean_sil = ensemble_stability(clusters)
        mean_err = float(np.mean([relative_error(perturbed[i], fp) for i, fp in pairs]))
        stats.append(RankStats(k, min_sil, mean_sil, mean_err))

    for prev, cur in zip(stats, stats[1:]):
        if cur.mean_relative_error > prev.mean_relative_error * (1 + _ERROR_SLACK):
            logger.warning(
                "mean relative error rose from %.4g (k=%d) to %.4g (k=%d)",
                prev.mean_relative_error, prev.k, cur.mean_relative_error, cur.k)

    if cfg.k_min == cfg.k_max:
        return RankSelectionReport(tuple(stats), cfg.k_min, RULE_FORCED)
    qualifying = [s.k for s in stats if s.min_silhouette >= cfg.silhouette_threshold]
    if qualifying:
        return RankSelectionReport(tuple(stats), max(qualifying), RULE_THRESHOLD)
    best = max(stats, key=lambda s: (s.min_silhouette, -s.k))
    return RankSelectionReport(tuple(stats), best.k, RULE_FALLBACK)
