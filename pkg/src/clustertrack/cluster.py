"""Constraint-aware kmeans over window embeddings.

Assignment visits must-link components (singletons for unconstrained nodes)
in descending confidence order and places each on the nearest centroid that
violates no cannot-link edge against already-placed members. A component
with no feasible cluster spawns a new cluster seeded at its mean embedding
instead of failing, which is how the cluster count adapts beyond the
per-frame maximum. Clusters whose members carry no committed identity are
tentative; they are confirmed once members span two distinct frames within
the lag budget and discarded when they stay single-frame past it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .constraints import ConstraintGraph

__all__ = [
    "ClusterResult",
    "InfeasibleComponentError",
    "estimate_k",
    "init_centroids",
    "cop_kmeans",
    "confirm_or_discard",
    "score_filter",
]


class InfeasibleComponentError(ValueError):
    """A must-link component contains an internal cannot-link edge."""


@dataclass(frozen=True)
class ClusterResult:
    assignments: dict[int, int]
    centroids: list[np.ndarray]
    clusters: list[frozenset[int]]
    tentative: frozenset[int]
    creation: dict[int, int]
    scores: list[float]
    seed_labels: list[Optional[int]]
    sse: float
    sse_history: list[float]
    iterations: int

    def labels_of(self, cluster_idx: int, detections) -> set[int]:
        return {
            detections[i].label for i in self.clusters[cluster_idx] if detections[i].label is not None
        }


def estimate_k(window_detections: Sequence[Sequence]) -> tuple[int, int]:
    """Adaptive cluster count: the max per-frame detection count in the window.

    Returns (count, window position of the earliest frame achieving it).
    """
    if not window_detections:
        raise ValueError("empty window")
    counts = [len(dets) for dets in window_detections]
    k = max(counts)
    return k, counts.index(k)


def init_centroids(
    anchor_embeddings: np.ndarray, anchor_labels: Sequence[Optional[int]]
) -> tuple[np.ndarray, list[Optional[int]]]:
    """One centroid per anchor-frame detection; committed labels carry over."""
    if len(anchor_embeddings) == 0:
        raise ValueError("anchor frame has no detections")
    return np.array(anchor_embeddings, dtype=np.float64), list(anchor_labels)


def _component_order_key(nodes: list[int], graph: ConstraintGraph) -> tuple:
    dets = [graph.detections[i] for i in nodes]
    mean_conf = float(np.mean([d.confidence for d in dets]))
    return (-mean_conf, min(d.frame for d in dets), min(nodes))


def cop_kmeans(
    embeddings: np.ndarray,
    graph: ConstraintGraph,
    k: int,
    init: Optional[np.ndarray] = None,
    seed_labels: Optional[list[Optional[int]]] = None,
    seed: int = 0,
    max_iter: int = 50,
    tol: float = 1e-6,
) -> ClusterResult:
    """Constrained kmeans; see the module docstring for the assignment rule."""
    n = len(embeddings)
    if len(graph) != n:
        raise ValueError("graph nodes do not align with embeddings")
    if k < 1:
        raise ValueError("k must be >= 1")
    embeddings = np.asarray(embeddings, dtype=np.float64)

    components = graph.ml_components()
    for comp in components:
        for a in range(len(comp)):
            for b in range(a + 1, len(comp)):
                if graph.has_cl(comp[a], comp[b]):
                    raise InfeasibleComponentError(
                        f"nodes {comp[a]} and {comp[b]} are must-linked but cannot-linked"
                    )
    components = sorted(components, key=lambda c: _component_order_key(c, graph))
    comp_embed = [embeddings[c].mean(axis=0) for c in components]

    if init is not None:
        centroids = [np.asarray(c, dtype=np.float64).copy() for c in init]
        if len(centroids) != k:
            raise ValueError("init centroid count does not match k")
    else:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0B]))
        pick = rng.choice(n, size=min(k, n), replace=False)
        centroids = [embeddings[i].copy() for i in pick]
    labels0 = list(seed_labels) if seed_labels is not None else [None] * len(centroids)

    def feasible(comp: list[int], members: set[int]) -> bool:
        return not any(graph.has_cl(a, b) for a in comp for b in members)

    prev_clusters: Optional[list[set[int]]] = None
    prev_centroids = [c.copy() for c in centroids]
    prev_sse = np.inf
    clusters: list[set[int]] = []
    sse = np.inf
    sse_history: list[float] = []
    iterations = 0

    for iterations in range(1, max_iter + 1):
        clusters = [set() for _ in centroids]
        for comp, ce in zip(components, comp_embed):
            best = None
            best_d = np.inf
            for ci, cent in enumerate(centroids):
                if not feasible(comp, clusters[ci]):
                    continue
                d = float(((ce - cent) ** 2).sum())
                if d < best_d:
                    best_d = d
                    best = ci
            if best is None:
                centroids.append(ce.copy())
                clusters.append(set(comp))
            else:
                clusters[best].update(comp)
        for ci, members in enumerate(clusters):
            if members:
                centroids[ci] = embeddings[sorted(members)].mean(axis=0)
        sse = sum(
            float(((embeddings[i] - centroids[ci]) ** 2).sum())
            for ci, members in enumerate(clusters)
            for i in members
        )
        if sse > prev_sse * (1.0 + 1e-12):
            # the constrained greedy pass cannot improve further; keep the
            # previous (better) state so accepted SSE stays non-increasing
            clusters = prev_clusters
            centroids = prev_centroids
            sse = prev_sse
            break
        sse_history.append(sse)
        if prev_clusters is not None and clusters == prev_clusters:
            break
        converged = prev_sse - sse <= tol * max(prev_sse, 1e-30) and np.isfinite(prev_sse)
        prev_clusters = [set(m) for m in clusters]
        prev_centroids = [c.copy() for c in centroids]
        prev_sse = sse
        if converged:
            break

    assignments = {i: ci for ci, members in enumerate(clusters) for i in members}
    dets = graph.detections
    scores = [
        float(np.mean([dets[i].confidence for i in members])) if members else 0.0
        for members in clusters
    ]
    tentative = frozenset(
        ci
        for ci, members in enumerate(clusters)
        if members and all(dets[i].label is None for i in members)
    )
    creation = {ci: min(dets[i].frame for i in clusters[ci]) for ci in tentative}
    return ClusterResult(
        assignments=assignments,
        centroids=[c.copy() for c in centroids],
        clusters=[frozenset(m) for m in clusters],
        tentative=tentative,
        creation=creation,
        scores=scores,
        seed_labels=labels0 + [None] * (len(clusters) - len(labels0)),
        sse=sse,
        sse_history=sse_history,
        iterations=iterations,
    )


def confirm_or_discard(
    result: ClusterResult, detections, t_now: int, t_lag: int, flush_pending: bool = False
) -> ClusterResult:
    """Resolve tentative clusters.

    A tentative cluster is confirmed once its members span at least two
    distinct frames within ``t_lag`` of its creation frame. A cluster still
    single-frame more than ``t_lag`` after creation is discarded and its
    members are left unassigned. Younger single-frame clusters stay pending
    unless ``flush_pending`` is set (end of sequence), which confirms them.
    """
    assignments = dict(result.assignments)
    clusters = [set(m) for m in result.clusters]
    tentative = set(result.tentative)
    creation = dict(result.creation)
    for ci in sorted(result.tentative):
        born = creation[ci]
        frames = {detections[i].frame for i in clusters[ci] if detections[i].frame <= born + t_lag}
        if len(frames) >= 2:
            tentative.discard(ci)  # confirmed
            del creation[ci]
        elif t_now - born > t_lag:
            for i in clusters[ci]:
                del assignments[i]
            clusters[ci] = set()
            tentative.discard(ci)
            del creation[ci]
        elif flush_pending:
            tentative.discard(ci)
            del creation[ci]
    return replace(
        result,
        assignments=assignments,
        clusters=[frozenset(m) for m in clusters],
        tentative=frozenset(tentative),
        creation=creation,
    )


def score_filter(result: ClusterResult, score_min: float) -> list[int]:
    """Indices of non-empty confirmed clusters whose mean confidence > threshold."""
    return [
        ci
        for ci, members in enumerate(result.clusters)
        if members and ci not in result.tentative and result.scores[ci] > score_min
    ]
