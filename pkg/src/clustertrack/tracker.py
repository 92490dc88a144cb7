"""Sliding-window identity assignment over a detection sequence.

At each step t the frames {t - t_lag, ..., t} are clustered jointly:
detections are embedded, the constraint graph is built with committed
identities feeding the must-link edges, the cluster count is estimated from
the fullest frame (whose detections also seed the centroids), and the
constrained kmeans result is filtered by cluster confidence. Each kept
cluster resolves to the unique committed identity among its members, or to
a freshly minted identity once the cluster is confirmed across two frames.
Identities, once committed to a (frame, detection) pair, never change.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .constraints import ConstraintConfig, build_graph, empty_graph
from .core import Detection, Frame
from .cluster import confirm_or_discard, cop_kmeans, estimate_k, init_centroids, score_filter
from .autoenc.model import AutoencoderParams
from .autoenc.train import embed_batch
from .metrics import MetricsReport, evaluate
from .synthgen import GtSequence

__all__ = [
    "TrackerConfig",
    "IdentityStore",
    "TrackingInvariantError",
    "track",
    "ablation_run",
    "VARIANTS",
]


class TrackingInvariantError(RuntimeError):
    """A cluster contained two distinct committed identities."""


@dataclass(frozen=True)
class TrackerConfig:
    t_lag: int = 3
    cluster_score_min: float = 0.5
    det_threshold: float = 0.70
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    use_graph: bool = True
    k_mode: str = "estimated"
    max_iter: int = 50
    tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.t_lag < 1:
            raise ValueError("t_lag must be >= 1")
        if not (0.0 <= self.cluster_score_min <= 1.0 and 0.0 <= self.det_threshold <= 1.0):
            raise ValueError("thresholds must be in [0, 1]")
        if self.k_mode not in ("estimated", "oracle"):
            raise ValueError("k_mode must be 'estimated' or 'oracle'")


@dataclass
class IdentityStore:
    next_id: int = 0
    committed: dict[tuple[int, int], int] = field(default_factory=dict)
    last_seen: dict[int, int] = field(default_factory=dict)
    frame_ids: dict[int, set[int]] = field(default_factory=dict)

    def label_of(self, frame: int, det_idx: int) -> Optional[int]:
        return self.committed.get((frame, det_idx))

    def mint(self) -> int:
        identity = self.next_id
        self.next_id += 1
        return identity

    def commit(self, frame: int, det_idx: int, identity: int) -> bool:
        """Record an identity; refuses overwrites and per-frame duplicates."""
        key = (frame, det_idx)
        if key in self.committed:
            return self.committed[key] == identity
        ids = self.frame_ids.setdefault(frame, set())
        if identity in ids:
            return False
        self.committed[key] = identity
        ids.add(identity)
        if identity not in self.last_seen or frame > self.last_seen[identity]:
            self.last_seen[identity] = frame
        return True


def _resolve_identity(
    labels: set[int], use_graph: bool, counts: dict[int, int], window_end: int
) -> Optional[int]:
    if len(labels) == 1:
        return next(iter(labels))
    if use_graph:
        raise TrackingInvariantError(
            f"cluster at window ending {window_end} holds identities {sorted(labels)}"
        )
    # without constraints, clusters can mix committed identities: majority wins
    best = max(labels, key=lambda l: (counts[l], -l))
    return best


def window_indices(frame_indices: list[int], t: int, t_lag: int) -> list[int]:
    """Frames clustered jointly at step t: {t - t_lag, ..., t}, truncated at the start."""
    return [u for u in frame_indices if t - t_lag <= u <= t]


def track(
    seq: GtSequence,
    params: AutoencoderParams,
    cfg: TrackerConfig,
    oracle_k: Optional[Callable[[list[int]], int]] = None,
) -> tuple[list[Frame], IdentityStore]:
    """Assign identities to a sequence; input labels are ignored.

    Returns the relabeled frames (detections never committed keep a None
    label) and the identity store. ``oracle_k`` supplies the cluster count
    per window when ``cfg.k_mode == "oracle"``.
    """
    if cfg.k_mode == "oracle" and oracle_k is None:
        raise ValueError("oracle k_mode requires an oracle_k callable")
    dims = (seq.config.frame_w, seq.config.frame_h)
    frame_indices = [f.index for f in seq.frames]
    if frame_indices != sorted(frame_indices):
        raise ValueError("frames must be in ascending order")

    # confidence pre-filter, applied once
    kept: dict[int, list[tuple[int, Detection]]] = {}
    for fr in seq.frames:
        kept[fr.index] = [
            (i, d.with_label(None))
            for i, d in enumerate(fr.detections)
            if d.confidence >= cfg.det_threshold and d.mask.area() > 0
        ]

    store = IdentityStore()
    embed_cache: dict[int, np.ndarray] = {}

    def embeddings_for(t: int) -> np.ndarray:
        if t not in embed_cache:
            dets = [d for _, d in kept[t]]
            embed_cache[t] = (
                embed_batch(params, dets, dims) if dets else np.zeros((0, params.config.latent))
            )
        return embed_cache[t]

    last_index = frame_indices[-1]
    for t in frame_indices:
        window = window_indices(frame_indices, t, cfg.t_lag)
        node_keys: list[tuple[int, int]] = []  # (frame, det idx within frame)
        node_dets: list[Detection] = []
        node_embeds: list[np.ndarray] = []
        for u in window:
            z = embeddings_for(u)
            for pos, (i, d) in enumerate(kept[u]):
                node_keys.append((u, i))
                node_dets.append(d.with_label(store.label_of(u, i)))
                node_embeds.append(z[pos])
        if not node_dets:
            continue
        embeds = np.stack(node_embeds)

        if cfg.k_mode == "oracle":
            k = oracle_k(window)
            _, anchor_pos = estimate_k([[d for _, d in kept[u]] for u in window])
        else:
            k, anchor_pos = estimate_k([[d for _, d in kept[u]] for u in window])
        if k == 0:
            continue
        anchor_frame = window[anchor_pos]
        anchor_nodes = [n for n, (u, _) in enumerate(node_keys) if u == anchor_frame]
        if cfg.k_mode == "oracle":
            # oracle count may differ from the anchor frame population
            seeds = anchor_nodes[:k]
            if len(seeds) < k:
                extra = [n for n in range(len(node_dets)) if n not in seeds]
                seeds += extra[: k - len(seeds)]
            k = min(k, len(node_dets))
            seeds = seeds[:k]
        else:
            seeds = anchor_nodes
        centroids0, seed_labels = init_centroids(
            embeds[seeds], [node_dets[n].label for n in seeds]
        )

        if cfg.use_graph:
            graph = build_graph(node_dets, embeds, cfg.constraints)
        else:
            graph = empty_graph(node_dets)

        result = cop_kmeans(
            embeds,
            graph,
            len(seeds),
            init=centroids0,
            seed_labels=seed_labels,
            max_iter=cfg.max_iter,
            tol=cfg.tol,
        )
        result = confirm_or_discard(
            result, node_dets, t_now=t, t_lag=cfg.t_lag, flush_pending=(t == last_index)
        )
        for ci in score_filter(result, cfg.cluster_score_min):
            members = sorted(result.clusters[ci])
            labels = {node_dets[n].label for n in members if node_dets[n].label is not None}
            if labels:
                counts: dict[int, int] = {}
                for n in members:
                    lab = node_dets[n].label
                    if lab is not None:
                        counts[lab] = counts.get(lab, 0) + 1
                identity = _resolve_identity(labels, cfg.use_graph, counts, t)
            else:
                identity = store.mint()
            order = sorted(members, key=lambda n: (-node_dets[n].confidence, node_keys[n]))
            for n in order:
                if node_dets[n].label is None:
                    u, i = node_keys[n]
                    store.commit(u, i, identity)

    out_frames: list[Frame] = []
    for fr in seq.frames:
        dets = tuple(
            d.with_label(store.label_of(fr.index, i)) for i, d in enumerate(fr.detections)
        )
        out_frames.append(Frame(index=fr.index, detections=dets, image=fr.image))
    return out_frames, store


VARIANTS: dict[str, tuple[str, bool]] = {
    "loc": ("loc", False),
    "shape": ("shape", False),
    "loc+shape": ("both", False),
    "loc+G": ("loc", True),
    "loc+shape+G": ("both", True),
}


def make_oracle_k(gt_seq: GtSequence) -> Callable[[list[int]], int]:
    """Window cluster-count oracle: distinct ground-truth identities present."""
    by_index = {f.index: f for f in gt_seq.frames}
    def oracle(window: list[int]) -> int:
        labels = set()
        for u in window:
            fr = by_index.get(u)
            if fr is not None:
                labels.update(d.label for d in fr.detections if d.label is not None)
        return len(labels)
    return oracle


def ablation_run(
    gt_seq: GtSequence,
    variant: str,
    models: dict[str, tuple[AutoencoderParams, dict]],
    base_cfg: Optional[TrackerConfig] = None,
    use_masks: bool = True,
    input_seq: Optional[GtSequence] = None,
) -> MetricsReport:
    """Track one sequence under an embedding/graph variant and score it.

    ``models`` maps branch name ("both", "loc", "shape") to (params, meta)
    where meta carries the calibrated embedding-distance threshold. The
    tracker input defaults to the ground truth itself (detection oracle).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    branch, use_graph = VARIANTS[variant]
    if branch not in models:
        raise ValueError(f"variant {variant!r} needs a {branch!r} model")
    params, meta = models[branch]
    base = base_cfg if base_cfg is not None else TrackerConfig()
    constraints = base.constraints
    if constraints.mode == "embedding_distance" and "embed_dist_max" in meta:
        constraints = replace(constraints, embed_dist_max=float(meta["embed_dist_max"]))
    cfg = replace(base, use_graph=use_graph, constraints=constraints)
    oracle = make_oracle_k(gt_seq) if cfg.k_mode == "oracle" else None
    frames, _ = track(input_seq if input_seq is not None else gt_seq, params, cfg, oracle_k=oracle)
    return evaluate(list(gt_seq.frames), frames, use_masks=use_masks)
