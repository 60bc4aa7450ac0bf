"""Retrieval scoring and rank metrics.

The final score of a (text, image) pair is cosine similarity plus the
matching-head probability; rankings are deterministic, with ties broken
toward the lower candidate index. R@k is reported in both directions
together with per-direction and overall mean recall.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .autodiff import ShapeMismatch, Tensor, no_grad
from .model import EncoderConfig, encode_multimodal_batch, match_head


class MissingGroundTruth(KeyError):
    """A query has no correct candidates registered."""


@dataclass
class RetrievalMetrics:
    r1_t2i: float
    r5_t2i: float
    r10_t2i: float
    r1_i2t: float
    r5_i2t: float
    r10_i2t: float
    mr_t2i: float
    mr_i2t: float
    mr: float

    def to_dict(self) -> dict[str, float]:
        return {
            "r1_t2i": self.r1_t2i,
            "r5_t2i": self.r5_t2i,
            "r10_t2i": self.r10_t2i,
            "r1_i2t": self.r1_i2t,
            "r5_i2t": self.r5_i2t,
            "r10_i2t": self.r10_i2t,
            "mR_t2i": self.mr_t2i,
            "mR_i2t": self.mr_i2t,
            "mR": self.mr,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def similarity_scores(text_feats: np.ndarray, image_feats: np.ndarray) -> np.ndarray:
    """Pairwise dot products of unit features: (texts, images)."""
    text_feats = np.asarray(text_feats, dtype=np.float64)
    image_feats = np.asarray(image_feats, dtype=np.float64)
    if text_feats.shape[-1] != image_feats.shape[-1]:
        raise ShapeMismatch("feature dimensions differ")
    return text_feats @ image_feats.T


def matching_scores(
    caption_ids: np.ndarray,
    knowledge_ids: np.ndarray,
    image_tokens: np.ndarray,
    params: dict[str, Tensor],
    cfg: EncoderConfig,
    top_k: int | None = None,
    sim: np.ndarray | None = None,
    pair_batch: int = 256,
) -> np.ndarray:
    """Matching-head probabilities for text x image pairs.

    ``image_tokens`` is the stacked (I, T, d_model) trunk output of every
    candidate image. With ``top_k`` set, only each text's top-k images by
    ``sim`` are scored; the rest stay NaN and rank last in final_scores.
    """
    caption_ids = np.asarray(caption_ids)
    knowledge_ids = np.asarray(knowledge_ids)
    image_tokens = np.asarray(image_tokens, dtype=np.float64)
    n_text = caption_ids.shape[0]
    n_img = image_tokens.shape[0]
    out = np.full((n_text, n_img), np.nan)

    pairs: list[tuple[int, int]] = []
    for t in range(n_text):
        if top_k is None:
            cols = range(n_img)
        else:
            if sim is None:
                raise ValueError("top_k filtering needs the similarity matrix")
            cols = rank_order(sim[t])[:top_k]
        pairs.extend((t, int(j)) for j in cols)

    with no_grad():
        for start in range(0, len(pairs), pair_batch):
            chunk = pairs[start : start + pair_batch]
            t_idx = np.array([p[0] for p in chunk], dtype=np.intp)
            i_idx = np.array([p[1] for p in chunk], dtype=np.intp)
            f_multi = encode_multimodal_batch(
                caption_ids[t_idx],
                knowledge_ids[t_idx],
                Tensor(image_tokens[i_idx]),
                params,
                cfg,
            )
            probs = match_head(f_multi, params).data
            out[t_idx, i_idx] = probs
    return out


def final_scores(s_sim: np.ndarray, s_mat: np.ndarray) -> np.ndarray:
    """Elementwise sum; pairs without a matching score rank behind all others."""
    s_sim = np.asarray(s_sim, dtype=np.float64)
    s_mat = np.asarray(s_mat, dtype=np.float64)
    if s_sim.shape != s_mat.shape:
        raise ShapeMismatch(f"score shapes differ: {s_sim.shape} vs {s_mat.shape}")
    out = s_sim + s_mat
    out[np.isnan(s_mat)] = -np.inf
    return out


def rank_order(scores_row: np.ndarray) -> np.ndarray:
    """Candidate indices from best to worst, ties toward the lower index."""
    n = len(scores_row)
    return np.lexsort((np.arange(n), -np.asarray(scores_row)))


def recall_at_k(scores: np.ndarray, ground_truth: Mapping[int, set[int]], k: int) -> float:
    """Percent of query rows whose top-k contains a correct candidate."""
    scores = np.asarray(scores)
    hits = 0
    for q in range(scores.shape[0]):
        correct = ground_truth.get(q)
        if not correct:
            raise MissingGroundTruth(f"query {q} has no ground truth")
        top = rank_order(scores[q])[:k]
        hits += bool(set(top.tolist()) & correct)
    return 100.0 * hits / scores.shape[0]


def mean_recall(recalls: Sequence[float]) -> float:
    """Arithmetic mean of the six R@k values (both directions)."""
    if len(recalls) != 6:
        raise ValueError(f"expected six R@k values, got {len(recalls)}")
    return float(np.mean(recalls))


def compute_metrics(
    scores: np.ndarray,
    t2i_truth: Mapping[int, set[int]],
    i2t_truth: Mapping[int, set[int]],
) -> RetrievalMetrics:
    """Full metric set from a (texts, images) score matrix."""
    t2i = [recall_at_k(scores, t2i_truth, k) for k in (1, 5, 10)]
    i2t = [recall_at_k(scores.T, i2t_truth, k) for k in (1, 5, 10)]
    return RetrievalMetrics(
        r1_t2i=t2i[0],
        r5_t2i=t2i[1],
        r10_t2i=t2i[2],
        r1_i2t=i2t[0],
        r5_i2t=i2t[1],
        r10_i2t=i2t[2],
        mr_t2i=float(np.mean(t2i)),
        mr_i2t=float(np.mean(i2t)),
        mr=mean_recall(t2i + i2t),
    )


def export_similarity_csv(
    scores: np.ndarray, row_labels: Sequence[str], col_labels: Sequence[str], path
) -> None:
    """Header of column labels, one row per query, values at 4 decimals."""
    scores = np.asarray(scores)
    if scores.shape != (len(row_labels), len(col_labels)):
        raise ShapeMismatch("labels do not match the score matrix")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + list(col_labels))
        for label, row in zip(row_labels, scores):
            writer.writerow([label] + [f"{v:.4f}" for v in row])
