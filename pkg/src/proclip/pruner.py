"""Coarse candidate pruning.

A three-layer multi-head encoder distills the lightweight frame context
into a unit-norm video embedding aligned (after training) with the teacher
video-feature space; queries keep the top k% of videos by cosine score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .autodiff import mean, value
from .encoder import add_positional
from .rng import CounterRng

DISTILL_LAYERS = 3
DISTILL_HEADS = 8
DISTILL_FF = 256


@dataclass
class CandidateSet:
    video_ids: list[str]       # descending coarse score
    coarse_scores: np.ndarray  # aligned with video_ids
    k_percent: float


def init_distill_params(rng: CounterRng, d: int) -> dict:
    if d % DISTILL_HEADS != 0:
        raise ValueError(f"embedding dim {d} must be divisible by {DISTILL_HEADS} heads")
    return {
        "proj_w": nn.init_matrix(rng, d, d, d),
        "proj_b": nn.init_vector(rng, d, d),
        "layers": [nn.init_attention_layer(rng, d, DISTILL_FF)
                   for _ in range(DISTILL_LAYERS)],
    }


def distill_forward(frame_context, params):
    """Unit-norm distilled video embedding from N x D frame context."""
    x = nn.affine(frame_context, params["proj_w"], params["proj_b"])
    x = add_positional(x)
    for layer in params["layers"]:
        x = nn.multi_head_block(x, layer, DISTILL_HEADS)
    pooled = mean(x, axis=0)
    return nn.unit_normalize(pooled)


def mse_distill_loss(student, teacher):
    """Squared L2 distance; for batches (rows = samples), the mean over rows."""
    sv, tv = value(student), value(teacher)
    if sv.shape != tv.shape:
        raise ValueError("student/teacher shape mismatch")
    from .autodiff import asum
    sq = asum((student - teacher) ** 2)
    if sv.ndim == 2:
        return sq * (1.0 / sv.shape[0])
    return sq


def prune_candidates(query_sentence: np.ndarray, distilled: dict, k_percent: float) -> CandidateSet:
    """Keep the ceil(k% * M) videos with highest cosine(distilled, sentence)."""
    if not 0.0 < k_percent <= 100.0:
        raise ValueError("k_percent must lie in (0, 100]")
    if not distilled:
        raise ValueError("empty corpus")
    sentence = np.asarray(query_sentence, dtype=np.float64)
    s_norm = np.linalg.norm(sentence)
    ids = sorted(distilled.keys())
    mat = np.stack([np.asarray(distilled[i], dtype=np.float64) for i in ids])
    scores = (mat @ sentence) / (np.linalg.norm(mat, axis=1) * s_norm)
    keep = int(math.ceil(k_percent / 100.0 * len(ids)))
    # sort by descending score, ties by id order (ids already ascending)
    order = np.argsort(-scores, kind="stable")[:keep]
    return CandidateSet(
        video_ids=[ids[i] for i in order],
        coarse_scores=scores[order],
        k_percent=k_percent,
    )
