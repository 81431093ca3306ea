"""Map decoding: thing/stuff queries refined over BEV features, mask decoding by
matrix multiplication, and panoptic merge.

Thing queries carry lanes, dividers and crossings; a single stuff query covers
the drivable area. Query refinement is a stack of decoder blocks cross-attending
to flattened BEV tokens (with projected sinusoidal positions); each query's mask
is the sigmoid of its scaled dot product with the BEV features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import require
from .kernels import DecoderBlockParams, MlpParams, decoder_block, mlp_forward, sinusoidal_pe, xavier_uniform
from .scene import BevGrid

THING_CLASSES = ("lane", "divider", "crossing")
NO_OBJECT = len(THING_CLASSES)  # class index for "no element"
STUFF_LABEL_OFFSET = 1  # panoptic label of stuff = n_things + STUFF_LABEL_OFFSET


@dataclass(frozen=True)
class MapHeadParams:
    dim: int
    n_things: int
    thing_embed: np.ndarray  # (n_things, D)
    stuff_embed: np.ndarray  # (1, D)
    blocks: tuple  # DecoderBlockParams per refinement layer
    pe_proj: MlpParams
    class_head: MlpParams  # D -> len(THING_CLASSES) + 1
    mask_threshold: float = 0.5

    @classmethod
    def seeded(cls, dim: int, heads: int, layers: int, n_things: int, seed: int, mask_threshold: float = 0.5) -> "MapHeadParams":
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
        return cls(
            dim=dim,
            n_things=n_things,
            thing_embed=xavier_uniform(rng, n_things, dim) * np.sqrt(dim),
            stuff_embed=xavier_uniform(rng, 1, dim) * np.sqrt(dim),
            blocks=tuple(DecoderBlockParams.seeded(dim, heads, rng) for _ in range(layers)),
            pe_proj=MlpParams.seeded([dim, dim], rng),
            class_head=MlpParams.seeded([dim, dim, len(THING_CLASSES) + 1], rng),
            mask_threshold=mask_threshold,
        )


@dataclass
class MapQuerySet:
    thing_queries: np.ndarray  # (n_things, D)
    stuff_query: np.ndarray  # (1, D)
    class_logits: np.ndarray  # (n_things, 4)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def decode_map(bev: BevGrid, params: MapHeadParams) -> tuple[MapQuerySet, np.ndarray, BevGrid]:
    """Refine map queries over the BEV and decode per-query masks plus a panoptic grid.

    Returns (queries, mask probabilities (n_things+1, H, W), panoptic id grid)
    where panoptic ids are 0 = free, 1..n_things = thing query, n_things+1 = drivable.
    """
    require(bev.channels == params.dim, "map-head", "decode_map", f"bev channels {bev.channels} != D {params.dim}")
    h, w = bev.h, bev.w
    tokens = bev.data.reshape(h * w, params.dim)
    keys = tokens + mlp_forward(sinusoidal_pe(bev.cell_centers().reshape(-1, 2), params.dim), params.pe_proj)

    q = np.concatenate([params.thing_embed, params.stuff_embed], axis=0)
    for blk in params.blocks:
        q = decoder_block(q, keys, blk)

    logits = (q @ tokens.T) / np.sqrt(params.dim)
    probs = _sigmoid(logits)  # (n_things + 1, H*W)

    queries = MapQuerySet(
        thing_queries=q[: params.n_things],
        stuff_query=q[params.n_things :],
        class_logits=mlp_forward(q[: params.n_things], params.class_head),
    )

    # panoptic merge: per-cell argmax over masks at or above threshold, else free
    gated = np.where(probs >= params.mask_threshold, probs, 0.0)
    best = np.argmax(gated, axis=0)
    strength = gated[best, np.arange(h * w)]
    labels = np.where(strength > 0.0, best + 1, 0)
    panoptic = BevGrid(labels.reshape(h, w).astype(np.int64), bev.extent)
    return queries, probs.reshape(-1, h, w), panoptic


def mask_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """|intersection| / |union| of two binary grids; 1.0 when both are empty."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    require(pred.shape == gt.shape, "map-head", "mask_iou", "shape mismatch")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)
