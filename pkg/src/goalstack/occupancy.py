"""Occupancy forecasting: sequential blocks that fuse agent features into a
dense scene feature via masked pixel-agent attention, then emit per-agent
instance occupancy by matrix multiplication.

Scales are fixed: the block state lives at 1/4 of the BEV resolution, the
pixel-agent interaction runs at 1/8, and a shared convolutional decoder brings
features back to full resolution for the occupancy matmul. Down/upsampling is
2x average-pool down and nearest-neighbour up followed by a 3x3 convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import require
from .kernels import (
    ConvParams,
    DecoderBlockParams,
    MlpParams,
    avg_pool2,
    conv2d_same,
    decoder_block,
    mlp_forward,
    nearest_up2,
)
from .scene import BevGrid


@dataclass(frozen=True)
class OccBlockParams:
    attn: DecoderBlockParams
    up_conv: ConvParams


@dataclass(frozen=True)
class OccParams:
    dim: int
    n_blocks: int
    temporal_mlps: tuple  # MLP_t per block, 3D -> D
    blocks: tuple  # OccBlockParams, independent per block
    mask_mlp: MlpParams  # G^t -> M^t, shared
    occ_mlp: MlpParams  # M^t -> U^t, shared
    decoder_convs: tuple  # two 3x3 convs for /4 -> /1, shared
    merge_threshold: float = 0.5

    @classmethod
    def seeded(cls, dim: int, heads: int, n_blocks: int, seed: int, merge_threshold: float = 0.5) -> "OccParams":
        rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
        return cls(
            dim=dim,
            n_blocks=n_blocks,
            temporal_mlps=tuple(MlpParams.seeded([3 * dim, dim], rng) for _ in range(n_blocks)),
            blocks=tuple(
                OccBlockParams(attn=DecoderBlockParams.seeded(dim, heads, rng), up_conv=ConvParams.seeded(dim, dim, rng))
                for _ in range(n_blocks)
            ),
            mask_mlp=MlpParams.seeded([dim, dim, dim], rng),
            occ_mlp=MlpParams.seeded([dim, dim, dim], rng),
            decoder_convs=tuple(ConvParams.seeded(dim, dim, rng) for _ in range(2)),
            merge_threshold=merge_threshold,
        )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def fuse_agent_features(q_a: np.ndarray, p_a: np.ndarray, q_x: np.ndarray, t: int, params: OccParams) -> np.ndarray:
    """G^t from track features, position embeddings and motion features, via MLP_t."""
    require(q_a.shape[0] == p_a.shape[0] == q_x.shape[0], "occ-former", "fuse_agent_features", "row count mismatch")
    require(1 <= t <= params.n_blocks, "occ-former", "fuse_agent_features", f"block index {t} outside [1, {params.n_blocks}]")
    if q_a.shape[0] == 0:
        return np.zeros((0, params.dim))
    return mlp_forward(np.concatenate([q_a, p_a, q_x], axis=1), params.temporal_mlps[t - 1])


def initial_state(bev: BevGrid, params: OccParams) -> np.ndarray:
    """F^0: the BEV feature downscaled to 1/4 resolution."""
    require(bev.channels == params.dim, "occ-former", "initial_state", "bev channels != D")
    require(bev.h % 8 == 0 and bev.w % 8 == 0, "occ-former", "initial_state", "BEV size must divide by 8")
    return avg_pool2(avg_pool2(bev.data))


def occ_block(
    f_prev: np.ndarray,
    g_t: np.ndarray,
    params: OccParams,
    block_idx: int,
    return_attn: bool = False,
):
    """One temporal block: masked pixel-agent interaction and instance decoding.

    Returns (F^t at /4, attention mask O_m^t at /8 as (h8, w8, N_a), instance
    probabilities (N_a, H, W)); with return_attn also the cross-attention
    weights (heads, pixels, N_a).
    """
    require(f_prev.ndim == 3 and f_prev.shape[2] == params.dim, "occ-former", "occ_block", "F_prev must be h x w x D at /4 scale")
    require(1 <= block_idx <= params.n_blocks, "occ-former", "occ_block", "block index out of range")
    block = params.blocks[block_idx - 1]
    n_agents = g_t.shape[0]
    f_ds = avg_pool2(f_prev)
    h8, w8, _ = f_ds.shape
    tokens = f_ds.reshape(-1, params.dim)

    attn_weights = None
    if n_agents > 0:
        m_t = mlp_forward(g_t, params.mask_mlp)  # (N_a, D)
        affinity = tokens @ m_t.T  # (pixels, N_a)
        o_m = _sigmoid(affinity) > 0.5
        if return_attn:
            attended, attn_weights = decoder_block(tokens, g_t, block.attn, mask=o_m, return_cross_weights=True)
        else:
            attended = decoder_block(tokens, g_t, block.attn, mask=o_m)
    else:
        m_t = np.zeros((0, params.dim))
        o_m = np.zeros((h8 * w8, 0), dtype=bool)
        attended = decoder_block(tokens, None, block.attn)

    d_up = conv2d_same(nearest_up2(attended.reshape(h8, w8, params.dim)), block.up_conv)
    f_t = d_up + f_prev

    f_dec = f_t
    for conv in params.decoder_convs:
        f_dec = conv2d_same(nearest_up2(f_dec), conv)
    h, w, _ = f_dec.shape

    if n_agents > 0:
        u_t = mlp_forward(m_t, params.occ_mlp)
        inst = _sigmoid(u_t @ f_dec.reshape(-1, params.dim).T).reshape(n_agents, h, w)
    else:
        inst = np.zeros((0, h, w))

    out = (f_t, o_m.reshape(h8, w8, n_agents), inst)
    if return_attn:
        return (*out, attn_weights)
    return out


def merge_occupancy(instance_probs: np.ndarray, ids: list, extent, threshold: float = 0.5, shape: tuple | None = None) -> BevGrid:
    """Pixel-wise argmax merge into an instance-id grid (0 = free, ties to lower id)."""
    ids = list(ids)
    require(len(ids) == instance_probs.shape[0], "occ-former", "merge_occupancy", "one id per probability map")
    if instance_probs.shape[0] == 0:
        require(shape is not None, "occ-former", "merge_occupancy", "shape required when no agents")
        return BevGrid(np.zeros(shape, dtype=np.int64), extent)
    order = np.argsort(ids, kind="stable")
    probs = instance_probs[order]
    sorted_ids = np.asarray(ids)[order]
    best = np.argmax(probs, axis=0)  # first (= lowest id) wins ties
    h, w = probs.shape[1:]
    peak = probs[best, np.arange(h)[:, None], np.arange(w)[None, :]]
    labels = np.where(peak >= threshold, sorted_ids[best], 0)
    return BevGrid(labels.astype(np.int64), extent)


def run_occupancy(bev: BevGrid, agent_inputs, params: OccParams, return_attn: bool = False):
    """All T_o blocks in sequence.

    agent_inputs is (q_a, p_a, q_x); the same agent set feeds every block
    through its temporal-specific MLP. Returns a dict with the per-block
    state, masks and instance probabilities.
    """
    q_a, p_a, q_x = agent_inputs
    f = initial_state(bev, params)
    states, masks, instances, attns = [], [], [], []
    for t in range(1, params.n_blocks + 1):
        g_t = fuse_agent_features(q_a, p_a, q_x, t, params)
        out = occ_block(f, g_t, params, t, return_attn=return_attn)
        if return_attn:
            f, o_m, inst, attn = out
            attns.append(attn)
        else:
            f, o_m, inst = out
        states.append(f)
        masks.append(o_m)
        instances.append(inst)
    result = {"states": states, "masks": masks, "instances": instances}
    if return_attn:
        result["attention"] = attns
    return result
