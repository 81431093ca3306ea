"""Deterministic dense linear-algebra and attention primitives.

Everything is plain numpy float64, pure, and reentrant; parameters are frozen
fixtures drawn with seeded Xavier-uniform init (this is an inference-only
artifact, nothing is learned). Softmax is stabilized by row-max subtraction,
and a fully-masked attention row falls back to uniform weights over all keys
so no query ever produces NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import require
from .scene import BevGrid


def check_feature_mat(x: np.ndarray, module: str, op: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    require(x.ndim == 2 and x.shape[0] > 0 and x.shape[1] > 0, module, op, f"expected 2-D matrix, got shape {x.shape}")
    require(bool(np.isfinite(x).all()), module, op, "non-finite entries")
    return x


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=axis, keepdims=True)
    return shifted


@dataclass(frozen=True)
class MlpParams:
    """Weights/biases for an MLP with ReLU between layers, identity output."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        for w_prev, w_next in zip(self.weights[:-1], self.weights[1:]):
            require(w_prev.shape[1] == w_next.shape[0], "tensor-kernel", "MlpParams", "layer dims must chain")
        for w, b in zip(self.weights, self.biases):
            require(w.shape[1] == b.shape[0], "tensor-kernel", "MlpParams", "bias dim mismatch")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def seeded(cls, dims: list[int], rng: np.random.Generator) -> "MlpParams":
        ws = tuple(xavier_uniform(rng, a, b) for a, b in zip(dims[:-1], dims[1:]))
        bs = tuple(np.zeros(b) for b in dims[1:])
        return cls(ws, bs)

    @classmethod
    def zero(cls, dims: list[int]) -> "MlpParams":
        ws = tuple(np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:]))
        bs = tuple(np.zeros(b) for b in dims[1:])
        return cls(ws, bs)


def mlp_forward(x: np.ndarray, p: MlpParams) -> np.ndarray:
    x = check_feature_mat(x, "tensor-kernel", "mlp_forward")
    require(x.shape[1] == p.in_dim, "tensor-kernel", "mlp_forward", f"input dim {x.shape[1]} != {p.in_dim}")
    h = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        h = h @ w + b
        if i != last:
            h = np.maximum(h, 0.0)
    return h


def sinusoidal_pe(points: np.ndarray, out_dim: int) -> np.ndarray:
    """Sinusoidal encoding of 2-D points; out_dim must be divisible by 4.

    Each coordinate gets out_dim/2 channels as interleaved (sin, cos) pairs at
    geometrically spaced frequencies 1/10000^(2i/(out_dim/2)).
    """
    pts = np.asarray(points, dtype=float)
    require(pts.ndim == 2 and pts.shape[1] == 2, "tensor-kernel", "sinusoidal_pe", "points must be n x 2")
    require(out_dim > 0 and out_dim % 4 == 0, "tensor-kernel", "sinusoidal_pe", "out_dim must be divisible by 4")
    half = out_dim // 2
    freqs = 1.0 / np.power(10000.0, 2.0 * np.arange(half // 2) / half)
    out = np.empty((pts.shape[0], out_dim))
    for c in range(2):
        phase = pts[:, c : c + 1] * freqs[None, :]
        out[:, c * half + 0 : (c + 1) * half : 2] = np.sin(phase)
        out[:, c * half + 1 : (c + 1) * half : 2] = np.cos(phase)
    return out


@dataclass(frozen=True)
class AttentionParams:
    """Projections for multi-head attention over D-dimensional features."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    heads: int

    def __post_init__(self):
        d = self.wq.shape[0]
        require(d % self.heads == 0, "tensor-kernel", "AttentionParams", "D must divide by head count")
        for w in (self.wq, self.wk, self.wv, self.wo):
            require(w.shape == (d, d), "tensor-kernel", "AttentionParams", "projections must be DxD")
            require(bool(np.isfinite(w).all()), "tensor-kernel", "AttentionParams", "non-finite weights")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def seeded(cls, dim: int, heads: int, rng: np.random.Generator) -> "AttentionParams":
        return cls(*(xavier_uniform(rng, dim, dim) for _ in range(4)), heads=heads)


def mha(
    query: np.ndarray,
    key: np.ndarray,
    value: np.ndarray,
    p: AttentionParams,
    mask: np.ndarray | None = None,
    return_weights: bool = False,
):
    """Multi-head attention. mask[i, j] = True means key j is visible to query i.

    A query row whose mask hides every key attends uniformly to all keys
    (Mask2Former-style fallback) instead of producing an empty softmax.
    """
    q = check_feature_mat(query, "tensor-kernel", "mha")
    k = check_feature_mat(key, "tensor-kernel", "mha")
    v = check_feature_mat(value, "tensor-kernel", "mha")
    require(k.shape[0] == v.shape[0], "tensor-kernel", "mha", "key/value row mismatch")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        require(mask.shape == (q.shape[0], k.shape[0]), "tensor-kernel", "mha", "mask shape mismatch")
        dead = ~mask.any(axis=1)
        if dead.any():
            mask = mask.copy()
            mask[dead, :] = True

    d, h = p.dim, p.heads
    hd = d // h
    qh = (q @ p.wq).reshape(q.shape[0], h, hd).transpose(1, 0, 2)
    kh = (k @ p.wk).reshape(k.shape[0], h, hd).transpose(1, 0, 2)
    vh = (v @ p.wv).reshape(v.shape[0], h, hd).transpose(1, 0, 2)
    scores = qh @ kh.transpose(0, 2, 1)  # (h, nq, nk); mutated in place below
    scores /= math.sqrt(hd)
    if mask is not None:
        scores[:, ~mask] = -np.inf
    weights = softmax(scores, axis=-1)
    out_h = (weights @ vh).transpose(1, 0, 2).reshape(q.shape[0], d)
    out = out_h @ p.wo
    if return_weights:
        return out, weights
    return out


def bilinear_sample(grid: BevGrid, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of grid features at world points; borders clamp."""
    require(grid.data.size > 0, "tensor-kernel", "bilinear_sample", "empty grid")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    data = grid.data if grid.data.ndim == 3 else grid.data[..., None]
    cells = grid.world_to_cell(pts)
    fi = np.clip(cells[:, 0], 0.0, grid.h - 1.0)
    fj = np.clip(cells[:, 1], 0.0, grid.w - 1.0)
    i0 = np.floor(fi).astype(int)
    j0 = np.floor(fj).astype(int)
    i1 = np.minimum(i0 + 1, grid.h - 1)
    j1 = np.minimum(j0 + 1, grid.w - 1)
    di = (fi - i0)[:, None]
    dj = (fj - j0)[:, None]
    out = (
        data[i0, j0] * (1 - di) * (1 - dj)
        + data[i1, j0] * di * (1 - dj)
        + data[i0, j1] * (1 - di) * dj
        + data[i1, j1] * di * dj
    )
    return out if grid.data.ndim == 3 else out[:, 0]


@dataclass(frozen=True)
class DeformParams:
    """Deformable attention: per-query learned offsets and weights over n_points samples."""

    w_offset: np.ndarray  # (D, n_points*2)
    b_offset: np.ndarray
    w_weight: np.ndarray  # (D, n_points)
    b_weight: np.ndarray
    wv: np.ndarray  # (C, D) value projection of sampled features
    wo: np.ndarray  # (D, D) output projection

    @property
    def n_points(self) -> int:
        return self.w_weight.shape[1]

    @classmethod
    def seeded(cls, dim: int, channels: int, n_points: int, rng: np.random.Generator, offset_scale: float = 2.0) -> "DeformParams":
        return cls(
            w_offset=xavier_uniform(rng, dim, n_points * 2) * offset_scale,
            b_offset=rng.uniform(-offset_scale, offset_scale, size=n_points * 2),
            w_weight=xavier_uniform(rng, dim, n_points),
            b_weight=np.zeros(n_points),
            wv=xavier_uniform(rng, channels, dim),
            wo=xavier_uniform(rng, dim, dim),
        )


def deform_attn(q: np.ndarray, ref_points: np.ndarray, grid: BevGrid, p: DeformParams) -> np.ndarray:
    """Sample grid features near per-query reference points, weight, and project.

    Offsets (metres) and softmax weights both come from the query; output is
    wo(sum_p weight_p * wv(sample(ref + offset_p))).
    """
    q = check_feature_mat(q, "tensor-kernel", "deform_attn")
    refs = np.asarray(ref_points, dtype=float)
    require(refs.shape == (q.shape[0], 2), "tensor-kernel", "deform_attn", "one reference point per query row")
    n, P = q.shape[0], p.n_points
    offsets = (q @ p.w_offset + p.b_offset).reshape(n, P, 2)
    weights = softmax(q @ p.w_weight + p.b_weight, axis=-1)  # (n, P)
    sample_pts = refs[:, None, :] + offsets  # (n, P, 2)
    sampled = bilinear_sample(grid, sample_pts.reshape(-1, 2)).reshape(n, P, -1)
    values = sampled @ p.wv  # (n, P, D)
    fused = np.einsum("np,npd->nd", weights, values)
    return fused @ p.wo


@dataclass(frozen=True)
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    @classmethod
    def identity(cls, dim: int) -> "LayerNormParams":
        return cls(np.ones(dim), np.zeros(dim))


def layer_norm(x: np.ndarray, p: LayerNormParams) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + p.eps) * p.gamma + p.beta


@dataclass(frozen=True)
class DecoderBlockParams:
    """Standard transformer decoder block: MHSA, MHCA, FFN with residuals + LayerNorm."""

    self_attn: AttentionParams
    cross_attn: AttentionParams
    ffn: MlpParams
    ln1: LayerNormParams
    ln2: LayerNormParams
    ln3: LayerNormParams

    @classmethod
    def seeded(cls, dim: int, heads: int, rng: np.random.Generator, ffn_mult: int = 2) -> "DecoderBlockParams":
        return cls(
            self_attn=AttentionParams.seeded(dim, heads, rng),
            cross_attn=AttentionParams.seeded(dim, heads, rng),
            ffn=MlpParams.seeded([dim, ffn_mult * dim, dim], rng),
            ln1=LayerNormParams.identity(dim),
            ln2=LayerNormParams.identity(dim),
            ln3=LayerNormParams.identity(dim),
        )


def decoder_block(
    q: np.ndarray,
    kv: np.ndarray | None,
    p: DecoderBlockParams,
    mask: np.ndarray | None = None,
    return_cross_weights: bool = False,
):
    """Post-norm decoder block; empty/None kv skips the cross-attention sub-block."""
    h = layer_norm(q + mha(q, q, q, p.self_attn), p.ln1)
    cross_w = None
    if kv is not None and kv.shape[0] > 0:
        if return_cross_weights:
            attended, cross_w = mha(h, kv, kv, p.cross_attn, mask=mask, return_weights=True)
        else:
            attended = mha(h, kv, kv, p.cross_attn, mask=mask)
        h = layer_norm(h + attended, p.ln2)
    h = layer_norm(h + mlp_forward(h, p.ffn), p.ln3)
    if return_cross_weights:
        return h, cross_w
    return h


@dataclass(frozen=True)
class ConvParams:
    """3x3 same-padding convolution weights (kh, kw, c_in, c_out)."""

    kernel: np.ndarray
    bias: np.ndarray

    @classmethod
    def seeded(cls, c_in: int, c_out: int, rng: np.random.Generator, k: int = 3) -> "ConvParams":
        fan_in, fan_out = k * k * c_in, k * k * c_out
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return cls(rng.uniform(-bound, bound, size=(k, k, c_in, c_out)), np.zeros(c_out))

    @classmethod
    def zero(cls, c_in: int, c_out: int, k: int = 3) -> "ConvParams":
        return cls(np.zeros((k, k, c_in, c_out)), np.zeros(c_out))


def conv2d_same(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """3x3 (or kxk) convolution with zero padding.

    Computed as a sum of per-tap matmuls over shifted views; avoids the
    kh*kw*C_in im2col intermediate, which dominates memory at full BEV size.
    """
    kh, kw, c_in, c_out = p.kernel.shape
    h, w, _ = x.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((ph, ph), (pw, pw), (0, 0)))
    out = np.broadcast_to(p.bias, (h * w, c_out)).copy()
    for di in range(kh):
        for dj in range(kw):
            patch = np.ascontiguousarray(padded[di : di + h, dj : dj + w, :]).reshape(h * w, c_in)
            out += patch @ p.kernel[di, dj]
    return out.reshape(h, w, c_out)


def avg_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling with stride 2; H and W must be even."""
    h, w, c = x.shape
    require(h % 2 == 0 and w % 2 == 0, "tensor-kernel", "avg_pool2", "H and W must be even")
    return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def nearest_up2(x: np.ndarray) -> np.ndarray:
    """2x nearest-neighbour upsampling."""
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)
