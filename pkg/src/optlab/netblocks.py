"""Reference math for the network building blocks, on plain numpy arrays.

Feature maps are channels-first float arrays of shape (C, H, W), row-major;
the canonical wire format for any tensor is the flat JSON record
{"shape": [...], "data": [...]} (see tensor_to_json / tensor_from_json).
Everything here is a pure function sized for desk-scale verification, not a
trainable network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteInputError, ParameterError, ShapeError


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def silu(x) -> np.ndarray:
    """Elementwise x * sigmoid(x)."""
    x = np.asarray(x, dtype=float)
    return x * _sigmoid(x)


def batchnorm_infer(x, mu: float, sigma: float, gamma_s: float, beta_s: float) -> np.ndarray:
    """Inference-time batch norm: gamma * (x - mu)/sigma + beta, elementwise."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=float)
    return gamma_s * ((x - mu) / sigma) + beta_s


def _as_chw(x, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 3:
        raise ShapeError(f"{name} must be a (C, H, W) array, got shape {x.shape}")
    return x


def conv2d(x, kernels, bias, stride: int = 1, pad: int = 0) -> np.ndarray:
    """2-D cross-correlation with zero padding.

    x: (C, H, W); kernels: (O, C, K, K); bias: (O,).  Output spatial size is
    floor((H + 2*pad - K)/stride) + 1 per side.
    """
    x = _as_chw(x)
    kernels = np.asarray(kernels, dtype=float)
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise ShapeError(f"kernels must be (O, C, K, K), got shape {kernels.shape}")
    c, h, w = x.shape
    o, ck, k, _ = kernels.shape
    if ck != c:
        raise ShapeError(f"kernel channels {ck} != input channels {c}")
    bias = np.asarray(bias, dtype=float)
    if bias.shape != (o,):
        raise ShapeError(f"bias must have shape ({o},), got {bias.shape}")
    if stride < 1 or pad < 0:
        raise ParameterError("stride must be >= 1 and pad >= 0")
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (w + 2 * pad - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"kernel {k} too large for padded input {h + 2 * pad}x{w + 2 * pad}")

    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    # contiguous per-offset weight matrices; strided slices of the 4-D kernel
    # tensor would push the matmul off its fast path
    kk = np.ascontiguousarray(kernels.transpose(2, 3, 0, 1))
    out = np.zeros((o, h_out, w_out))
    for m in range(k):
        for n_ in range(k):
            patch = xp[:, m:m + stride * h_out:stride, n_:n_ + stride * w_out:stride]
            out += (kk[m, n_] @ patch.reshape(c, -1)).reshape(o, h_out, w_out)
    out += bias[:, None, None]
    return out


def depthwise_conv(x, kernels) -> np.ndarray:
    """Per-channel cross-correlation, no cross-channel mixing.

    x: (C, H, W); kernels: (C, K, K); stride 1, no padding.
    """
    x = _as_chw(x)
    kernels = np.asarray(kernels, dtype=float)
    if kernels.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
        raise ShapeError(f"kernels must be (C, K, K), got shape {kernels.shape}")
    c, h, w = x.shape
    if kernels.shape[0] != c:
        raise ShapeError(f"kernel channels {kernels.shape[0]} != input channels {c}")
    k = kernels.shape[1]
    if k > h or k > w:
        raise ShapeError(f"kernel {k} too large for input {h}x{w}")
    h_out, w_out = h - k + 1, w - k + 1
    out = np.zeros((c, h_out, w_out))
    for m in range(k):
        for n_ in range(k):
            out += kernels[:, m, n_][:, None, None] * x[:, m:m + h_out, n_:n_ + w_out]
    return out


def pointwise_conv(x, weights) -> np.ndarray:
    """Per-pixel linear map across channels: out[o] = sum_c W[o, c] * x[c]."""
    x = _as_chw(x)
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 2:
        raise ShapeError(f"weights must be (O, C), got shape {weights.shape}")
    c, h, w = x.shape
    if weights.shape[1] != c:
        raise ShapeError(f"weight columns {weights.shape[1]} != input channels {c}")
    return (weights @ x.reshape(c, -1)).reshape(weights.shape[0], h, w)


def max_pool(x, k: int, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Window max over k x k patches; padding uses -inf so it never wins."""
    x = _as_chw(x)
    if k < 1 or stride < 1 or pad < 0:
        raise ParameterError("k and stride must be >= 1, pad >= 0")
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    c, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"pool window {k} too large for padded input {h}x{w}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    return windows[:, ::stride, ::stride].max(axis=(-2, -1))


def sppf(x, proj, k: int = 5) -> np.ndarray:
    """Pyramid pooling: three cascaded stride-1 max pools, concat, project.

    Stage i applies the k x k pool to stage i-1, padding (k-1)/2 so spatial
    size is preserved; the concatenation [x, M(x), M(M(x)), M(M(M(x)))] is
    mapped through the pointwise projection `proj` of shape (O, 4*C).
    """
    x = _as_chw(x)
    if k < 1 or k % 2 == 0:
        raise ParameterError(f"pool size must be odd and positive, got {k}")
    pad = (k - 1) // 2
    m1 = max_pool(x, k, 1, pad)
    m2 = max_pool(m1, k, 1, pad)
    m3 = max_pool(m2, k, 1, pad)
    stacked = np.concatenate([x, m1, m2, m3], axis=0)
    return pointwise_conv(stacked, proj)


def spatial_attention(feat, conv7) -> tuple[np.ndarray, np.ndarray]:
    """Sigmoid spatial attention from pooled channel statistics.

    The channelwise max and mean of feat (C, H, W) form a 2-channel map that
    a 7x7 kernel (shape (2, 7, 7), padding 3, no bias) reduces to one
    channel; A = sigmoid of that, refined = A * feat broadcast over
    channels.  Returns (A, refined) with A of shape (1, H, W).
    """
    feat = _as_chw(feat, "feat")
    conv7 = np.asarray(conv7, dtype=float)
    if conv7.shape != (2, 7, 7):
        raise ShapeError(f"attention kernel must have shape (2, 7, 7), got {conv7.shape}")
    pooled = np.stack([feat.max(axis=0), feat.mean(axis=0)], axis=0)
    raw = conv2d(pooled, conv7[None, :, :, :], np.zeros(1), stride=1, pad=3)
    att = _sigmoid(raw)
    return att, att * feat


def _upsample2x(x) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def fuse_topdown(f_backbone, f_deeper, merge) -> np.ndarray:
    """Top-down fusion: 2x nearest-neighbor upsample of the deeper map,
    channel concat with the backbone map (backbone channels first), then a
    pointwise merge.  The deeper map's spatial dims must be exactly half the
    backbone's."""
    f_backbone = _as_chw(f_backbone, "f_backbone")
    f_deeper = _as_chw(f_deeper, "f_deeper")
    if (f_backbone.shape[1] != 2 * f_deeper.shape[1]
            or f_backbone.shape[2] != 2 * f_deeper.shape[2]):
        raise ShapeError(
            f"deeper map {f_deeper.shape[1:]} is not half of backbone map {f_backbone.shape[1:]}")
    stacked = np.concatenate([f_backbone, _upsample2x(f_deeper)], axis=0)
    return pointwise_conv(stacked, merge)


def fuse_bottomup(f_fused, f_shallower_out, merge) -> np.ndarray:
    """Bottom-up fusion: 2x2 stride-2 max downsample of the shallower map,
    channel concat with the fused map (fused channels first), then a
    pointwise merge.  The shallower map's spatial dims must be exactly
    double the fused map's."""
    f_fused = _as_chw(f_fused, "f_fused")
    f_shallower_out = _as_chw(f_shallower_out, "f_shallower_out")
    if (f_shallower_out.shape[1] != 2 * f_fused.shape[1]
            or f_shallower_out.shape[2] != 2 * f_fused.shape[2]):
        raise ShapeError(
            f"shallower map {f_shallower_out.shape[1:]} is not double of fused map {f_fused.shape[1:]}")
    down = max_pool(f_shallower_out, 2, stride=2, pad=0)
    stacked = np.concatenate([f_fused, down], axis=0)
    return pointwise_conv(stacked, merge)


def head_predict(feat, cls_w, box_w, obj_w, n_bins: int):
    """Decoupled detection head on a feature map.

    All three weight sets are 1x1 (pointwise) kernels over the feature
    channels C: cls_w (n_classes, C), box_w (4*n_bins, C), obj_w (1, C).
    Returns (p_cls, d_box, p_obj) where p_cls and p_obj are sigmoids of
    their branches and d_box has shape (4, n_bins, H, W) with a softmax over
    the n_bins axis, one distribution per box side per cell.
    """
    feat = _as_chw(feat, "feat")
    if n_bins < 1:
        raise ParameterError(f"n_bins must be positive, got {n_bins}")
    box_w = np.asarray(box_w, dtype=float)
    if box_w.ndim != 2 or box_w.shape[0] != 4 * n_bins:
        raise ShapeError(f"box weights must have 4*n_bins={4 * n_bins} rows, got shape {box_w.shape}")
    obj_w = np.asarray(obj_w, dtype=float)
    if obj_w.ndim != 2 or obj_w.shape[0] != 1:
        raise ShapeError(f"objectness weights must have shape (1, C), got {obj_w.shape}")
    p_cls = _sigmoid(pointwise_conv(feat, cls_w))
    p_obj = _sigmoid(pointwise_conv(feat, obj_w))
    raw = pointwise_conv(feat, box_w).reshape(4, n_bins, feat.shape[1], feat.shape[2])
    shifted = raw - raw.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    d_box = e / e.sum(axis=1, keepdims=True)
    return p_cls, d_box, p_obj


def linear_classify(x, w_mat, b) -> tuple[np.ndarray, int]:
    """Scores = W x + b and the argmax label (lowest index wins ties)."""
    x = np.asarray(x, dtype=float)
    w_mat = np.asarray(w_mat, dtype=float)
    b = np.asarray(b, dtype=float)
    if x.ndim != 1 or w_mat.ndim != 2 or w_mat.shape[1] != x.shape[0]:
        raise ShapeError(f"incompatible shapes: x {x.shape}, W {w_mat.shape}")
    if b.shape != (w_mat.shape[0],):
        raise ShapeError(f"bias must have shape ({w_mat.shape[0]},), got {b.shape}")
    scores = w_mat @ x + b
    return scores, int(np.argmax(scores))


@dataclass(frozen=True)
class ScalingTriple:
    """Scaling bases (alpha, beta_w, gamma_r) and compound coefficient phi."""

    alpha: float
    beta_w: float
    gamma_r: float
    phi: float = 1.0

    def __post_init__(self):
        if self.alpha < 1 or self.beta_w < 1 or self.gamma_r < 1:
            raise ParameterError("scaling bases must be >= 1")
        if self.phi < 0:
            raise ParameterError("phi must be nonnegative")

    @property
    def constraint_product(self) -> float:
        return self.alpha * self.beta_w ** 2 * self.gamma_r ** 2


def compound_scale(s: ScalingTriple) -> tuple[float, float, float]:
    """Depth/width/resolution multipliers (alpha^phi, beta_w^phi, gamma_r^phi)."""
    return s.alpha ** s.phi, s.beta_w ** s.phi, s.gamma_r ** s.phi


def _grid_values(lo: float, hi: float, step: float) -> list[float]:
    if not 1.0 <= lo <= hi <= 2.0:
        raise ParameterError(f"range [{lo}, {hi}] must lie within [1, 2]")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + i * step for i in range(count)]


def grid_search_scaling(
    step: float,
    alpha_range: tuple[float, float] = (1.0, 2.0),
    beta_range: tuple[float, float] = (1.0, 2.0),
    gamma_range: tuple[float, float] = (1.0, 2.0),
    phi: float = 1.0,
) -> ScalingTriple:
    """Grid triple minimizing |alpha * beta^2 * gamma^2 - 2|.

    Ties break toward the smallest alpha, then beta, then gamma.  The
    winning triple must land within +-5% of the target product 2 (residual
    <= 0.1), otherwise no valid triple exists on the grid.
    """
    if step <= 0:
        raise ParameterError(f"step must be positive, got {step}")
    alphas = _grid_values(*alpha_range, step)
    betas = _grid_values(*beta_range, step)
    gammas = _grid_values(*gamma_range, step)
    best = None
    best_res = math.inf
    for a in alphas:
        for b_ in betas:
            for g in gammas:
                res = abs(a * b_ * b_ * g * g - 2.0)
                if res < best_res:
                    best_res = res
                    best = (a, b_, g)
    if best is None:
        raise ParameterError("empty scaling grid")
    if best_res > 0.1:
        raise ParameterError(
            f"no grid point satisfies |alpha*beta^2*gamma^2 - 2| <= 0.1 (best residual {best_res:.4f})")
    return ScalingTriple(alpha=best[0], beta_w=best[1], gamma_r=best[2], phi=phi)


def tensor_to_json(arr) -> dict:
    """Flat wire format: {"shape": [...], "data": [row-major floats]}."""
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}


def tensor_from_json(obj) -> np.ndarray:
    """Parse the flat wire format back into an array, validating its shape."""
    shape = tuple(int(s) for s in obj["shape"])
    data = np.asarray(obj["data"], dtype=float)
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise ShapeError(f"data length {data.size} does not match shape {shape}")
    if not np.all(np.isfinite(data)):
        raise NonFiniteInputError("tensor data contains non-finite values")
    return data.reshape(shape)
