# tcnn/nn/gpsa.py
"""
Gated Positional Self-Attention.

Each head h mixes a content softmax and a positional softmax:

    A_h = (1 - sigmoid(lambda_h)) * softmax(Q_h K_h^T) + sigmoid(lambda_h) * softmax(P_h)

where the positional logit between query pixel i and key pixel j depends only
on their offset delta = pos(j) - pos(i):

    P_h(i, j) = -alpha_h * (|delta|^2 - 2 * Delta_h . delta)

alpha_h = softplus_beta(alpha_raw_h) > 0 is the locality strength and Delta_h
the center of attention. Heads share one value projection W_val and own an
output projection W_out_h; the layer output is sum_h A_h X W_val W_out_h + bias.
"""
import functools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from tcnn.core.exceptions import DimensionError, UsageError
from tcnn.nn.module import Module, Parameter
from tcnn.tensor import functional as F
from tcnn.tensor.tensor import Tensor, get_default_dtype, is_grad_enabled, make_result, no_grad

DEFAULT_BETA = 5.0


def alpha_of(alpha_raw, beta: float = DEFAULT_BETA):
    """Locality strength alpha = (1/beta) * log(1 + exp(beta * alpha_raw)), increasing in alpha_raw."""
    if beta <= 0:
        raise UsageError("softplus needs beta > 0", detail=str(beta))
    if isinstance(alpha_raw, Tensor):
        return F.softplus(alpha_raw, beta)
    return np.logaddexp(0.0, beta * np.asarray(alpha_raw, dtype=np.float64)) / beta


def alpha_raw_for(alpha, beta: float = DEFAULT_BETA):
    """Inverse of alpha_of: the raw parameter giving locality strength `alpha` > 0."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha <= 0):
        raise UsageError("alpha must be positive", detail=str(alpha))
    return alpha + np.log1p(-np.exp(-beta * alpha)) / beta


@functools.lru_cache(maxsize=32)
def relative_offsets(H: int, W: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column offsets pos(j) - pos(i) for row-major pixels i, j of an H x W grid."""
    rows, cols = np.divmod(np.arange(H * W), W)
    d_row = (rows[None, :] - rows[:, None]).astype(np.float64)
    d_col = (cols[None, :] - cols[:, None]).astype(np.float64)
    d_row.setflags(write=False)
    d_col.setflags(write=False)
    return d_row, d_col


@dataclass
class PositionalLogits:
    """Per-head positional logits for one resolution."""
    resolution: Tuple[int, int]
    logits: Tensor
    _probs: Optional[Tensor] = field(default=None, repr=False)

    @property
    def length(self) -> int:
        return self.resolution[0] * self.resolution[1]

    def softmax(self) -> Tensor:
        if self._probs is None:
            self._probs = F.softmax(self.logits, axis=-1)
        return self._probs


def positional_logits(H: int, W: int, alpha: Tensor, centers: Tensor) -> PositionalLogits:
    """
    Closed-form positional logits -alpha_h * (|delta|^2 - 2 Delta_h . delta).

    Args:
        H, W: Grid size
        alpha (Tensor): Rectified locality strengths, N_h
        centers (Tensor): Centers of attention in pixels (row, col), N_h x 2

    Returns:
        PositionalLogits: N_h x L x L logits with L = H * W
    """
    if H < 1 or W < 1:
        raise DimensionError("Grid must be at least 1 x 1", detail=f"{H} x {W}")
    if centers.shape != (alpha.shape[0], 2):
        raise DimensionError("Centers must be N_h x 2", detail=f"{centers.shape} for {alpha.shape[0]} heads")
    d_row, d_col = relative_offsets(H, W)
    squared = d_row * d_row + d_col * d_col
    c = centers.data.astype(np.float64)
    a = alpha.data.astype(np.float64)

    def inner(c_):
        return squared[None] - 2.0 * (c_[:, 0, None, None] * d_row[None] + c_[:, 1, None, None] * d_col[None])

    out = (-a[:, None, None] * inner(c)).astype(alpha.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        ga = -(g64 * inner(c)).sum(axis=(1, 2))
        gc_row = 2.0 * a * (g64 * d_row[None]).sum(axis=(1, 2))
        gc_col = 2.0 * a * (g64 * d_col[None]).sum(axis=(1, 2))
        return ga.astype(alpha.dtype), np.stack([gc_row, gc_col], axis=1).astype(centers.dtype)
    return PositionalLogits((H, W), make_result(out, (alpha, centers), backward, "positional_logits"))


class GpsaLayer(Module):
    """
    One GPSA layer.

    Attributes:
        w_qry, w_key (Parameter): Per-head projections, N_h x D_in x D_h
        w_val (Parameter): Value projection shared by all heads, D_in x D_in
        w_out (Parameter): Per-head output projections, N_h x D_in x D_out
        alpha_raw (Parameter): Unconstrained locality strength, N_h
        centers (Parameter): Centers of attention (row, col), N_h x 2
        gate (Parameter): Gating parameter lambda, N_h
        bias (Optional[Parameter]): Output bias, D_out
    """

    def __init__(self, d_in: int, d_out: int, n_heads: int = 9, d_head: Optional[int] = None,
                 bias: bool = False, beta: float = DEFAULT_BETA, content_scale: bool = True,
                 alpha_init: float = 1.0, lambda_init: float = 1.0,
                 rng: Optional[np.random.Generator] = None, dtype=None):
        super().__init__()
        if min(d_in, d_out, n_heads) < 1:
            raise DimensionError("GPSA sizes must be positive", detail=f"d_in={d_in} d_out={d_out} n_heads={n_heads}")
        dtype = dtype or get_default_dtype()
        rng = rng or np.random.default_rng(0)
        d_head = d_head or max(1, math.ceil(d_in / n_heads))
        std = 1.0 / math.sqrt(d_in)
        self.w_qry = Parameter(rng.standard_normal((n_heads, d_in, d_head)) * std, dtype=dtype)
        self.w_key = Parameter(rng.standard_normal((n_heads, d_in, d_head)) * std, dtype=dtype)
        self.w_val = Parameter(np.eye(d_in), dtype=dtype)
        self.w_out = Parameter(rng.standard_normal((n_heads, d_in, d_out)) * std / math.sqrt(n_heads), dtype=dtype)
        self.alpha_raw = Parameter(np.full(n_heads, alpha_raw_for(alpha_init, beta)), dtype=dtype)
        self.centers = Parameter(rng.standard_normal((n_heads, 2)), dtype=dtype)
        self.gate = Parameter(np.full(n_heads, lambda_init), dtype=dtype)
        self.bias = Parameter(np.zeros(d_out), dtype=dtype) if bias else None
        self.n_heads = n_heads
        self.d_in = d_in
        self.d_out = d_out
        self.d_head = d_head
        self.beta = beta
        self.content_scale = content_scale
        self.capture = False
        self.captured: Optional[np.ndarray] = None
        self._cache: Dict[Tuple[int, int], Tuple[tuple, PositionalLogits]] = {}

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        state["captured"] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.d_head) if self.content_scale else 1.0

    def alpha(self) -> Tensor:
        return alpha_of(self.alpha_raw, self.beta)

    def positional(self, H: int, W: int) -> PositionalLogits:
        """Positional logits at H x W, cached until alpha_raw or centers change."""
        key = (self.alpha_raw.version, self.centers.version, is_grad_enabled())
        hit = self._cache.get((H, W))
        if hit is not None and hit[0] == key:
            return hit[1]
        pl = positional_logits(H, W, self.alpha(), self.centers)
        self._cache[(H, W)] = (key, pl)
        return pl

    def clear_cache(self) -> None:
        self._cache.clear()

    def forward(self, x: Tensor) -> Tensor:
        """B x D_in x H x W image in, B x D_out x H x W image out."""
        if x.ndim != 4 or x.shape[1] != self.d_in:
            raise DimensionError("GPSA input channels do not match", detail=f"input {x.shape}, layer {self.d_in}")
        B, C, H, W = x.shape
        if self.capture:
            self.captured = x.numpy()
        tokens = x.reshape(B, C, H * W).transpose(0, 2, 1)
        out = gpsa_forward(tokens, self, self.positional(H, W))
        return out.transpose(0, 2, 1).reshape(B, self.d_out, H, W)

    def extra_repr(self) -> str:
        return f"d_in={self.d_in}, d_out={self.d_out}, heads={self.n_heads}, d_head={self.d_head}"


def _tokens(X: Tensor, layer: GpsaLayer) -> Tensor:
    if X.ndim == 2:
        X = X.reshape(1, *X.shape)
    if X.ndim != 3 or X.shape[2] != layer.d_in:
        raise DimensionError("Expected L x D_in or B x L x D_in tokens", detail=f"{X.shape} for D_in={layer.d_in}")
    return X


def _check_resolution(X: Tensor, pl: PositionalLogits) -> None:
    if X.shape[1] != pl.length:
        raise DimensionError("Token count does not match the positional resolution",
                             detail=f"L={X.shape[1]} vs {pl.resolution[0]}x{pl.resolution[1]}")


def gated_attention(X: Tensor, layer: GpsaLayer, pl: PositionalLogits) -> Tensor:
    """
    Explicit attention maps A_h = (1 - g_h) softmax(content) + g_h softmax(positional).

    Returns:
        Tensor: B x N_h x L x L (N_h x L x L for unbatched L x D_in input)
    """
    batched = X.ndim == 3
    X = _tokens(X, layer)
    _check_resolution(X, pl)
    B, L, _ = X.shape
    Xh = X.reshape(B, 1, L, layer.d_in)
    content = F.attention_probs(Xh @ layer.w_qry, Xh @ layer.w_key, layer.scale)
    g = F.sigmoid(layer.gate).reshape(1, layer.n_heads, 1, 1)
    A = content * (1.0 - g) + pl.softmax().reshape(1, layer.n_heads, L, L) * g
    return A if batched else A.reshape(layer.n_heads, L, L)


def gpsa_forward(X: Tensor, layer: GpsaLayer, pl: PositionalLogits) -> Tensor:
    """
    Multi-head aggregation sum_h A_h X W_val W_out_h (+ bias), B x L x D_in -> B x L x D_out.

    Computed without materializing A: the content and positional terms are
    applied to the shared values separately and mixed by the gates.
    """
    X = _tokens(X, layer)
    _check_resolution(X, pl)
    B, L, _ = X.shape
    values = X @ layer.w_val
    Xh = X.reshape(B, 1, L, layer.d_in)
    content = F.content_attention(Xh @ layer.w_qry, Xh @ layer.w_key, values, layer.scale)
    positional = F.positional_attention(pl.softmax(), values)
    g = F.sigmoid(layer.gate).reshape(1, layer.n_heads, 1, 1)
    mixed = content * (1.0 - g) + positional * g
    out = (mixed @ layer.w_out).sum(axis=1)
    if layer.bias is not None:
        out = out + layer.bias
    return out


def attention_span(layer: GpsaLayer) -> List[float]:
    """1 / alpha_h per head."""
    return [float(v) for v in 1.0 / alpha_of(layer.alpha_raw.data, layer.beta)]


def gating_values(layer: GpsaLayer) -> List[float]:
    """sigmoid(lambda_h) per head."""
    return [float(v) for v in 0.5 * (1.0 + np.tanh(0.5 * layer.gate.data.astype(np.float64)))]


def _image_tokens(layer: GpsaLayer, x) -> Tuple[Tensor, int, int]:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=layer.w_val.dtype)
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    if x.ndim != 4 or x.shape[1] != layer.d_in:
        raise DimensionError("Expected a D_in x H x W image", detail=f"{x.shape} for D_in={layer.d_in}")
    B, C, H, W = x.shape
    return x.reshape(B, C, H * W).transpose(0, 2, 1), H, W


def attention_map_at(layer: GpsaLayer, x, query: Sequence[int]) -> np.ndarray:
    """
    Attention of every head for one query pixel, as N_h x H x W maps.

    Uses the first image when `x` is a batch.
    """
    with no_grad():
        tokens, H, W = _image_tokens(layer, x)
        r, c = int(query[0]), int(query[1])
        if not (0 <= r < H and 0 <= c < W):
            raise UsageError("Query pixel outside the image", detail=f"({r}, {c}) on {H} x {W}")
        A = gated_attention(tokens[0:1], layer, layer.positional(H, W))
        return A.data[0, :, r * W + c, :].reshape(layer.n_heads, H, W).copy()


def attention_distance(layer: GpsaLayer, x) -> List[float]:
    """Mean Euclidean query-key offset under each head's attention, averaged over queries and images."""
    with no_grad():
        tokens, H, W = _image_tokens(layer, x)
        d_row, d_col = relative_offsets(H, W)
        dist = np.sqrt(d_row ** 2 + d_col ** 2)
        A = gated_attention(tokens, layer, layer.positional(H, W)).data
        per_query = (A * dist[None, None]).sum(axis=-1)
        return [float(v) for v in per_query.mean(axis=(0, 2))]
