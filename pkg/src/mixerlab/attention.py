"""Softmax attention, positive-random-feature linear attention, and RoPE.

Softmax attention computes ``row_softmax(Q @ K.T) @ V``. Note that the
logits are the bare inner products: there is no 1/sqrt(d_head) scaling
anywhere in this package, by design, so Q and K are used exactly as
given. Callers who want scaled logits must fold the scale into Q or K
themselves.

The linear-attention path replaces the exponential kernel with positive
random features: ``phi(x) = r**-0.5 * exp(omega @ x - |x|**2 / 2)`` for
an r x d_head feature matrix ``omega`` with blockwise-orthogonal rows
whose norms follow a chi distribution. Associating ``phi(K).T @ V``
first and normalizing by ``phi(Q) @ (phi(K).T @ 1)`` gives an O(T r d)
approximation to the quadratic form, and ``phi(Q) @ phi(K).T`` (row
normalized) is its rank-<=r materialized mixer.

Both forms produce row-stochastic mixing matrices: non-negative entries
with unit row sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .mixer_core import (
    FeatureSequence,
    MatrixMixer,
    MixerClass,
    NumericRangeError,
    ShapeError,
    _as_float_array,
)
from .rng import make_rng

__all__ = [
    "QkvTriple",
    "OrthogonalFeatureMatrix",
    "RopeConfig",
    "MultiHeadConfig",
    "MhaWeights",
    "softmax_attention",
    "softmax_mixer",
    "draw_orthogonal_features",
    "positive_feature_map",
    "favor_attention",
    "favor_mixer",
    "apply_rope",
    "multi_head_attention",
]

# rows per block when streaming the T x T logits; bounds scratch memory
# without changing results (each output row is computed independently)
_SOFTMAX_CHUNK = 512

_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class QkvTriple:
    """Query, key, and value matrices of identical shape (T, d_head)."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        q = _as_float_array(self.q, "q", 2)
        k = _as_float_array(self.k, "k", 2)
        v = _as_float_array(self.v, "v", 2)
        if not (q.shape == k.shape == v.shape):
            raise ShapeError(
                f"q, k, v must share one shape, got {q.shape}, {k.shape}, {v.shape}"
            )
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)

    @property
    def T(self) -> int:
        return self.q.shape[0]

    @property
    def d_head(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class OrthogonalFeatureMatrix:
    """An (r, d_head) random-feature matrix with blockwise-orthogonal rows.

    Rows are grouped in blocks of d_head consecutive rows (the last block
    may be shorter); within each block the directions are mutually
    orthogonal. Row norms are arbitrary positive values. Construction
    verifies the orthogonality claim, so holding one of these is proof
    the draw was structured correctly. ``seed`` records the stream the
    matrix was drawn from.
    """

    omega: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        omega = _as_float_array(self.omega, "omega", 2)
        r, d = omega.shape
        norms = np.linalg.norm(omega, axis=1)
        if np.any(norms == 0.0):
            raise NumericRangeError("feature rows must have positive norm")
        unit = omega / norms[:, None]
        for start in range(0, r, d):
            block = unit[start : start + d]
            gram = block @ block.T
            off = gram - np.eye(block.shape[0])
            if np.max(np.abs(off)) >= _ORTHO_TOL:
                raise ValueError(
                    f"rows {start}..{start + block.shape[0] - 1} are not orthogonal "
                    f"(max deviation {np.max(np.abs(off)):.3e})"
                )
        object.__setattr__(self, "omega", omega)

    @property
    def r(self) -> int:
        return self.omega.shape[0]

    @property
    def d_head(self) -> int:
        return self.omega.shape[1]


@dataclass(frozen=True)
class RopeConfig:
    """Rotary position embedding parameters for one head width.

    ``d_head`` must be even: positions rotate consecutive coordinate
    pairs, pair i at position t by angle t * base**(-2 i / d_head).
    """

    d_head: int
    base: float = 10000.0

    def __post_init__(self) -> None:
        if not isinstance(self.d_head, int) or isinstance(self.d_head, bool) or self.d_head < 2:
            raise ValueError(f"d_head must be an integer >= 2, got {self.d_head!r}")
        if self.d_head % 2 != 0:
            raise ValueError(f"rotary embedding needs an even d_head, got {self.d_head}")
        if not (isinstance(self.base, (int, float)) and np.isfinite(self.base) and self.base > 0):
            raise ValueError(f"base must be a positive finite number, got {self.base!r}")


@dataclass(frozen=True)
class MultiHeadConfig:
    """Head layout for multi-head attention: d_model split across num_heads."""

    d_model: int
    num_heads: int

    def __post_init__(self) -> None:
        for name in ("d_model", "num_heads"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.d_model % self.num_heads != 0:
            raise ShapeError(
                f"d_model={self.d_model} is not divisible by num_heads={self.num_heads}"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.num_heads


@dataclass(frozen=True)
class MhaWeights:
    """Projection matrices for multi-head attention, all (d_model, d_model)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self) -> None:
        mats = {}
        for name in ("wq", "wk", "wv", "wo"):
            m = _as_float_array(getattr(self, name), name, 2)
            if m.shape[0] != m.shape[1]:
                raise ShapeError(f"{name} must be square, got shape {m.shape}")
            mats[name] = m
        first = mats["wq"].shape
        for name, m in mats.items():
            if m.shape != first:
                raise ShapeError(f"{name} has shape {m.shape}, expected {first}")
            object.__setattr__(self, name, m)

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]


def _row_softmax(logits: np.ndarray) -> np.ndarray:
    # row-max shift keeps exp in range; exact for any finite logits
    shifted = logits - logits.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def softmax_attention(qkv: QkvTriple) -> FeatureSequence:
    """Full softmax attention: ``row_softmax(q @ k.T) @ v``.

    Logits are unscaled inner products (see module docstring). The T x T
    matrix is streamed in row blocks, so peak scratch memory is
    O(chunk * T) while the result is identical to the one-shot form.
    """
    q, k, v = qkv.q, qkv.k, qkv.v
    T = qkv.T
    kt = np.ascontiguousarray(k.T)
    out = np.empty_like(v)
    for lo in range(0, T, _SOFTMAX_CHUNK):
        hi = min(lo + _SOFTMAX_CHUNK, T)
        out[lo:hi] = _row_softmax(q[lo:hi] @ kt) @ v
    return FeatureSequence(out)


def softmax_mixer(q, k) -> MatrixMixer:
    """Materialize the softmax attention map ``row_softmax(q @ k.T)``.

    Returned with a ``dense`` class tag; the map is row stochastic and
    generically full rank. O(T^2) memory.
    """
    q = _as_float_array(q, "q", 2)
    k = _as_float_array(k, "k", 2)
    if q.shape != k.shape:
        raise ShapeError(f"q and k must share one shape, got {q.shape} and {k.shape}")
    return MatrixMixer(_row_softmax(q @ k.T), MixerClass.dense())


def draw_orthogonal_features(d_head: int, r: int, seed: int) -> OrthogonalFeatureMatrix:
    """Draw an (r, d_head) positive-feature matrix from a Philox stream.

    Rows come in blocks of d_head: each block is the transpose of the Q
    factor of a fresh d_head x d_head Gaussian (orthonormal directions),
    truncated for the final partial block. Every row is then scaled by
    an independent chi(d_head)-distributed norm, so each row is
    marginally a standard Gaussian direction with the norm distribution
    of a d_head-dimensional Gaussian vector.
    """
    if not isinstance(d_head, int) or isinstance(d_head, bool) or d_head < 1:
        raise ValueError(f"d_head must be a positive integer, got {d_head!r}")
    if not isinstance(r, int) or isinstance(r, bool) or r < 1:
        raise ValueError(f"r must be a positive integer, got {r!r}")
    rng = make_rng(seed)
    rows = []
    for start in range(0, r, d_head):
        gauss = rng.standard_normal((d_head, d_head))
        q_f, r_f = np.linalg.qr(gauss)
        # sign-fix the QR so the orthogonal factor is Haar distributed;
        # without it each direction is confined to a half sphere and the
        # kernel estimator is biased
        signs = np.where(np.diag(r_f) >= 0.0, 1.0, -1.0)
        basis = (q_f * signs).T
        rows.append(basis[: min(d_head, r - start)])
    norms = np.sqrt(rng.chisquare(d_head, size=r))
    omega = np.vstack(rows) * norms[:, None]
    return OrthogonalFeatureMatrix(omega=omega, seed=seed)


def positive_feature_map(
    x, omega: OrthogonalFeatureMatrix, *, stabilize: bool = True
) -> np.ndarray:
    """Map rows of ``x`` to positive random features, shape (T, r).

    ``phi(x) = r**-0.5 * exp(omega @ x - |x|**2 / 2)``, elementwise
    positive. With ``stabilize=True`` (default) one global scalar, the
    maximum pre-exponential value of the call, is subtracted before
    exponentiation. That rescales the whole feature block by a positive
    constant, which cancels exactly under the row normalization in
    :func:`favor_attention` / :func:`favor_mixer` but would bias raw
    kernel estimates ``phi(q) @ phi(k)``; pass ``stabilize=False`` when
    using the features as an unbiased estimator of exp(q . k).
    """
    x = _as_float_array(x, "x", 2)
    if x.shape[1] != omega.d_head:
        raise ShapeError(
            f"x has width {x.shape[1]} but omega expects d_head={omega.d_head}"
        )
    pre = x @ omega.omega.T - 0.5 * np.sum(x * x, axis=1, keepdims=True)
    if stabilize:
        pre -= pre.max()
    with np.errstate(over="ignore"):
        out = np.exp(pre)
    if not np.all(np.isfinite(out)):
        raise NumericRangeError("feature map overflowed; inputs are too large")
    out /= np.sqrt(omega.r)
    return out


def _favor_normalizer(fq: np.ndarray, fk: np.ndarray) -> np.ndarray:
    den = fq @ fk.sum(axis=0)
    if not np.all(den > 0.0):
        raise NumericRangeError(
            "linear-attention normalizer collapsed to zero; features underflowed"
        )
    return den


def favor_attention(qkv: QkvTriple, omega: OrthogonalFeatureMatrix) -> FeatureSequence:
    """Linear attention via positive random features, O(T r d) time.

    Computes ``phi(q) @ (phi(k).T @ v)`` row-normalized by
    ``phi(q) @ (phi(k).T @ 1)``. Equals :func:`favor_mixer` applied to v
    up to matmul associativity. For T == 1 the normalization cancels and
    the single v row is returned unchanged.
    """
    fq = positive_feature_map(qkv.q, omega)
    fk = positive_feature_map(qkv.k, omega)
    den = _favor_normalizer(fq, fk)
    out = (fq @ (fk.T @ qkv.v)) / den[:, None]
    return FeatureSequence(out)


def favor_mixer(q, k, omega: OrthogonalFeatureMatrix) -> MatrixMixer:
    """Materialize the random-feature attention map, tagged low_rank(r).

    Rows of ``phi(q) @ phi(k).T`` normalized to unit sum; the rank is at
    most r by construction. O(T^2) memory.
    """
    q = _as_float_array(q, "q", 2)
    k = _as_float_array(k, "k", 2)
    if q.shape != k.shape:
        raise ShapeError(f"q and k must share one shape, got {q.shape} and {k.shape}")
    fq = positive_feature_map(q, omega)
    fk = positive_feature_map(k, omega)
    den = _favor_normalizer(fq, fk)
    return MatrixMixer((fq @ fk.T) / den[:, None], MixerClass.low_rank(omega.r))


def apply_rope(x, config: RopeConfig) -> np.ndarray:
    """Rotate each row of ``x`` by its position's rotary angles.

    Row t has its coordinate pair (x[2i], x[2i+1]) rotated by the angle
    t * base**(-2 i / d_head). Positions are 0-based row indices.
    Rotation preserves row norms, and inner products between rotated
    rows depend on their position difference only.
    """
    x = _as_float_array(x, "x", 2)
    if x.shape[1] != config.d_head:
        raise ShapeError(f"x has width {x.shape[1]}, config expects {config.d_head}")
    T, d = x.shape
    inv_freq = float(config.base) ** (-2.0 * np.arange(d // 2) / d)
    angles = np.arange(T)[:, None] * inv_freq[None, :]
    cos, sin = np.cos(angles), np.sin(angles)
    even, odd = x[:, 0::2], x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = cos * even - sin * odd
    out[:, 1::2] = sin * even + cos * odd
    return out


def multi_head_attention(
    x: FeatureSequence,
    weights: MhaWeights,
    config: MultiHeadConfig,
    kind: str,
    rope: Optional[RopeConfig] = None,
    omegas: Optional[Sequence[OrthogonalFeatureMatrix]] = None,
) -> FeatureSequence:
    """Multi-head attention over a feature sequence.

    Projects x to Q, K, V, splits heads as contiguous d_head slices,
    optionally applies rotary embeddings to each head's Q and K, runs
    softmax or random-feature attention per head (``kind`` selects),
    concatenates, and applies the output projection. ``omegas`` supplies
    one feature matrix per head and is required exactly when
    ``kind == "favor"``.
    """
    if kind not in ("softmax", "favor"):
        raise ValueError(f"kind must be 'softmax' or 'favor', got {kind!r}")
    if weights.d_model != config.d_model:
        raise ShapeError(
            f"weights are for d_model={weights.d_model}, config says {config.d_model}"
        )
    if x.d != config.d_model:
        raise ShapeError(f"sequence width {x.d} != d_model {config.d_model}")
    if rope is not None and rope.d_head != config.d_head:
        raise ShapeError(
            f"rope is for d_head={rope.d_head}, config has d_head={config.d_head}"
        )
    if kind == "favor":
        if omegas is None or len(omegas) != config.num_heads:
            raise ValueError(
                f"favor attention needs one feature matrix per head "
                f"({config.num_heads}), got {0 if omegas is None else len(omegas)}"
            )
        for i, om in enumerate(omegas):
            if om.d_head != config.d_head:
                raise ShapeError(
                    f"omegas[{i}] is for d_head={om.d_head}, expected {config.d_head}"
                )
    elif omegas is not None:
        raise ValueError("omegas only apply to kind='favor'")

    big_q = x.data @ weights.wq
    big_k = x.data @ weights.wk
    big_v = x.data @ weights.wv
    dh = config.d_head
    heads = []
    for h in range(config.num_heads):
        sl = slice(h * dh, (h + 1) * dh)
        q, k, v = big_q[:, sl], big_k[:, sl], big_v[:, sl]
        if rope is not None:
            q = apply_rope(q, rope)
            k = apply_rope(k, rope)
        qkv = QkvTriple(q, k, v)
        if kind == "softmax":
            heads.append(softmax_attention(qkv).data)
        else:
            heads.append(favor_attention(qkv, omegas[h]).data)
    return FeatureSequence(np.concatenate(heads, axis=1) @ weights.wo)
