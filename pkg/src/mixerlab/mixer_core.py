"""Matrix-mixer sequence transforms and structural-class verification.

A sequence transform here is a linear map of a length-T feature sequence
by a T x T mixing matrix: ``y = m @ x``. Attention maps, linear
attention, and state-space scans all materialize to such matrices, and
what separates them is the structure of ``m``. The classes recognized
here:

* ``dense``: no constraint.
* ``low_rank(r)``: the whole matrix has numerical rank at most r.
* ``semiseparable(N)``: every maximal block strictly below the diagonal
  (``m[i:, :i]``) has numerical rank at most N, and the strict upper
  triangle is numerically zero. Causal scans produce these.
* ``quasiseparable(N)``: every maximal block strictly below and strictly
  above the diagonal has numerical rank at most N; the diagonal itself
  is unconstrained. This admits bidirectional scans with a free diagonal.

The class recorded on a :class:`MatrixMixer` is a claim, not a checked
invariant. Construction validates shapes and finiteness only, so that a
wrongly tagged mixer can be built and then reported as a violation by
:func:`check_structure`.

Numerical rank of a block is the count of its singular values exceeding
``tol`` times the largest singular value of the full matrix. Using a
single global reference scale makes the checks mean one thing across all
blocks: entries negligible at the scale of the mixer itself count as
zero, and the semiseparable zero-upper-triangle requirement is exactly a
rank-0 condition on the mirrored upper blocks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "DEFAULT_RANK_TOL",
    "ShapeError",
    "NumericRangeError",
    "FeatureSequence",
    "MixerClass",
    "MatrixMixer",
    "StructureReport",
    "apply_mixer",
    "check_structure",
]

DEFAULT_RANK_TOL = 1e-6


class ShapeError(ValueError):
    """An array argument has the wrong dimensionality or incompatible shape."""


class NumericRangeError(ValueError):
    """A numeric value is non-finite or outside its permitted range."""


def _as_float_array(arr, name: str, ndim: int) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    if out.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    if out.size == 0:
        raise ShapeError(f"{name} must be non-empty, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise NumericRangeError(f"{name} contains non-finite entries")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FeatureSequence:
    """A length-T sequence of d-dimensional real feature frames.

    ``data`` has shape (T, d); it is copied on construction, checked
    finite, and frozen. Every mixer in this package maps one of these to
    another of the same shape.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _as_float_array(self.data, "data", 2))

    @property
    def T(self) -> int:
        """Number of frames."""
        return self.data.shape[0]

    @property
    def d(self) -> int:
        """Feature width."""
        return self.data.shape[1]


@dataclass(frozen=True)
class MixerClass:
    """Structural class tag: a kind plus its order parameter.

    ``order`` is the rank bound r for ``low_rank``, the state size N for
    ``semiseparable`` / ``quasiseparable``, and None for ``dense``.
    """

    kind: str
    order: Optional[int] = None

    _KINDS = ("dense", "low_rank", "semiseparable", "quasiseparable")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(
                f"unknown mixer class kind {self.kind!r}; expected one of {self._KINDS}"
            )
        if self.kind == "dense":
            if self.order is not None:
                raise ValueError("dense mixers take no order parameter")
        else:
            if not isinstance(self.order, int) or isinstance(self.order, bool) or self.order < 1:
                raise ValueError(f"{self.kind} requires a positive integer order, got {self.order!r}")

    @classmethod
    def dense(cls) -> "MixerClass":
        return cls("dense")

    @classmethod
    def low_rank(cls, r: int) -> "MixerClass":
        return cls("low_rank", r)

    @classmethod
    def semiseparable(cls, n: int) -> "MixerClass":
        return cls("semiseparable", n)

    @classmethod
    def quasiseparable(cls, n: int) -> "MixerClass":
        return cls("quasiseparable", n)

    def describe(self) -> str:
        return self.kind if self.order is None else f"{self.kind}({self.order})"


@dataclass(frozen=True)
class MatrixMixer:
    """A square mixing matrix together with its claimed structural class."""

    m: np.ndarray
    class_tag: MixerClass

    def __post_init__(self) -> None:
        m = _as_float_array(self.m, "m", 2)
        if m.shape[0] != m.shape[1]:
            raise ShapeError(f"mixing matrix must be square, got shape {m.shape}")
        object.__setattr__(self, "m", m)
        if not isinstance(self.class_tag, MixerClass):
            raise TypeError(f"class_tag must be a MixerClass, got {type(self.class_tag).__name__}")

    @property
    def T(self) -> int:
        return self.m.shape[0]


@dataclass(frozen=True)
class StructureReport:
    """Outcome of verifying a mixer against a structural class.

    ``violations`` lists offending blocks as ((row_lo, row_hi, col_lo,
    col_hi), rank) with half-open index ranges; empty means the claim
    holds. ``max_offdiag_block_rank`` is the largest rank observed over
    all checked blocks (for dense and low_rank checks, the one block is
    the whole matrix).
    """

    checked_class: MixerClass
    max_offdiag_block_rank: int
    violations: tuple

    @property
    def ok(self) -> bool:
        return not self.violations


def apply_mixer(mixer: MatrixMixer, x: FeatureSequence) -> FeatureSequence:
    """Mix the frames of ``x`` by the rows of ``mixer``: ``y = m @ x``."""
    if mixer.T != x.T:
        raise ShapeError(
            f"mixer is {mixer.T}x{mixer.T} but sequence has {x.T} frames"
        )
    return FeatureSequence(mixer.m @ x.data)


def _rank_against(singular_values: np.ndarray, tol: float, sigma_ref: float) -> int:
    if sigma_ref == 0.0:
        return 0
    return int(np.count_nonzero(singular_values > tol * sigma_ref))


def check_structure(
    mixer: MatrixMixer,
    tol: float = DEFAULT_RANK_TOL,
    class_tag: Optional[MixerClass] = None,
) -> StructureReport:
    """Verify a mixer's claimed (or an explicitly given) structural class.

    For semiseparable and quasiseparable claims every maximal
    off-diagonal block is tested: lower blocks ``m[i:, :i]`` and upper
    blocks ``m[:i, i:]`` for each split point i in 1..T-1. Semiseparable
    requires lower ranks <= N and upper ranks == 0; quasiseparable
    requires both sides <= N. ``low_rank(r)`` tests the whole matrix
    against min(T, r); ``dense`` always passes but still reports the
    matrix rank. All ranks are measured against the full matrix's
    largest singular value (see module docstring).
    """
    if not (isinstance(tol, (int, float)) and np.isfinite(tol) and tol > 0):
        raise ValueError(f"tol must be a positive finite number, got {tol!r}")
    tag = mixer.class_tag if class_tag is None else class_tag
    if not isinstance(tag, MixerClass):
        raise TypeError(f"class_tag must be a MixerClass, got {type(tag).__name__}")

    m = mixer.m
    T = mixer.T
    sigma_ref = float(np.linalg.svd(m, compute_uv=False)[0])
    violations = []

    if tag.kind in ("dense", "low_rank"):
        rank = _rank_against(np.linalg.svd(m, compute_uv=False), tol, sigma_ref)
        if tag.kind == "low_rank" and rank > min(T, tag.order):
            violations.append(((0, T, 0, T), rank))
        return StructureReport(tag, rank, tuple(violations))

    # semiseparable / quasiseparable: sweep the T-1 maximal split points
    n = tag.order
    max_rank = 0
    for i in range(1, T):
        lower = m[i:, :i]
        rank = _rank_against(np.linalg.svd(lower, compute_uv=False), tol, sigma_ref)
        max_rank = max(max_rank, rank)
        if rank > n:
            violations.append(((i, T, 0, i), rank))

        upper = m[:i, i:]
        rank = _rank_against(np.linalg.svd(upper, compute_uv=False), tol, sigma_ref)
        max_rank = max(max_rank, rank)
        upper_limit = 0 if tag.kind == "semiseparable" else n
        if rank > upper_limit:
            violations.append(((0, i, i, T), rank))

    return StructureReport(tag, max_rank, tuple(violations))
