"""Orthonormal 2-D discrete cosine transform over square filter slices.

The forward transform of a d x d matrix V is

    F[j1,j2] = s(j1) s(j2) * sum_{i1,i2} cos[pi/d (i1+1/2) j1] cos[pi/d (i2+1/2) j2] V[i1,i2]

with s(0) = sqrt(1/d) and s(j) = sqrt(2/d) for j > 0. Because the kernel is
separable the transform is computed as two small matrix products,
B @ V @ B.T, where B is the orthonormal cosine basis. The inverse is
B.T @ F @ B, which reconstructs V exactly (the basis is orthonormal).

Plans are cheap to build but layers share a filter size, so callers are
expected to build one plan per distinct d and reuse it. Plans are immutable
and safe to share across threads.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


class DctPlan:
    """Precomputed orthonormal cosine basis for a fixed transform size d."""

    def __init__(self, d: int):
        if d < 1:
            raise ShapeError(f"transform size must be >= 1, got {d}")
        self.d = int(d)
        j = np.arange(d).reshape(d, 1).astype(np.float64)
        i = np.arange(d).reshape(1, d).astype(np.float64)
        scale = np.full(d, np.sqrt(2.0 / d))
        scale[0] = np.sqrt(1.0 / d)
        # basis[j, i] = s_j * cos(pi/d * (i + 1/2) * j)
        self.basis = scale[:, None] * np.cos((np.pi / d) * (i + 0.5) * j)
        self.basis.setflags(write=False)

    def __repr__(self):
        return f"DctPlan(d={self.d})"


_plan_cache: dict[int, DctPlan] = {}


def get_plan(d: int) -> DctPlan:
    """Return a cached plan for size d."""
    plan = _plan_cache.get(d)
    if plan is None:
        plan = _plan_cache[d] = DctPlan(d)
    return plan


def _check(plan: DctPlan, a: np.ndarray):
    if a.shape[-2:] != (plan.d, plan.d):
        raise ShapeError(
            f"expected trailing dims ({plan.d},{plan.d}), got {a.shape}"
        )


def dct2(plan: DctPlan, v: np.ndarray) -> np.ndarray:
    """Forward 2-D transform of a d x d matrix (spatial -> frequency)."""
    _check(plan, v)
    return plan.basis @ v @ plan.basis.T


def idct2(plan: DctPlan, f: np.ndarray) -> np.ndarray:
    """Inverse 2-D transform of a d x d matrix (frequency -> spatial)."""
    _check(plan, f)
    return plan.basis.T @ f @ plan.basis


def dct2_batch(plan: DctPlan, t: np.ndarray) -> np.ndarray:
    """Apply dct2 independently to every (..., d, d) slice of a tensor."""
    _check(plan, t)
    return plan.basis @ t @ plan.basis.T


def idct2_batch(plan: DctPlan, t: np.ndarray) -> np.ndarray:
    """Apply idct2 independently to every (..., d, d) slice of a tensor."""
    _check(plan, t)
    return plan.basis.T @ t @ plan.basis
