"""Values, subgradients and proximal maps of the sparsity regularizers.

All functions act on numpy arrays. Group-structured ones take a
:class:`~l0asso.model.LayerGroups` describing the partition of the layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

KINDS = ("none", "l1", "l0", "gl", "sgl", "sgl0")

# kinds trained by penalty decomposition (they carry an l0 term)
SPLIT_KINDS = ("l0", "sgl0")


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "sgl0"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"must be one of {KINDS}, got {self.kind!r}", "regularizer.kind")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ConfigError(f"must be a finite nonnegative number, got {self.lam}", "regularizer.lambda")

    @property
    def uses_group_lasso(self):
        return self.kind in ("gl", "sgl", "sgl0")

    @property
    def uses_split(self):
        return self.kind in SPLIT_KINDS

    def value(self, weights, partition):
        """``lam * sum_l R(W_l)`` over the regularized tensors."""
        fn = {
            "none": lambda w, g: 0.0,
            "l1": lambda w, g: l1_value(w),
            "l0": lambda w, g: float(l0_count(w)),
            "gl": group_lasso_value,
            "sgl": sgl_value,
            "sgl0": sgl0_value,
        }[self.kind]
        return self.lam * sum(fn(w, g) for w, g in zip(weights, partition.layers))

    def subgrad(self, w, groups):
        """Selected subgradient of ``lam * R`` for the subgradient-trained kinds."""
        if self.kind == "none" or self.lam == 0:
            return np.zeros_like(w)
        if self.kind == "l1":
            return self.lam * l1_subgrad(w)
        if self.kind == "gl":
            return self.lam * group_lasso_subgrad(w, groups)
        if self.kind == "sgl":
            return self.lam * (group_lasso_subgrad(w, groups) + l1_subgrad(w))
        raise ConfigError(f"{self.kind!r} has an l0 term and is trained by penalty decomposition",
                          "regularizer.kind")


def group_norms(w, groups):
    sq = np.bincount(groups.ids, weights=np.square(w, dtype=np.float64).reshape(-1),
                     minlength=groups.num_groups)
    return np.sqrt(sq)


def group_lasso_value(w, groups):
    """sum_g sqrt(|g|) * ||w_g||_2"""
    return float(np.dot(np.sqrt(groups.sizes), group_norms(w, groups)))


def group_lasso_subgrad(w, groups):
    """sqrt(|g|) * w_g / ||w_g||_2 per group, and 0 on all-zero groups."""
    norms = group_norms(w, groups)
    scale = np.zeros_like(norms)
    nz = norms > 0
    scale[nz] = np.sqrt(groups.sizes[nz]) / norms[nz]
    return (w.reshape(-1) * scale[groups.ids]).reshape(w.shape).astype(w.dtype, copy=False)


def l1_value(w):
    return float(np.sum(np.abs(w), dtype=np.float64))


def l1_subgrad(w):
    return np.sign(w)


def l0_count(w):
    return int(np.count_nonzero(w))


def sgl_value(w, groups):
    return group_lasso_value(w, groups) + l1_value(w)


def sgl0_value(w, groups):
    return group_lasso_value(w, groups) + l0_count(w)


def soft_threshold(c, lam):
    """sign(c) * max(|c| - lam, 0)"""
    if lam < 0:
        raise ConfigError("threshold must be nonnegative", "lambda")
    c = np.asarray(c)
    out = np.sign(c) * np.maximum(np.abs(c) - lam, 0)
    return out if out.ndim else out.item()


def hard_threshold(w, t):
    """Zero every entry with |w| <= t; keep the rest unchanged."""
    if t < 0:
        raise ConfigError("threshold must be nonnegative", "threshold")
    w = np.asarray(w)
    out = np.where(np.abs(w) <= t, np.zeros((), dtype=w.dtype), w)
    return out if out.ndim else out.item()


def l0_threshold(lam, beta):
    """Hard-threshold level sqrt(2 lam / beta) of the l0 proximal map."""
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta}", "beta")
    if lam < 0:
        raise ConfigError(f"lambda must be nonnegative, got {lam}", "lambda")
    return float(np.sqrt(2.0 * lam / beta))


def prox_l0(w, lam, beta):
    """argmin_v lam*||v||_0 + (beta/2)*||v - w||^2, elementwise."""
    return hard_threshold(w, l0_threshold(lam, beta))
