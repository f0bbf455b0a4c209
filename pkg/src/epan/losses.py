"""Edge-weighted reconstruction losses.

All losses are non-negative means of squared errors. ``n`` counts every
element of the prediction (pixels x channels); single-channel edge masks are
broadcast over the colour channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .exceptions import ContractError, DimensionError, ParameterError
from .model import VARIANTS, variant_has_een
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 4.0
    lambda_e: float = 4.0

    def __post_init__(self):
        if self.lambda_c < 0 or self.lambda_e < 0:
            raise ParameterError(
                f"loss weights must be non-negative, got lambda_c={self.lambda_c}, lambda_e={self.lambda_e}")


def _t(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ in shape")


def _check_mask(mask: Tensor, pred: Tensor) -> None:
    m = mask.data
    if m.ndim != pred.ndim or m.shape[1] != 1 or m.shape[0] != pred.shape[0] or m.shape[2:] != pred.shape[2:]:
        raise DimensionError(f"edge mask {m.shape} does not match prediction {pred.shape}")
    if m.size and (m.min() < 0 or m.max() > 1):
        raise ContractError(f"edge mask values must lie in [0, 1], got [{m.min()}, {m.max()}]")


def _weighted_sq_error(pred: Tensor, target: Tensor, weight: Tensor | None) -> Tensor:
    err = T.square(T.sub(pred, target))
    if weight is not None:
        err = T.mul(weight, err)
    return T.mean(err)


def mse_loss(pred, target) -> Tensor:
    pred = _t(pred)
    target = _t(target, pred)
    _check_pair(pred, target)
    return _weighted_sq_error(pred, target, None)


def edge_guided_loss(pred, target, edge_mask) -> Tensor:
    """Squared error weighted per pixel by the sharp edge map."""
    pred = _t(pred)
    target, edge_mask = _t(target, pred), _t(edge_mask, pred)
    _check_pair(pred, target)
    _check_mask(edge_mask, pred)
    return _weighted_sq_error(pred, target, edge_mask)


def _boosted(pred, target, edge_mask, lam: float) -> Tensor:
    pred = _t(pred)
    target, edge_mask = _t(target, pred), _t(edge_mask, pred)
    _check_pair(pred, target)
    _check_mask(edge_mask, pred)
    if lam < 0:
        raise ParameterError(f"lambda must be non-negative, got {lam}")
    weight = Tensor((lam * edge_mask.data + 1.0).astype(pred.dtype))
    return _weighted_sq_error(pred, target, weight)


def cdn_loss(pred, sharp, sharp_edges, lambda_c: float = 4.0) -> Tensor:
    """mean((lambda_c * M + 1) * (pred - sharp)^2)."""
    return _boosted(pred, sharp, sharp_edges, lambda_c)


def een_loss(enhanced_edges, sharp_edges, lambda_e: float = 4.0) -> Tensor:
    """Same weighting applied to the edge-branch output against the sharp edge map."""
    return _boosted(enhanced_edges, sharp_edges, _t(sharp_edges), lambda_e)


def loss_terms(deblurred, sharp, enhanced_edges, sharp_edges, weights: LossWeights,
               variant: str) -> dict[str, Tensor]:
    """Individual loss terms for ``variant``, keyed 'content', 'edge' and 'total'."""
    if variant not in VARIANTS:
        raise ContractError(f"unknown variant {variant!r}")
    has_een = variant_has_een(variant)
    if has_een and enhanced_edges is None:
        raise ContractError(f"variant {variant} builds an edge branch but no enhanced edge map was given")
    if not has_een and enhanced_edges is not None:
        raise ContractError(f"variant {variant} has no edge branch but an enhanced edge map was given")

    if variant == "phi":
        content = mse_loss(deblurred, sharp)
    elif variant in ("phi_eal", "epan"):
        content = cdn_loss(deblurred, sharp, sharp_edges, weights.lambda_c)
    else:
        # fusion ablations drop the edge-guided term but keep edge supervision
        content = mse_loss(deblurred, sharp)
    terms = {"content": content}
    if has_een:
        terms["edge"] = een_loss(enhanced_edges, sharp_edges, weights.lambda_e)
        terms["total"] = T.add(content, terms["edge"])
    else:
        terms["total"] = content
    return terms


def total_loss(deblurred, sharp, enhanced_edges, sharp_edges, weights: LossWeights | None = None,
               variant: str = "epan") -> Tensor:
    return loss_terms(deblurred, sharp, enhanced_edges, sharp_edges, weights or LossWeights(), variant)["total"]
