"""Model parameters and evaluation of every term of the training objective.

The model couples a shared linear classifier w in an r-dimensional common
space (reached through a row-orthonormal projection) with per-domain effective
classifiers phi and psi acting on the original features. The adaptive
corrections u = phi - theta'w and v = psi - theta'w are derived, never stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data import DomainDataset
from .errors import ValidationError
from .neighborhood import NeighborhoodGraph, reconstruction_residuals

_ORTH_TOL = 1e-8


@dataclass(frozen=True)
class TransferModel:
    """Immutable bundle (theta, w, phi, psi) with validated orthonormal rows."""

    theta: np.ndarray
    w: np.ndarray
    phi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64, copy=True)
        w = np.array(self.w, dtype=np.float64, copy=True).reshape(-1)
        phi = np.array(self.phi, dtype=np.float64, copy=True).reshape(-1)
        psi = np.array(self.psi, dtype=np.float64, copy=True).reshape(-1)
        if theta.ndim != 2:
            raise ValidationError("theta must be an r x m matrix")
        r, m = theta.shape
        if not 1 <= r <= m:
            raise ValidationError(f"need 1 <= r <= m, got r={r}, m={m}")
        if w.size != r or phi.size != m or psi.size != m:
            raise ValidationError("parameter vector sizes do not match theta")
        for arr in (theta, w, phi, psi):
            if not np.all(np.isfinite(arr)):
                raise ValidationError("model parameters must be finite")
        gram_gap = np.max(np.abs(theta @ theta.T - np.eye(r)))
        if gram_gap > _ORTH_TOL:
            raise ValidationError(
                f"theta rows are not orthonormal (max deviation {gram_gap:.3e})"
            )
        for arr in (theta, w, phi, psi):
            arr.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @property
    def r(self) -> int:
        return self.theta.shape[0]

    @property
    def m(self) -> int:
        return self.theta.shape[1]

    @property
    def u(self) -> np.ndarray:
        """Source adaptive correction phi - theta'w."""
        return self.phi - self.theta.T @ self.w

    @property
    def v(self) -> np.ndarray:
        """Target adaptive correction psi - theta'w."""
        return self.psi - self.theta.T @ self.w

    def to_json_dict(self) -> dict:
        return {
            "r": self.r,
            "m": self.m,
            "theta": [float(v) for v in self.theta.ravel()],
            "w": [float(v) for v in self.w],
            "phi": [float(v) for v in self.phi],
            "psi": [float(v) for v in self.psi],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "TransferModel":
        r, m = int(payload["r"]), int(payload["m"])
        theta = np.asarray(payload["theta"], dtype=np.float64).reshape(r, m)
        return cls(theta, payload["w"], payload["phi"], payload["psi"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TransferModel":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class SourceWeights:
    """Instance weights pi with box bound delta and fixed total mass n."""

    pi: np.ndarray
    delta: float

    def __post_init__(self):
        pi = np.array(self.pi, dtype=np.float64, copy=True).reshape(-1)
        if pi.size == 0:
            raise ValidationError("pi must be non-empty")
        if self.delta < 1.0:
            raise ValidationError("delta must be at least 1 for feasibility")
        if np.min(pi) < -1e-9 or np.max(pi) > self.delta + 1e-9:
            raise ValidationError("pi violates its box bounds")
        if abs(pi.sum() - pi.size) > 1e-6:
            raise ValidationError("pi must sum to the number of source points")
        pi.flags.writeable = False
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n(self) -> int:
        return self.pi.size

    @classmethod
    def uniform(cls, n: int, delta: float) -> "SourceWeights":
        return cls(np.ones(n), delta)


@dataclass(frozen=True)
class HyperParams:
    """Trade-off weights, subspace size and iteration budgets.

    ``r=None`` resolves to min(m, 20) once the feature dimension is known.
    """

    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    r: int | None = None
    delta: float = 3.0
    k: int = 5
    rho: float = 0.1
    outer_iters: int = 50
    subgrad_iters: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0.0:
            raise ValidationError("trade-off weights must be nonnegative")
        if self.r is not None and self.r < 1:
            raise ValidationError("r must be a positive integer")
        if self.delta < 1.0:
            raise ValidationError("delta must be at least 1 for feasibility")
        if self.k < 1:
            raise ValidationError("k must be a positive integer")
        if self.rho <= 0.0:
            raise ValidationError("rho must be positive")
        if self.outer_iters < 0 or self.subgrad_iters < 0:
            raise ValidationError("iteration budgets must be nonnegative")
        if self.tol < 0.0:
            raise ValidationError("tol must be nonnegative")

    def resolved_r(self, m: int) -> int:
        r = min(m, 20) if self.r is None else self.r
        if r > m:
            raise ValidationError(f"r={r} exceeds the feature dimension m={m}")
        return r

    def with_overrides(self, **kwargs) -> "HyperParams":
        return replace(self, **kwargs)

    def to_json_dict(self) -> dict:
        return {
            "c1": self.c1,
            "c2": self.c2,
            "c3": self.c3,
            "r": self.r,
            "delta": self.delta,
            "k": self.k,
            "rho": self.rho,
            "outer_iters": self.outer_iters,
            "subgrad_iters": self.subgrad_iters,
            "tol": self.tol,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "HyperParams":
        unknown = set(payload) - set(cls().to_json_dict())
        if unknown:
            raise ValidationError(f"unknown hyperparameter keys: {sorted(unknown)}")
        return cls(**payload)


def project(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Map a vector (or rows of a matrix) into the common space."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.size != theta.shape[1]:
            raise ValidationError("vector dimension does not match theta")
        return theta @ x
    if x.ndim == 2:
        if x.shape[1] != theta.shape[1]:
            raise ValidationError("matrix width does not match theta")
        return x @ theta.T
    raise ValidationError("expected a vector or a matrix of row vectors")


def weighted_source_mean(
    theta: np.ndarray, source: DomainDataset, weights: SourceWeights
) -> np.ndarray:
    """(1/n) sum_i pi_i * theta x_i over the source points."""
    if weights.n != source.n:
        raise ValidationError("weight vector length does not match the source")
    return project(theta, source.features.T @ weights.pi / source.n)


def target_mean(theta: np.ndarray, target: DomainDataset) -> np.ndarray:
    """Plain mean of the projected target points."""
    return project(theta, target.features.mean(axis=0))


def matching_distance(
    theta: np.ndarray,
    source: DomainDataset,
    weights: SourceWeights,
    target: DomainDataset,
) -> float:
    """Half the squared distance between the two domain means in common space."""
    gap = weighted_source_mean(theta, source, weights) - target_mean(theta, target)
    return 0.5 * float(gap @ gap)


def classify_source(model: TransferModel, x: np.ndarray) -> np.ndarray | float:
    """Source-domain decision score phi'x (vector in, scalar out)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.m:
        raise ValidationError("input dimension does not match the model")
    return x @ model.phi


def classify_target(model: TransferModel, x: np.ndarray) -> np.ndarray | float:
    """Target-domain decision score psi'x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.m:
        raise ValidationError("input dimension does not match the model")
    return x @ model.psi


def hinge_losses(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-point max(0, 1 - y * score)."""
    return np.maximum(0.0, 1.0 - np.asarray(labels) * np.asarray(scores))


@dataclass(frozen=True)
class ObjectiveTerms:
    """The six weighted terms of the training objective; all nonnegative."""

    source_hinge: float
    target_hinge: float
    adaptation: float
    weight_smoothness: float
    response_smoothness: float
    mean_matching: float

    @property
    def total(self) -> float:
        return (
            self.source_hinge
            + self.target_hinge
            + self.adaptation
            + self.weight_smoothness
            + self.response_smoothness
            + self.mean_matching
        )

    def as_dict(self) -> dict:
        return {
            "source_hinge": self.source_hinge,
            "target_hinge": self.target_hinge,
            "adaptation": self.adaptation,
            "weight_smoothness": self.weight_smoothness,
            "response_smoothness": self.response_smoothness,
            "mean_matching": self.mean_matching,
            "total": self.total,
        }


def objective(
    model: TransferModel,
    weights: SourceWeights,
    source: DomainDataset,
    target: DomainDataset,
    source_graph: NeighborhoodGraph,
    target_graph: NeighborhoodGraph,
    hp: HyperParams,
) -> ObjectiveTerms:
    """Evaluate the full training objective, term by term.

    Pure function: identical inputs give bit-identical output. The target
    hinge runs over the labeled block only; the response-smoothness penalty
    runs over every target point.
    """
    if source_graph is None or target_graph is None:
        raise ValidationError("objective requires both neighborhood graphs")
    if source_graph.n != source.n or target_graph.n != target.n:
        raise ValidationError("graph sizes do not match the datasets")
    if source.dim != model.m or target.dim != model.m:
        raise ValidationError("dataset dimension does not match the model")
    if not source.is_fully_labeled():
        raise ValidationError("source domain must be fully labeled")
    if weights.n != source.n:
        raise ValidationError("weight vector length does not match the source")

    src_losses = hinge_losses(classify_source(model, source.features), source.labels)
    source_hinge = float(weights.pi @ src_losses)

    n3 = target.labeled_count
    tgt_scores = classify_target(model, target.features[:n3])
    target_hinge = float(hinge_losses(tgt_scores, target.labels).sum())

    shared = model.theta.T @ model.w
    du = model.phi - shared
    dv = model.psi - shared
    adaptation = 0.5 * hp.c1 * float(du @ du + dv @ dv)

    pi_gap = weights.pi - np.einsum(
        "nk,nk->n", source_graph.weights, weights.pi[source_graph.neighbors]
    )
    weight_smoothness = hp.c2 * float(pi_gap @ pi_gap)

    response_gap = reconstruction_residuals(target.features, target_graph) @ model.psi
    response_smoothness = hp.c2 * float(response_gap @ response_gap)

    mean_matching = hp.c3 * matching_distance(model.theta, source, weights, target)

    return ObjectiveTerms(
        source_hinge=source_hinge,
        target_hinge=target_hinge,
        adaptation=adaptation,
        weight_smoothness=weight_smoothness,
        response_smoothness=response_smoothness,
        mean_matching=mean_matching,
    )
