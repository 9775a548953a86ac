"""Alternating minimization of the transfer objective.

One outer iteration updates the blocks in a fixed order: subgradient descent
on the effective classifiers (phi, psi), the closed-form shared classifier w,
the spectral update of the projection rows (which re-solves w, since w is a
function of the projection), and finally the instance-weight QP. Every exact
block update is a descent step, so the recorded objective trace never
increases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import DomainDataset
from .errors import ConvergenceError, ValidationError
from .model import (
    HyperParams,
    ObjectiveTerms,
    SourceWeights,
    TransferModel,
    hinge_losses,
    objective,
)
from .neighborhood import (
    NeighborhoodGraph,
    build_graph,
    reconstruction_operator,
    reconstruction_residuals,
)
from .qp import BoxEqQP, solve_qp

logger = logging.getLogger(__name__)

_STEP_FLOOR = 1e-12


@dataclass(frozen=True)
class OptState:
    """Final parameters plus the per-iteration objective history.

    ``substeps`` records a (step name, objective before, objective after)
    entry for every block update, together with the constraint residuals that
    the update is responsible for.
    """

    model: TransferModel
    weights: SourceWeights
    objective_trace: tuple
    iteration: int
    substeps: tuple = ()
    term_trace: tuple = ()

    def __post_init__(self):
        trace = tuple(float(v) for v in self.objective_trace)
        if not trace:
            raise ValidationError("objective trace may not be empty")
        diffs = np.diff(np.asarray(trace))
        if diffs.size and float(diffs.max()) > 1e-8:
            raise ValidationError("objective trace increased beyond tolerance")
        object.__setattr__(self, "objective_trace", trace)
        object.__setattr__(self, "substeps", tuple(self.substeps))
        object.__setattr__(self, "term_trace", tuple(self.term_trace))


def solve_w(theta: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Closed-form shared classifier: w = theta (phi + psi) / 2."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    psi = np.asarray(psi, dtype=np.float64).reshape(-1)
    if phi.size != theta.shape[1] or psi.size != theta.shape[1]:
        raise ValidationError("phi/psi length does not match theta")
    return 0.5 * theta @ (phi + psi)


def min_trace_rows(terms, m: int, r: int) -> np.ndarray:
    """Orthonormal rows minimizing trace(T M T') for M = sum_c coef_c v_c v_c'.

    ``terms`` is a sequence of (coef, vector) pairs, at most rank 2 in
    practice. The eigenproblem is solved inside the span of the term vectors;
    the zero eigenspace is filled by Gram-Schmidt over the canonical basis, so
    the result is deterministic even under massive eigenvalue degeneracy.
    Rows are ordered by ascending eigenvalue (stable under ties) and signed so
    their first non-negligible component is positive.
    """
    if not 1 <= r <= m:
        raise ValidationError(f"need 1 <= r <= m, got r={r}, m={m}")
    cleaned = []
    basis = []
    for coef, vec in terms:
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size != m:
            raise ValidationError("term vector has the wrong dimension")
        if coef == 0.0:
            continue
        cleaned.append((float(coef), vec))
        resid = vec.copy()
        for q in basis:
            resid -= (q @ resid) * q
        norm = np.linalg.norm(resid)
        if norm > 1e-12 * max(1.0, float(np.linalg.norm(vec))):
            basis.append(resid / norm)

    vectors = []
    values = []
    if basis:
        span = np.array(basis).T  # m x p, orthonormal columns
        p = span.shape[1]
        compressed = np.zeros((p, p))
        for coef, vec in cleaned:
            coords = span.T @ vec
            compressed += coef * np.outer(coords, coords)
        evals, evecs = np.linalg.eigh(compressed)
        span_vectors = span @ evecs
        for j in range(p):
            vectors.append(span_vectors[:, j])
            values.append(float(evals[j]))
    for j in range(m):
        if len(vectors) == m:
            break
        cand = np.zeros(m)
        cand[j] = 1.0
        for q in vectors:
            cand -= (q @ cand) * q
        norm = np.linalg.norm(cand)
        if norm > 1e-6:
            cand /= norm
            for q in vectors:  # second pass keeps the basis clean
                cand -= (q @ cand) * q
            cand /= np.linalg.norm(cand)
            vectors.append(cand)
            values.append(0.0)
    order = np.argsort(np.asarray(values), kind="stable")[:r]
    rows = np.array([vectors[i] for i in order])
    for i in range(r):
        for component in rows[i]:
            if abs(component) > 1e-12:
                if component < 0.0:
                    rows[i] = -rows[i]
                break
    return rows


def solve_theta(
    phi: np.ndarray,
    psi: np.ndarray,
    source: DomainDataset,
    target: DomainDataset,
    weights: SourceWeights,
    hp: HyperParams,
) -> np.ndarray:
    """Projection update: smallest-eigenvalue rows of the rank-2 trace matrix.

    The matrix combines -c1/4 times the outer product of phi + psi with c3/2
    times the outer product of the raw-feature mean gap between the weighted
    source and the target.
    """
    m = source.dim
    combined = np.asarray(phi, dtype=np.float64) + np.asarray(psi, dtype=np.float64)
    mean_gap = (
        source.features.T @ weights.pi / source.n - target.features.mean(axis=0)
    )
    terms = [(-hp.c1 / 4.0, combined), (hp.c3 / 2.0, mean_gap)]
    return min_trace_rows(terms, m, hp.resolved_r(m))


def q_value(
    phi,
    psi,
    theta,
    w,
    source: DomainDataset,
    target: DomainDataset,
    weights: SourceWeights,
    hp: HyperParams,
    residuals: np.ndarray,
) -> float:
    """The (phi, psi) block objective: both hinges, coupling, response term."""
    src_hinge = float(
        weights.pi @ hinge_losses(source.features @ phi, source.labels)
    )
    n3 = target.labeled_count
    tgt_hinge = float(
        hinge_losses(target.features[:n3] @ psi, target.labels).sum()
    )
    shared = theta.T @ w
    du = phi - shared
    dv = psi - shared
    coupling = 0.5 * hp.c1 * float(du @ du + dv @ dv)
    response = residuals @ psi
    return src_hinge + tgt_hinge + coupling + hp.c2 * float(response @ response)


def subgradients(
    phi,
    psi,
    theta,
    w,
    source: DomainDataset,
    target: DomainDataset,
    weights: SourceWeights,
    hp: HyperParams,
    residuals: np.ndarray,
):
    """Subgradients of the (phi, psi) block objective.

    A hinge counts as active when its margin slack is >= 0, boundary
    included.
    """
    shared = theta.T @ w
    slack_s = 1.0 - source.labels * (source.features @ phi)
    active_s = slack_s >= 0.0
    g_phi = -(source.features.T @ (active_s * source.labels * weights.pi))
    g_phi += hp.c1 * (phi - shared)

    n3 = target.labeled_count
    labeled = target.features[:n3]
    slack_t = 1.0 - target.labels * (labeled @ psi)
    active_t = slack_t >= 0.0
    g_psi = -(labeled.T @ (active_t * target.labels))
    g_psi += hp.c1 * (psi - shared)
    g_psi += 2.0 * hp.c2 * (residuals.T @ (residuals @ psi))
    return g_phi, g_psi


def update_phi_psi(
    phi,
    psi,
    theta,
    w,
    source: DomainDataset,
    target: DomainDataset,
    weights: SourceWeights,
    hp: HyperParams,
    residuals: np.ndarray,
):
    """Run the subgradient block with a halving line search on the step.

    Each of the ``hp.subgrad_iters`` steps starts from ``hp.rho`` and halves
    until the block objective stops increasing; if the step floor is reached
    without descent the pair is returned unchanged (stationary point).
    """
    phi = np.array(phi, dtype=np.float64, copy=True)
    psi = np.array(psi, dtype=np.float64, copy=True)
    args = (theta, w, source, target, weights, hp, residuals)
    value = q_value(phi, psi, *args)
    for _ in range(hp.subgrad_iters):
        g_phi, g_psi = subgradients(phi, psi, *args)
        if max(np.max(np.abs(g_phi)), np.max(np.abs(g_psi))) == 0.0:
            break
        step = hp.rho
        while True:
            cand_phi = phi - step * g_phi
            cand_psi = psi - step * g_psi
            cand_value = q_value(cand_phi, cand_psi, *args)
            if cand_value <= value:
                phi, psi, value = cand_phi, cand_psi, cand_value
                break
            step *= 0.5
            if step < _STEP_FLOOR:
                return phi, psi
    return phi, psi


def solve_pi(
    theta,
    phi,
    source: DomainDataset,
    target: DomainDataset,
    weights: SourceWeights,
    source_graph: NeighborhoodGraph,
    hp: HyperParams,
    operator: np.ndarray | None = None,
) -> SourceWeights:
    """Instance-weight update as a box/sum QP, warm-started at the incumbent.

    The quadratic term combines the smoothness operator with the projected
    source Gram matrix; the linear term carries the current hinge losses and
    the pull toward the target mean.
    """
    n1 = source.n
    losses = hinge_losses(source.features @ phi, source.labels)
    if operator is None:
        operator = reconstruction_operator(source_graph)
    hess = 2.0 * hp.c2 * (operator.T @ operator)
    projected = source.features @ np.asarray(theta).T  # n1 x r
    hess += (hp.c3 / n1**2) * (projected @ projected.T)
    mu_t = np.asarray(theta) @ target.features.mean(axis=0)
    lin = losses - (hp.c3 / n1) * (projected @ mu_t)
    problem = BoxEqQP(
        hess=hess,
        lin=lin,
        lower=np.zeros(n1),
        upper=np.full(n1, hp.delta),
        eq_target=float(n1),
    )
    solution = solve_qp(problem, start=weights.pi)
    logger.debug("pi update finished in %d QP iterations", solution.iterations)
    return SourceWeights(solution.x, hp.delta)


def initial_theta(source: DomainDataset, target: DomainDataset, r: int) -> np.ndarray:
    """Top-r principal directions of the pooled data, deterministically signed."""
    pooled = np.vstack([source.features, target.features])
    centered = pooled - pooled.mean(axis=0)
    _, evecs = np.linalg.eigh(centered.T @ centered)
    rows = evecs[:, ::-1][:, :r].T.copy()
    for i in range(r):
        for component in rows[i]:
            if abs(component) > 1e-12:
                if component < 0.0:
                    rows[i] = -rows[i]
                break
    return rows


def fit(
    source: DomainDataset,
    target: DomainDataset,
    hp: HyperParams | None = None,
    seed: int = 0,
) -> OptState:
    """Train the transfer model by alternating block minimization.

    The loop stops after ``hp.outer_iters`` iterations or once the relative
    objective change drops below ``hp.tol``. The procedure is deterministic;
    ``seed`` is accepted for interface stability but nothing here draws
    random numbers.
    """
    del seed
    hp = HyperParams() if hp is None else hp
    if not isinstance(source, DomainDataset) or not isinstance(target, DomainDataset):
        raise ValidationError("fit expects DomainDataset inputs")
    if not source.is_fully_labeled():
        raise ValidationError("source domain must be fully labeled")
    if source.dim != target.dim:
        raise ValidationError("source and target dimensions differ")
    smallest = min(source.n, target.n)
    if hp.k > smallest - 1:
        raise ValidationError(
            f"k={hp.k} needs at least {hp.k + 1} points in each domain"
        )
    m = source.dim
    r = hp.resolved_r(m)

    source_graph = build_graph(source, hp.k)
    target_graph = build_graph(target, hp.k)
    residuals = reconstruction_residuals(target.features, target_graph)
    operator = reconstruction_operator(source_graph)

    theta = initial_theta(source, target, r)
    phi = np.zeros(m)
    psi = np.zeros(m)
    w = solve_w(theta, phi, psi)
    weights = SourceWeights.uniform(source.n, hp.delta)

    def evaluate(theta_, w_, phi_, psi_, weights_) -> ObjectiveTerms:
        model_ = TransferModel(theta_, w_, phi_, psi_)
        return objective(
            model_, weights_, source, target, source_graph, target_graph, hp
        )

    def residual_entry(iteration, terms_, theta_, weights_):
        return {
            "iteration": iteration,
            **terms_.as_dict(),
            "orthonormal_gap": float(np.max(np.abs(theta_ @ theta_.T - np.eye(r)))),
            "pi_bound_gap": float(
                max(
                    np.max(np.maximum(-weights_.pi, 0.0)),
                    np.max(np.maximum(weights_.pi - hp.delta, 0.0)),
                )
            ),
            "pi_sum_gap": float(abs(weights_.pi.sum() - source.n)),
        }

    terms = evaluate(theta, w, phi, psi, weights)
    trace = [terms.total]
    term_trace = [residual_entry(0, terms, theta, weights)]
    substeps = []
    completed = 0
    try:
        for iteration in range(1, hp.outer_iters + 1):
            current = trace[-1]

            phi, psi = update_phi_psi(
                phi, psi, theta, w, source, target, weights, hp, residuals
            )
            after = evaluate(theta, w, phi, psi, weights).total
            substeps.append(
                {"iteration": iteration, "step": "phi_psi", "before": current,
                 "after": after}
            )
            current = after

            w = solve_w(theta, phi, psi)
            after = evaluate(theta, w, phi, psi, weights).total
            substeps.append(
                {"iteration": iteration, "step": "w", "before": current,
                 "after": after}
            )
            current = after

            # The projection step owns its induced w re-solve: the spectral
            # problem is derived with w eliminated, so monotonicity is only
            # guaranteed for the (theta, w) pair.
            theta = solve_theta(phi, psi, source, target, weights, hp)
            w = solve_w(theta, phi, psi)
            after = evaluate(theta, w, phi, psi, weights).total
            substeps.append(
                {"iteration": iteration, "step": "theta", "before": current,
                 "after": after,
                 "orthonormal_gap": float(
                     np.max(np.abs(theta @ theta.T - np.eye(r)))
                 )}
            )
            current = after

            w = solve_w(theta, phi, psi)
            after = evaluate(theta, w, phi, psi, weights).total
            substeps.append(
                {"iteration": iteration, "step": "w", "before": current,
                 "after": after}
            )
            current = after

            weights = solve_pi(
                theta, phi, source, target, weights, source_graph, hp, operator
            )
            terms = evaluate(theta, w, phi, psi, weights)
            after = terms.total
            substeps.append(
                {"iteration": iteration, "step": "pi", "before": current,
                 "after": after,
                 "bound_gap": float(
                     max(
                         np.max(np.maximum(-weights.pi, 0.0)),
                         np.max(np.maximum(weights.pi - hp.delta, 0.0)),
                     )
                 ),
                 "sum_gap": float(abs(weights.pi.sum() - source.n))}
            )

            trace.append(after)
            term_trace.append(residual_entry(iteration, terms, theta, weights))
            completed = iteration
            previous = trace[-2]
            if abs(previous - after) < hp.tol * max(1.0, abs(previous)):
                break
    except Exception as exc:
        partial = OptState(
            model=TransferModel(theta, w, phi, psi),
            weights=weights,
            objective_trace=tuple(trace),
            iteration=completed,
            substeps=tuple(substeps),
            term_trace=tuple(term_trace),
        )
        raise ConvergenceError(
            f"fit aborted during iteration {completed + 1}: {exc}", state=partial
        ) from exc

    return OptState(
        model=TransferModel(theta, w, phi, psi),
        weights=weights,
        objective_trace=tuple(trace),
        iteration=completed,
        substeps=tuple(substeps),
        term_trace=tuple(term_trace),
    )
