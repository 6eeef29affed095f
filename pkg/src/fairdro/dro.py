"""Worst-case group reweighting over a chi-square ball of quasi-probabilities.

The uncertainty set is every sum-to-one vector ``q`` (negative entries allowed)
whose chi-square divergence from the uniform vector is at most ``rho``::

    chi2(q) = sum_a (1/|A|) (|A| q_a - 1)^2 = |A| * ||q - 1/|A|||^2

so it is a Euclidean ball of radius ``sqrt(rho/|A|)`` around uniform, cut by
the sum-to-one hyperplane. Maximising a linear function over it has a closed
form, implemented in :func:`best_response`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError, OracleScopeError, RangeError, SpecError

SUM_TOL = 1e-8
DEGENERATE_NORM = 1e-12


@dataclass(frozen=True)
class UncertaintySpec:
    """Which uncertainty set the inner maximisation uses.

    ``use_chi2=False`` is the plain simplex (classic Group DRO); ``allow_negative``
    admits quasi-probabilities and only makes sense with the chi-square ball.
    """

    rho: float = 1.0
    num_groups: int = 2
    allow_negative: bool = True
    classwise: bool = True
    use_chi2: bool = True

    def validate(self):
        if self.use_chi2 and not (math.isfinite(self.rho) and self.rho > 0):
            raise SpecError(f"rho must be finite and > 0, got {self.rho}")
        if self.allow_negative and not self.use_chi2:
            raise SpecError("allow_negative requires the chi-square ball")
        if self.num_groups < 1:
            raise SpecError("num_groups must be >= 1")
        return self


@dataclass(frozen=True, eq=False)
class GroupWeights:
    q: np.ndarray
    class_index: int | None = None

    def check(self, rho=None, tol=SUM_TOL):
        """Raise ConstraintError unless ``q`` sums to 1 (and lies in the ball)."""
        q = np.asarray(self.q, dtype=float)
        if abs(q.sum() - 1.0) > 1e-10:
            raise ConstraintError(f"weights sum to {q.sum()!r}, not 1")
        if rho is not None and chi2_divergence(q) > rho + tol:
            raise ConstraintError(f"chi2 divergence {chi2_divergence(q)} exceeds rho={rho}")
        return self


def _check_rho(rho):
    if not (rho > 0 and math.isfinite(rho)):
        raise SpecError(f"rho must be finite and > 0, got {rho}")


def chi2_divergence(q, num_groups=None):
    q = np.asarray(q, dtype=float)
    n = len(q) if num_groups is None else num_groups
    if len(q) != n:
        raise ConstraintError(f"expected {n} weights, got {len(q)}")
    if abs(q.sum() - 1.0) > SUM_TOL:
        raise ConstraintError(f"weights sum to {q.sum()!r}, not 1")
    return float(np.sum((n * q - 1.0) ** 2) / n)


def weight_range(rho, num_groups):
    """Interval every entry of the closed-form maximiser lies in."""
    half = math.sqrt(rho * (num_groups - 1)) / num_groups
    return 1.0 / num_groups - half, 1.0 / num_groups + half


def best_response(losses, rho):
    """Closed-form maximiser of ``<q, losses>`` over the chi-square ball.

    Equal losses make every feasible point optimal; uniform is returned.
    """
    _check_rho(rho)
    l = np.asarray(losses, dtype=float)
    n = len(l)
    dev = l - l.mean()
    norm = np.linalg.norm(dev)
    if norm < DEGENERATE_NORM:
        return np.full(n, 1.0 / n)
    return 1.0 / n + math.sqrt(rho / n) * dev / norm


def best_response_nonneg(losses, rho):
    """Maximiser restricted to non-negative weights, by active-set clamping.

    Coordinates that come out negative are pinned at zero and the closed form
    is re-solved on the rest. On a free set S of size k (the other |A|-k
    entries being zero) the remaining chi-square budget for the sum-zero
    deviation ``u`` around ``1/k`` works out to ``||u||^2 <= (rho - (|A|-k)/k) / |A|``.
    Approximate in general; checked against :func:`oracle_max`.
    """
    _check_rho(rho)
    l = np.asarray(losses, dtype=float)
    n = len(l)
    free = np.ones(n, dtype=bool)
    q = np.zeros(n)
    for _ in range(n):
        k = int(free.sum())
        radius = math.sqrt(max((rho - (n - k) / k) / n, 0.0))
        dev = l[free] - l[free].mean()
        norm = np.linalg.norm(dev)
        q[:] = 0.0
        q[free] = 1.0 / k
        if norm >= DEGENERATE_NORM:
            q[free] += radius * dev / norm
        neg = q < 0
        if not neg.any():
            break
        free &= ~neg
    return q


def worst_case_objective(losses, rho):
    """Supremum of ``<q, losses>`` over the ball: mean + sqrt(rho * Var)."""
    _check_rho(rho)
    l = np.asarray(losses, dtype=float)
    return float(l.mean() + math.sqrt(rho * np.mean((l - l.mean()) ** 2)))


def simplex_best_response(losses, step_size, q):
    """One exponentiated-gradient ascent step on the probability simplex."""
    q = np.asarray(q, dtype=float)
    if np.any(q < -SUM_TOL) or abs(q.sum() - 1.0) > SUM_TOL:
        raise ConstraintError("current weights are not on the simplex")
    if not step_size > 0:
        raise SpecError("step_size must be > 0")
    with np.errstate(divide="ignore"):
        logits = np.log(np.clip(q, 0.0, None)) + step_size * np.asarray(losses, dtype=float)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def smoothed_ibr_update(q_current, q_star, epoch, total):
    """Mix toward the best response with rate ``1 - epoch/total``."""
    if not 0 <= epoch < total:
        raise RangeError(f"epoch {epoch} outside [0, {total})")
    eta = 1.0 - epoch / total
    q_current = np.asarray(q_current, dtype=float)
    q_star = np.asarray(q_star, dtype=float)
    if epoch == 0:
        return q_star.copy()
    # written as a step so that q_current == q_star is an exact fixed point
    return q_current + eta * (q_star - q_current)


# ----------------------------------------------------------------- oracle


def _sum_zero_basis(n):
    # orthonormal basis of {v : sum(v) = 0}, as columns
    m = np.eye(n)[:, : n - 1] - 1.0 / n
    basis, _ = np.linalg.qr(np.hstack([np.ones((n, 1)), m]))
    return basis[:, 1:]


def oracle_max(losses, rho, resolution=21, rounds=30, nonnegative=False):
    """Brute-force maximiser of ``<q, losses>`` over the ball, by grid refinement.

    Searches a cube grid in coordinates of the sum-to-one slice. Each grid
    point is scored both as is and pushed radially onto the ball surface, and
    infeasible candidates are dropped. The window is then re-centred on the
    best candidate and halved, ``rounds`` times. Exponential in |A|, so limited
    to |A| <= 4. Returns ``(q, value)``.
    """
    l = np.asarray(losses, dtype=float)
    n = len(l)
    if not 2 <= n <= 4:
        raise OracleScopeError(f"grid oracle supports 2 <= |A| <= 4, got {n}")
    _check_rho(rho)
    if resolution % 2 == 0:
        resolution += 1
    basis = _sum_zero_basis(n)
    radius = math.sqrt(rho / n)
    centre = np.full(n, 1.0 / n)
    coef = basis.T @ l  # objective = mean(l) + coef . z

    best_z = np.zeros(n - 1)
    half = radius
    steps = np.linspace(-1.0, 1.0, resolution)
    for _ in range(rounds):
        mesh = np.meshgrid(*[best_z[i] + half * steps for i in range(n - 1)], indexing="ij")
        z = np.stack([m.ravel() for m in mesh], axis=1)
        norms = np.linalg.norm(z, axis=1)
        on_shell = z[norms > 0] * (radius / norms[norms > 0])[:, None]
        z = np.vstack([z[norms <= radius], on_shell, best_z[None, :]])
        if nonnegative:
            z = z[np.all(centre + z @ basis.T >= 0.0, axis=1)]
        best_z = z[np.argmax(z @ coef)]
        half *= 0.5
    q = centre + basis @ best_z
    return q, float(q @ l)
