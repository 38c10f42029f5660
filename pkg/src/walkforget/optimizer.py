"""Projected (noisy) stochastic gradient steps and minibatch averaging.

The per-hop update kernel shared by all protocols: a gradient estimate,
optional isotropic Gaussian noise, a descent or ascent step, and a
Euclidean projection onto the feasible region (full space, ball, or ball
intersected with a trust ball).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeasibleRegion

__all__ = [
    "StepSpec",
    "project",
    "averaged_gradient",
    "noisy_projected_step",
    "effective_variance_bound",
    "stepsize",
    "clip_gradient",
]


def _project_ball(x: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    diff = x - center
    norm = float(np.linalg.norm(diff))
    if norm <= radius:
        return x
    if radius == 0.0:
        return center.copy()
    return center + diff * (radius / norm)


def _project_two_balls(x, c1, r1, c2, r2, tol=1e-14, max_iter=500):
    # Dykstra's alternating projections; exact for intersections of convex
    # sets, and the two-ball case converges in a handful of iterations.
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    z = x.astype(np.float64, copy=True)
    for _ in range(max_iter):
        y = _project_ball(z + p, c1, r1)
        p = z + p - y
        z_new = _project_ball(y + q, c2, r2)
        q = y + q - z_new
        if np.linalg.norm(z_new - z) <= tol and np.linalg.norm(z_new - y) <= tol:
            return z_new
        z = z_new
    return z


def project(theta: np.ndarray, region: FeasibleRegion) -> np.ndarray:
    """Euclidean projection onto the region; identity on the full space."""
    x = np.asarray(theta, dtype=np.float64)
    has_ball = region.kind == "ball"
    has_trust = region.trust_center is not None
    if not has_ball and not has_trust:
        return x.copy()
    if has_ball and not has_trust:
        return _project_ball(x, region.center, region.radius).copy()
    if has_trust and not has_ball:
        return _project_ball(x, region.trust_center, region.trust_radius).copy()
    # Intersection. If one ball already contains the other's projection the
    # composition is exact; otherwise fall back to Dykstra.
    cand = _project_ball(x, region.trust_center, region.trust_radius)
    if np.linalg.norm(cand - region.center) <= region.radius:
        return cand.copy()
    cand = _project_ball(x, region.center, region.radius)
    if np.linalg.norm(cand - region.trust_center) <= region.trust_radius:
        return cand.copy()
    return _project_two_balls(
        x, region.center, region.radius, region.trust_center, region.trust_radius
    )


def averaged_gradient(
    objective,
    data,
    theta: np.ndarray,
    s: int = 1,
    batch_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Mean of s i.i.d. minibatch gradients of the local loss.

    Unbiased for the full local gradient; its variance scales as 1/s.
    ``batch_size`` of 0 or None means full batch (then s is irrelevant and
    the result is exact). Minibatches are drawn uniformly with replacement.
    """
    if s < 1:
        raise ValueError("averaging factor s must be >= 1")
    if data.n_u == 0:
        raise ValueError("empty dataset")
    if not batch_size:
        return objective.batch_grad(theta, data.features, data.labels)
    if rng is None:
        raise ValueError("minibatch sampling needs an rng")
    # equal-size i.i.d. minibatches: the mean of the s minibatch means equals
    # the mean over all s*batch_size sampled examples, so draw them at once
    pick = rng.integers(0, data.n_u, size=s * batch_size)
    return objective.batch_grad(theta, data.features[pick], data.labels[pick])


@dataclass(frozen=True)
class StepSpec:
    """One projected, optionally noisy, gradient step."""

    eta: float
    sigma: float = 0.0
    region: FeasibleRegion = FeasibleRegion.full()
    ascent: bool = False

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("stepsize must be positive")
        if self.sigma < 0:
            raise ValueError("noise scale must be >= 0")


def noisy_projected_step(
    theta: np.ndarray,
    grad: np.ndarray,
    spec: StepSpec,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """theta -> project(theta -+ eta * (grad + Z)), Z ~ N(0, sigma^2 I)."""
    if spec.sigma > 0:
        if rng is None:
            raise ValueError("noisy step needs an rng")
        noise = rng.standard_normal(theta.shape[0]) * spec.sigma
        move = grad + noise
    else:
        move = grad
    sign = 1.0 if spec.ascent else -1.0
    new = project(theta + sign * spec.eta * move, spec.region)
    if __debug__:
        # non-expansive projection: from a feasible point the hop never
        # exceeds the raw move
        assert not spec.region.contains(theta) or (
            np.linalg.norm(new - theta)
            <= spec.eta * np.linalg.norm(move) + 1e-9
        )
    return new


def effective_variance_bound(L: float, p: float, s: int, dim: int, sigma: float) -> float:
    """Per-hop second-moment bound L^2 + (p/s) * d * sigma^2.

    Only a p-fraction of hops carry Gaussian noise and local averaging over
    s minibatches divides its contribution; the every-hop-noise baseline is
    the special case p=1, s=1.
    """
    if min(L, p, dim, sigma) < 0:
        raise ValueError("inputs must be nonnegative")
    if s < 1:
        raise ValueError("averaging factor s must be >= 1")
    return L * L + (p / s) * dim * sigma * sigma


def stepsize(rule: str, t: int, eta: float, L: float, r_dom: float, G: float) -> float:
    """Stepsize at hop t: constant eta, or min(1/L, R_dom/(G sqrt(t)))."""
    if rule == "constant":
        return eta
    if rule == "decreasing":
        if t < 1:
            raise ValueError("hop index starts at 1")
        return min(1.0 / L, r_dom / (G * np.sqrt(t)))
    raise ValueError(f"unknown stepsize rule {rule!r}")


def clip_gradient(grad: np.ndarray, threshold: float) -> np.ndarray:
    """Rescale to norm <= threshold; no-op when threshold is 0."""
    if threshold <= 0:
        return grad
    norm = float(np.linalg.norm(grad))
    if norm <= threshold:
        return grad
    return grad * (threshold / norm)
