"""Synthetic convex tasks with exact gradients and forget-set arithmetic.

Two objective kinds:

* quadratic: l(theta; z) = 0.5 * ||theta - z||^2 per example, strongly
  convex with a closed-form minimizer (the user-averaged client means),
  used wherever an exact excess-risk oracle is needed.
* logistic: binary log-loss with labels in {-1, +1}. Features are scaled
  to unit max euclidean norm at construction so the per-example gradient
  norm bound L = 1 holds everywhere, not just after clipping.

Client indices are 1-based to match the rest of the package; dataset lists
are 0-indexed by client-1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ClientDataset, CorrectionMode

__all__ = [
    "QuadraticObjective",
    "LogisticObjective",
    "GradientReport",
    "grad_local",
    "decompose_gradient",
    "corrective_gradient",
    "closed_form_optimum",
    "global_loss",
    "global_grad",
    "retained_global_grad",
    "SyntheticTask",
    "make_quadratic_task",
    "make_logistic_task",
    "dataset_to_lines",
    "dataset_from_lines",
]


@dataclass(frozen=True)
class QuadraticObjective:
    """0.5 * ||theta - z||^2 per example; labels are carried but unused."""

    grad_bound: float = math.inf  # valid over the feasible region in use
    mu: float = 1.0
    smoothness: float = 1.0
    kind: str = "quadratic"

    def example_loss(self, theta, x, y) -> float:
        diff = theta - x
        return 0.5 * float(diff @ diff)

    def batch_loss(self, theta, feats, labels) -> float:
        diff = theta[None, :] - feats
        return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))

    def batch_grad(self, theta, feats, labels) -> np.ndarray:
        return theta - feats.mean(axis=0)

    def example_grad_norms(self, theta, feats, labels) -> np.ndarray:
        return np.linalg.norm(theta[None, :] - feats, axis=1)


def _sigmoid(t):
    out = np.empty_like(t, dtype=np.float64)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class LogisticObjective:
    """log(1 + exp(-y * <theta, x>)) with y in {-1, +1}."""

    grad_bound: float = 1.0
    mu: float = 0.0
    smoothness: float = 0.25
    kind: str = "logistic"

    def batch_loss(self, theta, feats, labels) -> float:
        margins = labels * (feats @ theta)
        # log(1 + exp(-m)) computed stably
        return float(np.mean(np.logaddexp(0.0, -margins)))

    def example_loss(self, theta, x, y) -> float:
        return self.batch_loss(theta, x[None, :], np.array([y]))

    def batch_grad(self, theta, feats, labels) -> np.ndarray:
        margins = labels * (feats @ theta)
        w = _sigmoid(-margins)  # in (0,1)
        return -(feats * (labels * w)[:, None]).mean(axis=0)

    def example_grad_norms(self, theta, feats, labels) -> np.ndarray:
        margins = labels * (feats @ theta)
        w = _sigmoid(-margins)
        return w * np.linalg.norm(feats, axis=1)

    def predict(self, theta, feats) -> np.ndarray:
        """Class labels in {-1, +1}; ties resolve to +1."""
        return np.where(feats @ theta >= 0.0, 1.0, -1.0)


def _subset_arrays(data: ClientDataset, subset: str):
    if subset == "full":
        return data.features, data.labels
    if subset == "retained":
        if data.m == data.n_u:
            raise ValueError("retained set empty")
        keep = data.retained_indices()
        return data.features[keep], data.labels[keep]
    if subset == "forget":
        if data.m == 0:
            raise ValueError("forget set empty")
        idx = list(data.forget_indices)
        return data.features[idx], data.labels[idx]
    raise ValueError(f"unknown subset {subset!r}")


def grad_local(objective, data: ClientDataset, theta: np.ndarray, subset: str = "full") -> np.ndarray:
    """Exact average gradient of the client loss over the named subset."""
    feats, labels = _subset_arrays(data, subset)
    return objective.batch_grad(theta, feats, labels)


def local_loss(objective, data: ClientDataset, theta: np.ndarray, subset: str = "full") -> float:
    feats, labels = _subset_arrays(data, subset)
    return objective.batch_loss(theta, feats, labels)


@dataclass(frozen=True)
class GradientReport:
    """The three local gradients and the mixture-identity residual.

    residual = full - ((n-m)/n) * retained - (m/n) * forget, which is zero
    up to roundoff by the exact renormalization identity.
    """

    full: np.ndarray
    retained: np.ndarray
    forget: np.ndarray
    residual: np.ndarray


def decompose_gradient(objective, data: ClientDataset, theta: np.ndarray) -> GradientReport:
    if not 0 < data.m < data.n_u:
        raise ValueError("decomposition requires 0 < m < n_u")
    full = grad_local(objective, data, theta, "full")
    retained = grad_local(objective, data, theta, "retained")
    forget = grad_local(objective, data, theta, "forget")
    w = data.m / data.n_u
    residual = full - (1.0 - w) * retained - w * forget
    return GradientReport(full=full, retained=retained, forget=forget, residual=residual)


def corrective_gradient(
    objective,
    data: ClientDataset,
    theta: np.ndarray,
    mode: CorrectionMode,
    batch_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Update direction applied (as an ascent step) at the unlearning client.

    EXACT returns minus the retained gradient; with an empty forget set this
    degrades to minus the full gradient, making empty deletion a no-op
    certifier step. LIGHTWEIGHT returns (m/n_u) times the average gradient
    over a uniformly sampled forget minibatch, an unbiased estimator of
    (m/n_u) * grad of the forget loss.
    """
    if mode is CorrectionMode.EXACT:
        if data.m == data.n_u:
            raise ValueError("retained set empty")
        subset = "full" if data.m == 0 else "retained"
        return -grad_local(objective, data, theta, subset)
    if mode is CorrectionMode.LIGHTWEIGHT:
        if data.m == 0:
            raise ValueError("lightweight correction needs a nonempty forget set")
        idx = np.array(data.forget_indices)
        if batch_size and batch_size > 0:
            if rng is None:
                raise ValueError("minibatch sampling needs an rng")
            pick = idx[rng.integers(0, len(idx), size=batch_size)]
        else:
            pick = idx
        g = objective.batch_grad(theta, data.features[pick], data.labels[pick])
        return (data.m / data.n_u) * g
    raise ValueError(f"unknown mode {mode!r}")


def closed_form_optimum(objective, datasets, exclude_forget: bool = False) -> np.ndarray:
    """Exact minimizer of the user-averaged quadratic empirical risk.

    Each client contributes the mean of its (optionally retained-only)
    points with equal weight 1/N regardless of local sizes.
    """
    if getattr(objective, "kind", None) != "quadratic":
        raise ValueError("closed-form optimum only available for the quadratic task")
    means = []
    for data in datasets:
        if exclude_forget and data.m > 0:
            if data.m == data.n_u:
                raise ValueError("retained set empty")
            keep = data.retained_indices()
            means.append(data.features[keep].mean(axis=0))
        else:
            means.append(data.features.mean(axis=0))
    return np.mean(means, axis=0)


def global_loss(objective, datasets, theta, exclude_forget: bool = False) -> float:
    """User-averaged empirical risk, optionally on the retained data only."""
    total = 0.0
    for data in datasets:
        if exclude_forget and data.m > 0:
            total += local_loss(objective, data, theta, "retained")
        else:
            total += local_loss(objective, data, theta, "full")
    return total / len(datasets)


def global_grad(objective, datasets, theta) -> np.ndarray:
    return np.mean([grad_local(objective, d, theta, "full") for d in datasets], axis=0)


def retained_global_grad(objective, datasets, theta) -> np.ndarray:
    """Gradient of the retraining objective (forget subset removed)."""
    grads = []
    for data in datasets:
        subset = "retained" if data.m > 0 else "full"
        grads.append(grad_local(objective, data, theta, subset))
    return np.mean(grads, axis=0)


@dataclass(frozen=True)
class SyntheticTask:
    """A generated task: objective, per-client datasets, held-out test set."""

    objective: object
    datasets: tuple
    test_features: np.ndarray
    test_labels: np.ndarray

    def dataset(self, client: int) -> ClientDataset:
        return self.datasets[client - 1]


def _recenter(points: np.ndarray, target: np.ndarray) -> np.ndarray:
    return points - points.mean(axis=0) + target


def make_quadratic_task(
    n_clients: int,
    dim: int,
    local_size: int,
    forget_size: int,
    unlearn_client: int,
    rng: np.random.Generator,
    *,
    center_spread: float = 5e-4,
    point_spread: float = 0.5,
    forget_shift: float = 1.0,
    grad_bound: float = 4.0,
) -> SyntheticTask:
    """Quadratic task: client point clouds with exact means at jittered centers.

    Each cloud is recentered so its mean hits the client center exactly; at
    the unlearning client the forget subset is recentered onto
    center + forget_shift along the first axis and the retained subset back
    onto the center. Deletion therefore moves the exact optimum by a known
    amount, and the token walk's stationary wobble is set by
    ``center_spread`` alone. ``grad_bound`` is the declared L, valid on the
    feasible ball used by the protocols (callers pick the ball accordingly).
    """
    shift = forget_shift * np.eye(dim)[0]
    datasets = []
    for c in range(1, n_clients + 1):
        center = rng.normal(0.0, center_spread, size=dim)
        pts = _recenter(rng.normal(0.0, point_spread, size=(local_size, dim)), center)
        forget = ()
        if c == unlearn_client and forget_size > 0:
            idx = rng.permutation(local_size)[:forget_size]
            keep = np.setdiff1d(np.arange(local_size), idx)
            pts[idx] = _recenter(pts[idx], center + shift)
            if keep.size:
                pts[keep] = _recenter(pts[keep], center)
            forget = tuple(int(i) for i in idx)
        datasets.append(ClientDataset(pts, np.zeros(local_size), forget))
    objective = QuadraticObjective(grad_bound=grad_bound)
    test = rng.normal(0.0, point_spread, size=(max(1, local_size), dim))
    return SyntheticTask(objective, tuple(datasets), test, np.zeros(test.shape[0]))


def make_logistic_task(
    n_clients: int,
    dim: int,
    local_size: int,
    forget_size: int,
    unlearn_client: int,
    rng: np.random.Generator,
    *,
    test_size: int = 500,
    forget_margin: tuple = (0.25, 0.55),
    forget_clean_scale: float = 0.3,
    forget_offset: float = 0.92,
) -> SyntheticTask:
    """Binary logistic task with a label-flip forget subset at one client.

    Clean points are isotropic Gaussian, labeled by a fixed hyperplane
    through the first dim-1 coordinates. Forget points are confident
    negatives (true margin inside ``forget_margin``), shrunk by
    ``forget_clean_scale`` and offset along the last coordinate (which
    carries no label signal) by ``forget_offset``, then stored with the
    flipped label +1. Features are rescaled afterwards so the max norm is
    one, which makes the declared gradient bound L = 1 exact.
    """
    if dim < 2:
        raise ValueError("logistic task needs dim >= 2")
    w_true = np.zeros(dim)
    w_true[: dim - 1] = rng.normal(0.0, 1.0, size=dim - 1)
    w_true /= np.linalg.norm(w_true)

    def sample_clean(n):
        x = rng.normal(0.0, 1.0, size=(n, dim)) / math.sqrt(dim)
        x[:, dim - 1] = rng.normal(0.0, 1.0, size=n) / math.sqrt(dim)
        y = np.where(x @ w_true >= 0.0, 1.0, -1.0)
        return x, y

    def sample_confident_negative(n):
        lo, hi = forget_margin
        out = np.empty((n, dim))
        got = 0
        while got < n:
            x, _ = sample_clean(4 * n)
            margins = x @ w_true
            keep = (-margins >= lo) & (-margins <= hi)
            take = min(n - got, int(keep.sum()))
            out[got : got + take] = x[keep][:take]
            got += take
        return out

    blocks = []
    all_feats = []
    for c in range(1, n_clients + 1):
        x, y = sample_clean(local_size)
        forget = ()
        if c == unlearn_client and forget_size > 0:
            xb = sample_confident_negative(forget_size)
            xb = forget_clean_scale * xb
            xb[:, dim - 1] += forget_offset
            idx = rng.permutation(local_size)[:forget_size]
            x[idx] = xb
            y[idx] = 1.0  # flipped: true label is -1 by construction
            forget = tuple(int(i) for i in idx)
        blocks.append((x, y, forget))
        all_feats.append(x)
    test_x, test_y = sample_clean(test_size)
    all_feats.append(test_x)

    scale = max(np.linalg.norm(np.vstack(all_feats), axis=1).max(), 1e-12)
    datasets = tuple(
        ClientDataset(x / scale, y, forget) for (x, y, forget) in blocks
    )
    objective = LogisticObjective(grad_bound=1.0)
    return SyntheticTask(objective, datasets, test_x / scale, test_y)


def dataset_to_lines(data: ClientDataset) -> list:
    """Columnar text: features..., label, forget-flag, one example per line."""
    lines = []
    forget = set(data.forget_indices)
    for i in range(data.n_u):
        cols = [f"{v:.17g}" for v in data.features[i]]
        cols.append(f"{data.labels[i]:.17g}")
        cols.append("1" if i in forget else "0")
        lines.append(" ".join(cols))
    return lines


def dataset_from_lines(lines) -> ClientDataset:
    feats, labels, forget = [], [], []
    for i, line in enumerate(l for l in (ln.strip() for ln in lines) if l):
        cols = line.split()
        feats.append([float(v) for v in cols[:-2]])
        labels.append(float(cols[-2]))
        if cols[-1] == "1":
            forget.append(i)
    return ClientDataset(np.array(feats), np.array(labels), tuple(forget))
