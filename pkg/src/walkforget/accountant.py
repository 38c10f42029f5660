"""Renyi-DP accounting for token protocols on complete graphs.

Building blocks: per-step RDP of projected noisy SGD, the view-level RDP
bound for token SGD (amplification by decentralization), weak convexity of
the Renyi divergence for routing mixtures, a Chernoff bound on the number
of sensitive visits, conversion to (eps, delta), group privacy, and noise
calibrators for the every-hop-noise baseline and the localized-noise
unlearning walk.

All accounting is exact arithmetic over a finite grid of Renyi orders; the
one unknown absolute constant of the view-level bound is an explicit knob
(``amp_constant``) and the calibrator for the unlearning walk verifies its
output post hoc, so reported guarantees never rely on a hidden constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "DEFAULT_ALPHA_GRID",
    "RdpCurve",
    "DpGuarantee",
    "SensitiveVisitCount",
    "AccountantReport",
    "CalibrationResult",
    "CalibrationError",
    "pnsgd_step_rdp",
    "token_view_rdp",
    "weak_convexity_mixture",
    "rdp_to_dp",
    "sensitive_visit_bound",
    "unlearning_view_guarantee",
    "calibrate_baseline_sigma",
    "baseline_group_sigma",
    "calibrate_unlearning_sigma",
    "group_privacy",
]

# Standard accounting grid of Renyi orders; the optimum over alpha is taken
# on this grid.
DEFAULT_ALPHA_GRID = (1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0)


@dataclass(frozen=True)
class RdpCurve:
    """Map from Renyi order alpha > 1 to a divergence bound."""

    values: dict

    def __post_init__(self):
        if not self.values:
            raise ValueError("curve must be nonempty")
        items = sorted(self.values.items())
        for alpha, epsilon in items:
            if alpha <= 1.0:
                raise ValueError("orders must exceed 1")
            if epsilon < 0:
                raise ValueError("divergence bounds must be >= 0")
        finite = [(a, e) for a, e in items if math.isfinite(e)]
        for (a0, e0), (a1, e1) in zip(finite, finite[1:]):
            if e1 < e0 - 1e-12:
                raise ValueError("divergence bound must be nondecreasing in alpha")
        object.__setattr__(self, "values", dict(items))

    def orders(self):
        return tuple(self.values)


@dataclass(frozen=True)
class DpGuarantee:
    eps: float
    delta: float

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0,1)")


@dataclass(frozen=True)
class SensitiveVisitCount:
    """High-probability bound on the number of visits to the unlearning client."""

    horizon: int
    p: float
    bound: int
    slack: float  # delta portion consumed by the Chernoff tail


def pnsgd_step_rdp(alpha: float, L: float, sigma: float, n: int, t: int) -> float:
    """RDP at order alpha of projected noisy SGD w.r.t. its t-th input.

    Amplification by iteration: later inputs (t close to n) are less
    protected, the bound is 2 * alpha * L^2 / (sigma^2 * (n + 1 - t)).
    Returns inf for sigma = 0.
    """
    if alpha <= 1.0:
        raise ValueError("alpha must exceed 1")
    if not 1 <= t <= n:
        raise ValueError("step index t must lie in [1..n]")
    if sigma == 0.0:
        return math.inf
    return 2.0 * alpha * L * L / (sigma * sigma * (n + 1 - t))


def token_view_rdp(
    alpha: float,
    L: float,
    sigma: float,
    visits: float,
    n_clients: int,
    amp_constant: float = 1.0,
) -> float:
    """View-level RDP of noisy token SGD on a complete graph.

    Bound amp_constant * alpha * L^2 * visits * ln(N) / (sigma^2 * N) on the
    divergence between any other client's views, where ``visits`` counts
    token visits to the client whose data changed.
    """
    if alpha <= 1.0:
        raise ValueError("alpha must exceed 1")
    if n_clients < 2:
        raise ValueError("need at least 2 clients")
    if visits < 0:
        raise ValueError("visit count must be >= 0")
    if visits == 0:
        return 0.0
    if sigma == 0.0:
        return math.inf
    return amp_constant * alpha * L * L * visits * math.log(n_clients) / (sigma * sigma * n_clients)


def weak_convexity_mixture(alpha: float, c: float, divergences, weights) -> float:
    """Renyi divergence of a routing mixture: (1 + c) * weighted mean.

    Valid only when every component divergence is at most c/(alpha-1); a
    violated precondition is rejected rather than silently bounded.
    """
    if alpha <= 1.0:
        raise ValueError("alpha must exceed 1")
    if not 0.0 < c <= 1.0:
        raise ValueError("c must lie in (0,1]")
    divergences = list(divergences)
    weights = list(weights)
    if len(divergences) != len(weights):
        raise ValueError("components and weights must align")
    if abs(sum(weights) - 1.0) > 1e-9 or any(w < 0 for w in weights):
        raise ValueError("weights must form a probability vector")
    cap = c / (alpha - 1.0)
    for d in divergences:
        if d > cap + 1e-15:
            raise ValueError(
                f"component divergence {d:.6g} exceeds c/(alpha-1) = {cap:.6g}"
            )
    return (1.0 + c) * sum(w * d for w, d in zip(weights, divergences))


def rdp_to_dp(curve: RdpCurve, delta: float):
    """Best (eps, delta) conversion over the curve's grid of orders.

    Returns (DpGuarantee, chosen_alpha); eps = min over alpha of
    eps(alpha) + ln(1/delta)/(alpha - 1).
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0,1)")
    best_eps = math.inf
    best_alpha = None
    for alpha, eps_alpha in curve.values.items():
        if not math.isfinite(eps_alpha):
            continue
        candidate = eps_alpha + math.log(1.0 / delta) / (alpha - 1.0)
        if candidate < best_eps:
            best_eps = candidate
            best_alpha = alpha
    if best_alpha is None:
        raise ValueError("all orders are infinite; cannot convert")
    return DpGuarantee(eps=best_eps, delta=delta), best_alpha


def sensitive_visit_bound(horizon: int, p: float, delta_slack: float) -> SensitiveVisitCount:
    """Chernoff bound on Binomial(T_u, p) visits, valid except with delta_slack.

    beta = sqrt(3 ln(1/delta_slack) / (p T_u)) makes
    P[M >= (1+beta) p T_u] <= exp(-beta^2 p T_u / 3) <= delta_slack.
    The bound is capped at the horizon, which is an almost-sure bound; in
    particular p = 1 yields exactly T_u with no slack actually consumed.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0,1]")
    if not 0.0 < delta_slack < 1.0:
        raise ValueError("delta_slack must lie in (0,1)")
    mean = p * horizon
    beta = math.sqrt(3.0 * math.log(1.0 / delta_slack) / mean)
    bound = min(math.ceil((1.0 + beta) * mean), horizon)
    return SensitiveVisitCount(horizon=horizon, p=p, bound=int(bound), slack=delta_slack)


@dataclass(frozen=True)
class AccountantReport:
    """Serializable record of one view-level accounting computation."""

    inputs: dict
    alpha_grid: tuple
    per_alpha: dict
    chosen_alpha: float | None
    eps: float
    delta: float
    delta_split: dict

    def to_dict(self) -> dict:
        return {
            "inputs": dict(self.inputs),
            "alpha_grid": list(self.alpha_grid),
            "per_alpha": {str(a): v for a, v in self.per_alpha.items()},
            "chosen_alpha": self.chosen_alpha,
            "eps": self.eps,
            "delta": self.delta,
            "delta_split": dict(self.delta_split),
        }


def unlearning_view_guarantee(
    L: float,
    sigma: float,
    p: float,
    horizon: int,
    n_clients: int,
    delta: float,
    amp_constant: float = 1.0,
    delta_split=(0.25, 0.25, 0.5),
    alpha_grid=DEFAULT_ALPHA_GRID,
) -> AccountantReport:
    """(eps, delta) on any other client's view for the localized-noise walk.

    Only visits to the unlearning client are sensitive. The delta budget is
    split (Chernoff tail, per-visit Gaussian tail folded into conversion,
    conversion) with the default (1/4, 1/4, 1/2). The per-visit view-level
    RDP is composed over the high-probability visit bound and converted on
    the alpha grid.
    """
    if abs(sum(delta_split) - 1.0) > 1e-12 or any(x <= 0 for x in delta_split):
        raise ValueError("delta_split must be positive and sum to 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0,1)")
    inputs = {
        "L": L,
        "sigma": sigma,
        "p": p,
        "horizon": horizon,
        "n_clients": n_clients,
        "delta": delta,
        "amp_constant": amp_constant,
    }
    split = {
        "chernoff": delta_split[0] * delta,
        "gaussian_tail": delta_split[1] * delta,
        "conversion": delta_split[2] * delta,
    }
    if p == 0.0 or horizon == 0:
        return AccountantReport(
            inputs=inputs,
            alpha_grid=tuple(alpha_grid),
            per_alpha={a: 0.0 for a in alpha_grid},
            chosen_alpha=None,
            eps=0.0,
            delta=delta,
            delta_split=split,
        )
    visits = sensitive_visit_bound(horizon, p, split["chernoff"])
    per_alpha = {
        alpha: visits.bound
        * token_view_rdp(alpha, L, sigma, 1.0, n_clients, amp_constant)
        for alpha in alpha_grid
    }
    if sigma == 0.0:
        # noiseless sensitive steps: the view guarantee is vacuous
        return AccountantReport(
            inputs=inputs,
            alpha_grid=tuple(alpha_grid),
            per_alpha=per_alpha,
            chosen_alpha=None,
            eps=math.inf,
            delta=delta,
            delta_split=split,
        )
    curve = RdpCurve(per_alpha)
    guarantee, chosen = rdp_to_dp(curve, split["conversion"])
    return AccountantReport(
        inputs=inputs,
        alpha_grid=tuple(alpha_grid),
        per_alpha=per_alpha,
        chosen_alpha=chosen,
        eps=guarantee.eps,
        delta=delta,
        delta_split=split,
    )


def calibrate_baseline_sigma(eps: float, delta: float, L: float) -> float:
    """Gaussian scale of the every-hop-noise baseline: sqrt(8 L^2 ln(1.25/delta)) / eps."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0,1)")
    if L < 0:
        raise ValueError("L must be >= 0")
    return math.sqrt(8.0 * L * L * math.log(1.25 / delta)) / eps


def baseline_group_sigma(eps: float, delta: float, L: float, edit: int) -> float:
    """Baseline noise certifying deletions at edit distance ``edit``.

    Simple split of the target: the per-change budget is eps/edit, so the
    scale grows exactly linearly in the edit distance (delta enters only
    through its logarithm and is kept at the target value).
    """
    if edit < 1:
        raise ValueError("edit distance must be >= 1")
    return calibrate_baseline_sigma(eps / edit, delta, L)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CalibrationResult:
    sigma: float
    achieved_eps: float
    delta: float
    attempts: int
    report: AccountantReport | None


def calibrate_unlearning_sigma(
    eps: float,
    delta: float,
    L: float,
    p: float,
    horizon: int,
    n_clients: int,
    cal_constant: float = 1.0,
    amp_constant: float = 1.0,
) -> CalibrationResult:
    """Noise scale for the localized-noise walk, certified post hoc.

    Base scale cal_constant * (L/eps) * sqrt(p T_u ln(1/delta) ln(N) / N);
    the achieved view-level eps is then verified via the accountant and the
    scale doubled (up to 8x) until the target is met, so the reported pair
    is a guarantee rather than a scaling. Independent of the forget-set
    size by construction.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0,1)")
    if n_clients < 2:
        raise ValueError("need at least 2 clients")
    if p == 0.0 or horizon == 0:
        report = unlearning_view_guarantee(L, 0.0, 0.0, 0, n_clients, delta, amp_constant)
        return CalibrationResult(sigma=0.0, achieved_eps=0.0, delta=delta, attempts=0, report=report)
    base = (
        cal_constant
        * (L / eps)
        * math.sqrt(p * horizon * math.log(1.0 / delta) * math.log(n_clients) / n_clients)
    )
    for k in range(4):  # factors 1, 2, 4, 8
        sigma = base * (2.0**k)
        report = unlearning_view_guarantee(
            L, sigma, p, horizon, n_clients, delta, amp_constant
        )
        if report.eps <= eps:
            return CalibrationResult(
                sigma=sigma,
                achieved_eps=report.eps,
                delta=delta,
                attempts=k + 1,
                report=report,
            )
    raise CalibrationError(
        f"verification failed after 8x escalation (target eps={eps}, last achieved={report.eps:.6g})"
    )


def group_privacy(eps0: float, delta0: float, m: int, delta_tilde: float) -> DpGuarantee:
    """Guarantee under m simultaneous changes via advanced composition.

    eps_m = sqrt(2 m ln(1/delta_tilde)) * eps0 and delta_m = m delta0 +
    delta_tilde; the single-change case returns the direct guarantee.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        return DpGuarantee(eps=eps0, delta=delta0)
    if not 0.0 < delta_tilde < 1.0:
        raise ValueError("delta_tilde must lie in (0,1)")
    eps_m = math.sqrt(2.0 * m * math.log(1.0 / delta_tilde)) * eps0
    return DpGuarantee(eps=eps_m, delta=m * delta0 + delta_tilde)
