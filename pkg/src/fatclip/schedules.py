"""Step-size / clipping schedules prescribed by the convergence theorems, and rate exponents.

Every theorem fixes the product ``eta * eta_l`` (or ``eta * eta_l * K``) plus
an upper bound on ``eta_l``; the split is ``eta_l = min(cap, eta * eta_l)`` and
``eta = product / eta_l`` (so the server rate is never below 1).  Inequality
prescriptions such as ``lambda >= ...`` are taken at equality.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

SETTINGS = (
    "pr_strongly_convex",
    "pr_nonconvex",
    "pi_strongly_convex",
    "pi_nonconvex",
    "gaussian_pr_nonconvex",
    "gaussian_pr_strongly_convex",
)
STRONGLY_CONVEX = {"pr_strongly_convex", "pi_strongly_convex", "gaussian_pr_strongly_convex"}
ALGORITHM_OF = {
    "pr_strongly_convex": "fat_pr",
    "pr_nonconvex": "fat_pr",
    "pi_strongly_convex": "fat_pi",
    "pi_nonconvex": "fat_pi",
    "gaussian_pr_nonconvex": "fat_pr",
    "gaussian_pr_strongly_convex": "fat_pr",
}


@dataclass(frozen=True)
class SchedulePlan:
    setting: str
    m: int
    K: int
    T: int
    alpha: float
    mu: float
    L: float
    c: float | None
    eta_eta_l: float
    eta_l_cap: float
    eta_l: float
    eta: float
    lambda_seq: tuple[float, ...]
    rate_exponent_sq: float
    rate_exponent_tbl: float
    rate_variable: str
    k_exponent_sq: float
    k_exponent_tbl: float
    conditions: dict[str, bool] = field(default_factory=dict)
    c_adjusted: bool = False

    @property
    def eta_eta_l_k(self) -> float:
        return self.eta_eta_l * self.K

    @property
    def algorithm(self) -> str:
        return ALGORITHM_OF[self.setting]

    def config_values(self) -> dict[str, float]:
        """The run-config keys this plan determines."""
        return {"eta": self.eta, "eta_l": self.eta_l, "lambda": self.lambda_seq[0]}

    def as_dict(self) -> dict:
        return {
            "setting": self.setting,
            "algorithm": self.algorithm,
            "m": self.m,
            "K": self.K,
            "T": self.T,
            "alpha": self.alpha,
            "mu": self.mu,
            "c": self.c,
            "c_adjusted": self.c_adjusted,
            "eta_eta_l": self.eta_eta_l,
            "eta_eta_l_k": self.eta_eta_l_k,
            "eta_l_cap": self.eta_l_cap,
            "eta_l": self.eta_l,
            "eta": self.eta,
            "lambda": self.lambda_seq[0],
            "rate_variable": self.rate_variable,
            "rate_exponent_sq": self.rate_exponent_sq,
            "k_exponent_sq": self.k_exponent_sq,
            "rate_exponent_tbl": self.rate_exponent_tbl,
            "k_exponent_tbl": self.k_exponent_tbl,
            "conditions": dict(self.conditions),
        }


def _check_common(m: int, K: int, T: int) -> None:
    if m < 1 or K < 1 or T < 1:
        raise ValueError("m, K and T must be >= 1")


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 1.0 < alpha <= 2.0:
        raise ValueError(f"alpha must lie in (1, 2], got {alpha}")
    return alpha


def _check_sc(mu: float, T: int, c: float | None) -> None:
    if not mu > 0:
        raise ValueError("mu must be positive for strongly convex schedules")
    if T < 2:
        raise ValueError("strongly convex schedules need T >= 2 (ln T > 0)")
    if c is not None and c < 1:
        raise ValueError("c must be >= 1")


def _pick_c(c: float | None, lower_bounds: list[float], setting: str) -> tuple[float, bool]:
    """Explicit ``c`` is used as given; ``None`` means 1 raised to the smallest valid integer."""
    if c is not None:
        return float(c), False
    need = max([1.0] + lower_bounds)
    chosen = float(max(1, math.ceil(need - 1e-12)))
    if chosen != 1.0:
        log.info("%s: raised c from 1 to %g to meet the theorem's side conditions", setting, chosen)
    return chosen, chosen != 1.0


def _split(product: float, cap: float) -> tuple[float, float]:
    eta_l = min(cap, product)
    return eta_l, product / eta_l


def _finish(setting, m, K, T, alpha, mu, L, c, c_adjusted, prod, cap, lam, conditions) -> SchedulePlan:
    eta_l, eta = _split(prod, cap)
    sq, k_sq, var = _exponents(setting, alpha, "squared")
    tbl, k_tbl, _ = _exponents(setting, alpha, "table1")
    for name, ok in conditions.items():
        if not ok:
            log.warning("%s(m=%d, K=%d, T=%d, alpha=%g): side condition %s violated", setting, m, K, T, alpha, name)
    return SchedulePlan(
        setting=setting, m=m, K=K, T=T, alpha=alpha, mu=mu, L=L, c=c,
        eta_eta_l=prod, eta_l_cap=cap, eta_l=eta_l, eta=eta,
        lambda_seq=(lam,) * T,
        rate_exponent_sq=sq, rate_exponent_tbl=tbl, rate_variable=var,
        k_exponent_sq=k_sq, k_exponent_tbl=k_tbl,
        conditions=conditions, c_adjusted=c_adjusted,
    )


def _sc_step(c: float, mu: float, m: int, K: int, T: int) -> float:
    """eta * eta_l * K = (2c/mu) ln(T) / (mKT)."""
    return 2.0 * c / mu * math.log(T) / (m * K * T)


def plan_pr_strongly_convex(mu: float, m: int, K: int, T: int, alpha: float, c: float | None = None,
                            L: float = 1.0) -> SchedulePlan:
    _check_common(m, K, T)
    alpha = _check_alpha(alpha)
    _check_sc(mu, T, c)
    e = (2 - 2 * alpha) / alpha
    ln_t = math.log(T)
    # m^e K^(2/alpha) T^(c+e) >= 1  and  eta*eta_l*K >= 2/(mu T)  <=>  c ln T >= mK
    c_theorem = -(e * math.log(m) + 2 / alpha * math.log(K) + e * ln_t) / ln_t
    c, adjusted = _pick_c(c, [c_theorem, m * K / ln_t], "pr_strongly_convex")
    step = _sc_step(c, mu, m, K, T)
    n_tot = m * K * T
    conditions = {
        "c_condition": e * math.log(m) + 2 / alpha * math.log(K) + (c + e) * ln_t >= -1e-12,
        "step_lower_bound": step >= 2.0 / (mu * T) * (1 - 1e-12),
    }
    return _finish("pr_strongly_convex", m, K, T, alpha, mu, L, c, adjusted, step / K,
                   n_tot ** ((1 - alpha) / alpha), n_tot ** (1 / alpha), conditions)


def plan_pr_nonconvex(m: int, K: int, T: int, alpha: float, L: float = 1.0) -> SchedulePlan:
    _check_common(m, K, T)
    alpha = _check_alpha(alpha)
    d = 3 * alpha - 2
    prod = m ** ((2 * alpha - 2) / d) * K ** ((-alpha - 2) / d) * T ** (-alpha / d)
    cap = (m * T) ** ((1 - alpha) / d) * K ** ((4 - 4 * alpha) / d)
    lam = (m * K**4 * T) ** (1 / d)
    conditions = {"smoothness_step": prod * K * L <= 1.0}
    return _finish("pr_nonconvex", m, K, T, alpha, 0.0, L, None, False, prod, cap, lam, conditions)


def plan_pi_strongly_convex(mu: float, m: int, K: int, T: int, alpha: float, c: float | None = None,
                            L: float = 1.0) -> SchedulePlan:
    _check_common(m, K, T)
    alpha = _check_alpha(alpha)
    _check_sc(mu, T, c)
    e = (2 - 2 * alpha) / alpha
    ln_t = math.log(T)
    # (mK)^e T^(c+e) >= 1  and  c ln T >= mK
    c_theorem = -(e * math.log(m * K) + e * ln_t) / ln_t
    c, adjusted = _pick_c(c, [c_theorem, m * K / ln_t], "pi_strongly_convex")
    step = _sc_step(c, mu, m, K, T)
    n_tot = m * K * T
    conditions = {
        "c_condition": e * math.log(m * K) + (c + e) * ln_t >= -1e-12,
        "step_lower_bound": step >= 2.0 / (mu * T) * (1 - 1e-12),
    }
    cap = (m * T) ** -0.5 * K ** -1.5
    return _finish("pi_strongly_convex", m, K, T, alpha, mu, L, c, adjusted, step / K,
                   cap, n_tot ** (1 / alpha), conditions)


def plan_pi_nonconvex(m: int, K: int, T: int, alpha: float, L: float = 1.0) -> SchedulePlan:
    _check_common(m, K, T)
    alpha = _check_alpha(alpha)
    d = 3 * alpha - 2
    n_tot = m * K * T
    prod = m ** ((2 * alpha - 2) / d) * (K * T) ** (-alpha / d)
    cap = n_tot ** (-alpha / (6 * alpha - 4))
    lam = n_tot ** (1 / d)
    conditions = {"smoothness_step": prod * K * L <= 1.0}
    return _finish("pi_nonconvex", m, K, T, alpha, 0.0, L, None, False, prod, cap, lam, conditions)


def plan_gaussian_pr(m: int, K: int, T: int, setting: str = "gaussian_pr_nonconvex", mu: float = 1.0,
                     c: float | None = None, L: float = 1.0) -> SchedulePlan:
    """Finite-variance (alpha = 2) schedules for FAT-Clipping-PR."""
    _check_common(m, K, T)
    if setting in ("nonconvex", "gaussian_pr_nonconvex"):
        prod = math.sqrt(m) / math.sqrt(K * T)
        cap = 1.0 / (math.sqrt(m * T) * K**2.5)
        lam = (m * T) ** 0.25 * K ** -0.75
        conditions = {"smoothness_step": prod * K * L <= 1.0}
        return _finish("gaussian_pr_nonconvex", m, K, T, 2.0, 0.0, L, None, False, prod, cap, lam, conditions)
    if setting in ("strongly_convex", "gaussian_pr_strongly_convex"):
        _check_sc(mu, T, c)
        ln_t = math.log(T)
        # T^(1-c) <= 1/(mK)  <=>  (c - 1) ln T >= ln(mK)
        c, adjusted = _pick_c(c, [1 + math.log(m * K) / ln_t, m * K / ln_t], "gaussian_pr_strongly_convex")
        step = _sc_step(c, mu, m, K, T)
        conditions = {
            "c_condition": (c - 1) * ln_t >= math.log(m * K) - 1e-12,
            "step_lower_bound": step >= 2.0 / (mu * T) * (1 - 1e-12),
        }
        cap = (m * T) ** -0.5 * K ** -1.5
        return _finish("gaussian_pr_strongly_convex", m, K, T, 2.0, mu, L, c, adjusted, step / K,
                       cap, math.sqrt(m * K * T), conditions)
    raise ValueError(f"unknown gaussian setting {setting!r}")


def plan(setting: str, m: int, K: int, T: int, alpha: float = 2.0, mu: float = 1.0,
         c: float | None = None) -> SchedulePlan:
    """Dispatch on the setting name."""
    if setting == "pr_strongly_convex":
        return plan_pr_strongly_convex(mu, m, K, T, alpha, c)
    if setting == "pr_nonconvex":
        return plan_pr_nonconvex(m, K, T, alpha)
    if setting == "pi_strongly_convex":
        return plan_pi_strongly_convex(mu, m, K, T, alpha, c)
    if setting == "pi_nonconvex":
        return plan_pi_nonconvex(m, K, T, alpha)
    if setting in ("gaussian_pr_nonconvex", "gaussian_pr_strongly_convex"):
        return plan_gaussian_pr(m, K, T, setting, mu, c)
    raise ValueError(f"unknown schedule setting {setting!r}; expected one of {SETTINGS}")


# -- rate exponents -----------------------------------------------------------


def _exponents(setting: str, alpha: float, metric: str) -> tuple[float, float, str]:
    """(exponent on the rate variable, exponent on K, rate variable)."""
    if metric not in ("squared", "table1"):
        raise ValueError(f"metric must be 'squared' or 'table1', got {metric!r}")
    if setting == "gaussian_pr_strongly_convex":
        return -1.0, -1.0, "mKT"
    if setting == "gaussian_pr_nonconvex":
        e = -0.5 if metric == "squared" else -0.25
        return e, e, "mKT"
    alpha = _check_alpha(alpha)
    d = 3 * alpha - 2
    if setting == "pr_strongly_convex":
        return (2 - 2 * alpha) / alpha, 2 / alpha, "mT"
    if setting == "pi_strongly_convex":
        e = (2 - 2 * alpha) / alpha
        return e, e, "mKT"
    # nonconvex rates bound the squared gradient; the table reports ||grad|| (half the exponent)
    half = 0.5 if metric == "table1" else 1.0
    if setting == "pr_nonconvex":
        return half * (2 - 2 * alpha) / d, half * (4 - 2 * alpha) / d, "mT"
    if setting == "pi_nonconvex":
        e = half * (2 - 2 * alpha) / d
        return e, e, "mKT"
    raise ValueError(f"unknown schedule setting {setting!r}; expected one of {SETTINGS}")


def rate_exponent(setting: str, alpha: float, metric: str = "squared") -> float:
    """Theoretical exponent of the error bound in its rate variable (mT or mKT)."""
    return _exponents(setting, alpha, metric)[0]


def lower_bound_exponent(strongly_convex: bool, alpha: float, metric: str = "squared") -> float:
    """Exponent of the Omega((mKT)^e) lower bound for any algorithm."""
    alpha = _check_alpha(alpha)
    if strongly_convex:
        return (2 - 2 * alpha) / alpha
    e = (2 - 2 * alpha) / (3 * alpha - 2)
    return e if metric == "squared" else 0.5 * e
