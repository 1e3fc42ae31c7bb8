"""Independent brute-force estimators and closed forms used for verification.

Everything here deliberately avoids the solver machinery: oracles are either
closed-form expressions or fresh Monte Carlo simulations so they can serve
as one side of a dual-route check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats


@dataclass
class OracleValue:
    name: str
    value: float
    stderr: float


def entropic_gaussian_exact(sigma: float) -> float:
    """``ln E[exp(X)]`` for ``X ~ N(0, sigma^2)``."""
    return 0.5 * sigma * sigma


def folded_gaussian_moment_exact(sigma: float, gamma: float = 1.0) -> float:
    """``E[exp(gamma |X|)]`` for ``X ~ N(0, sigma^2)``."""
    s = gamma * sigma
    return 2.0 * math.exp(0.5 * s * s) * stats.norm.cdf(s)


def huber_envelope_exact(n: float, y: float) -> float:
    """``min_r [r^2 + n |r - y|]``: the square below ``|y| <= n/2``, linear
    continuation ``n|y| - n^2/4`` beyond."""
    if abs(y) <= 0.5 * n:
        return y * y
    return n * abs(y) - 0.25 * n * n


def huber_envelope_grid(n: float, y: float, lo: float = -5.0, hi: float = 5.0,
                        n_points: int = 10001) -> float:
    """Brute-force grid minimization cross-check of the square's envelope."""
    grid = np.linspace(lo, hi, n_points)
    return float(np.min(grid * grid + n * np.abs(grid - y)))


def exp1_reference(x: float) -> float:
    """Exponential integral ``int_x^inf exp(-e)/e de`` with adaptive
    integration cross-check."""
    series = float(special.exp1(x))
    quad_val, _ = integrate.quad(lambda e: math.exp(-e) / e, x, np.inf, limit=200)
    if abs(series - quad_val) > 1e-8 * (1.0 + abs(series)):
        raise RuntimeError("exponential-integral references disagree")
    return series


def stable_tail_mass_exact(theta: float, alpha: float, cut: float) -> float:
    """Two-sided mass of ``theta |e|^(-1-alpha)`` beyond ``|e| >= cut``."""
    return 2.0 * theta * cut ** (-alpha) / alpha


def stable_small_jump_second_moment(theta: float, alpha: float, cut: float) -> float:
    """``int_{|e| < cut} e^2 theta |e|^(-1-alpha) de`` (both sides)."""
    return 2.0 * theta * cut ** (2.0 - alpha) / (2.0 - alpha)


def girsanov_tilt_exact(b: float, c_tilde: float, mass: float, t_end: float,
                        x0: float = 0.0, impact: float = 1.0) -> float:
    """Tilted-measure expectation of the compensated forward state for the
    linear generator ``b z + c_tilde * int u dnu``: drift ``b`` plus the
    intensity tilt acting on the compensated jump sum."""
    return x0 + b * t_end + c_tilde * mass * impact * t_end


def girsanov_tilt_mc(b: float, c_tilde: float, mass: float, t_end: float,
                     x0: float = 0.0, impact: float = 1.0,
                     n_samples: int = 200000, seed: int = 0) -> OracleValue:
    """Fresh simulation under the tilted dynamics: Brownian drift ``b`` and
    jump intensity scaled by ``1 + c_tilde``; the payoff is the terminal
    state compensated at the original intensity."""
    rng = np.random.default_rng(seed)
    w_term = rng.normal(b * t_end, math.sqrt(t_end), n_samples)
    n_term = rng.poisson((1.0 + c_tilde) * mass * t_end, n_samples)
    xi = x0 + w_term + impact * n_term - impact * mass * t_end
    return OracleValue("girsanov_tilt",
                       float(xi.mean()),
                       float(xi.std(ddof=1) / math.sqrt(n_samples)))


def brownian_doleans_mc(t_end: float = 1.0, n_samples: int = 200000,
                        seed: int = 0) -> OracleValue:
    """Sample mean of ``exp(W_T - T/2)``; the lognormal mean is one."""
    rng = np.random.default_rng(seed)
    vals = np.exp(rng.normal(0.0, math.sqrt(t_end), n_samples) - 0.5 * t_end)
    return OracleValue("brownian_doleans", float(vals.mean()),
                       float(vals.std(ddof=1) / math.sqrt(n_samples)))


def compound_poisson_doleans_mc(u_value: float, mass: float, t_end: float = 1.0,
                                n_samples: int = 200000, seed: int = 0) -> OracleValue:
    """Sample mean of ``exp(u N_T - mass T (e^u - 1))`` for a Poisson count
    ``N_T`` with mean ``mass T``; exactly one in expectation."""
    rng = np.random.default_rng(seed)
    n_term = rng.poisson(mass * t_end, n_samples)
    vals = np.exp(u_value * n_term - mass * t_end * math.expm1(u_value))
    return OracleValue("compound_poisson_doleans", float(vals.mean()),
                       float(vals.std(ddof=1) / math.sqrt(n_samples)))


def entropic_gaussian_mc(sigma: float, direction: str = "upper",
                         n_samples: int = 200000, seed: int = 0) -> OracleValue:
    """Monte Carlo entropic value of a centered Gaussian payoff."""
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, sigma, n_samples)
    sign = 1.0 if direction == "upper" else -1.0
    vals = np.exp(sign * x)
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(n_samples)) / mean
    return OracleValue(f"entropic_gaussian_{direction}",
                       sign * math.log(mean), se)


def null_measure_oracle() -> OracleValue:
    """Every jump functional of the zero density vanishes."""
    return OracleValue("null_measure", 0.0, 0.0)


ORACLES = {
    "entropic_gaussian": lambda cfg: _entropic_from_cfg(cfg),
    "huber_envelope": lambda cfg: OracleValue(
        "huber_envelope",
        huber_envelope_exact(float(cfg.get("n", 2.0)), float(cfg.get("y", 3.0))),
        0.0),
    "girsanov_tilt": lambda cfg: girsanov_tilt_mc(
        float(cfg.get("b", 0.0)), float(cfg.get("c_tilde", 0.0)),
        float(cfg.get("mass", 1.0)), float(cfg.get("t_end", 1.0)),
        float(cfg.get("x0", 0.0)), float(cfg.get("impact", 1.0)),
        int(cfg.get("n_samples", 200000)), int(cfg.get("seed", 0))),
    "brownian_doleans": lambda cfg: brownian_doleans_mc(
        float(cfg.get("t_end", 1.0)), int(cfg.get("n_samples", 200000)),
        int(cfg.get("seed", 0))),
    "compound_poisson_doleans": lambda cfg: compound_poisson_doleans_mc(
        float(cfg.get("u", 0.3)), float(cfg.get("mass", 2.0)),
        float(cfg.get("t_end", 1.0)), int(cfg.get("n_samples", 200000)),
        int(cfg.get("seed", 0))),
    "null_measure": lambda cfg: null_measure_oracle(),
}


def _entropic_from_cfg(cfg) -> OracleValue:
    sigma = float(cfg.get("sigma", 1.0))
    direction = cfg.get("direction", "upper")
    val = entropic_gaussian_mc(sigma, direction,
                               int(cfg.get("n_samples", 200000)),
                               int(cfg.get("seed", 0)))
    return OracleValue(val.name, val.value, val.stderr)


def evaluate_oracle(name: str, cfg: dict) -> OracleValue:
    if name not in ORACLES:
        raise KeyError(f"unknown oracle '{name}'; choose from {sorted(ORACLES)}")
    return ORACLES[name](cfg)
