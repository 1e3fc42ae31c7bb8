"""Jump-measure models, truncation quadratures, and compound-Poisson sampling.

A jump measure is specified by an intensity density ``ell(e)`` on the mark
space E = R \\ {0} together with a bounded modulation factor ``zeta(t, e)``:
the expected number of jumps with marks in ``de`` during ``dt`` is
``zeta(t, e) * ell(e) de dt``.  Infinite-activity densities blow up near the
origin; truncating to ``|e| >= 1/kappa`` leaves a finite measure that can be
simulated as a marked Poisson stream and integrated on a fixed node grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

# Overflow guard for exp-based jump functionals, in natural-log units.
EXP_CAP = 700.0

_QUAD_OPTS = dict(limit=200, epsabs=1e-13, epsrel=1e-11)


class DivergentMassError(ValueError):
    """Truncated measure has non-finite total mass (misconfigured density)."""


class ExponentOverflowError(OverflowError):
    """An exponential jump functional would overflow the float range."""


def _tail_quad(f: Callable[[float], float], a: float) -> float:
    """Adaptive integral of ``f`` over ``[a, inf)`` via the map ``x = a/s``,
    which keeps slowly decaying tails accurate."""
    if a <= 0:
        raise ValueError("tail integrals need a positive inner edge")
    with warnings.catch_warnings():
        # divergent tails make quad complain before the doubling search
        # raises DivergentMassError; the warning adds nothing
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(lambda s: f(a / s) * a / (s * s), 0.0, 1.0,
                                **_QUAD_OPTS)
    return val


def constant_zeta(value: float = 1.0) -> Callable[[float, np.ndarray], np.ndarray]:
    """Time- and mark-independent modulation factor."""

    def zeta(t: float, e: np.ndarray) -> np.ndarray:
        return np.full_like(np.asarray(e, dtype=float), value)

    return zeta


@dataclass(frozen=True)
class LevyModel:
    """Intensity density with modulation bound and activity metadata.

    Parameters
    ----------
    density : callable
        ``ell(|e|) >= 0`` evaluated on positive marks; symmetric models reuse
        it on the mirrored negative side.
    zeta : callable
        ``zeta(t, e)`` in ``[0, c_nu]``.
    c_nu : float
        Uniform bound on ``zeta``.
    family_tag : str
        Preset name ("gamma", "stable", "normal", "null").
    support : str
        "positive" or "symmetric".
    infinite_activity : bool
        Whether the density mass diverges near the origin.
    """

    density: Callable[[np.ndarray], np.ndarray]
    zeta: Callable[[float, np.ndarray], np.ndarray]
    c_nu: float
    family_tag: str
    support: str
    infinite_activity: bool
    params: dict = field(default_factory=dict)

    def density_at(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        return np.asarray(self.density(np.abs(e)), dtype=float)

    def zeta_at(self, t: float, e) -> np.ndarray:
        z = np.asarray(self.zeta(t, np.asarray(e, dtype=float)), dtype=float)
        if z.size and (z.min() < -1e-12 or z.max() > self.c_nu + 1e-12):
            raise ValueError("zeta left the band [0, c_nu]")
        return z

    def mass_between(self, a: float, b: float) -> float:
        """Density mass of one side of the mark space over ``[a, b]``."""
        if a >= b:
            return 0.0
        val, _ = integrate.quad(lambda x: float(self.density(np.array(x))), a, b, **_QUAD_OPTS)
        return val

    def tail_mass(self, a: float) -> float:
        """One-sided mass of ``{e >= a}``; infinite tails raise."""
        val = _tail_quad(lambda x: float(self.density(np.array(x))), a)
        if not math.isfinite(val):
            raise DivergentMassError(f"tail mass beyond {a} is not finite")
        return val

    @property
    def n_sides(self) -> int:
        return 2 if self.support == "symmetric" else 1


def gamma_model(theta: float = 1.0, beta: float = 1.0, c_nu: float = 1.0,
                zeta: Callable | None = None) -> LevyModel:
    """One-sided gamma-type density ``theta * exp(-beta e) / e`` on ``e > 0``."""

    def density(e):
        e = np.asarray(e, dtype=float)
        out = np.zeros_like(e)
        pos = e > 0
        out[pos] = theta * np.exp(-beta * e[pos]) / e[pos]
        return out

    return LevyModel(density, zeta or constant_zeta(), c_nu, "gamma", "positive",
                     True, dict(theta=theta, beta=beta))


def stable_model(theta: float = 1.0, alpha: float = 0.5, c_nu: float = 1.0,
                 zeta: Callable | None = None) -> LevyModel:
    """Symmetric stable-type density ``theta |e|^(-1-alpha)``, ``0 < alpha < 2``."""
    if not 0.0 < alpha < 2.0:
        raise ValueError("stable exponent must lie in (0, 2)")

    def density(e):
        e = np.asarray(e, dtype=float)
        out = np.zeros_like(e)
        pos = e > 0
        out[pos] = theta * e[pos] ** (-1.0 - alpha)
        return out

    return LevyModel(density, zeta or constant_zeta(), c_nu, "stable", "symmetric",
                     True, dict(theta=theta, alpha=alpha))


def normal_model(rate: float = 2.0, loc: float = 1.0, scale: float = 0.25,
                 c_nu: float = 1.0, zeta: Callable | None = None) -> LevyModel:
    """Finite-activity density: ``rate`` times a folded normal mark profile."""

    def density(e):
        e = np.asarray(e, dtype=float)
        z = (e - loc) / scale
        return rate * np.exp(-0.5 * z * z) / (scale * math.sqrt(2.0 * math.pi))

    return LevyModel(density, zeta or constant_zeta(), c_nu, "normal", "positive",
                     False, dict(rate=rate, loc=loc, scale=scale))


def null_model(c_nu: float = 1.0) -> LevyModel:
    """Zero density; every jump functional vanishes."""

    def density(e):
        return np.zeros_like(np.asarray(e, dtype=float))

    return LevyModel(density, constant_zeta(), c_nu, "null", "positive", False, {})


_MODEL_FACTORIES = {
    "gamma": gamma_model,
    "stable": stable_model,
    "normal": normal_model,
    "null": null_model,
}


def make_model(name: str, **params) -> LevyModel:
    if name not in _MODEL_FACTORIES:
        raise ValueError(f"unknown jump-measure preset '{name}'; "
                         f"choose from {sorted(_MODEL_FACTORIES)}")
    return _MODEL_FACTORIES[name](**params)


@dataclass(frozen=True)
class MarkQuadrature:
    """Node/weight discretization of the truncated measure on ``|e| >= 1/kappa``.

    ``cell_inner`` records each node's cell boundary closest to the origin,
    which makes exact sub-truncation possible when the finer cut levels were
    forced into the cell edges at build time.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kappa: float
    cell_inner: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "cell_inner", np.asarray(self.cell_inner, dtype=float))
        if self.weights.min(initial=0.0) < 0:
            raise ValueError("quadrature weights must be nonnegative")

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def zeta_at(self, model: LevyModel, t: float) -> np.ndarray:
        return model.zeta_at(t, self.nodes)

    def restrict_indices(self, kappa_sub: float) -> np.ndarray:
        """Indices of nodes whose whole cell lies in ``|e| >= 1/kappa_sub``."""
        if kappa_sub > self.kappa + 1e-12:
            raise ValueError("cannot restrict to a finer truncation than built")
        return np.nonzero(self.cell_inner >= 1.0 / kappa_sub - 1e-12)[0]

    def restrict(self, kappa_sub: float) -> "MarkQuadrature":
        idx = self.restrict_indices(kappa_sub)
        return MarkQuadrature(self.nodes[idx], self.weights[idx], kappa_sub,
                              self.cell_inner[idx])


@dataclass
class JumpField:
    """Jump integrand evaluated at the quadrature marks."""

    values: np.ndarray
    quad: MarkQuadrature

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-1] != self.quad.n_nodes:
            raise ValueError("field values are not aligned with the quadrature")

    def nu_norm(self, zeta: np.ndarray | None = None) -> float:
        return float(nu_norm(self.values, self.quad, zeta))


def _field_values(u) -> np.ndarray:
    if isinstance(u, JumpField):
        return u.values
    return np.asarray(u, dtype=float)


def nu_norm(u, quad: MarkQuadrature, zeta: np.ndarray | None = None) -> np.ndarray:
    """Weighted L2 norm ``sqrt(sum_i w_i zeta_i u_i^2)``; vectorized over rows."""
    vals = _field_values(u)
    wz = quad.weights if zeta is None else quad.weights * np.asarray(zeta, dtype=float)
    return np.sqrt(np.clip((vals * vals * wz).sum(axis=-1), 0.0, None))


def j_functional(u, delta: float, quad: MarkQuadrature,
                 zeta: np.ndarray | None = None) -> np.ndarray | float:
    """Exponential jump penalty ``sum_i w_i zeta_i (exp(delta u_i) - delta u_i - 1)``.

    Nonnegative for every field.  Raises :class:`ExponentOverflowError` when
    ``delta * max(u)`` exceeds the configured exponent cap instead of silently
    returning infinity.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    vals = _field_values(u)
    scaled = delta * vals
    if scaled.size and float(np.max(scaled)) > EXP_CAP:
        raise ExponentOverflowError(
            f"exponent {float(np.max(scaled)):.3g} exceeds cap {EXP_CAP:g}")
    wz = quad.weights if zeta is None else quad.weights * np.asarray(zeta, dtype=float)
    integrand = np.expm1(scaled) - scaled
    out = (integrand * wz).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _side_edges(model: LevyModel, lo: float, q_nodes: int,
                cut_levels: Sequence[float]) -> np.ndarray:
    """Geometric cell edges on ``[lo, hi]`` with forced cut levels inserted."""
    total = model.tail_mass(lo)
    if total <= 0.0:
        hi = lo * 16.0
    else:
        hi = max(2.0 * lo, 1.0)
        for _ in range(300):
            if model.tail_mass(hi) <= 1e-6 * total:
                break
            hi *= 2.0
        else:
            raise DivergentMassError("tail mass does not decay; cannot truncate")
    edges = np.geomspace(lo, hi, q_nodes + 1)
    cuts = [c for c in cut_levels if lo + 1e-12 < c < hi - 1e-12]
    if cuts:
        edges = np.unique(np.concatenate([edges, np.asarray(cuts, dtype=float)]))
        # snap near-duplicates of the forced cuts onto the exact cut value
        for c in cuts:
            edges = edges[np.abs(edges - c) > 1e-9 * max(c, 1.0)]
        edges = np.sort(np.concatenate([edges, np.asarray(cuts, dtype=float)]))
    return edges


def _side_cells(model: LevyModel, edges: np.ndarray):
    """Per-cell mass and centroid node; final cell integrates to infinity."""
    nodes, weights, inner = [], [], []
    for a, b in zip(edges[:-1], edges[1:]):
        w = model.mass_between(a, b)
        if w > 0:
            m1, _ = integrate.quad(lambda x: x * float(model.density(np.array(x))),
                                   a, b, **_QUAD_OPTS)
            node = min(max(m1 / w, a), b)
        else:
            node = 0.5 * (a + b)
        nodes.append(node)
        weights.append(max(w, 0.0))
        inner.append(a)
    # residual beyond the last edge, anchored at the edge itself
    w_tail = model.tail_mass(edges[-1])
    nodes.append(edges[-1])
    weights.append(max(w_tail, 0.0))
    inner.append(edges[-1])
    return np.asarray(nodes), np.asarray(weights), np.asarray(inner)


def build_quadrature(model: LevyModel, kappa: float, q_nodes: int,
                     cut_levels: Sequence[float] = ()) -> MarkQuadrature:
    """Discretize the truncated measure on ``|e| >= 1/kappa``.

    Cells are geometric between ``1/kappa`` and an adaptively chosen outer
    edge holding all but a 1e-6 fraction of the truncated mass; the residual
    outer tail keeps its exact mass on a node at the edge.  ``cut_levels``
    forces additional cell boundaries (used to align cells with coarser
    truncation levels so restriction is exact).
    """
    if kappa < 1.0:
        raise ValueError("truncation level must satisfy kappa >= 1")
    if q_nodes < 2:
        raise ValueError("need at least two quadrature cells")
    lo = 1.0 / kappa
    edges = _side_edges(model, lo, q_nodes, cut_levels)
    nodes, weights, inner = _side_cells(model, edges)
    if model.support == "symmetric":
        nodes = np.concatenate([-nodes[::-1], nodes])
        weights = np.concatenate([weights[::-1], weights])
        inner = np.concatenate([inner[::-1], inner])
    total = float(weights.sum())
    if not math.isfinite(total):
        raise DivergentMassError("truncated measure has non-finite mass")
    return MarkQuadrature(nodes, weights, kappa, inner)


def truncated_mass_reference(model: LevyModel, kappa: float) -> float:
    """Adaptive-integration reference for the truncated total mass."""
    return model.n_sides * model.tail_mass(1.0 / kappa)


def small_jump_residual(model: LevyModel, kappa: float) -> float:
    """Second-moment mass of the dropped small jumps, ``int_{|e|<1/kappa} e^2 ell``."""
    if kappa < 1.0:
        raise ValueError("truncation level must satisfy kappa >= 1")
    val, _ = integrate.quad(lambda x: x * x * float(model.density(np.array(x))),
                            0.0, 1.0 / kappa, **_QUAD_OPTS)
    return model.n_sides * max(val, 0.0)


@dataclass
class JumpTable:
    """Flat record of simulated jumps, sorted by interval index.

    Columns: owning path, interval ``(t_k, t_{k+1}]``, jump time, mark index
    into the quadrature nodes.
    """

    path_index: np.ndarray
    interval_index: np.ndarray
    time: np.ndarray
    mark_index: np.ndarray
    n_paths: int
    n_intervals: int
    n_nodes: int

    def __post_init__(self):
        order = np.argsort(self.interval_index, kind="stable")
        self.path_index = np.asarray(self.path_index)[order]
        self.interval_index = np.asarray(self.interval_index)[order]
        self.time = np.asarray(self.time, dtype=float)[order]
        self.mark_index = np.asarray(self.mark_index)[order]
        self._offsets = np.searchsorted(self.interval_index,
                                        np.arange(self.n_intervals + 1))

    @property
    def n_jumps(self) -> int:
        return self.path_index.size

    def rows_for_interval(self, k: int):
        sl = slice(self._offsets[k], self._offsets[k + 1])
        return self.path_index[sl], self.mark_index[sl]

    def counts_for_interval(self, k: int) -> np.ndarray:
        """Dense per-node jump counts over interval ``k``, shape (n_paths, Q)."""
        out = np.zeros((self.n_paths, self.n_nodes))
        paths, marks = self.rows_for_interval(k)
        np.add.at(out, (paths, marks), 1.0)
        return out

    def thin(self, keep_nodes: np.ndarray) -> "JumpTable":
        """Drop jumps whose mark index is not in ``keep_nodes`` (mark indices
        are re-labelled to the restricted node set)."""
        keep_nodes = np.asarray(keep_nodes)
        relabel = -np.ones(self.n_nodes, dtype=int)
        relabel[keep_nodes] = np.arange(keep_nodes.size)
        new_marks = relabel[self.mark_index]
        mask = new_marks >= 0
        return JumpTable(self.path_index[mask], self.interval_index[mask],
                         self.time[mask], new_marks[mask],
                         self.n_paths, self.n_intervals, keep_nodes.size)


def sample_jump_paths(model: LevyModel, quad: MarkQuadrature,
                      time_grid: np.ndarray, n_paths: int, seed: int) -> JumpTable:
    """Marked-Poisson jump stream on the truncated measure.

    Per interval the jump count is Poisson with mean ``sum_i w_i zeta_i dt``
    and marks are drawn proportionally to ``w_i zeta_i``.  A single
    counter-based generator keyed by ``seed`` makes the table reproducible.
    """
    time_grid = np.asarray(time_grid, dtype=float)
    if time_grid.ndim != 1 or time_grid.size < 2 or np.any(np.diff(time_grid) <= 0):
        raise ValueError("time grid must be strictly increasing with >= 2 points")
    rng = np.random.Generator(np.random.Philox(seed))
    n_int = time_grid.size - 1
    paths, intervals, times, marks = [], [], [], []
    for k in range(n_int):
        t0, t1 = time_grid[k], time_grid[k + 1]
        wz = quad.weights * quad.zeta_at(model, t0)
        lam = float(wz.sum())
        if lam <= 0.0:
            continue
        counts = rng.poisson(lam * (t1 - t0), size=n_paths)
        total = int(counts.sum())
        if total == 0:
            continue
        paths.append(np.repeat(np.arange(n_paths), counts))
        intervals.append(np.full(total, k, dtype=int))
        times.append(t0 + rng.random(total) * (t1 - t0))
        marks.append(rng.choice(quad.n_nodes, size=total, p=wz / lam))
    cat = (lambda parts, dt: np.concatenate(parts) if parts
           else np.empty(0, dtype=dt))
    return JumpTable(cat(paths, int), cat(intervals, int), cat(times, float),
                     cat(marks, int), n_paths, n_int, quad.n_nodes)
