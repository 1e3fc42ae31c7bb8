"""Quadratic-exponential generators, structure bounds, and Lipschitz envelopes.

A generator splits as ``f(t, y, z, u) = f_hat(t, y, z) + int g(t, u(e)) nu(de)``
and is pinned between the exponential-quadratic corridor bounds built from the
jump penalty :func:`qebsdej.levy.j_functional`.  Regularization replaces each
signed part of ``f`` with its Lipschitz lower envelope over a finite candidate
grid, yielding generators that are globally Lipschitz in ``(y, z)``, monotone
in the regularization indices, and still inside the corridor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .levy import (ExponentOverflowError, EXP_CAP, MarkQuadrature,
                   j_functional, _field_values)


@dataclass(frozen=True)
class StructureParams:
    """Corridor coefficients: quadratic scale and running cost integrals.

    ``l`` and ``c`` are deterministic nonnegative functions of time;
    ``Lambda(t) = int_0^t l`` and ``C(t) = int_0^t c`` are their primitives.
    """

    delta: float
    l: Callable[[float], float]
    c: Callable[[float], float]
    Lambda: Callable[[float], float]
    C: Callable[[float], float]

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    def c_between(self, s: float, t: float) -> float:
        if t < s:
            raise ValueError("need s <= t")
        return self.C(t) - self.C(s)

    @staticmethod
    def from_constants(delta: float, l0: float = 0.0, c0: float = 0.0) -> "StructureParams":
        if l0 < 0 or c0 < 0:
            raise ValueError("running costs must be nonnegative")
        return StructureParams(delta, lambda t: l0, lambda t: c0,
                               lambda t: l0 * t, lambda t: c0 * t)


@dataclass(frozen=True)
class Driver:
    """Generator with Becherer-type split and structure metadata.

    ``f_hat(t, y, z)`` takes ``y`` of shape (...,) and ``z`` of shape (..., d);
    ``g(t, v)`` applies pointwise to mark values.  ``nonnegative`` marks
    generators known to satisfy ``f >= 0`` everywhere (their negative part is
    identically zero), which unlocks a fast separable envelope.  ``lip_yz``
    is a declared Lipschitz constant of ``f_hat`` in ``(y, z)`` when finite.
    """

    name: str
    f_hat: Callable
    g: Callable
    params: StructureParams
    nonnegative: bool = False
    depends_on_y: bool = False
    lip_y: float = math.inf
    lip_yz: float = math.inf
    g_lip_factor: float = math.inf  # sup |g'| over the working mark-value range
    meta: dict = field(default_factory=dict)

    def jump_part(self, t: float, u, quad: MarkQuadrature,
                  zeta: np.ndarray | None = None) -> np.ndarray:
        vals = _field_values(u)
        wz = quad.weights if zeta is None else quad.weights * zeta
        gv = self.g(t, vals)
        if not np.all(np.isfinite(gv)):
            raise ExponentOverflowError("jump integrand overflowed; reduce the field")
        out = (gv * wz).sum(axis=-1)
        return out

    def evaluate(self, t: float, y, z, u, quad: MarkQuadrature,
                 zeta: np.ndarray | None = None) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.ndim == y.ndim:
            z = z[..., None]
        return self.f_hat(t, y, z) + self.jump_part(t, u, quad, zeta)

    def at_quadrature(self, quad: MarkQuadrature, zeta: np.ndarray | None = None,
                      node_idx: np.ndarray | None = None) -> "DriverView":
        return DriverView(self, quad, zeta, node_idx)


@dataclass
class DriverView:
    """A driver bound to a quadrature (optionally a restricted node subset).

    ``evaluate`` accepts jump fields on the *master* node set and slices the
    subset itself, so solutions living on a fine grid can be fed to coarser
    truncations unchanged.
    """

    driver: Driver
    quad: MarkQuadrature
    zeta: np.ndarray | None = None
    node_idx: np.ndarray | None = None

    def __post_init__(self):
        if self.node_idx is not None:
            self.sub_quad = MarkQuadrature(
                self.quad.nodes[self.node_idx], self.quad.weights[self.node_idx],
                self.quad.kappa, self.quad.cell_inner[self.node_idx])
            self.sub_zeta = None if self.zeta is None else self.zeta[self.node_idx]
        else:
            self.sub_quad = self.quad
            self.sub_zeta = self.zeta

    @property
    def lip_y(self) -> float:
        return self.driver.lip_y

    def _slice(self, u) -> np.ndarray:
        vals = _field_values(u)
        if self.node_idx is not None:
            vals = vals[..., self.node_idx]
        return vals

    def evaluate(self, t: float, y, z, u) -> np.ndarray:
        return self.driver.evaluate(t, y, z, self._slice(u), self.sub_quad, self.sub_zeta)


def make_driver(name: str, structure: StructureParams, quad_mass_hint: float | None = None,
                **p) -> Driver:
    """Driver presets.

    canonical
        ``(delta/2)|z|^2 + (1/delta) * j(delta u)``; nonnegative, no y term.
    linear
        ``a*y + b.z + c_tilde * int u dnu``; globally Lipschitz.
    morlais
        canonical minus ``beta * |y|``.
    zero
        the null generator.
    """
    delta = structure.delta
    if name == "canonical":
        def f_hat(t, y, z):
            return 0.5 * delta * (np.asarray(z) ** 2).sum(axis=-1)

        def g(t, v):
            v = np.asarray(v, dtype=float)
            dv = delta * v
            if dv.size and float(np.max(dv)) > EXP_CAP:
                raise ExponentOverflowError("exponent cap exceeded in jump integrand")
            return (np.expm1(dv) - dv) / delta

        return Driver(name, f_hat, g, structure, nonnegative=True,
                      depends_on_y=False, lip_y=0.0, g_lip_factor=math.inf)
    if name == "linear":
        a = float(p.get("a", 0.0))
        b = float(p.get("b", 0.0))
        c_tilde = float(p.get("c_tilde", 0.0))
        if abs(c_tilde) >= 1.0:
            raise ValueError("linear jump loading must satisfy |c_tilde| < 1")

        def f_hat(t, y, z):
            return a * np.asarray(y, dtype=float) + b * np.asarray(z).sum(axis=-1)

        def g(t, v):
            return c_tilde * np.asarray(v, dtype=float)

        mass = quad_mass_hint if quad_mass_hint is not None else 1.0
        return Driver(name, f_hat, g, structure, nonnegative=False,
                      depends_on_y=abs(a) > 0, lip_y=abs(a),
                      lip_yz=max(abs(a), abs(b)),
                      g_lip_factor=abs(c_tilde),
                      meta=dict(a=a, b=b, c_tilde=c_tilde))
    if name == "morlais":
        beta = float(p.get("beta", 0.0))
        base = make_driver("canonical", structure)

        def f_hat(t, y, z):
            return base.f_hat(t, y, z) - beta * np.abs(np.asarray(y, dtype=float))

        return Driver(name, f_hat, base.g, structure, nonnegative=False,
                      depends_on_y=beta > 0, lip_y=beta, meta=dict(beta=beta))
    if name == "zero":
        def f_hat(t, y, z):
            return np.zeros(np.broadcast(np.asarray(y), np.asarray(z).sum(axis=-1)).shape)

        def g(t, v):
            return np.zeros_like(np.asarray(v, dtype=float))

        return Driver(name, f_hat, g, structure, nonnegative=True,
                      depends_on_y=False, lip_y=0.0, lip_yz=0.0, g_lip_factor=0.0)
    raise ValueError(f"unknown driver preset '{name}'")


# ---------------------------------------------------------------------------
# corridor bounds
# ---------------------------------------------------------------------------

def structure_bounds(t: float, y, z, u, params: StructureParams,
                     quad: MarkQuadrature, zeta: np.ndarray | None = None):
    """Two-sided corridor ``(q_lower, q_upper)`` at a point.

    ``q_upper = (1/delta) j(delta u) + (delta/2)|z|^2 + l_t + c_t |y|`` and
    ``q_lower`` is its mirror with ``j(-delta u)``.
    """
    d = params.delta
    y = np.asarray(y, dtype=float)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.ndim == y.ndim:
        z = z[..., None]
    zz = 0.5 * d * (z ** 2).sum(axis=-1)
    base = params.l(t) + params.c(t) * np.abs(y)
    j_up = j_functional(u, d, quad, zeta) / d
    j_dn = j_functional(-_field_values(u), d, quad, zeta) / d
    return -(j_dn + zz + base), (j_up + zz + base)


@dataclass
class StructureReport:
    n_probes: int
    n_violations: int
    worst_gap: float
    violations: list

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def check_structure(driver: Driver, probes: Sequence, quad: MarkQuadrature,
                    zeta: np.ndarray | None = None) -> StructureReport:
    """Probe the corridor membership of a driver.

    ``probes`` is a sequence of ``(t, y, z, u_values)`` tuples.  A probe fails
    when ``f`` leaves ``[q_lower - tol, q_upper + tol]`` with
    ``tol = 1e-9 * (1 + |q_upper|)``.  Violations are data, not errors.
    """
    bad, worst = [], 0.0
    for t, y, z, u in probes:
        q_lo, q_hi = structure_bounds(t, y, z, u, driver.params, quad, zeta)
        val = float(driver.evaluate(t, y, z, u, quad, zeta))
        tol = 1e-9 * (1.0 + abs(float(q_hi)))
        gap = max(float(q_lo) - val, val - float(q_hi))
        if gap > tol:
            bad.append((t, float(y), val, float(q_lo), float(q_hi)))
            worst = max(worst, gap)
    return StructureReport(len(list(probes)), len(bad), worst, bad)


# ---------------------------------------------------------------------------
# envelopes
# ---------------------------------------------------------------------------

def _coordinate_distance(candidates: np.ndarray, point: np.ndarray,
                         nu_weights: np.ndarray | None) -> np.ndarray:
    """Mixed distance: L1 over plain coordinates, weighted-L2 block over the
    coordinates carrying a positive ``nu_weights`` entry."""
    diff = candidates - point[None, :]
    if nu_weights is None:
        return np.abs(diff).sum(axis=1)
    nu_weights = np.asarray(nu_weights, dtype=float)
    l1 = np.abs(diff[:, nu_weights <= 0]).sum(axis=1)
    wblock = nu_weights[nu_weights > 0]
    l2 = np.sqrt((diff[:, nu_weights > 0] ** 2 * wblock).sum(axis=1))
    return l1 + l2


def _as_candidate_matrix(candidate_grid) -> np.ndarray:
    c = np.asarray(candidate_grid, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    return c


def inf_convolve(phi: Callable, n: float, point, candidate_grid,
                 nu_weights: np.ndarray | None = None) -> float:
    """Lipschitz lower envelope ``min_c [phi(c) + n * dist(c, point)]``.

    The query point joins the candidate set, so the value never exceeds
    ``phi(point)``.  Coordinates with a positive ``nu_weights`` entry are
    measured in the weighted-L2 mark norm, the rest in L1.
    """
    cands = _as_candidate_matrix(candidate_grid)
    if cands.size == 0:
        raise ValueError("candidate grid is empty")
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    vals = np.asarray([float(phi(c if c.size > 1 else float(c[0]))) for c in cands])
    dist = _coordinate_distance(cands, pt, nu_weights)
    grid_min = float(np.min(vals + n * dist))
    return min(grid_min, float(phi(pt if pt.size > 1 else float(pt[0]))))


def sup_convolve(phi: Callable, m: float, point, candidate_grid,
                 nu_weights: np.ndarray | None = None) -> float:
    """Upper envelope ``max_c [phi(c) - m * dist(c, point)]``, at least
    ``phi(point)``.  Mirror of :func:`inf_convolve` with a subtracted
    penalty (an added penalty inside a supremum would be unbounded)."""
    cands = _as_candidate_matrix(candidate_grid)
    if cands.size == 0:
        raise ValueError("candidate grid is empty")
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    vals = np.asarray([float(phi(c if c.size > 1 else float(c[0]))) for c in cands])
    dist = _coordinate_distance(cands, pt, nu_weights)
    grid_max = float(np.max(vals - m * dist))
    return max(grid_max, float(phi(pt if pt.size > 1 else float(pt[0]))))


def _running_min_envelope(cand_vals: np.ndarray, cand_coord: np.ndarray,
                          points: np.ndarray, n: float) -> np.ndarray:
    """Exact 1-d envelope ``min_g [val_g + n |coord_g - x|]`` on a sorted
    candidate grid, via the two-sided running-minimum distance transform."""
    left_key = np.minimum.accumulate(cand_vals - n * cand_coord)
    right_key = np.minimum.accumulate((cand_vals + n * cand_coord)[::-1])[::-1]
    idx = np.searchsorted(cand_coord, points, side="right")
    out = np.full(points.shape, np.inf)
    has_left = idx > 0
    out[has_left] = left_key[idx[has_left] - 1] + n * points[has_left]
    has_right = idx < cand_coord.size
    np.minimum(out, np.where(has_right,
                             right_key[np.minimum(idx, cand_coord.size - 1)]
                             - n * points, np.inf), out=out)
    return out


@dataclass
class EnvelopeGrids:
    """Immutable candidate grids used by the regularized evaluation."""

    y: np.ndarray
    z: np.ndarray
    v: np.ndarray

    @staticmethod
    def default(y_range=(-10.0, 10.0), z_range=(-10.0, 10.0), v_range=(-4.0, 4.0),
                n_yz: int = 2001, n_v: int = 161) -> "EnvelopeGrids":
        return EnvelopeGrids(np.linspace(*y_range, n_yz),
                             np.linspace(*z_range, n_yz),
                             np.linspace(*v_range, n_v))


class NotRegularizableError(ValueError):
    """Requested regularization strategy cannot handle the driver shape."""


@dataclass
class RegularizedDriver:
    """Lipschitz approximation ``f_+ envelope(n) - f_- envelope(m)`` on a
    truncated quadrature.

    Both signed parts are regularized with Lipschitz lower envelopes, which
    keeps the composite nondecreasing in ``n`` and the truncation level,
    nonincreasing in ``m``, and exactly inside the structure corridor at every
    probe.  Three evaluation strategies are selected at build time:

    ``nonnegative``
        the negative part is identically zero and the envelope separates into
        a ``(y, z)`` part and a constant-field mark part (fast, used in solves);
    ``lipschitz_exact``
        the driver is globally Lipschitz with constant at most ``min(n, m)``,
        so both envelopes reproduce the parts exactly;
    ``generic``
        joint minimization over a ``(y, z, v)`` product grid (probe scale).
    """

    base: Driver
    n: float
    m: float
    quad: MarkQuadrature          # master quadrature
    node_idx: np.ndarray          # truncation subset into the master nodes
    zeta: np.ndarray | None = None
    grids: EnvelopeGrids = field(default_factory=EnvelopeGrids.default)
    strategy: str = "auto"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("regularization indices must be >= 1")
        self.node_idx = np.asarray(self.node_idx, dtype=int)
        self.sub_quad = MarkQuadrature(
            self.quad.nodes[self.node_idx], self.quad.weights[self.node_idx],
            self.quad.kappa, self.quad.cell_inner[self.node_idx])
        self.sub_zeta = None if self.zeta is None else np.asarray(self.zeta)[self.node_idx]
        self._wz = (self.sub_quad.weights if self.sub_zeta is None
                    else self.sub_quad.weights * self.sub_zeta)
        self._mass = float(self._wz.sum())
        if self.strategy == "auto":
            if self.base.nonnegative:
                self.strategy = "nonnegative"
            elif (math.isfinite(self.base.lip_yz)
                  and min(self.n, self.m) >= self._lip_needed()):
                self.strategy = "lipschitz_exact"
            else:
                self.strategy = "generic"

    def _lip_needed(self) -> float:
        # mark part measured in the weighted-L2 norm via Cauchy-Schwarz
        g_lip = self.base.g_lip_factor
        u_lip = g_lip * math.sqrt(self._mass) if math.isfinite(g_lip) else math.inf
        return max(self.base.lip_yz, u_lip)

    @property
    def lip_y(self) -> float:
        if not self.base.depends_on_y:
            return 0.0
        if self.strategy == "lipschitz_exact":
            return self.base.lip_y
        return self.n + (0.0 if self.strategy == "nonnegative" else self.m)

    def _slice_u(self, u) -> np.ndarray:
        vals = _field_values(u)
        return vals[..., self.node_idx]

    # -- separable pieces (nonnegative strategy) ---------------------------

    def _fhat_envelope(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        query = self.base.f_hat(t, y, z)
        if z.shape[-1] != 1:
            raise NotRegularizableError("separable envelope needs a scalar noise "
                                        "dimension; use the generic strategy")
        zflat = z[..., 0]
        if self.base.depends_on_y:
            yc, zc = np.meshgrid(self.grids.y[::8], self.grids.z[::8], indexing="ij")
            cv = self.base.f_hat(t, yc.ravel(), zc.ravel()[:, None]).ravel()
            out = np.full(query.shape, np.inf)
            for start in range(0, cv.size, 512):
                sl = slice(start, start + 512)
                d = (np.abs(yc.ravel()[sl][None, :] - y[:, None])
                     + np.abs(zc.ravel()[sl][None, :] - zflat[:, None]))
                np.minimum(out, (cv[sl][None, :] + self.n * d).min(axis=1), out=out)
        else:
            cv = self.base.f_hat(t, np.zeros_like(self.grids.z), self.grids.z[:, None])
            out = _running_min_envelope(cv, self.grids.z, zflat, self.n)
        return np.minimum(out, query)

    def _jump_envelope(self, t: float, u_sub: np.ndarray, n: float) -> np.ndarray:
        """Constant-candidate envelope of the mark integral in the nu-norm."""
        wz = self._wz
        query = (self.base.g(t, u_sub) * wz).sum(axis=-1)
        if self._mass <= 0:
            return query
        s1 = (u_sub * wz).sum(axis=-1)
        s2 = (u_sub * u_sub * wz).sum(axis=-1)
        out = np.full(query.shape, np.inf)
        for start in range(0, self.grids.v.size, 32):
            v = self.grids.v[start:start + 32][:, None]
            gval = self.base.g(t, v[:, 0])[:, None] * self._mass
            dist = np.sqrt(np.clip(self._mass * v * v - 2.0 * v * s1[None, :]
                                   + s2[None, :], 0.0, None))
            np.minimum(out, (gval + n * dist).min(axis=0), out=out)
        return np.minimum(out, query)

    # -- generic joint envelope (probe scale) ------------------------------

    def _joint_candidates(self, t: float):
        yg = self.grids.y[:: max(1, self.grids.y.size // 25)]
        zg = self.grids.z[:: max(1, self.grids.z.size // 25)]
        vg = self.grids.v[:: max(1, self.grids.v.size // 11)]
        yy, zz, vv = np.meshgrid(yg, zg, vg, indexing="ij")
        yy, zz, vv = yy.ravel(), zz.ravel(), vv.ravel()
        fv = (self.base.f_hat(t, yy, zz[:, None])
              + self.base.g(t, vv) * self._mass)
        return yy, zz, vv, fv

    def _generic_eval(self, t: float, y: np.ndarray, z: np.ndarray,
                      u_sub: np.ndarray) -> np.ndarray:
        if z.shape[-1] != 1:
            raise NotRegularizableError("generic envelope supports d = 1 only")
        yy, zz, vv, fv = self._joint_candidates(t)
        fp_c, fm_c = np.maximum(fv, 0.0), np.maximum(-fv, 0.0)
        wz = self._wz
        s1 = (u_sub * wz).sum(axis=-1)
        s2 = (u_sub * u_sub * wz).sum(axis=-1)
        fq = self.base.f_hat(t, y, z) + (self.base.g(t, u_sub) * wz).sum(axis=-1)
        env_p = np.maximum(fq, 0.0)
        env_m = np.maximum(-fq, 0.0)
        zflat = z[..., 0]
        for start in range(0, fv.size, 512):
            sl = slice(start, start + 512)
            d_yz = (np.abs(yy[sl][None, :] - y[:, None])
                    + np.abs(zz[sl][None, :] - zflat[:, None]))
            d_u = np.sqrt(np.clip(self._mass * vv[sl][None, :] ** 2
                                  - 2.0 * vv[sl][None, :] * s1[:, None]
                                  + s2[:, None], 0.0, None))
            dist = d_yz + d_u
            np.minimum(env_p, (fp_c[sl][None, :] + self.n * dist).min(axis=1), out=env_p)
            np.minimum(env_m, (fm_c[sl][None, :] + self.m * dist).min(axis=1), out=env_m)
        return env_p - env_m

    # -----------------------------------------------------------------------

    def evaluate(self, t: float, y, z, u) -> np.ndarray:
        """Regularized generator at ``(t, y, z, u)``; vectorized over rows.

        ``u`` carries values on the master node set and is truncated here.
        """
        y = np.atleast_1d(np.asarray(y, dtype=float))
        z = np.asarray(z, dtype=float)
        if z.ndim <= y.ndim:
            z = np.atleast_1d(z)[..., None] if z.ndim == y.ndim else z.reshape(y.shape + (1,))
        u_sub = np.atleast_2d(self._slice_u(u))
        if self.strategy == "lipschitz_exact":
            return self.base.f_hat(t, y, z) + (self.base.g(t, u_sub) * self._wz).sum(axis=-1)
        if self.strategy == "nonnegative":
            return self._fhat_envelope(t, y, z) + self._jump_envelope(t, u_sub, self.n)
        return self._generic_eval(t, y, z, u_sub)


def regularize(base: Driver, n: float, m: float, quad: MarkQuadrature,
               node_idx: np.ndarray | None = None,
               zeta: np.ndarray | None = None,
               grids: EnvelopeGrids | None = None,
               strategy: str = "auto") -> RegularizedDriver:
    """Build the Lipschitz approximation of ``base`` at indices ``(n, m)`` on
    the (optionally truncated) quadrature."""
    if node_idx is None:
        node_idx = np.arange(quad.n_nodes)
    return RegularizedDriver(base, float(n), float(m), quad, node_idx, zeta,
                             grids or EnvelopeGrids.default(), strategy)


# ---------------------------------------------------------------------------
# one-sided jump-slope condition and Lipschitz probing
# ---------------------------------------------------------------------------

@dataclass
class GammaSlopeReport:
    lhs: float
    rhs: float
    ok: bool
    slopes: np.ndarray


def check_a_gamma(driver: Driver, t: float, y: float, z, u, u_bar,
                  quad: MarkQuadrature, zeta: np.ndarray | None = None,
                  gamma_cap: float = math.inf) -> GammaSlopeReport:
    """One-sided slope certificate for the jump dependence.

    The per-node slope ``(g(u_i) - g(u_bar_i)) / (u_i - u_bar_i)`` is clamped
    to ``(-1 + 1e-9, gamma_cap)`` and must dominate the actual increment:
    ``f(u) - f(u_bar) <= sum_i w_i zeta_i slope_i (u_i - u_bar_i) + 1e-9``.
    """
    u = _field_values(u)
    ub = _field_values(u_bar)
    wz = quad.weights if zeta is None else quad.weights * zeta
    gu, gub = driver.g(t, u), driver.g(t, ub)
    lhs = float(((gu - gub) * wz).sum())
    diff = u - ub
    slopes = np.zeros_like(diff)
    nz = np.abs(diff) > 0
    slopes[nz] = (gu[nz] - gub[nz]) / diff[nz]
    slopes = np.clip(slopes, -1.0 + 1e-9, gamma_cap)
    rhs = float((slopes * diff * wz).sum())
    return GammaSlopeReport(lhs, rhs, lhs <= rhs + 1e-9, slopes)


def lipschitz_estimate(func: Callable, region: Sequence[tuple], n_probes: int,
                       seed: int) -> float:
    """Empirical Lipschitz constant over random probe pairs in a box.

    ``func`` maps a coordinate vector to a scalar; the constant is the max of
    ``|f(a) - f(b)| / sum_j |a_j - b_j|`` over ``n_probes`` independent pairs.
    """
    if n_probes < 2:
        raise ValueError("need at least two probes")
    rng = np.random.default_rng(seed)
    lo = np.asarray([r[0] for r in region], dtype=float)
    hi = np.asarray([r[1] for r in region], dtype=float)
    a = lo + (hi - lo) * rng.random((n_probes, lo.size))
    b = lo + (hi - lo) * rng.random((n_probes, lo.size))
    dist = np.abs(a - b).sum(axis=1)
    keep = dist > 1e-12
    fa = np.asarray([float(func(row)) for row in a[keep]])
    fb = np.asarray([float(func(row)) for row in b[keep]])
    return float(np.max(np.abs(fa - fb) / dist[keep]))
