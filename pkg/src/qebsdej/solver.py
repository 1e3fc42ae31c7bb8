"""Forward simulation and regression Monte Carlo solves of jump BSDEs.

The backward equation is discretized on a uniform grid with conditional
expectations estimated by least squares on polynomial features of the forward
state.  Each step regresses, against the time-``t_k`` features,

* the next value itself (drift target),
* the next value times the scaled Brownian increment (diffusion loading), and
* the next value times each node's centered jump count, normalized by the
  node intensity (jump loading, one regression target per quadrature node),

then closes the step implicitly in ``y`` by Picard iteration.  The step is a
contraction whenever ``dt`` times the ``y``-Lipschitz bound of the generator
is below one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .levy import JumpTable, LevyModel, MarkQuadrature, sample_jump_paths


class NonContractionError(RuntimeError):
    """dt times the y-Lipschitz bound reached 1; the implicit step diverges."""


class EnsembleMismatchError(ValueError):
    """Arrays from different ensembles were combined."""


DYNAMICS = ("brownian", "brownian_jumps", "jumps_only", "deterministic")


@dataclass
class PathEnsemble:
    """Seeded Monte Carlo paths of the driving noise and forward state."""

    time_grid: np.ndarray            # (K+1,)
    dw: np.ndarray                   # (n_paths, K, d)
    jumps: JumpTable
    state: np.ndarray                # (n_paths, K+1)
    seed: int
    dynamics: str
    jump_impact: str
    model: LevyModel
    quad: MarkQuadrature

    @property
    def n_paths(self) -> int:
        return self.state.shape[0]

    @property
    def n_steps(self) -> int:
        return self.time_grid.size - 1

    @property
    def d(self) -> int:
        return self.dw.shape[2]

    @property
    def dt(self) -> float:
        return float(self.time_grid[1] - self.time_grid[0])

    def node_intensity(self, k: int) -> np.ndarray:
        """Per-node jump intensity ``w_i zeta(t_k, e_i)`` on interval ``k``."""
        return self.quad.weights * self.quad.zeta_at(self.model, float(self.time_grid[k]))

    def fingerprint(self) -> tuple:
        return (self.seed, self.n_paths, self.n_steps, self.dynamics,
                self.quad.n_nodes, float(self.time_grid[-1]))


def _impact_values(quad: MarkQuadrature, jump_impact: str) -> np.ndarray:
    if jump_impact == "unit":
        return np.ones(quad.n_nodes)
    if jump_impact == "mark":
        return quad.nodes.copy()
    raise ValueError("jump_impact must be 'unit' or 'mark'")


def simulate_forward(model: LevyModel, quad: MarkQuadrature, dynamics: str,
                     time_grid, n_paths: int, seed: int, x0: float = 0.0,
                     jump_impact: str = "unit", d: int = 1) -> PathEnsemble:
    """Simulate Brownian increments, the jump stream, and the forward state.

    The default state is the Brownian path plus compensated jump impacts.
    Brownian and jump streams use independent child seeds of ``seed`` so the
    Brownian noise is unchanged when the quadrature (hence the jump stream)
    changes.
    """
    if dynamics not in DYNAMICS:
        raise ValueError(f"unknown dynamics '{dynamics}'; choose from {DYNAMICS}")
    time_grid = np.asarray(time_grid, dtype=float)
    if time_grid.ndim != 1 or time_grid.size < 2 or np.any(np.diff(time_grid) <= 0):
        raise ValueError("time grid must be strictly increasing with >= 2 points")
    if n_paths < 1:
        raise ValueError("need at least one path")
    k_steps = time_grid.size - 1
    ss = np.random.SeedSequence(seed)
    child_w, child_j = ss.spawn(2)
    rng_w = np.random.Generator(np.random.Philox(child_w))
    dts = np.diff(time_grid)
    dw = rng_w.standard_normal((n_paths, k_steps, d)) * np.sqrt(dts)[None, :, None]
    jumps = sample_jump_paths(model, quad, time_grid,
                              n_paths, int(child_j.generate_state(1)[0]))

    state = np.empty((n_paths, k_steps + 1))
    state[:, 0] = x0
    impact = _impact_values(quad, jump_impact)
    use_w = dynamics in ("brownian", "brownian_jumps")
    use_j = dynamics in ("brownian_jumps", "jumps_only")
    for k in range(k_steps):
        inc = np.zeros(n_paths)
        if dynamics == "deterministic":
            inc += dts[k]
        if use_w:
            inc += dw[:, k, :].sum(axis=1) / math.sqrt(d)
        if use_j:
            paths, marks = jumps.rows_for_interval(k)
            if paths.size:
                np.add.at(inc, paths, impact[marks])
            wz = quad.weights * quad.zeta_at(model, float(time_grid[k]))
            inc -= float((wz * impact).sum()) * dts[k]
        state[:, k + 1] = state[:, k] + inc
    return PathEnsemble(time_grid, dw, jumps, state, seed, dynamics,
                        jump_impact, model, quad)


# ---------------------------------------------------------------------------
# regression machinery
# ---------------------------------------------------------------------------

@dataclass
class FeatureMap:
    """Scaled polynomial features of the forward state at one time step.

    The state is standardized and winsorized at ``clip_sigmas`` standard
    deviations before powers are taken, so the fitted conditional
    expectations extrapolate flat instead of polynomially in the far tails
    (cubic tails otherwise feed the exponential nonlinearities and blow the
    backward recursion up).  Columns with no cross-path variation
    (deterministic state) are dropped; the intercept always stays.
    """

    degree: int
    center: float
    scale: float
    keep: np.ndarray
    clip_sigmas: float = 4.0

    @staticmethod
    def fit(x: np.ndarray, degree: int, clip_sigmas: float = 4.0) -> "FeatureMap":
        center = float(x.mean())
        spread = float(x.std())
        scale = spread if spread > 1e-12 else 1.0
        keep = np.ones(degree + 1, dtype=bool)
        if spread <= 1e-12:
            keep[1:] = False
        return FeatureMap(degree, center, scale, keep, clip_sigmas)

    def matrix(self, x: np.ndarray) -> np.ndarray:
        t = (x - self.center) / self.scale
        t = np.clip(t, -self.clip_sigmas, self.clip_sigmas)
        cols = [np.ones_like(t)]
        for p in range(1, self.degree + 1):
            cols.append(t ** p)
        return np.column_stack(cols)[:, self.keep]

    @property
    def n_basis(self) -> int:
        return int(self.keep.sum())


def _ols(design: np.ndarray, targets: np.ndarray):
    """Least squares with shared design; returns (coeffs, fitted, cond)."""
    gram = design.T @ design
    cond = float(np.linalg.cond(gram))
    coeffs, *_ = np.linalg.lstsq(design, targets, rcond=None)
    return coeffs, design @ coeffs, cond


# ---------------------------------------------------------------------------
# solution containers
# ---------------------------------------------------------------------------

@dataclass
class BsdejSolution:
    """Discrete solution fields plus regression diagnostics.

    ``y`` has shape (n_paths, K+1) with the terminal column equal to the
    terminal payoff exactly.  ``z`` has shape (n_paths, K, d).  The jump
    loadings are stored as regression coefficients per step and node and
    re-evaluated on demand through :meth:`u_values`.  ``driver_values`` are
    the generator values actually used by the backward step, so downstream
    decompositions reproduce the recursion identically.
    """

    y: np.ndarray
    z: np.ndarray
    u_coeffs: list
    feature_maps: list
    terminal: np.ndarray
    driver_values: np.ndarray
    resid_var: np.ndarray
    cond_numbers: np.ndarray
    basis_degree: int
    ensemble_fingerprint: tuple
    picard_iterations: np.ndarray
    u_clip: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.y.shape[0]

    @property
    def n_steps(self) -> int:
        return self.y.shape[1] - 1

    @property
    def y0(self) -> float:
        return float(self.y[:, 0].mean())

    def u_values(self, ensemble: PathEnsemble, k: int) -> np.ndarray:
        """Jump loading field at step ``k``, shape (n_paths, Q)."""
        self.check_ensemble(ensemble)
        design = self.feature_maps[k].matrix(ensemble.state[:, k])
        vals = design @ self.u_coeffs[k]
        if self.u_clip is not None:
            vals = np.clip(vals, -self.u_clip[k], self.u_clip[k])
        return vals

    def regression_se(self, k: int) -> float:
        """Propagated regression standard error of the time-``t_k`` values:
        per-step projection noise ``resid_var * n_basis / n_paths`` summed
        over the remaining steps."""
        nb = max(fm.n_basis for fm in self.feature_maps)
        var = float(self.resid_var[k:].sum()) * nb / self.n_paths
        return math.sqrt(max(var, 0.0))

    @property
    def y0_se(self) -> float:
        return self.regression_se(0)

    def s2_norm(self) -> float:
        """Monte Carlo estimate of ``E[sup_t |Y_t|^2]``."""
        return float((np.abs(self.y).max(axis=1) ** 2).mean())

    def check_ensemble(self, ensemble: PathEnsemble) -> None:
        if ensemble.fingerprint() != self.ensemble_fingerprint:
            raise EnsembleMismatchError("solution was produced on a different ensemble")


def solve_lipschitz(driver, terminal_fn: Callable, ensemble: PathEnsemble,
                    basis_degree: int = 3, picard_max: int = 50,
                    picard_tol: float = 1e-10,
                    min_expected_jumps: float = 20.0) -> BsdejSolution:
    """Backward regression solve for a generator with a Lipschitz ``y`` bound.

    ``driver`` exposes ``evaluate(t, y, z, u_values) -> array`` over paths and
    a ``lip_y`` attribute used for the contraction guard.  Jump loadings are
    only regressed on nodes expected to see at least ``min_expected_jumps``
    jumps across the ensemble in one step; the loading of a statistically
    dead node is pinned at zero (its intensity-weighted contribution to the
    generator is below the Monte Carlo resolution anyway).
    """
    dt = ensemble.dt
    lip_y = getattr(driver, "lip_y", math.inf)
    if dt * lip_y >= 1.0:
        raise NonContractionError(
            f"dt * Lipschitz(y) = {dt * lip_y:.3g} >= 1; refine the grid")
    n, k_steps, d = ensemble.n_paths, ensemble.n_steps, ensemble.d
    q_nodes = ensemble.quad.n_nodes

    xi = np.asarray(terminal_fn(ensemble.state[:, -1]), dtype=float)
    if xi.shape == ():
        xi = np.full(n, float(xi))

    y = np.empty((n, k_steps + 1))
    z = np.zeros((n, k_steps, d))
    y[:, -1] = xi
    u_coeffs, fmaps = [None] * k_steps, [None] * k_steps
    fvals = np.zeros((n, k_steps))
    resid_var = np.zeros(k_steps)
    conds = np.zeros(k_steps)
    picard_counts = np.zeros(k_steps, dtype=int)
    u_clip = np.zeros(k_steps)

    for k in range(k_steps - 1, -1, -1):
        t_k = float(ensemble.time_grid[k])
        fmap = FeatureMap.fit(ensemble.state[:, k], basis_degree)
        design = fmap.matrix(ensemble.state[:, k])
        y_next = y[:, k + 1]

        lam = ensemble.node_intensity(k)
        counts = ensemble.jumps.counts_for_interval(k)
        live = lam * dt * n >= max(min_expected_jumps, 1e-300)

        _, fit_y, conds[k] = _ols(design, y_next[:, None])
        ey_raw = fit_y[:, 0]
        # center the covariation targets with the fitted conditional mean: a
        # time-t_k measurable control variate that leaves the estimands
        # unchanged but shrinks the target variance from the scale of Y^2 to
        # the one-step conditional variance
        centered = y_next - ey_raw
        targets = [centered[:, None] * ensemble.dw[:, k, :] / dt]
        if live.any():
            targets.append(centered[:, None]
                           * (counts[:, live] / (lam[live] * dt) - 1.0))
        coeffs, fitted, _ = _ols(design, np.column_stack(targets))

        # a conditional expectation stays inside its target's range, and a
        # jump loading cannot exceed the oscillation of the next-step value;
        # clamping accordingly keeps regression tail noise out of the
        # exponential nonlinearity
        y_lo, y_hi = float(y_next.min()), float(y_next.max())
        osc = y_hi - y_lo
        ey = np.clip(ey_raw, y_lo, y_hi)
        z[:, k, :] = fitted[:, :d]
        u_now = np.zeros((n, q_nodes))
        uc = np.zeros((fmap.n_basis, q_nodes))
        if live.any():
            u_now[:, live] = np.clip(fitted[:, d:], -osc, osc)
            uc[:, live] = coeffs[:, d:]
        u_coeffs[k], fmaps[k] = uc, fmap
        u_clip[k] = osc
        resid_var[k] = float(np.mean((y_next - ey) ** 2))

        y_cur = ey.copy()
        if lip_y == 0.0:
            # the generator ignores y: the implicit step closes in one pass
            f_now = np.asarray(driver.evaluate(t_k, y_cur, z[:, k, :], u_now),
                               dtype=float)
            y_cur = ey + f_now * dt
            picard_counts[k] = 1
        else:
            for it in range(picard_max):
                f_now = np.asarray(driver.evaluate(t_k, y_cur, z[:, k, :], u_now),
                                   dtype=float)
                y_new = ey + f_now * dt
                picard_counts[k] = it + 1
                if float(np.max(np.abs(y_new - y_cur))) < picard_tol:
                    y_cur = y_new
                    break
                y_cur = y_new
            else:
                raise RuntimeError(f"Picard iteration did not reach {picard_tol:g} "
                                   f"in {picard_max} steps at t = {t_k:.4g}")
        fvals[:, k] = f_now
        y[:, k] = y_cur

    return BsdejSolution(y, z, u_coeffs, fmaps, xi, fvals, resid_var, conds,
                         basis_degree, ensemble.fingerprint(), picard_counts,
                         u_clip)


# ---------------------------------------------------------------------------
# semimartingale decomposition of the discrete solution
# ---------------------------------------------------------------------------

@dataclass
class Decomposition:
    """Additive split ``Y_k = Y_0 - V_k + M_k`` of a discrete solution.

    ``m_total`` makes the identity exact by construction; ``m_c`` (Brownian
    loading sums) and ``m_d`` (compensated jump sums) are its estimated
    components and differ from ``m_total`` by the regression residual
    martingale ``m_resid``.
    """

    v: np.ndarray
    m_total: np.ndarray
    m_c: np.ndarray
    m_d: np.ndarray
    ensemble_fingerprint: tuple

    @property
    def m_resid(self) -> np.ndarray:
        return self.m_total - self.m_c - self.m_d

    def dv(self) -> np.ndarray:
        return np.diff(self.v, axis=1)


def decompose(solution: BsdejSolution, ensemble: PathEnsemble) -> Decomposition:
    """Assemble the finite-variation and martingale components of a solve."""
    solution.check_ensemble(ensemble)
    n, k_steps = solution.n_paths, solution.n_steps
    dt = ensemble.dt
    dv = solution.driver_values * dt
    v = np.concatenate([np.zeros((n, 1)), np.cumsum(dv, axis=1)], axis=1)
    dm = np.diff(solution.y, axis=1) + dv
    m_total = np.concatenate([np.zeros((n, 1)), np.cumsum(dm, axis=1)], axis=1)

    dm_c = (solution.z * ensemble.dw).sum(axis=2)
    m_c = np.concatenate([np.zeros((n, 1)), np.cumsum(dm_c, axis=1)], axis=1)

    dm_d = np.zeros((n, k_steps))
    for k in range(k_steps):
        u_now = solution.u_values(ensemble, k)
        paths, marks = ensemble.jumps.rows_for_interval(k)
        if paths.size:
            np.add.at(dm_d[:, k], paths, u_now[paths, marks])
        dm_d[:, k] -= (u_now * ensemble.node_intensity(k)).sum(axis=1) * dt
    m_d = np.concatenate([np.zeros((n, 1)), np.cumsum(dm_d, axis=1)], axis=1)
    return Decomposition(v, m_total, m_c, m_d, ensemble.fingerprint())
