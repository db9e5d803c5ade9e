"""Charging schedulers: local (per station), global (aggregator), grid-aware.

Energies are in MWh, matrices are EVCS x slot.
"""

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels
from .errors import ConvergenceError, DomainError
from .grid import SlotWeights, grid_cost, head_power_batch
from .traffic import ChargingNeeds

METHODS = ("local", "global", "grid_aware")
FEASIBILITY_TOL = 1e-9
REPAIR_TOL = 1e-12
FD_STEP_MWH = 1e-4

__all__ = [
    "METHODS", "SlotWeights", "LoadSchedule", "CostReport", "waterfill",
    "schedule_local", "schedule_global", "schedule_grid_aware", "normalized_cost",
    "cost_report", "run_method",
]


@dataclass(frozen=True)
class LoadSchedule:
    nonflexible: np.ndarray
    flexible: np.ndarray
    method: str = ""
    info: Mapping = field(default_factory=dict, compare=False)

    @classmethod
    def _trusted(cls, nonflexible, flexible, method, info):
        # internal constructor: inputs already validated, flexible freshly built
        self = object.__new__(cls)
        for name, a in (("nonflexible", np.array(nonflexible, dtype=float)), ("flexible", flexible)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "method", method)
        object.__setattr__(self, "info", info)
        return self

    def __post_init__(self):
        l0 = np.array(self.nonflexible, dtype=float)
        fl = np.array(self.flexible, dtype=float)
        if l0.ndim != 2 or l0.shape != fl.shape:
            raise DomainError(f"nonflexible {l0.shape} and flexible {fl.shape} must be equal 2-D shapes")
        if (l0 < 0).any():
            raise DomainError("nonflexible load must be >= 0")
        if (fl < -FEASIBILITY_TOL).any():
            raise DomainError(f"flexible load must be >= 0, min is {fl.min()}")
        for a in (l0, fl):
            a.setflags(write=False)
        object.__setattr__(self, "nonflexible", l0)
        object.__setattr__(self, "flexible", fl)

    @property
    def total(self):
        return self.nonflexible + self.flexible

    @property
    def aggregate(self):
        """Total load of all stations per slot."""
        return self.total.sum(axis=0)

    def need_violation(self, needs):
        """Max |sum_t l_{i,t} - L_i| over stations."""
        return float(np.abs(self.flexible.sum(axis=1) - _needs_array(needs)).max())


@dataclass(frozen=True)
class CostReport:
    cost_by_method: Mapping[str, float]
    normalized: Mapping[str, float]
    reference_method_and_toll: tuple


def _needs_array(needs):
    if isinstance(needs, ChargingNeeds):
        return needs.per_evcs_energy
    return np.asarray(needs, dtype=float).reshape(-1)


def _weights_array(weights, T):
    if isinstance(weights, SlotWeights):
        w = weights.as_array()
    else:
        w = np.asarray(weights, dtype=float)
        if not (kernels.all_nonnegative(w) and w.all()):
            raise DomainError("slot weights must be finite and > 0")
    if w.size != T:
        raise DomainError(f"{w.size} slot weights for {T} slots")
    return w


def _inputs(nonflexible, needs, weights):
    l0 = np.asarray(nonflexible, dtype=float)
    if l0.ndim != 2:
        raise DomainError("nonflexible load must be an EVCS x slot matrix")
    L = _needs_array(needs)
    if L.size != l0.shape[0]:
        raise DomainError(f"{L.size} charging needs for {l0.shape[0]} stations")
    if not kernels.all_nonnegative(l0):
        raise DomainError("nonflexible load must be finite and >= 0")
    if not kernels.all_nonnegative(L):
        raise DomainError("charging needs must be finite and >= 0")
    return l0, L, _weights_array(weights, l0.shape[1])


def waterfill(nonflexible, need, weights):
    """Optimal single-station schedule for a quadratic energy cost.

    Minimises ``sum_t eta_t (l0_t + l_t)**2`` subject to ``sum_t l_t = need``
    and ``l_t >= 0``. With constant weights every charged slot ends at the
    same total level and no uncharged slot lies below it.

    Parameters
    ----------
    nonflexible : array_like, shape (T,)
    need : float
        Energy to schedule, MWh.
    weights : SlotWeights or array_like, shape (T,)

    Returns
    -------
    ndarray, shape (T,)
    """
    l0 = np.asarray(nonflexible, dtype=float).reshape(-1)
    if need < 0:
        raise DomainError(f"charging need must be >= 0, got {need}")
    if (l0 < 0).any():
        raise DomainError("nonflexible load must be >= 0")
    return kernels.waterfill(l0, float(need), _weights_array(weights, l0.size))


def schedule_local(nonflexible, needs, weights):
    """Every station water-fills its own nonflexible profile."""
    l0, L, w = _inputs(nonflexible, needs, weights)
    return LoadSchedule._trusted(l0, kernels.waterfill_rows(l0, L, w), "local", {})


def _project_transport(flex, row_sums, col_sums, max_iter=20_000, tol=1e-13):
    # Dykstra: closest nonnegative matrix with the given margins
    n, T = flex.shape

    def affine(x):
        r = row_sums - x.sum(axis=1)
        c = col_sums - x.sum(axis=0)
        return x + r[:, None] / T + c[None, :] / n - r.sum() / (n * T)

    x = flex.copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iter):
        y = affine(x + p)
        p = x + p - y
        x_new = np.maximum(y + q, 0.0)
        q = y + q - x_new
        if np.abs(x_new - x).max() < tol:
            x = x_new
            break
        x = x_new
    return affine(x)


def schedule_global(nonflexible, needs, weights):
    """Aggregator schedule: aggregate-optimal, per-station as local as possible.

    Starts from the local schedules, spreads the per-slot gap to the
    aggregate water-filling target equally over the stations, then removes
    negative entries with row- and column-preserving compensations. Only
    stations with positive need and slots with positive target take part,
    since all other entries must be zero. If the compensation loop hits
    its cap the matrix is projected exactly onto the feasible set and
    ``info["fallback"]`` is set. Entries left within the repair tolerance
    below zero are clipped, so the result is nonnegative.
    """
    l0, L, w = _inputs(nonflexible, needs, weights)
    n, T = l0.shape
    flex, target, iterations, ok = kernels.aggregate_schedule(l0, L, w, 100 * n * T, REPAIR_TOL)
    if not ok:
        rows, cols = np.ix_(L > 0, target > 0)
        flex[rows, cols] = _project_transport(flex[rows, cols], L[L > 0], target[target > 0])
    # residue within the repair tolerance; margins move by at most REPAIR_TOL
    np.maximum(flex, 0.0, out=flex)
    return LoadSchedule._trusted(l0, flex, "global",
                                 {"fallback": not ok, "repair_iterations": int(iterations),
                                  "aggregate_target": target})


def _repair_feasibility(flex, L):
    flex = np.maximum(flex, 0.0)
    for i in range(flex.shape[0]):
        s = flex[i].sum()
        gap = L[i] - s
        if gap >= 0 or s == 0:
            flex[i] += gap / flex.shape[1]
        else:
            flex[i] *= L[i] / s
    return flex


class _GridObjective:
    """Grid cost with finite-difference derivatives from batched power flows.

    Gradients use central differences with step ``step`` (MWh); the
    per-slot curvature blocks use a wider step since ``S^2`` is close to
    quadratic in the loads.
    """

    pf_tol = 1e-12

    def __init__(self, grid, l0, w, horizon_hours, step, rows, hess_step=1e-3):
        self.grid = grid
        self.l0 = l0
        self.w = w
        self.rows = rows
        self.n, self.T = l0.shape
        self.to_mw = self.T / horizon_hours
        self.step = step
        self.hess_step = hess_step
        self.batches = 0

    def _s2(self, loads_mwh):
        s, conv, resid = head_power_batch(self.grid, loads_mwh * self.to_mw, tol=self.pf_tol)
        self.batches += 1
        if not conv.all():
            k = int(np.flatnonzero(~conv)[0])
            raise ConvergenceError("power flow failed inside grid-aware objective",
                                   residual=float(resid[k]), row=k)
        return s ** 2

    def _full(self, x):
        flex = np.zeros_like(self.l0)
        flex[self.rows] = x
        return flex

    def value(self, x):
        base = (self.l0 + self._full(x)).T
        return float(self.w @ self._s2(base))

    def derivatives(self, x):
        """Value, gradient (r, T) and curvature blocks (T, r, r) over optimised rows."""
        T, r = self.T, len(self.rows)
        base = (self.l0 + self._full(x)).T
        eye = np.zeros((r, self.n))
        eye[np.arange(r), self.rows] = 1.0
        h, hh = self.step, self.hess_step
        pairs = [(a, b) for a in range(r) for b in range(a + 1, r)]
        shifts = [h * eye, -h * eye, hh * eye, -hh * eye]
        for sa, sb in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            shifts.extend(hh * (sa * eye[a] + sb * eye[b])[None] for a, b in pairs)
        shift = np.concatenate([np.zeros((1, self.n))] + shifts)
        rows = (base[:, None, :] + shift[None]).reshape(-1, self.n)
        s2 = self._s2(rows).reshape(T, -1) * self.w[:, None]
        f0 = s2[:, 0]
        gp, gm, hp, hm = (s2[:, 1 + k * r:1 + (k + 1) * r] for k in range(4))
        grad = ((gp - gm) / (2 * h)).T
        hess = np.zeros((T, r, r))
        ii = np.arange(r)
        hess[:, ii, ii] = (hp - 2 * f0[:, None] + hm) / hh ** 2
        if pairs:
            q = len(pairs)
            pp, pm, mp, mm = (s2[:, 1 + 4 * r + k * q:1 + 4 * r + (k + 1) * q] for k in range(4))
            off = (pp - pm - mp + mm) / (4 * hh ** 2)
            a, b = np.array(pairs).T
            hess[:, a, b] = off
            hess[:, b, a] = off
        return float(f0.sum()), grad, hess


def _convexify(hess, floor=1e-8):
    # clip eigenvalues so every slot block is positive definite
    vals, vecs = np.linalg.eigh(hess)
    top = max(float(vals.max(initial=0.0)), 1e-12)
    vals = np.maximum(vals, floor * top)
    return np.einsum("tij,tj,tkj->tik", vecs, vals, vecs)


def _qp_step(hess_blocks, grad, x, max_iter=500):
    """Primal active-set solve of the local quadratic model.

    Minimises ``g.d + d.H.d / 2`` subject to zero row sums of ``d`` and
    ``x + d >= 0``; ``H`` is block diagonal over slots.
    """
    r, T = grad.shape
    m = r * T
    H = np.zeros((m, m))
    for t in range(T):
        idx = np.arange(r) * T + t
        H[np.ix_(idx, idx)] = hess_blocks[t]
    g = grad.ravel()
    lo = -x.ravel()
    row_of = np.repeat(np.arange(r), T)
    A = np.kron(np.eye(r), np.ones((1, T)))
    d = np.zeros(m)
    work = lo >= 0.0
    gscale = max(float(np.abs(g).max()), 1e-300)
    for _ in range(max_iter):
        free = ~work
        c = H @ d + g
        nf = int(free.sum())
        kkt = np.zeros((nf + r, nf + r))
        kkt[:nf, :nf] = H[np.ix_(free, free)]
        kkt[:nf, nf:] = -A[:, free].T
        kkt[nf:, :nf] = A[:, free]
        rhs = np.concatenate([-c[free], np.zeros(r)])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p = np.zeros(m)
        p[free] = sol[:nf]
        mu = sol[nf:]
        if np.abs(p).max(initial=0.0) <= 1e-13 * max(1.0, np.abs(x).max()):
            lam = np.where(work, c - mu[row_of], np.inf)
            j = int(np.argmin(lam))
            if lam[j] >= -1e-12 * gscale:
                return d.reshape(r, T)
            work[j] = False
            continue
        alpha, block = 1.0, -1
        for j in np.flatnonzero(free & (p < 0)):
            a = (lo[j] - d[j]) / p[j]
            if a < alpha:
                alpha, block = a, j
        d = d + alpha * p
        if block >= 0:
            d[block] = lo[block]
            work[block] = True
    return d.reshape(r, T)


def schedule_grid_aware(grid, nonflexible, needs, weights, horizon_hours=8.0, start=None,
                        max_iter=100, rel_tol=1e-8, fd_step=FD_STEP_MWH):
    """Schedule minimising the weighted squared head apparent power.

    Sequential quadratic steps over power-flow solves, started from the
    global schedule: each step minimises a local quadratic model
    (central-difference gradient and curvature) under the energy and sign
    constraints, followed by a backtracking line search. Iteration stops
    when the relative cost improvement drops below ``rel_tol``. The
    returned schedule never costs more than the global or local one.

    Raises
    ------
    ConvergenceError
        If the iteration cap is hit; ``best`` carries the best feasible
        schedule and ``residual`` its grid cost.
    """
    l0, L, w = _inputs(nonflexible, needs, weights)
    n, T = l0.shape
    if grid.evcs_count != n:
        raise DomainError(f"grid has {grid.evcs_count} EVCS but schedule has {n}")
    candidates = {
        "global": schedule_global(l0, L, w).flexible if start is None else np.asarray(start, float),
        "local": schedule_local(l0, L, w).flexible,
    }

    def cost(flex):
        return grid_cost(grid, l0 + flex, w, horizon_hours)

    info = {"converged": True, "iterations": 0, "power_flow_batches": 0, "start": "global"}
    rows = np.flatnonzero(L > 0)
    if T > 1 and rows.size:
        obj = _GridObjective(grid, l0, w, horizon_hours, fd_step, rows)
        x = np.maximum(candidates["global"][rows], 0.0)
        f = obj.value(x)
        converged = False
        it = 0
        for it in range(1, max_iter + 1):
            _, grad, hess = obj.derivatives(x)
            d = _qp_step(_convexify(hess), grad, x)
            slope = float((grad * d).sum())
            if slope >= 0.0:
                converged = True
                break
            alpha = 1.0
            while True:
                trial = np.maximum(x + alpha * d, 0.0)
                f_trial = obj.value(trial)
                if f_trial <= f + 1e-4 * alpha * slope or alpha < 1e-6:
                    break
                alpha *= 0.5
            gain = f - f_trial
            if gain > 0:
                x, f = trial, f_trial
            if gain <= rel_tol * f:
                converged = True
                break
        flex = np.zeros_like(l0)
        flex[rows] = x
        candidates["optimized"] = _repair_feasibility(flex, L)
        info.update(iterations=it, power_flow_batches=obj.batches, converged=converged)

    costs = {name: cost(flex) for name, flex in candidates.items()}
    best = min(costs, key=lambda k: (costs[k], k != "optimized"))
    info["selected"] = best
    info["grid_cost"] = costs[best]
    schedule = LoadSchedule(l0, candidates[best], "grid_aware", info=info)
    if not info["converged"]:
        raise ConvergenceError(f"grid-aware optimiser hit its cap of {max_iter} iterations",
                               best=schedule, residual=costs[best])
    return schedule


def normalized_cost(cost, reference):
    """Relative deviation ``(cost - reference) / reference``."""
    if not reference > 0:
        raise DomainError(f"reference grid cost must be > 0, got {reference}")
    return (cost - reference) / reference


def cost_report(costs, reference_cost=None, reference_method="grid_aware", reference_toll=None):
    """Normalise per-method grid costs against a reference cost."""
    ref = costs[reference_method] if reference_cost is None else reference_cost
    return CostReport(dict(costs), {m: normalized_cost(c, ref) for m, c in costs.items()},
                      (reference_method, reference_toll))


def run_method(method, grid, nonflexible, needs, weights, horizon_hours=8.0):
    """Dispatch to one of ``METHODS`` (``grid-aware`` accepted as an alias)."""
    method = method.replace("-", "_")
    if method == "local":
        return schedule_local(nonflexible, needs, weights)
    if method == "global":
        return schedule_global(nonflexible, needs, weights)
    if method == "grid_aware":
        return schedule_grid_aware(grid, nonflexible, needs, weights, horizon_hours)
    raise DomainError(f"unknown scheduling method {method!r}; expected one of {METHODS}")
