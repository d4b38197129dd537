"""Small dense quadratic program used by the safety shield.

Problem shape:

    minimise  ||u||^2 + slack_penalty * eps
    s.t.      a_i . u <= b_i + eps   for every constraint row i
              eps >= 0
              lower <= u <= upper    componentwise

A single shared slack relaxes every row uniformly, so the problem is always
feasible whenever the box itself is nonempty. At the optimum the slack equals
the largest residual violation, which reduces the problem to minimising the
piecewise-quadratic

    F(u) = ||u||^2 + slack_penalty * max(0, max_i(a_i . u - b_i))

over the box. For one decision variable the minimiser is found exactly by
enumerating the breakpoints and per-piece stationary points; the
two-variable case reduces to one-dimensional searches along every piece
boundary. No general-purpose QP machinery is involved, and identical inputs
produce bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SLACK_TOL = 1e-9
FEAS_TOL = 1e-9


@dataclass(frozen=True)
class ShieldQP:
    """One shield QP instance.

    ``a_rows`` holds one coefficient vector per constraint; ``lower`` and
    ``upper`` are the box bounds on the decision variable(s).
    """

    a_rows: tuple[tuple[float, ...], ...]
    b: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    slack_penalty: float = 1.0e4

    def __post_init__(self) -> None:
        if len(self.a_rows) != len(self.b):
            raise ValueError("a_rows and b must have matching lengths")
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper must have matching lengths")
        if self.slack_penalty <= 0.0:
            raise ValueError("slack_penalty must be positive")
        dim = len(self.lower)
        for row in self.a_rows:
            if len(row) != dim:
                raise ValueError("constraint row dimension mismatch")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @staticmethod
    def univariate(
        rows: Sequence[tuple[float, float]],
        lower: float,
        upper: float,
        slack_penalty: float = 1.0e4,
    ) -> "ShieldQP":
        """Convenience constructor for the common scalar-correction case."""
        return ShieldQP(
            a_rows=tuple((float(a),) for a, _ in rows),
            b=tuple(float(b) for _, b in rows),
            lower=(float(lower),),
            upper=(float(upper),),
            slack_penalty=float(slack_penalty),
        )


@dataclass(frozen=True)
class QPSolution:
    u: tuple[float, ...]
    slack: float
    status: str  # "optimal" | "slack_active" | "infeasible_clamped"
    objective: float = field(default=math.nan)

    @property
    def scalar(self) -> float:
        return self.u[0]


def _violation(problem: ShieldQP, u: Sequence[float]) -> float:
    worst = 0.0
    for row, rhs in zip(problem.a_rows, problem.b):
        resid = sum(a * x for a, x in zip(row, u)) - rhs
        if resid > worst:
            worst = resid
    return worst


def _objective(problem: ShieldQP, u: Sequence[float]) -> float:
    return sum(x * x for x in u) + problem.slack_penalty * _violation(problem, u)


def _minimise_1d(
    rows: Sequence[tuple[float, float]],
    lower: float,
    upper: float,
    penalty: float,
    quad: float = 1.0,
    lin: float = 0.0,
    const: float = 0.0,
) -> tuple[float, float]:
    """Exact minimiser of quad*t^2 + lin*t + const + penalty*V(t) on [lower, upper].

    V(t) = max(0, max_i(a_i t - b_i)) with scalar rows. Returns (t*, F(t*)).
    The parametrised quadratic part lets the 2-D solver reuse this routine
    along arbitrary boundary lines.
    """

    def value(t: float) -> float:
        v = 0.0
        for a, b in rows:
            r = a * t - b
            if r > v:
                v = r
        return quad * t * t + lin * t + const + penalty * v

    candidates = {lower, upper}
    # Zero-crossings of each row: piece boundaries of V.
    for a, b in rows:
        if a != 0.0:
            t = b / a
            if lower < t < upper:
                candidates.add(t)
    # Crossings between pairs of rows: where the active maximum switches.
    n = len(rows)
    for i in range(n):
        ai, bi = rows[i]
        for j in range(i + 1, n):
            aj, bj = rows[j]
            if ai != aj:
                t = (bi - bj) / (ai - aj)
                if lower < t < upper:
                    candidates.add(t)
    # Stationary point of the violation-free piece.
    if quad > 0.0:
        t0 = -lin / (2.0 * quad)
        if lower < t0 < upper:
            candidates.add(t0)
        # Stationary point of each single-row piece: quad*t^2 + (lin + K a)t.
        for a, b in rows:
            t = -(lin + penalty * a) / (2.0 * quad)
            if lower < t < upper:
                candidates.add(t)
    # Ties break towards the smaller correction magnitude, then downward.
    best_t = min(sorted(candidates), key=lambda t: (value(t), abs(t), t))
    return best_t, value(best_t)


def _solve_1d(problem: ShieldQP) -> QPSolution:
    rows = [(row[0], b) for row, b in zip(problem.a_rows, problem.b)]
    lo, hi = problem.lower[0], problem.upper[0]
    t, _ = _minimise_1d(rows, lo, hi, problem.slack_penalty)
    u = (t,)
    slack = _violation(problem, u)
    status = "slack_active" if slack > SLACK_TOL else "optimal"
    return QPSolution(u=u, slack=slack, status=status, objective=_objective(problem, u))


def _solve_2d(problem: ShieldQP) -> QPSolution:
    penalty = problem.slack_penalty
    rows = [(np.array(r, dtype=float), b) for r, b in zip(problem.a_rows, problem.b)]
    lo = np.array(problem.lower, dtype=float)
    hi = np.array(problem.upper, dtype=float)

    def eval_at(u: np.ndarray) -> float:
        return _objective(problem, (float(u[0]), float(u[1])))

    candidates: list[np.ndarray] = []

    def add_if_in_box(u: np.ndarray) -> None:
        if lo[0] - FEAS_TOL <= u[0] <= hi[0] + FEAS_TOL and lo[1] - FEAS_TOL <= u[1] <= hi[1] + FEAS_TOL:
            candidates.append(np.clip(u, lo, hi))

    # Interior stationary points: the violation-free piece (u = 0) and each
    # single-row piece (gradient 2u + penalty * a = 0).
    add_if_in_box(np.zeros(2))
    for a, _ in rows:
        add_if_in_box(-0.5 * penalty * a)

    # Boundary lines: box faces, row zero-sets and pairwise row crossings.
    # Each line is searched exactly with the 1-D routine.
    lines: list[tuple[np.ndarray, np.ndarray, float, float]] = []
    # Box faces: point + direction, parameter range.
    lines.append((np.array([lo[0], 0.0]), np.array([0.0, 1.0]), lo[1], hi[1]))
    lines.append((np.array([hi[0], 0.0]), np.array([0.0, 1.0]), lo[1], hi[1]))
    lines.append((np.array([0.0, lo[1]]), np.array([1.0, 0.0]), lo[0], hi[0]))
    lines.append((np.array([0.0, hi[1]]), np.array([1.0, 0.0]), lo[0], hi[0]))
    n = len(rows)
    for i in range(n):
        ai, bi = rows[i]
        norm = float(np.dot(ai, ai))
        if norm > 0.0:
            point = ai * (bi / norm)
            direction = np.array([-ai[1], ai[0]])
            lines.append((point, direction, -math.inf, math.inf))
        for j in range(i + 1, n):
            aj, bj = rows[j]
            d = ai - aj
            norm = float(np.dot(d, d))
            if norm > 0.0:
                point = d * ((bi - bj) / norm)
                direction = np.array([-d[1], d[0]])
                lines.append((point, direction, -math.inf, math.inf))

    for point, direction, t_lo, t_hi in lines:
        # Clip the parameter range to the box along this line.
        for k in range(2):
            if direction[k] == 0.0:
                if not (lo[k] - FEAS_TOL <= point[k] <= hi[k] + FEAS_TOL):
                    t_lo, t_hi = 1.0, 0.0
                    break
            else:
                t_a = (lo[k] - point[k]) / direction[k]
                t_b = (hi[k] - point[k]) / direction[k]
                t_min, t_max = (t_a, t_b) if t_a <= t_b else (t_b, t_a)
                t_lo = max(t_lo, t_min)
                t_hi = min(t_hi, t_max)
        if t_lo > t_hi:
            continue
        # Restrict the objective along u = point + t * direction.
        quad = float(np.dot(direction, direction))
        lin = 2.0 * float(np.dot(point, direction))
        const = float(np.dot(point, point))
        line_rows = []
        for a, b in rows:
            line_rows.append((float(np.dot(a, direction)), b - float(np.dot(a, point))))
        t_star, _ = _minimise_1d(line_rows, t_lo, t_hi, penalty, quad, lin, const)
        add_if_in_box(point + t_star * direction)

    best = min(
        candidates,
        key=lambda u: (eval_at(u), float(np.dot(u, u)), float(u[0]), float(u[1])),
    )
    u = (float(best[0]), float(best[1]))
    slack = _violation(problem, u)
    status = "slack_active" if slack > SLACK_TOL else "optimal"
    return QPSolution(u=u, slack=slack, status=status, objective=_objective(problem, u))


def solve_shield_qp(problem: ShieldQP) -> QPSolution:
    """Exact solve of the slack-penalised shield QP (1 or 2 decision vars)."""
    if any(lo > hi for lo, hi in zip(problem.lower, problem.upper)):
        # Empty box: report the least-violating corner of the degenerate box.
        corners = [()]
        for lo, hi in zip(problem.lower, problem.upper):
            corners = [c + (v,) for c in corners for v in ((lo,) if lo == hi else (lo, hi))]
        corner = min(corners, key=lambda c: (_violation(problem, c), c))
        return QPSolution(
            u=corner,
            slack=_violation(problem, corner),
            status="infeasible_clamped",
            objective=_objective(problem, corner),
        )
    if problem.dim == 1:
        return _solve_1d(problem)
    if problem.dim == 2:
        return _solve_2d(problem)
    raise ValueError(f"shield QP supports at most 2 decision variables, got {problem.dim}")


def grid_oracle(problem: ShieldQP, resolution: float) -> QPSolution:
    """Brute-force argmin of the slack-reduced objective over a box grid.

    Independent of the exact solver: evaluates the objective at every grid
    point and returns the first minimiser. Only sensible for dimension <= 2.
    """
    if problem.dim > 2:
        raise ValueError(f"grid oracle supports at most 2 decision variables, got {problem.dim}")
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    axes = []
    for lo, hi in zip(problem.lower, problem.upper):
        count = max(2, int(math.floor((hi - lo) / resolution)) + 1)
        axis = lo + resolution * np.arange(count)
        axis[-1] = min(axis[-1], hi)
        axis = np.append(axis, hi) if axis[-1] < hi else axis
        axes.append(axis)
    if problem.dim == 1:
        us = axes[0][:, None]
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        us = np.column_stack([g0.ravel(), g1.ravel()])
    a = np.array(problem.a_rows, dtype=float).reshape(len(problem.a_rows), problem.dim)
    b = np.array(problem.b, dtype=float)
    if len(problem.a_rows) > 0:
        viol = np.maximum(0.0, (us @ a.T) - b[None, :]).max(axis=1)
    else:
        viol = np.zeros(len(us))
    obj = (us * us).sum(axis=1) + problem.slack_penalty * viol
    idx = int(np.argmin(obj))
    u = tuple(float(v) for v in us[idx])
    slack = float(viol[idx])
    status = "slack_active" if slack > SLACK_TOL else "optimal"
    return QPSolution(u=u, slack=slack, status=status, objective=float(obj[idx]))
