"""Grid route planning: a deterministic shortest-path problem over
non-obstacle nodes solved by value iteration under a weather slope bound.

Actions 1..8 move to the adjacent node East, Northeast, North, Northwest,
West, Southwest, South, Southeast; action 9 is Stay.  A move is admissible
only when the target node is in bounds, not an obstacle, and the hop slope
does not exceed the active weather's limit.  Hop cost is

    cost = alpha_m * slope + alpha_d * distance

with the scaling weights solved from the mean slope and mean distance over
all admissible moves.  Stay costs 0 at the goal and is inadmissible anywhere
else, which makes the goal absorbing with value 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .terrain import ElevationGrid, ObstacleMask, WeatherCondition

# Action id -> (drow, dcol); row 0 is the northern edge so North is -1 row.
MOVES = {
    1: (0, 1),    # East
    2: (-1, 1),   # Northeast
    3: (-1, 0),   # North
    4: (-1, -1),  # Northwest
    5: (0, -1),   # West
    6: (1, -1),   # Southwest
    7: (1, 0),    # South
    8: (1, 1),    # Southeast
}
STAY = 9

UNREACHABLE = math.inf


class ScalingError(ValueError):
    """Raised when the cost-weight system is singular; pass weights manually."""


@dataclass(frozen=True)
class DpProblem:
    """Immutable transition/cost tables for one grid, mask, and weather."""

    grid: ElevationGrid
    goal: tuple[int, int]
    alpha_m: float
    alpha_d: float
    slope_limit: float
    valid: np.ndarray                 # bool (n_rows, n_cols); True = state
    move_admissible: dict[int, np.ndarray] = field(repr=False)
    move_cost: dict[int, np.ndarray] = field(repr=False)  # +inf where inadmissible
    move_slope: dict[int, np.ndarray] = field(repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass
class ValueFunction:
    """Per-state cost-to-goal plus the minimizing action at each state."""

    values: np.ndarray  # float (n_rows, n_cols); inf = unreachable / non-state
    policy: np.ndarray  # int action ids; 0 where no action applies
    converged: bool
    sweeps: int

    def reachable(self, node: tuple[int, int]) -> bool:
        return math.isfinite(self.values[node])


@dataclass
class PlannedRoute:
    """Waypoint sequence start -> goal with distance and slope statistics."""

    waypoints: list[tuple[int, int]]
    total_cost: float
    total_distance: float
    mean_slope_deg: float
    max_slope_deg: float
    reachable: bool = True

    @classmethod
    def unreachable(cls) -> "PlannedRoute":
        return cls(waypoints=[], total_cost=UNREACHABLE, total_distance=float("nan"),
                   mean_slope_deg=float("nan"), max_slope_deg=float("nan"),
                   reachable=False)


def _hop_slopes_and_admissibility(
    grid: ElevationGrid, mask: ObstacleMask, slope_limit: float
):
    """Per-action slope and admissibility arrays over the whole grid.

    slope[a][r, c] is the hop slope from (r, c) along action a; admissible
    additionally requires both endpoints to be valid states and the slope to
    respect the limit.
    """
    h = grid.heights
    valid = ~mask.blocked
    slopes: dict[int, np.ndarray] = {}
    admissible: dict[int, np.ndarray] = {}
    for a, (dr, dc) in MOVES.items():
        slope = np.full(h.shape, np.nan)
        ok = np.zeros(h.shape, dtype=bool)
        run = grid.cell_size * math.hypot(dr, dc)
        src_r = slice(max(0, -dr), grid.n_rows - max(0, dr))
        src_c = slice(max(0, -dc), grid.n_cols - max(0, dc))
        dst_r = slice(max(0, dr), grid.n_rows + min(0, dr))
        dst_c = slice(max(0, dc), grid.n_cols + min(0, dc))
        s = np.abs(h[dst_r, dst_c] - h[src_r, src_c]) / run
        slope[src_r, src_c] = s
        ok[src_r, src_c] = valid[src_r, src_c] & valid[dst_r, dst_c] & (s <= slope_limit)
        slopes[a] = slope
        admissible[a] = ok
    return slopes, admissible, valid


def compute_scaling_factors(
    grid: ElevationGrid, mask: ObstacleMask, weather: WeatherCondition
) -> tuple[float, float]:
    """Solve the 2x2 system that balances slope and distance in the hop cost.

    With mean_m and mean_d the averages of slope and distance over all
    admissible moves:

        [[mean_m, mean_d], [1, 1]] @ [alpha_m, alpha_d] = [1, 1]
    """
    slopes, admissible, _ = _hop_slopes_and_admissibility(grid, mask, weather.slope_limit)
    all_slopes = []
    all_dists = []
    for a in MOVES:
        ok = admissible[a]
        if ok.any():
            all_slopes.append(slopes[a][ok])
            dr, dc = MOVES[a]
            all_dists.append(np.full(ok.sum(), grid.cell_size * math.hypot(dr, dc)))
    if not all_slopes:
        raise ValueError("no admissible transition exists")
    mean_m = float(np.concatenate(all_slopes).mean())
    mean_d = float(np.concatenate(all_dists).mean())
    if abs(mean_m - mean_d) < 1e-12:
        raise ScalingError(
            f"mean slope equals mean distance ({mean_m}); the weight system is "
            "singular, supply alpha_m and alpha_d manually"
        )
    alpha = np.linalg.solve(np.array([[mean_m, mean_d], [1.0, 1.0]]), np.array([1.0, 1.0]))
    return float(alpha[0]), float(alpha[1])


def build_dp_problem(
    grid: ElevationGrid,
    mask: ObstacleMask,
    weather: WeatherCondition,
    goal: tuple[int, int],
    alpha: tuple[float, float] | None = None,
) -> DpProblem:
    """Assemble admissibility and cost tables for value iteration."""
    if not grid.in_bounds(*goal):
        raise ValueError(f"goal {goal} is outside the grid")
    if mask.blocked[goal]:
        raise ValueError(f"goal {goal} is an obstacle node")

    if alpha is None:
        alpha_m, alpha_d = compute_scaling_factors(grid, mask, weather)
    else:
        alpha_m, alpha_d = alpha

    slopes, admissible, valid = _hop_slopes_and_admissibility(grid, mask, weather.slope_limit)
    costs: dict[int, np.ndarray] = {}
    for a in MOVES:
        dr, dc = MOVES[a]
        dist = grid.cell_size * math.hypot(dr, dc)
        cost = np.full(grid.heights.shape, np.inf)
        ok = admissible[a]
        cost[ok] = alpha_m * slopes[a][ok] + alpha_d * dist
        if np.any(cost[ok] <= 0):
            raise ValueError("non-positive hop cost; check alpha weights and cell size")
        costs[a] = cost

    return DpProblem(
        grid=grid, goal=goal, alpha_m=alpha_m, alpha_d=alpha_d,
        slope_limit=weather.slope_limit, valid=valid,
        move_admissible=admissible, move_cost=costs, move_slope=slopes,
    )


def _shifted(values: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """values at the action target for every node; +inf where off-grid."""
    out = np.full_like(values, np.inf)
    src_r = slice(max(0, -dr), values.shape[0] - max(0, dr))
    src_c = slice(max(0, -dc), values.shape[1] - max(0, dc))
    dst_r = slice(max(0, dr), values.shape[0] + min(0, dr))
    dst_c = slice(max(0, dc), values.shape[1] + min(0, dc))
    out[src_r, src_c] = values[dst_r, dst_c]
    return out


def value_iteration(
    problem: DpProblem, tolerance: float = 1e-9, max_sweeps: int | None = None
) -> ValueFunction:
    """Synchronous Bellman sweeps until the max per-state change drops below
    tolerance.  States still at +inf on convergence are unreachable."""
    if not tolerance > 0:
        raise ValueError("tolerance must be positive")
    grid = problem.grid
    if max_sweeps is None:
        max_sweeps = 4 * (grid.n_rows + grid.n_cols)

    values = np.full(problem.shape, np.inf)
    values[problem.goal] = 0.0

    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        best = np.full(problem.shape, np.inf)
        for a in sorted(MOVES):
            dr, dc = MOVES[a]
            candidate = problem.move_cost[a] + _shifted(values, dr, dc)
            np.minimum(best, candidate, out=best)
        best[problem.goal] = 0.0  # Stay at the goal, cost 0
        finite = np.isfinite(best) | np.isfinite(values)
        with np.errstate(invalid="ignore"):
            delta = np.abs(best - values)
        change = float(delta[finite].max()) if finite.any() else 0.0
        values = best
        if change < tolerance:
            converged = True
            break

    policy = np.zeros(problem.shape, dtype=np.int8)
    best_vals = np.full(problem.shape, np.inf)
    for a in sorted(MOVES):  # ascending ids: ties keep the lowest action
        dr, dc = MOVES[a]
        candidate = problem.move_cost[a] + _shifted(values, dr, dc)
        better = candidate < best_vals
        policy[better] = a
        best_vals[better] = candidate[better]
    policy[~np.isfinite(values)] = 0
    policy[problem.goal] = STAY

    return ValueFunction(values=values, policy=policy, converged=converged, sweeps=sweeps)


def extract_route(
    vf: ValueFunction, problem: DpProblem, start: tuple[int, int]
) -> PlannedRoute:
    """Follow the policy from start to goal and summarize the hops."""
    grid = problem.grid
    if not grid.in_bounds(*start):
        raise ValueError(f"start {start} is outside the grid")
    if not problem.valid[start]:
        raise ValueError(f"start {start} is an obstacle node")
    if not vf.reachable(start):
        return PlannedRoute.unreachable()

    waypoints = [start]
    node = start
    max_steps = problem.shape[0] * problem.shape[1] + 1
    for _ in range(max_steps):
        if node == problem.goal:
            break
        action = int(vf.policy[node])
        if action not in MOVES:
            return PlannedRoute.unreachable()
        dr, dc = MOVES[action]
        node = (node[0] + dr, node[1] + dc)
        waypoints.append(node)
    else:
        raise RuntimeError("policy did not reach the goal; value function is inconsistent")

    total_dist = 0.0
    slopes_deg = []
    for a, b in zip(waypoints, waypoints[1:]):
        dr, dc = b[0] - a[0], b[1] - a[1]
        total_dist += grid.cell_size * math.hypot(dr, dc)
        rise_over_run = abs(grid.heights[b] - grid.heights[a]) / (grid.cell_size * math.hypot(dr, dc))
        slopes_deg.append(math.degrees(math.atan(rise_over_run)))

    return PlannedRoute(
        waypoints=waypoints,
        total_cost=float(vf.values[start]),
        total_distance=total_dist,
        mean_slope_deg=float(np.mean(slopes_deg)) if slopes_deg else 0.0,
        max_slope_deg=float(np.max(slopes_deg)) if slopes_deg else 0.0,
    )


# ---------------------------------------------------------------------------
# Route CSV: idx,node_row,node_col,x_m,y_m,z_m,hop_slope_deg,cum_dist_m with a
# summary comment header.
# ---------------------------------------------------------------------------

ROUTE_COLUMNS = "idx,node_row,node_col,x_m,y_m,z_m,hop_slope_deg,cum_dist_m"


def write_route_csv(route: PlannedRoute, grid: ElevationGrid, path: str) -> None:
    if not route.reachable:
        raise ValueError("cannot write an unreachable route")
    lines = [
        f"# total_cost={route.total_cost!r},total_dist_m={route.total_distance!r},"
        f"mean_slope_deg={route.mean_slope_deg!r},max_slope_deg={route.max_slope_deg!r}",
        ROUTE_COLUMNS,
    ]
    cum = 0.0
    prev = None
    for idx, node in enumerate(route.waypoints):
        x, y = grid.node_position(*node)
        z = grid.node_height(*node)
        hop_deg = 0.0
        if prev is not None:
            dr, dc = node[0] - prev[0], node[1] - prev[1]
            run = grid.cell_size * math.hypot(dr, dc)
            cum += run
            hop_deg = math.degrees(math.atan(abs(grid.heights[node] - grid.heights[prev]) / run))
        lines.append(f"{idx},{node[0]},{node[1]},{x!r},{y!r},{z!r},{hop_deg!r},{cum!r}")
        prev = node
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_route_csv(path: str) -> PlannedRoute:
    """Parse a route CSV written by write_route_csv back into a PlannedRoute."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing summary header")
    summary = dict(item.split("=") for item in lines[0][1:].strip().split(","))
    if lines[1] != ROUTE_COLUMNS:
        raise ValueError(f"{path}: unexpected column header")
    waypoints = []
    for ln in lines[2:]:
        parts = ln.split(",")
        waypoints.append((int(parts[1]), int(parts[2])))
    return PlannedRoute(
        waypoints=waypoints,
        total_cost=float(summary["total_cost"]),
        total_distance=float(summary["total_dist_m"]),
        mean_slope_deg=float(summary["mean_slope_deg"]),
        max_slope_deg=float(summary["max_slope_deg"]),
    )


def route_planar_waypoints(route: PlannedRoute, grid: ElevationGrid) -> list[tuple[float, float]]:
    """Planar (x, y) positions of the route's waypoints."""
    return [grid.node_position(*node) for node in route.waypoints]
