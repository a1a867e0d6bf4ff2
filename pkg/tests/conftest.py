import heapq
import math

import numpy as np
import pytest

from offroad.terrain import ElevationGrid, SurfaceModel, build_obstacle_mask


def grid_from_function(fn, n_cols=30, n_rows=30, cell=1.0, origin=(0.0, 0.0)):
    """Sample z = fn(x, y) onto an ElevationGrid (row 0 = north)."""
    xs = origin[0] + np.arange(n_cols) * cell
    ys = origin[1] + np.arange(n_rows) * cell
    X, Y = np.meshgrid(xs, ys)  # indexed [iy, ix], y ascending
    heights = np.flipud(fn(X, Y))
    return ElevationGrid(n_cols=n_cols, n_rows=n_rows, cell_size=cell,
                         origin=origin, heights=heights)


def flat_grid(height=0.0, n=10, cell=1.0, origin=(0.0, 0.0)):
    return grid_from_function(lambda x, y: np.full_like(x, float(height)),
                              n_cols=n, n_rows=n, cell=cell, origin=origin)


@pytest.fixture
def flat_surface():
    return SurfaceModel(flat_grid(n=12))


@pytest.fixture
def incline_x_surface():
    # f = x, a 45 degree slope along x
    return SurfaceModel(grid_from_function(lambda x, y: x, n_cols=12, n_rows=12))


@pytest.fixture
def bowl_surface():
    # f = (x^2 + y^2) / 20, centered so queries around (1, 0) are interior
    return SurfaceModel(grid_from_function(
        lambda x, y: (x ** 2 + y ** 2) / 20.0,
        n_cols=25, n_rows=25, cell=1.0, origin=(-12.0, -12.0)))


# ---------------------------------------------------------------------------
# Independent shortest-path oracle.  Deliberately shares no code with the
# planner: it walks the grid with its own neighbor list and recomputes
# slopes, costs, and admissibility from scratch.
# ---------------------------------------------------------------------------

def dijkstra_costs_to_goal(grid, blocked, slope_limit, goal, alpha_m, alpha_d):
    n_rows, n_cols = grid.heights.shape
    dist = {goal: 0.0}
    heap = [(0.0, goal)]
    offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist.get(node, math.inf):
            continue
        r, c = node
        for dr, dc in offsets:
            # predecessor nodes: the hop goes neighbor -> node
            nr, nc = r - dr, c - dc
            if not (0 <= nr < n_rows and 0 <= nc < n_cols):
                continue
            if blocked[nr, nc] or blocked[r, c]:
                continue
            run = grid.cell_size * math.sqrt(dr * dr + dc * dc)
            slope = abs(grid.heights[r, c] - grid.heights[nr, nc]) / run
            if slope > slope_limit:
                continue
            nd = d + alpha_m * slope + alpha_d * run
            if nd < dist.get((nr, nc), math.inf):
                dist[(nr, nc)] = nd
                heapq.heappush(heap, (nd, (nr, nc)))
    return dist


def random_problem(rng, n=12, cell=5.0, obstacle_p=0.15, rough=1.0):
    heights = rng.normal(scale=rough, size=(n, n)).cumsum(axis=0) * 0.1
    grid = grid_from_function(lambda x, y: np.zeros_like(x), n_cols=n, n_rows=n, cell=cell)
    grid.heights[:] = heights
    water = rng.random((n, n)) < obstacle_p
    goal = (int(rng.integers(0, n)), int(rng.integers(0, n)))
    water[goal] = False
    mask = build_obstacle_mask(grid, water_mask=water, steep_limit=10.0)
    return grid, mask, goal
