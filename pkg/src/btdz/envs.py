"""Built-in benchmark MDPs and their named test rewards.

Three small environments stand in for the locomotion suites: a four-room
gridworld with slip, a one-dimensional corridor whose reverse action is
unreliable, and an open grid with an upward wind band. Each ships with four
named state-reward vectors.
"""
from __future__ import annotations

from typing import Callable, Dict, List, Tuple

import numpy as np

from .errors import InvalidArgumentError
from .mdp import TabularMdp

BENCHMARK_DISCOUNT = 0.95

# stay, north, east, south, west
_MOVES = [(0, 0), (-1, 0), (0, 1), (1, 0), (0, -1)]


def _grid_step(width, height, blocked):
    """Deterministic successor table (A, S) for a grid with thin walls.

    ``blocked(r, c, r2, c2)`` is True when the move between the two cells
    crosses a wall.
    """
    n = width * height
    nxt = np.zeros((len(_MOVES), n), dtype=np.int64)
    for r in range(height):
        for c in range(width):
            s = r * width + c
            for a, (dr, dc) in enumerate(_MOVES):
                r2, c2 = r + dr, c + dc
                if not (0 <= r2 < height and 0 <= c2 < width) or blocked(r, c, r2, c2):
                    r2, c2 = r, c
                nxt[a, s] = r2 * width + c2
    return nxt


def _slippery(nxt: np.ndarray, slip: float) -> np.ndarray:
    """Intended move w.p. 1 - slip, otherwise a uniformly random move."""
    n_a, n = nxt.shape
    P = np.zeros((n_a, n, n))
    rows = np.arange(n)
    for a in range(n_a):
        P[a, rows, nxt[a]] += 1.0 - slip
        for b in range(n_a):
            P[a, rows, nxt[b]] += slip / n_a
    return P


def four_rooms(size: int = 8, slip: float = 0.1, discount: float = BENCHMARK_DISCOUNT) -> TabularMdp:
    """``size`` x ``size`` cells split into four rooms by thin walls with doorways."""
    if size < 4 or size % 2:
        raise InvalidArgumentError("four_rooms needs an even size >= 4")
    half = size // 2
    doors_v = {1, size - 2}  # rows where the vertical wall is open
    doors_h = {1, size - 2}  # columns where the horizontal wall is open

    def blocked(r, c, r2, c2):
        if r == r2 and {c, c2} == {half - 1, half}:
            return r not in doors_v
        if c == c2 and {r, r2} == {half - 1, half}:
            return c not in doors_h
        return False

    P = _slippery(_grid_step(size, size, blocked), slip)
    mu = np.zeros(size * size)
    for r in range(half):
        for c in range(half):
            mu[r * size + c] = 1.0
    mu /= mu.sum()
    return TabularMdp(P, mu, discount, name="four_rooms")


def corridor(length: int = 64, forward_success: float = 0.9, reverse_success: float = 0.5,
             discount: float = BENCHMARK_DISCOUNT) -> TabularMdp:
    """Directed corridor: stay, step forward, dash forward (+2), step back.

    Moving backward succeeds only with probability ``reverse_success``; the
    dash lands one cell short with probability 1 - forward_success.
    """
    if length < 4:
        raise InvalidArgumentError("corridor needs length >= 4")
    n = length
    P = np.zeros((4, n, n))
    for s in range(n):
        fwd, dash, back = min(s + 1, n - 1), min(s + 2, n - 1), max(s - 1, 0)
        P[0, s, s] = 1.0
        P[1, s, fwd] += forward_success
        P[1, s, s] += 1.0 - forward_success
        P[2, s, dash] += forward_success
        P[2, s, fwd] += 1.0 - forward_success
        P[3, s, back] += reverse_success
        P[3, s, s] += 1.0 - reverse_success
    mu = np.zeros(n)
    lo, hi = 3 * n // 8, 5 * n // 8
    mu[lo:hi] = 1.0
    mu /= mu.sum()
    return TabularMdp(P, mu, discount, name="corridor")


def windy_grid(size: int = 8, wind: float = 0.5, discount: float = BENCHMARK_DISCOUNT) -> TabularMdp:
    """Open grid whose middle columns push the agent one extra cell north w.p. ``wind``."""
    if size < 4:
        raise InvalidArgumentError("windy_grid needs size >= 4")
    nxt = _grid_step(size, size, lambda *args: False)
    n = size * size
    windy_cols = set(range(size // 2 - 1, size // 2 + 2))
    P = np.zeros((len(_MOVES), n, n))
    for a in range(len(_MOVES)):
        for s in range(n):
            s2 = nxt[a, s]
            r2, c2 = divmod(int(s2), size)
            if c2 in windy_cols and r2 > 0:
                P[a, s, s2] += 1.0 - wind
                P[a, s, (r2 - 1) * size + c2] += wind
            else:
                P[a, s, s2] += 1.0
    mu = np.zeros(n)
    mu[(size - 1) * size + 0] = 0.5
    mu[(size - 2) * size + 0] = 0.5
    return TabularMdp(P, mu, discount, name="windy_grid")


def _grid_tasks(size: int, avoid_cells) -> Dict[str, np.ndarray]:
    n = size * size
    rows, cols = np.divmod(np.arange(n), size)
    corner = np.zeros(n)
    corner[n - 1] = 1.0
    center = np.zeros(n)
    mid = size // 2
    center[((rows == mid - 1) | (rows == mid)) & ((cols == mid - 1) | (cols == mid))] = 1.0
    avoid = np.ones(n)
    avoid[avoid_cells(rows, cols)] = -1.0
    traverse = cols / (size - 1.0)
    return {"reach_corner": corner, "reach_center": center, "avoid_region": avoid, "traverse": traverse}


def four_rooms_tasks(size: int = 8) -> Dict[str, np.ndarray]:
    half = size // 2
    return _grid_tasks(size, lambda r, c: (r < half) & (c < half))


def windy_grid_tasks(size: int = 8) -> Dict[str, np.ndarray]:
    return _grid_tasks(size, lambda r, c: r <= 1)


def corridor_tasks(length: int = 64) -> Dict[str, np.ndarray]:
    pos = np.arange(length) / (length - 1.0)
    behind = np.zeros(length)
    behind[length // 4 - 2: length // 4 + 2] = 1.0
    center = np.zeros(length)
    center[length // 2 - 2: length // 2 + 2] = 1.0
    return {
        "run_forward": pos.copy(),
        "run_backward": 1.0 - pos,
        "reach_behind": behind,
        "hold_center": center,
    }


BUILTIN_ENVS: Dict[str, Tuple[Callable[..., TabularMdp], Callable[..., Dict[str, np.ndarray]]]] = {
    "four_rooms": (four_rooms, four_rooms_tasks),
    "corridor": (corridor, corridor_tasks),
    "windy_grid": (windy_grid, windy_grid_tasks),
}


def builtin_names() -> List[str]:
    return list(BUILTIN_ENVS)


def make_env(name: str, **params) -> Tuple[TabularMdp, Dict[str, np.ndarray]]:
    """Build a benchmark MDP and its named test rewards."""
    try:
        build, tasks = BUILTIN_ENVS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown environment {name!r}; choose from {builtin_names()}") from None
    mdp = build(**params)
    size_key = "length" if name == "corridor" else "size"
    task_kwargs = {size_key: params[size_key]} if size_key in params else {}
    return mdp, tasks(**task_kwargs)
