"""The grid of activation, sparsity and V'(q*) targets used for the sweep."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

from .activations import Kind
from .errors import EocInfeasibleError, NoSolutionError
from .meanfield import EocSolution, eoc_solve, solve_m_for_vprime

UNCLIPPED_S = (0.5, 0.6, 0.7)
CRELU_S = (0.6, 0.7, 0.8, 0.85)
CST_S = (0.5, 0.6, 0.7, 0.8, 0.85)
VPRIME_TARGETS = (0.5, 0.7, 0.9)

SWEEP_HEADER = ("kind", "s", "tau", "m", "vprime", "vsecond", "accuracy", "sparsity", "diverged", "status")


@dataclass(frozen=True)
class Cell:
    kind: Kind
    s: float
    vprime_target: Optional[float] = None


def default_grid(kinds: Optional[Iterable] = None) -> List[Cell]:
    """Unclipped kinds at each sparsity, clipped kinds at each (s, V') pair."""
    wanted = None if kinds is None else {Kind.parse(k) for k in kinds}
    cells = []
    for kind, s_values in (
        (Kind.SHIFTED_RELU, UNCLIPPED_S),
        (Kind.SOFT_THRESHOLD, UNCLIPPED_S),
        (Kind.CLIPPED_RELU, CRELU_S),
        (Kind.CLIPPED_SOFT_THRESHOLD, CST_S),
    ):
        if wanted is not None and kind not in wanted:
            continue
        for s in s_values:
            if kind.clipped:
                cells.extend(Cell(kind, s, v) for v in VPRIME_TARGETS)
            else:
                cells.append(Cell(kind, s))
    return cells


def custom_grid(kinds: Sequence, s_values: Sequence[float], vprimes: Sequence[float]) -> List[Cell]:
    cells = []
    for k in kinds:
        kind = Kind.parse(k)
        for s in s_values:
            if kind.clipped:
                cells.extend(Cell(kind, s, v) for v in vprimes)
            else:
                cells.append(Cell(kind, s))
    return cells


def solve_cell(cell: Cell, q_star: float = 1.0) -> Tuple[Optional[EocSolution], str]:
    """EoC solution for a cell, or ``(None, reason)`` when none exists."""
    try:
        m = None
        if cell.kind.clipped:
            m = solve_m_for_vprime(cell.kind, cell.s, q_star, cell.vprime_target)
        return eoc_solve(cell.kind, cell.s, m, q_star), "ok"
    except (EocInfeasibleError, NoSolutionError) as exc:
        return None, f"infeasible: {exc}"


def analytic_row(cell: Cell, sol: Optional[EocSolution], status: str) -> list:
    nan = math.nan
    if sol is None:
        return [cell.kind.value, cell.s, nan, nan, nan, nan, None, None, None, status]
    return [
        cell.kind.value, cell.s, sol.tau, sol.m, sol.vprime_at_qstar, sol.vsecond_at_qstar,
        None, None, None, status,
    ]
