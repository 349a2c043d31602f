"""Grid measures, squared-Euclidean costs, transport plans, and grid CSV I/O.

Masses are non-negative integers and all feasibility/objective arithmetic on
them is exact.  With cost exponent 2 and the pixel-integer coordinate
convention every pairwise cost is an integer, so two solvers agree on an
instance iff their objective integers are equal.

Overflow bounds: the largest supported configuration (resolution 512, average
mass 1e5) has max pairwise cost 2*511^2 < 2^20 and total mass about 2.6e10 <
2^35, so any plan objective is below 2^55 and fits comfortably in a signed
64-bit integer.  Objective values returned to callers are Python ints, which
are unbounded.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Convention",
    "CostSpec",
    "GridMeasure",
    "TransportPlan",
    "Instance",
    "GridParseError",
    "FeasibilityReport",
    "cost",
    "pixel_coords",
    "plan_cost",
    "wasserstein",
    "load_grid_csv",
    "save_grid_csv",
    "check_feasible",
]


class Convention(enum.Enum):
    """Coordinate convention for pixel support points."""

    #: pixel (r, c) sits at integer coordinates (r, c)
    PIXEL_INTEGER = "pixel"
    #: pixel (r, c) sits at the center ((r+0.5)/n, (c+0.5)/n) of the unit square
    UNIT_SQUARE = "unit"


@dataclass(frozen=True)
class CostSpec:
    """Transport cost ||x - y||^p under a coordinate convention."""

    exponent: float = 2.0
    convention: Convention = Convention.PIXEL_INTEGER

    def __post_init__(self):
        if not np.isfinite(self.exponent) or self.exponent < 1.0:
            raise ValueError(f"cost exponent must be >= 1, got {self.exponent}")

    @property
    def integer_valued(self) -> bool:
        """True when all pairwise costs are exact integers."""
        return self.exponent == 2.0 and self.convention is Convention.PIXEL_INTEGER


@dataclass(frozen=True)
class GridMeasure:
    """Non-negative integer masses on an n x n pixel grid, row-major."""

    resolution: int
    masses: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = self.resolution
        if n <= 0:
            raise ValueError(f"resolution must be positive, got {n}")
        masses = np.ascontiguousarray(self.masses, dtype=np.int64)
        if masses.shape != (n * n,):
            raise ValueError(f"expected {n * n} masses, got shape {masses.shape}")
        if (masses < 0).any():
            bad = int(np.flatnonzero(masses < 0)[0])
            raise ValueError(f"negative mass at pixel {bad}")
        if not (masses > 0).any():
            raise ValueError("measure must have at least one positive mass")
        masses.setflags(write=False)
        object.__setattr__(self, "masses", masses)

    @property
    def total(self) -> int:
        return int(self.masses.sum())

    def as_image(self) -> np.ndarray:
        """Masses reshaped to (n, n), row-major."""
        return self.masses.reshape(self.resolution, self.resolution)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridMeasure):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.masses, other.masses)

    def __hash__(self):
        return hash((self.resolution, self.masses.tobytes()))


@dataclass(frozen=True)
class TransportPlan:
    """Sparse transference plan: (source pixel, target pixel, positive mass) entries."""

    source_resolution: int
    target_resolution: int
    entries: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        m2 = self.source_resolution**2
        n2 = self.target_resolution**2
        seen = set()
        for i, j, mass in self.entries:
            if not (0 <= i < m2 and 0 <= j < n2):
                raise ValueError(f"plan entry ({i}, {j}) out of range")
            if mass <= 0:
                raise ValueError(f"plan entry ({i}, {j}) has non-positive mass {mass}")
            if (i, j) in seen:
                raise ValueError(f"duplicate plan entry ({i}, {j})")
            seen.add((i, j))

    @property
    def total(self) -> int:
        return sum(m for _, _, m in self.entries)

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column sums as int64 arrays over the full grids."""
        row = np.zeros(self.source_resolution**2, dtype=np.int64)
        col = np.zeros(self.target_resolution**2, dtype=np.int64)
        for i, j, mass in self.entries:
            row[i] += mass
            col[j] += mass
        return row, col


@dataclass(frozen=True)
class Instance:
    """A balanced transport problem between two measures on the same grid."""

    source: GridMeasure
    target: GridMeasure
    cost: CostSpec = CostSpec()

    def __post_init__(self):
        if self.source.resolution != self.target.resolution:
            raise ValueError(
                f"source and target resolutions differ: "
                f"{self.source.resolution} vs {self.target.resolution}"
            )
        if self.source.total != self.target.total:
            raise ValueError(
                f"unbalanced instance: source total {self.source.total} "
                f"!= target total {self.target.total}"
            )

    @property
    def resolution(self) -> int:
        return self.source.resolution


def pixel_coords(index: int, n: int, convention: Convention):
    """Coordinates of pixel ``index`` on an n x n grid under the convention."""
    if not 0 <= index < n * n:
        raise IndexError(f"pixel index {index} out of range for resolution {n}")
    r, c = divmod(index, n)
    if convention is Convention.PIXEL_INTEGER:
        return float(r), float(c)
    return (r + 0.5) / n, (c + 0.5) / n


def cost(i: int, j: int, spec: CostSpec, n: int):
    """Cost ||x_i - y_j||^p between pixels i and j of an n x n grid.

    Returns a Python int when the spec is integer-valued (p=2, pixel-integer),
    otherwise a float.
    """
    if not 0 <= i < n * n:
        raise IndexError(f"source index {i} out of range for resolution {n}")
    if not 0 <= j < n * n:
        raise IndexError(f"target index {j} out of range for resolution {n}")
    ri, ci = divmod(i, n)
    rj, cj = divmod(j, n)
    d2 = (ri - rj) ** 2 + (ci - cj) ** 2
    if spec.convention is Convention.UNIT_SQUARE:
        d2 = d2 / (n * n)
    if spec.exponent == 2.0:
        return d2
    return float(d2) ** (spec.exponent / 2.0)


def plan_cost(plan: TransportPlan, spec: CostSpec):
    """Total cost of a plan; exact (Python int) for integer-valued specs."""
    n = plan.source_resolution
    if spec.integer_valued:
        acc = 0
        for i, j, mass in plan.entries:
            ri, ci = divmod(i, n)
            rj, cj = divmod(j, n)
            acc += ((ri - rj) ** 2 + (ci - cj) ** 2) * mass
        return acc
    acc = 0.0
    for i, j, mass in plan.entries:
        acc += cost(i, j, spec, n) * mass
    return acc


def wasserstein(optimal_cost, total_mass: int, spec: CostSpec) -> float:
    """Wasserstein distance of the probability-normalized instance.

    ``optimal_cost`` is the optimal objective over raw integer masses; the
    result is (optimal_cost / total_mass)^(1/p) in the units of the
    coordinate convention.
    """
    if total_mass <= 0:
        raise ValueError("total mass must be positive")
    return float(optimal_cost / total_mass) ** (1.0 / spec.exponent)


class GridParseError(ValueError):
    """Raised when a grid CSV file is malformed; names the offending row/column."""


def load_grid_csv(path) -> GridMeasure:
    """Parse an n x n grid of comma-separated non-negative integers."""
    rows: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(",")
            values = []
            for colno, tok in enumerate(tokens, start=1):
                tok = tok.strip()
                try:
                    v = int(tok)
                except ValueError:
                    raise GridParseError(
                        f"{path}: non-integer token {tok!r} at row {lineno}, column {colno}"
                    ) from None
                if v < 0:
                    raise GridParseError(
                        f"{path}: negative value {v} at row {lineno}, column {colno}"
                    )
                values.append(v)
            rows.append(values)
    if not rows:
        raise GridParseError(f"{path}: empty file")
    n = len(rows[0])
    for rowno, values in enumerate(rows, start=1):
        if len(values) != n:
            raise GridParseError(
                f"{path}: ragged row at row {rowno}: expected {n} values, got {len(values)}"
            )
    if len(rows) != n:
        raise GridParseError(f"{path}: expected {n} rows to match {n} columns, got {len(rows)}")
    return GridMeasure(resolution=n, masses=np.array(rows, dtype=np.int64).ravel())


def save_grid_csv(measure: GridMeasure, path) -> None:
    """Write a measure as n rows of n comma-separated integers."""
    image = measure.as_image()
    with open(path, "w", encoding="utf-8") as fh:
        for row in image:
            fh.write(",".join(str(int(v)) for v in row))
            fh.write("\n")


@dataclass(frozen=True)
class FeasibilityReport:
    """Outcome of an exact marginal check; falsy when any constraint is violated.

    Violations are (index, deficit) pairs where deficit = required - actual,
    so positive deficits mean missing mass.
    """

    ok: bool
    row_violations: tuple[tuple[int, int], ...] = ()
    col_violations: tuple[tuple[int, int], ...] = ()

    def __bool__(self) -> bool:
        return self.ok


def check_feasible(plan: TransportPlan, instance: Instance) -> FeasibilityReport:
    """Exact integer check that the plan's marginals equal the instance measures."""
    row, col = plan.marginals()
    row_def = instance.source.masses - row
    col_def = instance.target.masses - col
    rows = tuple((int(i), int(row_def[i])) for i in np.flatnonzero(row_def))
    cols = tuple((int(j), int(col_def[j])) for j in np.flatnonzero(col_def))
    return FeasibilityReport(ok=not rows and not cols, row_violations=rows, col_violations=cols)
