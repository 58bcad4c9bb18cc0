"""Finite filtered probability spaces on dyadic time grids.

A space is a finite set of atoms with positive probabilities and one
partition of the atom set per grid time; partitions refine as time
advances.  Conditional expectation is an exact cell-wise weighted
average, so every identity in the package can be checked to float
precision instead of sampled.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    InvariantViolation,
    ParameterError,
    PreconditionError,
    ResourceLimitError,
    StructuralError,
)

ATOL = 1e-12
MAX_TREE_LEVEL = 4


@dataclass(frozen=True)
class DyadicGrid:
    """The time grid {0, 1/2^n, 2/2^n, ..., 1}."""

    level: int

    def __post_init__(self):
        if self.level < 0 or int(self.level) != self.level:
            raise ParameterError(f"grid level must be a non-negative integer, got {self.level}")

    @property
    def n_steps(self) -> int:
        return 1 << self.level

    @property
    def n_times(self) -> int:
        return self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_times) / self.n_steps

    def index_of(self, t: float) -> int:
        """Index of grid time t; dyadic floats at this level are exact."""
        k = t * self.n_steps
        j = int(round(k))
        if j < 0 or j > self.n_steps or abs(k - j) > ATOL * self.n_steps:
            raise ParameterError(f"{t!r} is not a level-{self.level} grid time")
        return j


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.array(a, copy=True)
    out.setflags(write=False)
    return out


def _first_per_cell(labels: np.ndarray) -> np.ndarray:
    """Index of one representative atom per cell label."""
    _, first = np.unique(labels, return_index=True)
    return first


def _constant_on_cells(labels: np.ndarray, x: np.ndarray, atol: float = ATOL) -> bool:
    rep = np.zeros(labels.max() + 1, dtype=x.dtype)
    rep[labels[::-1]] = x[::-1]  # representative = first atom of each cell
    return bool(np.all(np.abs(x - rep[labels]) <= atol))


@dataclass(frozen=True)
class FilteredSpace:
    """Atoms, probabilities, and a refining partition per grid time.

    ``labels[j, a]`` is the cell id of atom ``a`` in the partition at
    grid time index ``j``; ids are dense integers starting at 0.
    ``innovations`` optionally stores the +/-1 driving sequences (one row
    per atom) for tree- or ensemble-generated spaces; it is carried for
    serialization and plays no role in the probability structure.
    """

    grid: DyadicGrid
    probs: np.ndarray
    labels: np.ndarray
    innovations: np.ndarray | None = None

    def __post_init__(self):
        probs = _frozen(np.asarray(self.probs, dtype=float))
        labels = _frozen(np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)
        if self.innovations is not None:
            object.__setattr__(self, "innovations", _frozen(np.asarray(self.innovations, dtype=np.int8)))
        if probs.ndim != 1 or probs.size == 0:
            raise ParameterError("probs must be a non-empty 1-d array")
        if np.any(probs <= 0):
            raise InvariantViolation("all atom probabilities must be > 0")
        if abs(probs.sum() - 1.0) > ATOL:
            raise InvariantViolation(f"probabilities sum to {probs.sum()!r}, not 1 within {ATOL}")
        if labels.shape != (self.grid.n_times, probs.size):
            raise ParameterError(
                f"labels must have shape (n_times, n_atoms) = {(self.grid.n_times, probs.size)}"
            )
        for j in range(1, self.grid.n_times):
            if not self._refines(labels[j], labels[j - 1]):
                raise InvariantViolation(f"partition at time index {j} does not refine index {j - 1}")

    @staticmethod
    def _refines(fine: np.ndarray, coarse: np.ndarray) -> bool:
        """Every fine cell sits inside a single coarse cell."""
        rep = np.zeros(fine.max() + 1, dtype=np.int64)
        rep[fine[::-1]] = coarse[::-1]
        return bool(np.all(rep[fine] == coarse))

    @property
    def n_atoms(self) -> int:
        return self.probs.size

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def labels_at(self, j: int) -> np.ndarray:
        return self.labels[j]

    def cell_average(self, x: np.ndarray, j: int) -> np.ndarray:
        """Probability-weighted average of x over each cell at time index j."""
        lab = self.labels[j]
        mass = np.bincount(lab, weights=self.probs)
        if np.any(mass <= 0):
            raise InvariantViolation("partition cell with zero probability")
        avg = np.bincount(lab, weights=self.probs * x) / mass
        return avg[lab]

    def expectation(self, x: np.ndarray) -> float:
        return float(self.probs @ x)


INF_TIME = np.inf


@dataclass(frozen=True)
class StoppingTime:
    """A grid time (or infinity) per atom.

    ``index[a]`` is the grid time index for atom ``a``; the sentinel
    ``n_times`` (one past the final index) encodes infinity.
    """

    space: FilteredSpace
    index: np.ndarray

    def __post_init__(self):
        idx = _frozen(np.asarray(self.index, dtype=np.int64))
        object.__setattr__(self, "index", idx)
        if idx.shape != (self.space.n_atoms,):
            raise ParameterError("stopping time needs one grid index per atom")
        if np.any(idx < 0) or np.any(idx > self.inf_index):
            raise ParameterError("stopping-time indices out of grid range")

    @property
    def inf_index(self) -> int:
        return self.space.grid.n_times

    @classmethod
    def from_times(cls, space: FilteredSpace, times: np.ndarray) -> "StoppingTime":
        times = np.asarray(times, dtype=float)
        idx = np.empty(times.shape, dtype=np.int64)
        finite = np.isfinite(times)
        idx[~finite] = space.grid.n_times
        idx[finite] = [space.grid.index_of(t) for t in times[finite]]
        return cls(space, idx)

    @classmethod
    def constant(cls, space: FilteredSpace, t: float) -> "StoppingTime":
        j = space.grid.n_times if t == INF_TIME else space.grid.index_of(t)
        return cls(space, np.full(space.n_atoms, j, dtype=np.int64))

    @property
    def times(self) -> np.ndarray:
        """Per-atom time values, np.inf where never stopped."""
        out = np.full(self.space.n_atoms, INF_TIME)
        finite = self.index < self.inf_index
        out[finite] = self.space.times[self.index[finite]]
        return out

    def prob_finite(self) -> float:
        return float(self.space.probs[self.index < self.inf_index].sum())

    def min_with(self, other: "StoppingTime") -> "StoppingTime":
        if other.space is not self.space:
            raise StructuralError("stopping times live on different spaces")
        return StoppingTime(self.space, np.minimum(self.index, other.index))


def binary_tree_space(level: int, max_level: int = MAX_TREE_LEVEL) -> FilteredSpace:
    """The full binary innovation tree at a dyadic level.

    Atoms are all +/-1 sequences of length 2^level with equal probability
    2^(-2^level); the partition at time j/2^level groups atoms by their
    first j innovations.
    """
    if level < 0 or int(level) != level:
        raise ParameterError(f"level must be a non-negative integer, got {level}")
    if level > max_level:
        raise ResourceLimitError(
            f"level-{level} full tree needs {2 ** (2 ** level)} atoms; cap is level {max_level} "
            f"({2 ** (2 ** max_level)} atoms) — use the ensemble mode beyond the cap"
        )
    grid = DyadicGrid(level)
    steps = grid.n_steps
    n_atoms = 1 << steps
    atoms = np.arange(n_atoms, dtype=np.int64)
    # bit j (most significant first) encodes innovation j: bit 0 -> +1
    bits = (atoms[:, None] >> (steps - 1 - np.arange(steps))[None, :]) & 1
    innovations = (1 - 2 * bits).astype(np.int8)
    labels = np.zeros((grid.n_times, n_atoms), dtype=np.int64)
    for j in range(1, grid.n_times):
        labels[j] = atoms >> (steps - j)
    probs = np.full(n_atoms, 1.0 / n_atoms)
    return FilteredSpace(grid, probs, labels, innovations=innovations)


def build_binary_tree(level: int, innovation_map, max_level: int = MAX_TREE_LEVEL):
    """Binary tree space plus a process defined by a prefix map.

    ``innovation_map`` maps a sign prefix (tuple) to the process value at
    the prefix's end time.  Returns (FilteredSpace, AdaptedProcess).
    """
    space = binary_tree_space(level, max_level)
    grid = space.grid
    n_atoms = space.n_atoms
    innovations = space.innovations
    values = np.empty((n_atoms, grid.n_times))
    cache: dict[tuple, float] = {}
    for a in range(n_atoms):
        row = innovations[a]
        for j in range(grid.n_times):
            prefix = tuple(int(s) for s in row[:j])
            if prefix not in cache:
                cache[prefix] = float(innovation_map(prefix))
            values[a, j] = cache[prefix]
    return space, AdaptedProcess(space, values)


@dataclass(frozen=True)
class AdaptedProcess:
    """Grid-indexed values per atom, constant on partition cells.

    ``times`` may be the full grid or any increasing subset of it (used
    for processes sampled at a coarser dyadic level); ``time_index``
    maps columns back to the space's grid.
    """

    space: FilteredSpace
    values: np.ndarray
    time_index: np.ndarray | None = None

    def __post_init__(self):
        vals = _frozen(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", vals)
        if self.time_index is None:
            ti = np.arange(self.space.grid.n_times)
        else:
            ti = np.asarray(self.time_index, dtype=np.int64)
        ti = _frozen(ti)
        object.__setattr__(self, "time_index", ti)
        if vals.ndim != 2 or vals.shape[0] != self.space.n_atoms:
            raise ParameterError("values must have shape (n_atoms, n_times)")
        if vals.shape[1] != ti.size:
            raise ParameterError("values and time_index disagree on the number of columns")
        if np.any(np.diff(ti) <= 0) or ti[0] < 0 or ti[-1] >= self.space.grid.n_times:
            raise ParameterError("time_index must be strictly increasing within the grid")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("process values must be finite")

    @property
    def times(self) -> np.ndarray:
        return self.space.times[self.time_index]

    @property
    def n_times(self) -> int:
        return self.time_index.size

    def col_of(self, t: float) -> int:
        j = self.space.grid.index_of(t)
        pos = int(np.searchsorted(self.time_index, j))
        if pos >= self.time_index.size or self.time_index[pos] != j:
            raise ParameterError(f"process is not sampled at time {t!r}")
        return pos

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.col_of(t)]

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=1)

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def restrict(self, grid_indices: np.ndarray) -> "AdaptedProcess":
        """Subsample onto the given grid-time indices (must be sampled)."""
        pos = np.searchsorted(self.time_index, grid_indices)
        if np.any(pos >= self.time_index.size) or np.any(self.time_index[pos] != grid_indices):
            raise ParameterError("process is not sampled at all requested times")
        return AdaptedProcess(self.space, self.values[:, pos], grid_indices)

    def is_adapted(self, atol: float = ATOL) -> bool:
        for c in range(self.n_times):
            if not _constant_on_cells(self.space.labels[self.time_index[c]], self.values[:, c], atol):
                return False
        return True

    def _same_shape(self, other: "AdaptedProcess"):
        if other.space is not self.space:
            raise StructuralError("processes live on different spaces")
        if not np.array_equal(other.time_index, self.time_index):
            raise StructuralError("processes are sampled on different time sets")

    def __add__(self, other):
        self._same_shape(other)
        return AdaptedProcess(self.space, self.values + other.values, self.time_index)

    def __sub__(self, other):
        self._same_shape(other)
        return AdaptedProcess(self.space, self.values - other.values, self.time_index)

    def scale(self, factor: float) -> "AdaptedProcess":
        return AdaptedProcess(self.space, self.values * factor, self.time_index)

    def shift(self, offset: np.ndarray) -> "AdaptedProcess":
        """Add a per-atom constant (an F_0-measurable shift)."""
        off = np.asarray(offset, dtype=float).reshape(-1, 1)
        return AdaptedProcess(self.space, self.values + off, self.time_index)


def conditional_expectation(space: FilteredSpace, x: np.ndarray, t: float) -> np.ndarray:
    """E[x | F_t]: the cell-wise probability-weighted average at time t."""
    x = np.asarray(x, dtype=float)
    if x.shape != (space.n_atoms,):
        raise ParameterError("random variable needs one value per atom")
    if not np.all(np.isfinite(x)):
        raise PreconditionError("conditional expectation requires finite values")
    return space.cell_average(x, space.grid.index_of(t))


def check_stopping_time(tau: StoppingTime) -> bool:
    """True iff {tau <= t} is a union of partition cells for every grid t."""
    space = tau.space
    idx = tau.index
    if idx.size and idx.min() == idx.max():
        return True  # deterministic times always qualify
    n_times, n_atoms = space.labels.shape
    events = idx[None, :] <= np.arange(n_times)[:, None]
    # one dense id per (time, cell) lets all rows share one representative
    # lookup; reversed assignment leaves the first atom of each cell
    glob = space.labels + (np.arange(n_times) * n_atoms)[:, None]
    rep = np.zeros(n_times * n_atoms, dtype=bool)
    rep[glob[:, ::-1]] = events[:, ::-1]
    return bool(np.all(rep[glob] == events))


def stop_process(S: AdaptedProcess, tau: StoppingTime) -> AdaptedProcess:
    """Freeze S at tau: values become S_{t ∧ tau} per atom."""
    if tau.space is not S.space:
        raise StructuralError("stopping time and process live on different spaces")
    if not check_stopping_time(tau):
        raise PreconditionError("stop_process requires a genuine stopping time")
    # position of tau inside S's own column set; tau must be sampled by S
    finite = tau.index < tau.inf_index
    pos = np.searchsorted(S.time_index, np.minimum(tau.index, S.time_index[-1]))
    bad = finite & ((pos >= S.time_index.size) | (S.time_index[np.minimum(pos, S.time_index.size - 1)] != tau.index))
    if np.any(bad):
        raise StructuralError("stopping time takes values outside the process's sample times")
    cap = np.where(finite, pos, S.n_times - 1)
    cols = np.minimum(np.arange(S.n_times)[None, :], cap[:, None])
    return AdaptedProcess(S.space, np.take_along_axis(S.values, cols, axis=1), S.time_index)


def first_hitting_time(process: AdaptedProcess, hit: np.ndarray, start_col: int = 0) -> StoppingTime:
    """First sampled time whose column satisfies ``hit`` (bool per atom, column).

    ``hit`` must be computable from the path up to that time for the
    result to be a stopping time; callers pass running-functional events.
    """
    hit = np.asarray(hit, dtype=bool)
    if hit.shape != process.values.shape:
        raise ParameterError("hit mask must match the process's shape")
    padded = np.concatenate([hit[:, start_col:], np.ones((hit.shape[0], 1), dtype=bool)], axis=1)
    first = padded.argmax(axis=1) + start_col
    idx = np.where(first < process.n_times, process.time_index[np.minimum(first, process.n_times - 1)],
                   process.space.grid.n_times)
    return StoppingTime(process.space, idx)
