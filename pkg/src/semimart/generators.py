"""Reference processes with known ground truth.

All kinds are driven by +/-1 innovations, so on a full binary tree every
expectation is exact.  The emitted process is the raw construction for
the kind divided by its analytic supremum bound whenever that bound
exceeds 1; the jump kind adds its jump after normalization, since a jump
of magnitude >= 1 is its whole point.

Every kind is linear in the innovations, which gives a closed-form
conditional-increment (compensator) oracle at any coarser dyadic level:
the increments of the predictable part are kernel-weighted sums of the
innovations already revealed.  The oracle makes level statistics
available in ensemble mode, where the full tree is out of reach.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .doob import DoobDecomposition, decompose_with_increments
from .errors import InvariantViolation, ParameterError, ResourceLimitError
from .space import AdaptedProcess, DyadicGrid, FilteredSpace, binary_tree_space

KINDS = ("rademacher_bm", "drifted", "rl_fractional", "jump", "deterministic_drift")
MAX_ENSEMBLE_LEVEL = 10
DEFAULT_PATHS = 16384
SUP_TOL = 1e-12


@dataclass(frozen=True)
class GeneratorSpec:
    """What to generate: the process kind, dyadic level, and sampling mode.

    ``hurst`` only matters for rl_fractional, ``mu`` for drifted,
    ``jump_size`` for jump; the others ignore them.
    """

    kind: str
    level: int
    scale: float = 1.0
    seed: int = 0
    mode: str = "exact_tree"
    paths: int = DEFAULT_PATHS
    hurst: float = 0.75
    mu: float = 0.5
    jump_size: float = 1.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown kind {self.kind!r}; choose one of {KINDS}")
        if self.level < 1 or int(self.level) != self.level:
            raise ParameterError(f"level must be a positive integer, got {self.level}")
        if not self.scale > 0:
            raise ParameterError(f"scale must be > 0, got {self.scale}")
        if self.mode not in ("exact_tree", "ensemble"):
            raise ParameterError(f"mode must be exact_tree or ensemble, got {self.mode!r}")
        if self.mode == "ensemble":
            if self.kind == "deterministic_drift":
                raise ParameterError("deterministic_drift has one path; use exact_tree mode")
            if self.level > MAX_ENSEMBLE_LEVEL:
                raise ResourceLimitError(
                    f"ensemble mode supports levels up to {MAX_ENSEMBLE_LEVEL}, got {self.level}"
                )
            p = self.paths
            if p < 2 or p & (p - 1):
                raise ParameterError(
                    f"paths must be a power of two >= 2 for exact dyadic probabilities, got {p}"
                )
        if not 0 < self.hurst < 1:
            raise ParameterError(f"hurst must lie in (0, 1), got {self.hurst}")
        if self.mu < 0:
            raise ParameterError(f"mu must be >= 0, got {self.mu}")
        if self.kind == "jump" and self.jump_size < 1:
            raise ParameterError(f"jump magnitude must be >= 1, got {self.jump_size}")

    @property
    def n_steps(self) -> int:
        return 1 << self.level


def rl_kernel(H: float, m: np.ndarray) -> np.ndarray:
    """Fractional moving-average weights k(m) = K(m) - K(m-1); k(1) = 1."""
    m = np.asarray(m, dtype=float)
    return rl_cum_kernel(H, m) - rl_cum_kernel(H, m - 1.0)


def rl_cum_kernel(H: float, m: np.ndarray) -> np.ndarray:
    """Partial kernel sums K(m) = sum_{l<=m} k(l) = m^(H-1/2), K(0) = 0.

    K(0) = 0 is enforced explicitly: the power alone would give 0^0 = 1
    at H = 1/2, breaking the degenerate-kernel case.
    """
    m = np.asarray(m, dtype=float)
    return np.where(m > 0, np.maximum(m, 1.0) ** (H - 0.5), 0.0)


def rl_normalizer(H: float, n_steps: int) -> float:
    """c with Var(S_1) = scale^2: c = (sum_m m^(2H-1))^(-1/2)."""
    m = np.arange(1, n_steps + 1, dtype=float)
    return float(1.0 / np.sqrt((m ** (2.0 * H - 1.0)).sum()))


def _jump_col(n_steps: int) -> int:
    # the step ending at t = 1/2
    return n_steps // 2 - 1


def _increment_pieces(spec: GeneratorSpec, xi: np.ndarray):
    """Emitted increments of the kind for the given innovation rows, plus
    the normalization factor that was applied."""
    n = spec.level
    L = spec.n_steps
    x = xi.astype(float)
    if spec.kind in ("rademacher_bm", "jump"):
        raw_sup = spec.scale * 2.0 ** (n / 2)
        # scale cancels against the bound, leaving the exact dyadic 2^-n
        coef = 2.0 ** (-n) if raw_sup >= 1.0 else spec.scale * 2.0 ** (-n / 2)
        B = max(1.0, raw_sup)
        dS = coef * x
        if spec.kind == "jump":
            dS[:, _jump_col(L)] += spec.jump_size * x[:, _jump_col(L)]
        return dS, B
    if spec.kind == "drifted":
        raw_sup = spec.scale * 2.0 ** (n / 2) + spec.mu
        B = max(1.0, raw_sup)
        dS = (spec.scale * 2.0 ** (-n / 2) * x + spec.mu * 2.0 ** (-n)) / B
        return dS, B
    if spec.kind == "rl_fractional":
        H = spec.hurst
        q = spec.scale * rl_normalizer(H, L)
        raw_sup = q * float(rl_cum_kernel(H, np.arange(1, L + 1)).sum())
        B = max(1.0, raw_sup)
        # lower-triangular Toeplitz of kernel values: row j holds k(j-i+1)
        offs = np.arange(L)[:, None] - np.arange(L)[None, :] + 1
        T = np.where(offs >= 1, rl_kernel(H, np.maximum(offs, 1)), 0.0)
        return (q / B) * (x @ T.T), B
    raise ParameterError(f"kind {spec.kind!r} is not innovation-driven")


def _values_from_increments(dS: np.ndarray) -> np.ndarray:
    rows = dS.shape[0]
    return np.concatenate([np.zeros((rows, 1)), np.cumsum(dS, axis=1)], axis=1)


def oracle_increments(spec: GeneratorSpec, xi: np.ndarray, n: int) -> np.ndarray:
    """Exact predictable-part increments at dyadic level n (emitted scaling).

    Conditioning kills every innovation not yet revealed, so the level-n
    compensator increment over a coarse step is the sum of the cumulative
    kernel differences against the revealed innovations only.
    """
    if n < 1 or n > spec.level:
        raise ParameterError(f"oracle level {n} outside 1..{spec.level}")
    L = spec.n_steps
    Bs = 1 << (spec.level - n)
    m_coarse = L // Bs
    rows = xi.shape[0]
    if spec.kind in ("rademacher_bm", "jump"):
        return np.zeros((rows, m_coarse))
    if spec.kind == "drifted":
        raw_sup = spec.scale * 2.0 ** (spec.level / 2) + spec.mu
        B = max(1.0, raw_sup)
        return np.full((rows, m_coarse), spec.mu * 2.0 ** (-n) / B)
    if spec.kind == "rl_fractional":
        H = spec.hurst
        q = spec.scale * rl_normalizer(H, L)
        raw_sup = q * float(rl_cum_kernel(H, np.arange(1, L + 1)).sum())
        B = max(1.0, raw_sup)
        # W[m-1, i-1] = K(m Bs - i + 1) - K((m-1) Bs - i + 1) for i <= (m-1) Bs
        ends = (np.arange(1, m_coarse + 1) * Bs)[:, None]
        i = np.arange(1, L + 1)[None, :]
        known = i <= ends - Bs
        W = np.where(
            known,
            rl_cum_kernel(H, np.maximum(ends - i + 1, 0))
            - rl_cum_kernel(H, np.maximum(ends - Bs - i + 1, 0)),
            0.0,
        )
        return (q / B) * (xi.astype(float) @ W.T)
    raise ParameterError(f"kind {spec.kind!r} has no compensator oracle")


def _certify_bounded(spec: GeneratorSpec, values: np.ndarray):
    sup = float(np.abs(values).max())
    if spec.kind != "jump" and sup > 1.0 + SUP_TOL:
        raise InvariantViolation(f"emitted process has sup norm {sup} > 1")


def _sample_innovations(spec: GeneratorSpec) -> np.ndarray:
    """One +/-1 row per path, each from its own spawned seed stream."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.paths)
    xi = np.empty((spec.paths, spec.n_steps), dtype=np.int8)
    for row, child in enumerate(children):
        bits = np.random.default_rng(child).integers(0, 2, size=spec.n_steps)
        xi[row] = 1 - 2 * bits
    return xi


def _empirical_labels(xi: np.ndarray) -> np.ndarray:
    """Refining partitions grouping paths by innovation prefixes."""
    paths, L = xi.shape
    labels = np.zeros((L + 1, paths), dtype=np.int64)
    for j in range(1, L + 1):
        pairs = labels[j - 1] * 3 + (xi[:, j - 1] + 1)
        _, labels[j] = np.unique(pairs, return_inverse=True)
    return labels


@dataclass(frozen=True)
class EnsembleProcess:
    """Sampled innovation rows with emitted path values and the analytic
    compensator oracle; stands in for a full tree at deep levels."""

    spec: GeneratorSpec
    xi: np.ndarray
    values: np.ndarray
    bound_factor: float

    @cached_property
    def space(self) -> FilteredSpace:
        probs = np.full(self.xi.shape[0], 1.0 / self.xi.shape[0])
        return FilteredSpace(
            DyadicGrid(self.spec.level), probs, _empirical_labels(self.xi), innovations=self.xi
        )

    @cached_property
    def process(self) -> AdaptedProcess:
        return AdaptedProcess(self.space, self.values)

    def compensator_at_level(self, n: int) -> np.ndarray:
        return oracle_increments(self.spec, self.xi, n)

    def decomposer(self):
        """Level decomposer for the pipeline, backed by the oracle."""

        def decompose(S: AdaptedProcess, n: int) -> DoobDecomposition:
            return decompose_with_increments(S, n, self.compensator_at_level(n))

        return decompose


def compensator_oracle(E: EnsembleProcess) -> np.ndarray:
    """Per-path exact predictable increments at the ensemble's own level."""
    return E.compensator_at_level(E.spec.level)


def bound_factor_for(spec: GeneratorSpec) -> float:
    """The normalization divisor, a function of the spec alone."""
    return _increment_pieces(spec, np.zeros((1, spec.n_steps)))[1]


def ensemble_from_arrays(spec: GeneratorSpec, xi, values) -> EnsembleProcess:
    """Rebuild an ensemble from stored innovation rows and path values."""
    xi = np.asarray(xi, dtype=np.int8)
    values = np.asarray(values, dtype=float)
    return EnsembleProcess(spec, xi, values, bound_factor_for(spec))


def tree_space_from_innovations(level: int, probs, xi) -> FilteredSpace:
    """Filtration generated by stored +/-1 rows with the given weights."""
    xi = np.asarray(xi, dtype=np.int8)
    return FilteredSpace(DyadicGrid(level), probs, _empirical_labels(xi), innovations=xi)


def generate(spec: GeneratorSpec):
    """Build the process: (FilteredSpace, AdaptedProcess) for exact trees,
    EnsembleProcess for sampled ensembles."""
    if spec.kind == "deterministic_drift":
        grid = DyadicGrid(spec.level)
        space = FilteredSpace(grid, np.ones(1), np.zeros((grid.n_times, 1), dtype=np.int64))
        B = max(1.0, spec.scale)
        values = (spec.scale / B) * grid.times[None, :]
        S = AdaptedProcess(space, values)
        _certify_bounded(spec, values)
        return space, S
    if spec.mode == "exact_tree":
        space = binary_tree_space(spec.level)
        dS, _ = _increment_pieces(spec, space.innovations)
        values = _values_from_increments(dS)
        _certify_bounded(spec, values)
        return space, AdaptedProcess(space, values)
    xi = _sample_innovations(spec)
    dS, B = _increment_pieces(spec, xi)
    values = _values_from_increments(dS)
    _certify_bounded(spec, values)
    return EnsembleProcess(spec, xi, values, B)
