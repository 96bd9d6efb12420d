"""
Multi-objective algebra for the DG-MORL lab.

Weight simplex handling, linear utilities, Pareto and convex-coverage-set
pruning, corner-weight enumeration and the expected-utility metric.
Every type here is immutable and every function is pure, so values can be
shared freely between the curriculum driver and evaluation code.
"""

import hashlib
import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Iterable, List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

# Simplex membership, corner dedup and maximizer membership band.
# Pareto dominance itself is exact.
TOLERANCE = 1e-9

# |det| below this is treated as a degenerate corner system and skipped
_SINGULAR_DET = 1e-12

SUPPORTED_CORNER_DIMENSIONS = (2, 3)


class MOError(ValueError):
    """Base class for multi-objective algebra errors"""


class NegativeComponent(MOError):
    pass


class SumNotOne(MOError):
    pass


class DimensionTooSmall(MOError):
    pass


class DimensionMismatch(MOError):
    pass


class EmptyInput(MOError):
    pass


class UnsupportedDimension(MOError):
    pass


# =============================================================================
# VALUE TYPES
# =============================================================================

@dataclass(frozen=True)
class WeightVector:
    """Point on the d-simplex: preference mass per objective"""
    components: Tuple[float, ...]

    def __post_init__(self):
        if len(self.components) < 2:
            raise DimensionTooSmall(f"Weight needs at least 2 components, got {len(self.components)}")
        if any(c < 0 for c in self.components):
            raise NegativeComponent(f"Weight components must be >= 0: {self.components}")
        if abs(math.fsum(self.components) - 1.0) >= TOLERANCE:
            raise SumNotOne(f"Weight components must sum to 1: {self.components}")

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, index):
        return self.components[index]

    def as_array(self) -> np.ndarray:
        return _weight_array(self.components)

    def __repr__(self):
        return f"WeightVector({format_vector(self.components, digits=6)})"


@dataclass(frozen=True)
class ValueVector:
    """Discounted return per objective"""
    components: Tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.components):
            raise MOError(f"Value components must be finite: {self.components}")

    def __len__(self):
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def __getitem__(self, index):
        return self.components[index]

    def as_array(self) -> np.ndarray:
        return np.array(self.components, dtype=float)

    def __repr__(self):
        return f"ValueVector({format_vector(self.components, digits=6)})"


@dataclass(frozen=True)
class CornerWeightSet:
    """Vertices of the upper utility envelope over the simplex"""
    weights: Tuple[WeightVector, ...]
    source_hash: str

    def __len__(self):
        return len(self.weights)

    def __iter__(self):
        return iter(self.weights)


@dataclass(frozen=True)
class CcsSet:
    """Convex coverage set: (value, handle) pairs, closed under ties"""
    entries: Tuple[Tuple[ValueVector, Any], ...]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def values(self) -> List[ValueVector]:
        return [value for value, _ in self.entries]

    @property
    def handles(self) -> List[Any]:
        return [handle for _, handle in self.entries]


@lru_cache(maxsize=4096)
def _weight_array(components: Tuple[float, ...]) -> np.ndarray:
    array = np.array(components, dtype=float)
    array.flags.writeable = False
    return array


def make_weight(components: Sequence[float]) -> WeightVector:
    """
    Validate a preference weight.

    A sum that misses 1 by less than TOLERANCE is renormalized; larger
    deviations raise SumNotOne.
    """
    values = tuple(float(c) for c in components)
    if len(values) < 2:
        raise DimensionTooSmall(f"Weight needs at least 2 components, got {len(values)}")
    if any(c < 0 for c in values):
        raise NegativeComponent(f"Weight components must be >= 0: {values}")
    total = math.fsum(values)
    if abs(total - 1.0) >= TOLERANCE:
        raise SumNotOne(f"Weight components sum to {total!r}, expected 1")
    if total != 1.0:
        values = tuple(c / total for c in values)
    return WeightVector(values)


def make_value(components: Iterable[float]) -> ValueVector:
    return ValueVector(tuple(float(c) for c in components))


def unit_weights(d: int) -> List[WeightVector]:
    """The d simplex extrema, in objective order"""
    return [WeightVector(tuple(1.0 if i == j else 0.0 for j in range(d))) for i in range(d)]


def format_float(x: float) -> str:
    """Decimal text with 17 significant digits (exact float round trip)"""
    return format(float(x), '.17g')


def format_vector(components: Iterable[float], digits: int = 17) -> str:
    return '[' + ', '.join(format(float(c), f'.{digits}g') for c in components) + ']'


def _check_dimensions(a: Sequence[float], b: Sequence[float]):
    if len(a) != len(b):
        raise DimensionMismatch(f"Dimension mismatch: {len(a)} vs {len(b)}")


def _uniform_dimension(vectors: Sequence[Sequence[float]]) -> int:
    d = len(vectors[0])
    for v in vectors:
        if len(v) != d:
            raise DimensionMismatch(f"Dimension mismatch: {len(v)} vs {d}")
    return d


# =============================================================================
# UTILITY AND DOMINANCE
# =============================================================================

def utility(v: Sequence[float], w: Sequence[float]) -> float:
    """Linear utility u(v, w) = v . w, summed in objective order"""
    _check_dimensions(v, w)
    total = 0.0
    for vi, wi in zip(v, w):
        total += vi * wi
    return total


def pareto_dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff a >= b componentwise with at least one strict improvement"""
    _check_dimensions(a, b)
    strictly_better = False
    for ai, bi in zip(a, b):
        if ai < bi:
            return False
        if ai > bi:
            strictly_better = True
    return strictly_better


def pareto_prune(entries: Sequence[Tuple[ValueVector, Any]]) -> List[Tuple[ValueVector, Any]]:
    """
    Keep the entries no other entry Pareto-dominates.

    Entries with equal values collapse onto the earliest one; survivors keep
    their input order.
    """
    if not entries:
        return []
    _uniform_dimension([value for value, _ in entries])

    unique: List[Tuple[ValueVector, Any]] = []
    seen = set()
    for value, handle in entries:
        key = tuple(value)
        if key in seen:
            continue
        seen.add(key)
        unique.append((value, handle))

    front = []
    for i, (value, handle) in enumerate(unique):
        dominated = False
        for j, (other, _) in enumerate(unique):
            if i != j and pareto_dominates(other, value):
                dominated = True
                break
        if not dominated:
            front.append((value, handle))
    return front


def max_utility_over_set(vs: Sequence[Sequence[float]], w: Sequence[float]) -> Tuple[float, int]:
    """Best utility over the set and the lowest index attaining it"""
    if not vs:
        raise EmptyInput("Cannot maximize utility over an empty set")
    best_index = 0
    best = utility(vs[0], w)
    for index in range(1, len(vs)):
        u = utility(vs[index], w)
        if u > best:
            best = u
            best_index = index
    return best, best_index


# =============================================================================
# CORNER WEIGHTS
# =============================================================================

def _value_digest(vs: Sequence[Sequence[float]]) -> str:
    text = ';'.join(','.join(format_float(c) for c in v) for v in vs)
    return hashlib.sha1(text.encode('utf-8')).hexdigest()


def _snap_to_simplex(x: np.ndarray):
    """Clamp solver noise onto the simplex, or None if the point is outside"""
    if np.any(x < -TOLERANCE) or np.any(x > 1.0 + TOLERANCE):
        return None
    x = np.clip(x, 0.0, 1.0)
    total = float(x.sum())
    if abs(total - 1.0) >= TOLERANCE:
        return None
    return x / total


def corner_weights(vs: Sequence[Sequence[float]]) -> CornerWeightSet:
    """
    Enumerate the vertices of the upper envelope w -> max_v w.v on the simplex.

    Each candidate solves k equal-utility equations among k+1 vectors,
    d-1-k boundary equations w_i = 0 and the simplex plane, then must be
    feasible and have all k+1 vectors as joint maximizers. The simplex
    extrema are always included. Weights are returned in descending
    lexicographic order, which is the tie-break order used downstream.
    """
    if not vs:
        raise EmptyInput("Corner weights need at least one value vector")
    d = _uniform_dimension(vs)
    if d not in SUPPORTED_CORNER_DIMENSIONS:
        raise UnsupportedDimension(f"Corner weights supported for d in {SUPPORTED_CORNER_DIMENSIONS}, got d={d}")

    V = np.array([list(v) for v in vs], dtype=float)
    candidates: List[np.ndarray] = [np.array(w.components) for w in unit_weights(d)]

    for k in range(1, d):
        if len(vs) < k + 1:
            break
        for group in itertools.combinations(range(len(vs)), k + 1):
            reference = V[group[0]]
            equal_rows = [reference - V[j] for j in group[1:]]
            for zeros in itertools.combinations(range(d), d - 1 - k):
                rows = list(equal_rows)
                for i in zeros:
                    row = np.zeros(d)
                    row[i] = 1.0
                    rows.append(row)
                rows.append(np.ones(d))
                A = np.array(rows)
                if abs(np.linalg.det(A)) < _SINGULAR_DET:
                    continue
                b = np.zeros(d)
                b[-1] = 1.0
                x = _snap_to_simplex(np.linalg.solve(A, b))
                if x is None:
                    continue
                utilities = V @ x
                best = utilities.max()
                if all(utilities[j] >= best - TOLERANCE for j in group):
                    candidates.append(x)

    unique: List[np.ndarray] = []
    for x in candidates:
        if not any(np.all(np.abs(x - y) <= TOLERANCE) for y in unique):
            unique.append(x)

    weights = [make_weight(x.tolist()) for x in unique]
    weights.sort(key=lambda w: w.components, reverse=True)
    return CornerWeightSet(tuple(weights), _value_digest(vs))


def ccs_prune(entries: Sequence[Tuple[ValueVector, Any]]) -> CcsSet:
    """
    Reduce a (value, handle) list to its closed convex coverage set.

    Pareto pruning first, then an entry survives iff it is a maximizer
    (within TOLERANCE) at some corner weight of the surviving values.
    Repeats until nothing is removed.
    """
    if not entries:
        raise EmptyInput("CCS of an empty set is undefined")
    current = pareto_prune(entries)
    while True:
        values = [value for value, _ in current]
        corners = corner_weights(values)
        V = np.array([list(v) for v in values], dtype=float)
        keep = np.zeros(len(values), dtype=bool)
        for w in corners:
            utilities = V @ w.as_array()
            keep |= utilities >= utilities.max() - TOLERANCE
        if keep.all():
            return CcsSet(tuple(current))
        logger.debug(f"[CCS] removed {int((~keep).sum())} non-supported values")
        current = [entry for entry, kept in zip(current, keep) if kept]


# =============================================================================
# EVALUATION WEIGHTS AND EXPECTED UTILITY
# =============================================================================

def simplex_lattice_size(d: int, m: int) -> int:
    return math.comb(m + d - 1, d - 1)


def equidistant_weights(d: int, n: int) -> List[WeightVector]:
    """
    Evaluation weight grid.

    d=2 gives n evenly spaced weights from (0, 1) to (1, 0). d=3 gives the
    full simplex lattice {(i, j, k)/m} for the smallest m with at least n
    points, so the count may exceed n.
    """
    if d not in SUPPORTED_CORNER_DIMENSIONS:
        raise UnsupportedDimension(f"Equidistant weights supported for d in {SUPPORTED_CORNER_DIMENSIONS}, got d={d}")
    if n < 2:
        raise MOError(f"Need at least 2 evaluation weights, got {n}")

    if d == 2:
        weights = []
        for i in range(n):
            x = i / (n - 1)
            weights.append(make_weight([x, 1.0 - x]))
        return weights

    m = 1
    while simplex_lattice_size(3, m) < n:
        m += 1
    weights = []
    for i in range(m + 1):
        for j in range(m + 1 - i):
            k = m - i - j
            weights.append(make_weight([i / m, j / m, k / m]))
    return weights


def expected_utility(policy_values: Sequence[Sequence[float]],
                     eval_weights: Sequence[WeightVector]) -> float:
    """Mean over the evaluation weights of the best utility in the policy set"""
    if not policy_values:
        raise EmptyInput("Expected utility needs at least one policy value")
    if not eval_weights:
        raise EmptyInput("Expected utility needs at least one evaluation weight")
    total = math.fsum(max_utility_over_set(policy_values, w)[0] for w in eval_weights)
    return total / len(eval_weights)
