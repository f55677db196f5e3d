"""Raw score -> normalized intensity machinery.

Three stages: equal-width binning over the empirical range, balanced
resampling so every bin contributes the same record count, and mean-rank
normalization onto an approximately uniform [0, 1] scale. The resulting
table also answers the inverse query (raw value of a generated image ->
normalized intensity) by nearest-raw lookup.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, DegenerateDistributionError, UnbalanceableBinError
from .metrics import AttributeKind
from .streams import named_stream

DEFAULT_BIN_COUNT = 10


@dataclass(frozen=True)
class BinAssignment:
    """Equal-width bin indices for a batch of values over [lo, hi]."""

    bin_count: int
    lo: float
    hi: float
    assignments: np.ndarray

    def __post_init__(self):
        if self.bin_count < 1:
            raise ContractError("bin_count must be positive")
        if not self.lo < self.hi:
            raise ContractError("bin range must satisfy lo < hi")
        a = np.asarray(self.assignments)
        if a.ndim != 1 or np.any(a < 0) or np.any(a >= self.bin_count):
            raise ContractError("assignments must be indices in [0, bin_count)")
        a.setflags(write=False)

    def index_of(self, x: float) -> int:
        """Bin index under this assignment's range; x == hi lands in the last bin."""
        scaled = (x - self.lo) / (self.hi - self.lo) * self.bin_count
        return int(np.clip(np.floor(scaled), 0, self.bin_count - 1))

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.bin_count)


def assign_bins(values: Sequence[float], bin_count: int = DEFAULT_BIN_COUNT) -> BinAssignment:
    """Bin values into `bin_count` equal-width bins over [min, max]."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 2:
        raise DegenerateDistributionError("need at least 2 values to define bins")
    lo, hi = float(v.min()), float(v.max())
    if not lo < hi:
        raise DegenerateDistributionError("all values equal; bin width undefined")
    idx = np.clip(np.floor((v - lo) / (hi - lo) * bin_count), 0, bin_count - 1).astype(np.int64)
    return BinAssignment(bin_count=bin_count, lo=lo, hi=hi, assignments=idx)


def balance(records: Sequence, bins: BinAssignment, per_bin: int, seed: int) -> list:
    """Resample records to exactly `per_bin` per bin.

    Overpopulated bins are down-sampled without replacement, underpopulated
    ones are drawn with replacement. Deterministic given the seed. Records
    are opaque: they are returned as-is, ordered bin by bin.
    """
    if per_bin < 1:
        raise ContractError("per_bin must be positive")
    if len(records) != len(bins.assignments):
        raise ContractError("records and bin assignments must align")
    rng = named_stream(seed, "balance")
    out = []
    for b in range(bins.bin_count):
        members = np.flatnonzero(bins.assignments == b)
        if members.size == 0:
            raise UnbalanceableBinError(b)
        chosen = rng.choice(members, size=per_bin, replace=members.size < per_bin)
        out.extend(records[i] for i in chosen)
    return out


def rank_normalize(values: Sequence[float]) -> np.ndarray:
    """Mean-rank normalization: value with average rank r among n maps to (r - 0.5)/n.

    Ties share the mean of the ranks they span. Returns an (n, 2) array of
    (raw, normalized) rows sorted by raw ascending.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ContractError("need at least one value")
    n = v.size
    sv = np.sort(v, kind="stable")
    normalized = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j < n and sv[j] == sv[i]:
            j += 1
        # ranks i+1 .. j inclusive; their mean is (i + j + 1) / 2
        normalized[i:j] = ((i + j + 1) / 2.0 - 0.5) / n
        i = j
    return np.column_stack([sv, normalized])


@dataclass(frozen=True)
class MappingTable:
    """Persisted (raw, normalized) pairs for one attribute.

    Serves both directions: it records the rank normalization of the
    training distribution and answers nearest-raw inverse lookups for
    scoring generated images.
    """

    kind: AttributeKind
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[1] != 2 or e.shape[0] < 1:
            raise ContractError("entries must be a non-empty (n, 2) array")
        raws, norm = e[:, 0], e[:, 1]
        if np.any(np.diff(raws) < 0):
            raise ContractError("entries must be sorted by raw value")
        if np.any(np.diff(norm) < 0) or norm[0] < 0 or norm[-1] > 1:
            raise ContractError("normalized values must be non-decreasing within [0, 1]")
        expected = rank_normalize(raws)[:, 1]
        if not np.allclose(norm, expected, rtol=0, atol=1e-12):
            raise ContractError("normalized values are not the mean-rank transform of the raws")
        object.__setattr__(self, "entries", e)
        e.setflags(write=False)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_values(cls, kind: AttributeKind, values: Sequence[float]) -> "MappingTable":
        return cls(kind=kind, entries=rank_normalize(values))


def to_normalized(table: MappingTable, raw: float) -> float:
    """Normalized intensity of the table entry whose raw value is nearest.

    Exact-distance ties resolve to the smaller normalized value; queries
    beyond the table range clamp to the nearest extreme entry.
    """
    raws = table.entries[:, 0]
    i = int(np.searchsorted(raws, raw))
    if i == 0:
        return float(table.entries[0, 1])
    if i == table.n:
        return float(table.entries[-1, 1])
    d_left = raw - raws[i - 1]
    d_right = raws[i] - raw
    if d_left <= d_right:  # tie prefers the left entry, whose normalized value is <= right's
        return float(table.entries[i - 1, 1])
    return float(table.entries[i, 1])
