"""Multi-index bookkeeping and the Legendre side of the discretization.

Parameters are 1-based (positions m = 1, 2, ...).  Each parameter ranges over
[-1, 1] with uniform density 1/2, and the univariate polynomials are the
Legendre polynomials normalized against that weight.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class MultiIndex:
    """Finitely supported multi-index: map from parameter position to degree.

    Zero degrees are never stored, so equality/hash reduce to the nonzero
    entries.  Instances are immutable.
    """

    __slots__ = ("_entries", "_hash")

    def __init__(self, entries=()):
        if isinstance(entries, dict):
            items = entries.items()
        else:
            items = entries
        cleaned = []
        for pos, deg in items:
            pos = int(pos)
            deg = int(deg)
            if pos < 1:
                raise ValueError(f"parameter positions are 1-based, got {pos}")
            if deg < 0:
                raise ValueError(f"negative degree {deg} at position {pos}")
            if deg > 0:
                cleaned.append((pos, deg))
        cleaned.sort()
        positions = [p for p, _ in cleaned]
        if len(set(positions)) != len(positions):
            raise ValueError("duplicate parameter positions")
        self._entries = tuple(cleaned)
        self._hash = hash(self._entries)

    @classmethod
    def from_degrees(cls, degrees):
        """Build from a dense degree sequence (position 1 first)."""
        return cls([(m + 1, d) for m, d in enumerate(degrees)])

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def unit(cls, m):
        """The Kronecker sequence with a single 1 in position m."""
        return cls([(m, 1)])

    @property
    def entries(self):
        return self._entries

    def degree(self, m):
        for pos, deg in self._entries:
            if pos == m:
                return deg
        return 0

    @property
    def support(self):
        return tuple(p for p, _ in self._entries)

    @property
    def max_support(self):
        return self._entries[-1][0] if self._entries else 0

    @property
    def total_degree(self):
        return sum(d for _, d in self._entries)

    def raised(self, m):
        """This index plus one unit in position m."""
        d = dict(self._entries)
        d[m] = d.get(m, 0) + 1
        return MultiIndex(d)

    def lowered(self, m):
        """This index minus one unit in position m, or None if degree is 0."""
        d = dict(self._entries)
        if d.get(m, 0) == 0:
            return None
        d[m] -= 1
        return MultiIndex(d)

    def dense(self, upto=None):
        """Degrees for positions 1..upto (defaults to the support maximum)."""
        n = self.max_support if upto is None else upto
        out = [0] * n
        for pos, deg in self._entries:
            if pos <= n:
                out[pos - 1] = deg
        return tuple(out)

    def graded_lex_key(self):
        # negated degrees make earlier positions dominate within a total
        # degree: (1,0,...) sorts before (0,1,...)
        return (self.total_degree, tuple(-d for d in self.dense()))

    def to_json(self):
        return [[p, d] for p, d in self._entries]

    @classmethod
    def from_json(cls, obj):
        return cls([(p, d) for p, d in obj])

    def __eq__(self, other):
        return isinstance(other, MultiIndex) and self._entries == other._entries

    def __hash__(self):
        return self._hash

    def __lt__(self, other):
        return self.graded_lex_key() < other.graded_lex_key()

    def __repr__(self):
        if not self._entries:
            return "MultiIndex(0)"
        body = ",".join(f"{p}:{d}" for p, d in self._entries)
        return f"MultiIndex({body})"


class IndexSet:
    """Ordered list of distinct multi-indices with ordinal lookup."""

    __slots__ = ("_indices", "_lookup")

    def __init__(self, indices):
        self._indices = tuple(indices)
        self._lookup = {mu: i for i, mu in enumerate(self._indices)}
        if len(self._lookup) != len(self._indices):
            raise ValueError("duplicate multi-indices in IndexSet")

    @classmethod
    def sorted_graded_lex(cls, indices):
        """Deterministic ordering: total degree, then lexicographic degrees."""
        return cls(sorted(set(indices), key=MultiIndex.graded_lex_key))

    def ordinal(self, mu):
        return self._lookup[mu]

    def __contains__(self, mu):
        return mu in self._lookup

    def __iter__(self):
        return iter(self._indices)

    def __len__(self):
        return len(self._indices)

    def __getitem__(self, i):
        return self._indices[i]

    def __eq__(self, other):
        return isinstance(other, IndexSet) and self._indices == other._indices

    def __hash__(self):
        return hash(self._indices)

    def to_json(self):
        return [mu.to_json() for mu in self._indices]

    @classmethod
    def from_json(cls, obj):
        return cls([MultiIndex.from_json(item) for item in obj])

    def __repr__(self):
        return f"IndexSet({list(self._indices)!r})"


@dataclass(frozen=True)
class CouplingMatrix:
    """Sparse matrix of <y_m psi_mu psi_nu> entries between two index sets."""

    m: int
    rows: IndexSet
    cols: IndexSet
    matrix: sp.csr_matrix


def recurrence_coeff(n):
    """<y psi_n, psi_{n+1}> for Legendre polynomials orthonormal on [-1, 1]
    with the uniform density 1/2; equals (n+1)/sqrt((2n+1)(2n+3))."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return (n + 1) / math.sqrt((2 * n + 1) * (2 * n + 3))


def build_coupling(m, rows, cols):
    """Coupling matrix G_m between two index sets.

    m = 0 gives the rectangular identity pattern; for m >= 1 the entry
    (mu, nu) is recurrence_coeff(min(mu_m, nu_m)) when nu differs from mu by
    exactly one unit in position m, and zero otherwise.
    """
    data, ri, ci = [], [], []
    if m == 0:
        for i, mu in enumerate(rows):
            if mu in cols:
                ri.append(i)
                ci.append(cols.ordinal(mu))
                data.append(1.0)
    else:
        for i, mu in enumerate(rows):
            up = mu.raised(m)
            if up in cols:
                ri.append(i)
                ci.append(cols.ordinal(up))
                data.append(recurrence_coeff(mu.degree(m)))
            down = mu.lowered(m)
            if down is not None and down in cols:
                ri.append(i)
                ci.append(cols.ordinal(down))
                data.append(recurrence_coeff(down.degree(m)))
    matrix = sp.csr_matrix(
        (data, (ri, ci)), shape=(len(rows), len(cols)), dtype=np.float64
    )
    return CouplingMatrix(m=m, rows=rows, cols=cols, matrix=matrix)


def coupling_entries(m, rows, cols):
    """Nonzero entries of G_m as (row ordinal, col ordinal, value) triplets."""
    g = build_coupling(m, rows, cols).matrix.tocoo()
    return list(zip(g.row.tolist(), g.col.tolist(), g.data.tolist()))


def active_dimension(index_set):
    """Smallest M with mu_m = 0 for all m > M over the whole set."""
    return max((mu.max_support for mu in index_set), default=0)


def neighbor_set(j_p, delta_m):
    """Candidate parametric enrichment indices.

    All indices one unit away (in a single position) from a member of j_p,
    excluding j_p itself, with the maximum supported position capped at
    M + delta_m where M is the active dimension of j_p.  Returned in graded
    lexicographic order.
    """
    if delta_m < 1:
        raise ValueError("delta_m must be >= 1")
    if MultiIndex.zero() not in j_p:
        raise ValueError("j_p must contain the zero multi-index")
    cap = active_dimension(j_p) + delta_m
    found = set()
    for mu in j_p:
        for m in range(1, cap + 1):
            up = mu.raised(m)
            if up not in j_p and up.max_support <= cap:
                found.add(up)
            down = mu.lowered(m)
            if down is not None and down not in j_p and down.max_support <= cap:
                found.add(down)
    return IndexSet.sorted_graded_lex(found)
