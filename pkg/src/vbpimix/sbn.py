"""Subsplit Bayesian networks over tree topologies.

An SBN assigns a categorical distribution to the root split and, for every
clade reached while growing a rooted tree, a categorical distribution over
the ways to split it.  Conditional tables are keyed by the parent subsplit
together with the clade being split, so sister clades are split
independently given their parent.  Unrooted probabilities sum the rooted
probability over all 2N-3 rootings.

Parameters are unconstrained logits with a softmax per table, stored as one
flat vector: the root table first, then every conditional table in key order.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, SupportViolationError
from .tree import (
    Subsplit,
    TaxonSet,
    Topology,
    all_rootings,
    check_same_taxa,
    popcount,
    subsplit_decomposition,
    unroot,
)

ParentKey = tuple[Subsplit, int]


class SBNSupport:
    """Table structure shared by every SBN (and mixture component) of a run.

    Also interns topologies and caches their rooting index matrices, so all
    components evaluate a repeated topology without re-decomposing it.
    """

    def __init__(self, taxa: TaxonSet, root_splits: Iterable[Subsplit],
                 tables: dict[ParentKey, Iterable[Subsplit]], rooted: bool = False):
        self.taxa = taxa
        self.rooted = rooted
        self.root_splits: tuple[Subsplit, ...] = tuple(sorted(set(root_splits)))
        self.table_keys: tuple[ParentKey, ...] = tuple(sorted(tables))
        children = [tuple(sorted(set(tables[k]))) for k in self.table_keys]
        for (parent, clade), kids in zip(self.table_keys, children):
            for a, b in kids:
                if a | b != clade:
                    raise ContractError("child subsplit does not partition its parent clade")
        self.table_children: tuple[tuple[Subsplit, ...], ...] = (self.root_splits, *children)
        sizes = [len(c) for c in self.table_children]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)
        self.n_params = int(self.offsets[-1])
        self.table_of = np.repeat(np.arange(len(sizes)), sizes)
        self._table_id = {k: i + 1 for i, k in enumerate(self.table_keys)}
        self._root_index = {s: i for i, s in enumerate(self.root_splits)}
        self._child_index = [
            {ch: int(self.offsets[t]) + j for j, ch in enumerate(kids)}
            for t, kids in enumerate(self.table_children)
        ]
        self._rooted_cache: dict = {}
        self._unrooted_cache: dict = {}
        self._interned: dict = {}
        self._sampled: dict = {}

    @classmethod
    def from_trees(cls, trees: Sequence[Topology], rooted: bool = False) -> "SBNSupport":
        """Collect every subsplit seen in the candidate trees.

        Unrooted candidates contribute all of their rootings.  With
        ``rooted=True`` the trees are taken as rooted and used as given.
        """
        if not trees:
            raise ContractError("candidate tree set is empty")
        taxa = trees[0].taxa
        check_same_taxa(trees, taxa)
        roots: set[Subsplit] = set()
        tables: dict[ParentKey, set[Subsplit]] = {}
        for rt in _rootings_of_set(trees, rooted):
            root, records = subsplit_decomposition(rt)
            roots.add(root)
            for key, child in records:
                tables.setdefault(key, set()).add(child)
        return cls(taxa, roots, tables, rooted=rooted)

    def __eq__(self, other):
        return (isinstance(other, SBNSupport) and self.taxa == other.taxa
                and self.rooted == other.rooted and self.table_children == other.table_children
                and self.table_keys == other.table_keys)

    __hash__ = object.__hash__

    @property
    def n_tables(self) -> int:
        return len(self.table_children)

    def table_slice(self, key: ParentKey | None) -> slice:
        t = 0 if key is None else self._table_id[key]
        return slice(int(self.offsets[t]), int(self.offsets[t + 1]))

    def index_of(self, key: ParentKey | None, child: Subsplit) -> int:
        """Flat parameter index of a root split (``key=None``) or table entry."""
        t = 0 if key is None else self._table_id.get(key)
        if t is None:
            raise SupportViolationError(f"no conditional table for parent {key}")
        try:
            return self._child_index[t][child]
        except KeyError:
            raise SupportViolationError(f"subsplit {child} not in table {key}") from None

    def table_lookup(self, key: ParentKey) -> int | None:
        return self._table_id.get(key)

    # -- per-topology caches ------------------------------------------------

    def rooted_indices(self, t: Topology) -> np.ndarray:
        """Flat indices of the factors of a rooted topology."""
        hit = self._rooted_cache.get(t.key)
        if hit is None:
            try:
                root, records = subsplit_decomposition(t)
                idx = [self.index_of(None, root)]
                idx.extend(self.index_of(k, c) for k, c in records)
                hit = np.array(idx, dtype=np.intp)
            except SupportViolationError as exc:
                hit = exc
            self._rooted_cache[t.key] = hit
        if isinstance(hit, SupportViolationError):
            raise SupportViolationError(str(hit))
        return hit

    def rooting_indices(self, t: Topology) -> np.ndarray:
        """``(R, L)`` factor indices of the in-support rootings of ``t``.

        Rows are padded with ``n_params``, which addresses an appended zero in
        the log-probability vector.  Raises if no rooting lies in the support.
        """
        hit = self._unrooted_cache.get(t.key)
        if hit is None:
            rows = []
            for rt in all_rootings(t):
                try:
                    rows.append(self.rooted_indices(rt))
                except SupportViolationError:
                    pass
            if rows:
                width = max(len(r) for r in rows)
                hit = np.full((len(rows), width), self.n_params, dtype=np.intp)
                for i, r in enumerate(rows):
                    hit[i, : len(r)] = r
            else:
                hit = SupportViolationError("topology has no rooting inside the SBN support")
            self._unrooted_cache[t.key] = hit
        if isinstance(hit, SupportViolationError):
            raise SupportViolationError(str(hit))
        return hit

    def in_support(self, t: Topology) -> bool:
        try:
            if t.rooted:
                self.rooted_indices(t)
            else:
                self.rooting_indices(t)
        except SupportViolationError:
            return False
        return True

    def intern(self, t: Topology) -> Topology:
        """Return a canonical shared instance of ``t`` (keeps cached properties warm)."""
        return self._interned.setdefault(t.key, t)

    # -- parameters -----------------------------------------------------------

    def log_softmax(self, logits: np.ndarray) -> np.ndarray:
        off = self.offsets[:-1]
        m = np.maximum.reduceat(logits, off)[self.table_of]
        e = np.exp(logits - m)
        z = np.add.reduceat(e, off)[self.table_of]
        return logits - m - np.log(z)

    def table_sums(self, x: np.ndarray) -> np.ndarray:
        return np.add.reduceat(x, self.offsets[:-1])

    def frequency_logits(self, trees: Sequence[Topology], pseudocount: float = 1.0) -> np.ndarray:
        """Log of smoothed subsplit counts over all rootings of ``trees``.

        Duplicated trees count once per copy.
        """
        counts = np.zeros(self.n_params)
        for rt in _rootings_of_set(trees, self.rooted):
            try:
                counts[self.rooted_indices(rt)] += 1.0
            except SupportViolationError:
                continue
        return np.log(counts + pseudocount)


def _rootings_of_set(trees, rooted):
    """Rootings of each distinct tree, repeated for duplicates."""
    mult = Counter(trees)
    for t, n in mult.items():
        if rooted:
            if not t.rooted:
                raise ContractError("rooted support requires rooted trees")
            rts = [t]
        else:
            rts = all_rootings(unroot(t))
        for _ in range(n):
            yield from rts


@dataclass(frozen=True, eq=False)
class SBN:
    """A subsplit Bayesian network: shared support plus its own logits."""

    support: SBNSupport
    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float)
        if logits.shape != (self.support.n_params,):
            raise ContractError(f"expected {self.support.n_params} logits, got {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise ContractError("SBN logits must be finite")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "_lp_cache", {})
        object.__setattr__(self, "_grad_cache", {})
        object.__setattr__(self, "_cum_cache", {})

    @classmethod
    def uniform(cls, support: SBNSupport) -> "SBN":
        return cls(support, np.zeros(support.n_params))

    @cached_property
    def log_probs(self) -> np.ndarray:
        """Per-entry log table probabilities with a trailing 0 pad slot."""
        return np.append(self.support.log_softmax(self.logits), 0.0)

    @cached_property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs[:-1])

    def _cumulative(self, table: int) -> np.ndarray:
        hit = self._cum_cache.get(table)
        if hit is None:
            off = self.support.offsets
            hit = self._cum_cache[table] = np.cumsum(self.probs[off[table]:off[table + 1]])
        return hit

    def log_prob_rooted(self, t: Topology) -> float:
        return float(self.log_probs[self.support.rooted_indices(t)].sum())

    def rooting_log_probs(self, t: Topology) -> np.ndarray:
        idx = self.support.rooting_indices(t)
        return self.log_probs[idx].sum(axis=1)

    def log_prob(self, t: Topology) -> float:
        """Log probability of a topology; unrooted trees sum over rootings."""
        hit = self._lp_cache.get(t.key)
        if hit is None:
            if t.rooted:
                hit = self.log_prob_rooted(t)
            else:
                lp = self.rooting_log_probs(t)
                m = lp.max()
                hit = float(m + np.log(np.exp(lp - m).sum()))
            self._lp_cache[t.key] = hit
        return hit

    def grad_log_prob(self, t: Topology) -> np.ndarray:
        """Gradient of :meth:`log_prob` with respect to the logits."""
        hit = self._grad_cache.get(t.key)
        if hit is None:
            hit = self._grad_log_prob(t)
            hit.flags.writeable = False
            self._grad_cache[t.key] = hit
        return hit

    def _grad_log_prob(self, t: Topology) -> np.ndarray:
        sup = self.support
        if t.rooted:
            idx = sup.rooted_indices(t)[None, :]
            resp = np.ones(1)
        else:
            idx = sup.rooting_indices(t)
            lp = self.log_probs[idx].sum(axis=1)
            resp = np.exp(lp - lp.max())
            resp /= resp.sum()
        counts = np.bincount(idx.ravel(), weights=np.repeat(resp, idx.shape[1]),
                             minlength=sup.n_params + 1)[: sup.n_params]
        totals = sup.table_sums(counts)[sup.table_of]
        return counts - self.probs * totals

    def _draw(self, table: int, rng) -> int:
        cum = self._cumulative(table)
        j = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        return min(j, len(cum) - 1)

    def _sample_clades(self, rng) -> tuple[int, ...]:
        sup = self.support
        root = sup.root_splits[self._draw(0, rng)]
        clades = [root[0], root[1]]
        stack = [(root, root[0]), (root, root[1])]
        taxa = sup.taxa
        while stack:
            parent, clade = stack.pop()
            size = popcount(clade)
            if size < 2:
                continue
            if size == 2:
                members = taxa.members(clade)
                child = (taxa.bit(members[0]), taxa.bit(members[1]))
            else:
                tid = sup.table_lookup((parent, clade))
                if tid is None:
                    raise SupportViolationError(f"incomplete support: no table for clade {taxa.bits(clade)}")
                child = sup.table_children[tid][self._draw(tid, rng)]
            clades.extend(child)
            stack.append((child, child[0]))
            stack.append((child, child[1]))
        clades.append(taxa.full)
        return tuple(sorted(clades))

    def sample_rooted(self, rng) -> Topology:
        return Topology.from_clades(self.support.taxa, self._sample_clades(rng), rooted=True)

    def sample(self, rng) -> Topology:
        """Ancestral sample; unrooted unless the support is rooted."""
        sup = self.support
        clades = self._sample_clades(rng)
        t = sup._sampled.get(clades)
        if t is None:
            rt = Topology.from_clades(sup.taxa, clades, rooted=True)
            t = sup.intern(rt if sup.rooted else unroot(rt))
            sup._sampled[clades] = t
        return t

    def with_logits(self, logits) -> "SBN":
        return SBN(self.support, logits)
