"""Taxon sets, clades, subsplits and leaf-labelled binary topologies.

Clades are plain Python ints used as bitsets.  Taxon ``i`` of an ``N``-taxon
set occupies bit ``N - 1 - i`` so that comparing two clades as integers is the
same as comparing their bitstrings with taxon 0 most significant.  A subsplit
is a tuple ``(first, second)`` of disjoint clades with ``first > second``; the
leading clade is therefore always the one holding the lowest-index taxon.

Topologies store nodes in post-order: leaves ``0..N-1`` carry the taxon with
the same index, internal nodes follow in order of increasing clade size and the
root is the last node.  Every non-root node owns the edge to its parent, so a
branch-length vector is simply indexed by node id.

Unrooted topologies are kept in a canonical orientation: the root is the
internal node adjacent to taxon 0, and it has three children.
"""

from __future__ import annotations

import math
import re
from functools import cached_property
from typing import Iterable, Sequence

from .errors import (
    InvalidCladeError,
    MissingEdgeError,
    NewickParseError,
    RootednessError,
    TaxonSetError,
    UnsupportedSizeError,
)

Subsplit = tuple[int, int]
PSP = tuple[Subsplit, Subsplit]

MAX_ENUMERATION_TAXA = 8


def popcount(x: int) -> int:
    return bin(x).count("1")


def double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def n_unrooted_topologies(n_taxa: int) -> int:
    """Number of unrooted binary topologies on ``n_taxa`` labelled leaves."""
    return double_factorial(2 * n_taxa - 5) if n_taxa >= 3 else 1


def n_rooted_topologies(n_taxa: int) -> int:
    return double_factorial(2 * n_taxa - 3) if n_taxa >= 2 else 1


class TaxonSet:
    """An ordered set of distinct taxon names."""

    def __init__(self, names: Iterable[str]):
        names = tuple(names)
        for name in names:
            if not isinstance(name, str) or not name:
                raise TaxonSetError(f"invalid taxon name {name!r}")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise TaxonSetError(f"duplicate taxon names: {', '.join(dupes)}")
        self.names = names
        self.index = {name: i for i, name in enumerate(names)}

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __eq__(self, other):
        return isinstance(other, TaxonSet) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"TaxonSet({list(self.names)!r})"

    @property
    def full(self) -> int:
        return (1 << len(self.names)) - 1

    def bit(self, i: int) -> int:
        return 1 << (len(self.names) - 1 - i)

    def clade(self, names: Iterable[str]) -> int:
        c = 0
        for name in names:
            try:
                c |= self.bit(self.index[name])
            except KeyError:
                raise TaxonSetError(f"unknown taxon {name!r}") from None
        if c == 0:
            raise InvalidCladeError("a clade must be non-empty")
        return c

    def members(self, clade: int) -> list[int]:
        n = len(self.names)
        return [i for i in range(n) if clade >> (n - 1 - i) & 1]

    def names_of(self, clade: int) -> list[str]:
        return [self.names[i] for i in self.members(clade)]

    def bits(self, clade: int) -> str:
        return format(clade, f"0{len(self.names)}b")

    def parse_bits(self, text: str) -> int:
        if len(text) != len(self.names) or set(text) - {"0", "1"}:
            raise InvalidCladeError(f"bad clade bitstring {text!r}")
        return int(text, 2)

    def subsplit_str(self, ss: Subsplit) -> str:
        return f"{self.bits(ss[0])}|{self.bits(ss[1])}"

    def parse_subsplit(self, text: str) -> Subsplit:
        a, sep, b = text.partition("|")
        if not sep:
            raise InvalidCladeError(f"bad subsplit {text!r}")
        return canonical_subsplit(self.parse_bits(a), self.parse_bits(b))


def canonical_subsplit(c1: int, c2: int) -> Subsplit:
    """Order two disjoint clades so the one with the lowest taxon leads."""
    if c1 <= 0 or c2 <= 0:
        raise InvalidCladeError("subsplit clades must be non-empty")
    if c1 & c2:
        raise InvalidCladeError("subsplit clades must be disjoint")
    return (c1, c2) if c1 > c2 else (c2, c1)


def split_of(clade: int, full: int) -> Subsplit:
    return canonical_subsplit(clade, full ^ clade)


class Topology:
    """Immutable leaf-labelled binary tree, rooted or unrooted.

    Use the constructors (:meth:`from_clades`, :func:`parse_newick`,
    :func:`enumerate_unrooted`, ...) rather than calling this directly.
    """

    def __init__(self, taxa: TaxonSet, children, clades, rooted: bool):
        self.taxa = taxa
        self.children: tuple[tuple[int, ...], ...] = tuple(tuple(c) for c in children)
        self.clade: tuple[int, ...] = tuple(clades)
        self.rooted = bool(rooted)
        parent = [-1] * len(self.children)
        for v, ch in enumerate(self.children):
            for c in ch:
                parent[c] = v
        self.parent: tuple[int, ...] = tuple(parent)
        self.root = len(self.children) - 1

    # -- construction -------------------------------------------------------

    @classmethod
    def from_clades(cls, taxa: TaxonSet, clades: Iterable[int], rooted: bool) -> "Topology":
        """Build a tree from its laminar family of clades.

        For a rooted tree the family must contain the full taxon set and every
        internal clade.  For an unrooted tree pass the clades seen when the
        tree hangs from taxon 0, i.e. sides of splits that exclude taxon 0;
        the full set minus taxon 0 is the top of that family.  Singletons are
        added automatically.
        """
        n = len(taxa)
        full = taxa.full
        bit0 = taxa.bit(0)
        top = full if rooted else full ^ bit0
        family = {c for c in clades if popcount(c) >= 2}
        family.add(top)
        for c in family:
            if c & ~top:
                raise InvalidCladeError("clade outside the taxon set (or containing taxon 0 in an unrooted family)")
        internal = sorted(family, key=lambda c: (popcount(c), c))
        n_internal_expected = n - 1 if rooted else n - 2
        if len(internal) != n_internal_expected:
            raise InvalidCladeError(
                f"clade family does not describe a binary tree ({len(internal)} internal clades, "
                f"expected {n_internal_expected})"
            )
        leaves = range(1, n) if not rooted else range(n)
        # top[leaf] tracks the largest node built so far that contains the leaf
        owner = {i: i for i in leaves}
        children: list[tuple[int, ...]] = [() for _ in range(n)]
        node_clades = [taxa.bit(i) for i in range(n)]
        for c in internal:
            node = len(children)
            kids = sorted({owner[i] for i in taxa.members(c)})
            if len(kids) != 2:
                raise InvalidCladeError("clade family is not a compatible binary hierarchy")
            for i in taxa.members(c):
                owner[i] = node
            children.append(tuple(kids))
            node_clades.append(c)
        if not rooted:
            # attach taxon 0 to the top node; the tree is now rooted at a trifurcation
            children[-1] = tuple(sorted(children[-1] + (0,)))
            node_clades[-1] = full
        topo = cls(taxa, children, node_clades, rooted)
        return topo

    @classmethod
    def from_splits(cls, taxa: TaxonSet, splits: Iterable[Subsplit]) -> "Topology":
        bit0 = taxa.bit(0)
        family = []
        for a, b in splits:
            side = b if a & bit0 else a
            family.append(side)
        return cls.from_clades(taxa, family, rooted=False)

    # -- basic structure ----------------------------------------------------

    @property
    def n_taxa(self) -> int:
        return len(self.taxa)

    @property
    def n_nodes(self) -> int:
        return len(self.children)

    @property
    def edges(self) -> range:
        """Edge ids: each non-root node names the edge above it."""
        return range(self.root)

    @property
    def n_edges(self) -> int:
        return self.root

    def is_leaf(self, v: int) -> bool:
        return v < self.n_taxa

    @cached_property
    def edge_splits(self) -> tuple[Subsplit, ...]:
        full = self.taxa.full
        return tuple(split_of(self.clade[v], full) for v in self.edges)

    @cached_property
    def _edge_of_split(self) -> dict[Subsplit, int]:
        return {s: v for v, s in enumerate(self.edge_splits)}

    def edge_of(self, split: Subsplit) -> int:
        try:
            return self._edge_of_split[split]
        except KeyError:
            raise MissingEdgeError(f"split {self.taxa.subsplit_str(split)} is not an edge of this tree") from None

    @cached_property
    def nontrivial_splits(self) -> tuple[Subsplit, ...]:
        n = self.n_taxa
        return tuple(sorted({s for s in self.edge_splits if 2 <= popcount(s[0]) <= n - 2 and popcount(s[1]) >= 2}))

    @cached_property
    def key(self):
        """Hashable identity: split set when unrooted, clade set when rooted."""
        if self.rooted:
            return ("rooted", tuple(sorted(c for c in self.clade if popcount(c) >= 2)))
        return ("unrooted", self.nontrivial_splits)

    def __eq__(self, other):
        return isinstance(other, Topology) and self.taxa == other.taxa and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        kind = "rooted" if self.rooted else "unrooted"
        return f"<Topology {kind} {to_newick(self)}>"

    def branch_array(self, lengths: dict[Subsplit, float]):
        """Edge-indexed vector from a split -> length mapping."""
        import numpy as np

        try:
            return np.array([lengths[s] for s in self.edge_splits], dtype=float)
        except KeyError as exc:
            raise MissingEdgeError(f"no branch length for split {self.taxa.subsplit_str(exc.args[0])}") from None

    def branch_dict(self, branches) -> dict[Subsplit, float]:
        return {s: float(b) for s, b in zip(self.edge_splits, branches)}


# -- combinatorial operations -------------------------------------------------


def _require(t: Topology, rooted: bool):
    if t.rooted != rooted:
        want = "rooted" if rooted else "unrooted"
        raise RootednessError(f"expected a {want} topology")


def unroot(t: Topology) -> Topology:
    """Drop the root of a rooted tree (identity on unrooted trees)."""
    if not t.rooted:
        return t
    if t.n_taxa < 3:
        raise UnsupportedSizeError("unrooted trees need at least 3 taxa")
    full, bit0 = t.taxa.full, t.taxa.bit(0)
    family = {c if not c & bit0 else full ^ c for c in t.clade if c != full}
    return Topology.from_clades(t.taxa, family, rooted=False)


def root_at(t: Topology, edge: int | Subsplit) -> Topology:
    """Root an unrooted tree on the midpoint of one edge."""
    _require(t, rooted=False)
    v = t.edge_of(edge) if isinstance(edge, tuple) else edge
    if not 0 <= v < t.root:
        raise MissingEdgeError(f"no edge {edge!r}")
    full = t.taxa.full
    ancestors = set()
    flipped = []
    c = v
    while c != t.root:
        p = t.parent[c]
        ancestors.add(p)
        flipped.append(full ^ t.clade[c])
        c = p
    family = [t.clade[u] for u in range(t.n_nodes) if u not in ancestors]
    family.extend(flipped)
    return Topology.from_clades(t.taxa, family, rooted=True)


def all_rootings(t: Topology) -> list[Topology]:
    """Every rooting of an unrooted tree, one per edge (2N-3 of them)."""
    _require(t, rooted=False)
    return [root_at(t, v) for v in t.edges]


def splits_of(t: Topology) -> set[Subsplit]:
    if t.rooted:
        t = unroot(t)
    return set(t.edge_splits)


def subsplit_decomposition(t: Topology) -> tuple[Subsplit, list[tuple[tuple[Subsplit, int], Subsplit]]]:
    """Root split plus one ``((parent_subsplit, clade), child_subsplit)`` record
    per non-root internal clade with at least three taxa.

    Clades of size two admit a single subsplit, so they carry no record.
    """
    _require(t, rooted=True)
    ch = t.children
    clade = t.clade
    r1, r2 = ch[t.root]
    root_split = canonical_subsplit(clade[r1], clade[r2])
    records = []
    for v in range(t.n_taxa, t.root):
        if popcount(clade[v]) < 3:
            continue
        p = t.parent[v]
        a, b = ch[p]
        sister = b if a == v else a
        key = (canonical_subsplit(clade[v], clade[sister]), clade[v])
        c1, c2 = ch[v]
        records.append((key, canonical_subsplit(clade[c1], clade[c2])))
    return root_split, records


def psps_of(t: Topology, edge: int | Subsplit) -> list[PSP]:
    """Primary subsplit pairs around an edge of an unrooted tree.

    Each side of the edge's split that ends in an internal node contributes
    the subsplit formed by that node's two other neighbours.  Leaf edges thus
    yield one PSP and internal edges two.
    """
    _require(t, rooted=False)
    v = t.edge_of(edge) if isinstance(edge, tuple) else edge
    if not 0 <= v < t.root:
        raise MissingEdgeError(f"no edge {edge!r}")
    return _psps_at(t, v)


def _psps_at(t: Topology, v: int) -> list[PSP]:
    full = t.taxa.full
    clade = t.clade
    split = split_of(clade[v], full)
    out = []
    if not t.is_leaf(v):
        c1, c2 = t.children[v]
        out.append((split, canonical_subsplit(clade[c1], clade[c2])))
    p = t.parent[v]
    others = [clade[u] for u in t.children[p] if u != v]
    if p != t.root:
        others.append(full ^ clade[p])
    out.append((split, canonical_subsplit(*others)))
    return sorted(out)


def all_psps(t: Topology) -> list[list[PSP]]:
    """PSPs for every edge, indexed by edge id."""
    _require(t, rooted=False)
    return [_psps_at(t, v) for v in t.edges]


def enumerate_unrooted(taxa: TaxonSet | int) -> list[Topology]:
    """All (2N-5)!! unrooted topologies, built by stepwise taxon addition."""
    if isinstance(taxa, int):
        taxa = default_taxa(taxa)
    n = len(taxa)
    if not 3 <= n <= MAX_ENUMERATION_TAXA:
        raise UnsupportedSizeError(f"enumeration supports 3..{MAX_ENUMERATION_TAXA} taxa, got {n}")
    # families of clades excluding taxon 0; start with the 3-taxon star
    b = taxa.bit
    families = [frozenset({b(1), b(2), b(1) | b(2)})]
    for k in range(3, n):
        bk = b(k)
        grown = []
        for fam in families:
            for c in fam:
                new = {d | bk if (d & c) == c and d != c else d for d in fam}
                new.add(c | bk)
                new.add(bk)
                grown.append(frozenset(new))
        families = grown
    return [Topology.from_clades(taxa, fam, rooted=False) for fam in families]


def default_taxa(n: int) -> TaxonSet:
    return TaxonSet(f"t{i}" for i in range(n))


def random_unrooted(taxa: TaxonSet, rng) -> Topology:
    """Uniformly random unrooted topology via random stepwise addition."""
    n = len(taxa)
    if n < 3:
        raise UnsupportedSizeError("unrooted trees need at least 3 taxa")
    b = taxa.bit
    fam = {b(1), b(2), b(1) | b(2)}
    for k in range(3, n):
        bk = b(k)
        options = sorted(fam)
        c = options[int(rng.integers(len(options)))]
        fam = {d | bk if (d & c) == c and d != c else d for d in fam}
        fam.add(c | bk)
        fam.add(bk)
    return Topology.from_clades(taxa, fam, rooted=False)


# -- Newick ------------------------------------------------------------------

_NAME_RE = re.compile(r"[A-Za-z0-9_.\-]+")
_NUMBER_RE = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?")


class _Parser:
    def __init__(self, text: str, line=None):
        self.s = text
        self.i = 0
        self.line = line

    def error(self, msg):
        raise NewickParseError(f"{msg} at column {self.i + 1}", self.line)

    def ws(self):
        while self.i < len(self.s) and self.s[self.i].isspace():
            self.i += 1

    def peek(self):
        self.ws()
        return self.s[self.i] if self.i < len(self.s) else ""

    def name(self):
        self.ws()
        if self.peek() == "'":
            parts, j = [], self.i + 1
            while True:
                k = self.s.find("'", j)
                if k < 0:
                    self.error("unterminated quoted name")
                parts.append(self.s[j:k])
                if self.s.startswith("''", k):  # doubled quote is a literal quote
                    parts.append("'")
                    j = k + 2
                    continue
                self.i = k + 1
                return "".join(parts)
        m = _NAME_RE.match(self.s, self.i)
        if not m:
            return None
        self.i = m.end()
        return m.group()

    def length(self):
        if self.peek() != ":":
            return None
        self.i += 1
        self.ws()
        m = _NUMBER_RE.match(self.s, self.i)
        if not m:
            self.error("expected a branch length")
        self.i = m.end()
        return float(m.group())

    def subtree(self):
        if self.peek() == "(":
            self.i += 1
            kids = [self.subtree()]
            while self.peek() == ",":
                self.i += 1
                kids.append(self.subtree())
            if self.peek() != ")":
                self.error("expected ',' or ')'")
            self.i += 1
            if len(kids) < 2:
                self.error("internal node with a single child")
            self.name()  # internal labels (e.g. support values) are ignored
            return (kids, self.length())
        nm = self.name()
        if not nm:
            self.error("expected a taxon name or '('")
        return (nm, self.length())

    def tree(self):
        node = self.subtree()
        if self.peek() != ";":
            self.error("expected ';'")
        self.i += 1
        if self.peek():
            self.error("trailing characters after ';'")
        return node


def _leaf_names(node, out):
    label, _ = node
    if isinstance(label, str):
        out.append(label)
    else:
        for k in label:
            _leaf_names(k, out)
    return out


def parse_newick(text: str, taxa: TaxonSet | None = None, line=None, unrooted: bool = False):
    """Parse one Newick tree.

    Returns ``(topology, lengths)`` where ``lengths`` maps each edge split to its
    branch length (only edges that carried a length).  A top-level
    trifurcation parses as unrooted and a bifurcation as rooted; pass
    ``unrooted=True`` to unroot rooted input (root edge lengths are summed).
    """
    node = _Parser(text.strip(), line).tree()
    names = _leaf_names(node, [])
    if taxa is None:
        try:
            taxa = TaxonSet(names)
        except TaxonSetError as exc:
            raise NewickParseError(str(exc), line) from None
    if sorted(names) != sorted(taxa.names):
        raise TaxonSetError(
            (f"line {line}: " if line else "") + "tree leaves do not match the taxon set"
        )
    full = taxa.full
    clades: list[int] = []
    lengths: dict[Subsplit, float] = {}

    def walk(nd, is_top):
        label, ln = nd
        if isinstance(label, str):
            c = taxa.bit(taxa.index[label])
        else:
            if not is_top and len(label) != 2:
                raise NewickParseError("multifurcating internal node", line)
            c = 0
            for k in label:
                c |= walk(k, False)
        if not is_top:
            clades.append(c)
            if ln is not None:
                s = split_of(c, full)
                lengths[s] = lengths.get(s, 0.0) + ln
        return c

    label, _ = node
    if isinstance(label, str):
        raise NewickParseError("a tree needs at least two leaves", line)
    if len(label) > 3:
        raise NewickParseError("multifurcating root", line)
    walk(node, True)
    rooted = len(label) == 2
    if rooted and not unrooted:
        topo = Topology.from_clades(taxa, clades, rooted=True)
        # both root edges share one split; keep the per-edge view unavailable
        return topo, lengths
    if len(taxa) < 3:
        raise NewickParseError("unrooted trees need at least 3 taxa", line)
    bit0 = taxa.bit(0)
    family = {c if not c & bit0 else full ^ c for c in clades}
    topo = Topology.from_clades(taxa, family, rooted=False)
    return topo, lengths


def _fmt_name(name: str) -> str:
    if _NAME_RE.fullmatch(name):
        return name
    return "'" + name.replace("'", "''") + "'"


def to_newick(t: Topology, branches=None, digits: int = 10) -> str:
    """Serialize a topology; children are ordered by their leading taxon."""
    names = t.taxa.names

    def rec(v):
        if t.is_leaf(v):
            s = _fmt_name(names[v])
        else:
            kids = sorted(t.children[v], key=lambda u: -t.clade[u])
            s = "(" + ",".join(rec(u) for u in kids) + ")"
        if branches is not None and v != t.root:
            s += ":" + format(float(branches[v]), f".{digits}g")
        return s

    return rec(t.root) + ";"


def leaf_set_counts(t: Topology) -> list[int]:
    return [popcount(c) for c in t.clade]


def log_n_unrooted(n_taxa: int) -> float:
    return math.log(n_unrooted_topologies(n_taxa))


def check_same_taxa(trees: Sequence[Topology], taxa: TaxonSet):
    for t in trees:
        if t.taxa != taxa:
            raise TaxonSetError("trees are over different taxon sets")
