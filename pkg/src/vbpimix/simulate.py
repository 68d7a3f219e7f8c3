"""Synthetic data: random trees, JC69 sequence evolution and tree perturbations."""

from __future__ import annotations

import numpy as np

from .alignment import Alignment
from .errors import ContractError
from .likelihood import jc69_transition
from .tree import TaxonSet, Topology, default_taxa, random_unrooted, split_of

NUCLEOTIDES = "ACGT"


def random_branches(t: Topology, rng, rate: float = 10.0) -> np.ndarray:
    """Independent Exponential(rate) lengths, mean ``1 / rate``."""
    return rng.exponential(1.0 / rate, size=t.n_edges)


def simulate_alignment(t: Topology, branches, n_sites: int, rng) -> Alignment:
    """Evolve ``n_sites`` JC69 characters down ``t`` from a uniform root state."""
    branches = np.asarray(branches, dtype=float)
    states = np.empty((t.n_nodes, n_sites), dtype=np.intp)
    states[t.root] = rng.integers(4, size=n_sites)
    P = jc69_transition(branches)                      # (n_edges, 4, 4)
    for v in reversed(range(t.root)):
        cum = np.cumsum(P[v][states[t.parent[v]]], axis=1)
        u = rng.random(n_sites)[:, None]
        states[v] = np.minimum((u > cum[:, :-1]).sum(axis=1), 3)
    letters = np.array(list(NUCLEOTIDES))
    seqs = tuple("".join(letters[states[i]]) for i in range(t.n_taxa))
    return Alignment(t.taxa, seqs)


def simulate_dataset(n_taxa: int, n_sites: int, seed=None, rate: float = 10.0,
                     taxa: TaxonSet | None = None):
    """Random unrooted topology, Exponential branches and a JC69 alignment."""
    rng = np.random.default_rng(seed)
    taxa = default_taxa(n_taxa) if taxa is None else taxa
    t = random_unrooted(taxa, rng)
    b = random_branches(t, rng, rate)
    return t, b, simulate_alignment(t, b, n_sites, rng)


def nni_neighbors(t: Topology) -> list[Topology]:
    """All trees one nearest-neighbour interchange away from unrooted ``t``."""
    if t.rooted:
        raise ContractError("NNI is implemented for unrooted trees")
    full = t.taxa.full
    base = set(t.nontrivial_splits)
    out = []
    for v in range(t.n_taxa, t.root):
        # the internal edge above v separates v's two children from the two
        # pieces hanging off its parent; swapping one child across gives a move
        p = t.parent[v]
        a = t.children[v][0]
        outside = [t.clade[c] for c in t.children[p] if c != v]
        if p != t.root:
            outside.append(full ^ t.clade[p])
        old = split_of(t.clade[v], full)
        for piece in outside:
            new = split_of(t.clade[a] | piece, full)
            out.append(Topology.from_splits(t.taxa, (base - {old}) | {new}))
    return list(dict.fromkeys(out))


def random_nni(t: Topology, rng, n_moves: int = 1) -> Topology:
    for _ in range(n_moves):
        nbrs = nni_neighbors(t)
        t = nbrs[int(rng.integers(len(nbrs)))]
    return t


def perturbed_trees(t: Topology, n_trees: int, rng, max_moves: int = 2) -> list[Topology]:
    """``n_trees`` trees, each ``1..max_moves`` random NNI moves away from ``t``.

    Stands in for a bootstrap or MCMC tree sample when building an SBN support.
    The true tree is always included first.
    """
    out = [t]
    while len(out) < n_trees:
        out.append(random_nni(t, rng, int(rng.integers(1, max_moves + 1))))
    return out


def substitution_fraction(aln: Alignment, i: int, j: int) -> float:
    return float(np.mean(aln.codes[i] != aln.codes[j]))

