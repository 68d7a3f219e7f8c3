"""Jukes-Cantor likelihood by Felsenstein pruning, its branch gradient, and priors.

All likelihood routines accept branch lengths with optional leading batch
dimensions, ``branches.shape == (..., n_edges)``, and broadcast over them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .alignment import Alignment
from .errors import ContractError, DomainError, TaxonSetError
from .tree import Topology, log_n_unrooted

STATIONARY = np.full(4, 0.25)
_EYE = np.eye(4)


def jc69_transition(t):
    """4x4 JC69 transition matrix (or a stack of them) for branch length(s) ``t``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise DomainError("branch lengths must be non-negative")
    e = np.exp(-4.0 * t / 3.0)[..., None, None]
    return 0.25 + (_EYE - 0.25) * e


def jc69_transition_derivative(t):
    """Derivative of :func:`jc69_transition` with respect to ``t``."""
    t = np.asarray(t, dtype=float)
    e = np.exp(-4.0 * t / 3.0)[..., None, None]
    return (1.0 / 3.0 - 4.0 / 3.0 * _EYE) * e


def _check(aln: Alignment, tree: Topology, branches):
    if tree.rooted:
        raise ContractError("likelihood is defined on unrooted topologies")
    if tree.taxa != aln.taxa:
        raise TaxonSetError("alignment and tree use different taxon sets")
    branches = np.asarray(branches, dtype=float)
    if branches.shape[-1:] != (tree.n_edges,):
        raise ContractError(f"expected {tree.n_edges} branch lengths, got shape {branches.shape}")
    if np.any(branches <= 0) or not np.all(np.isfinite(branches)):
        raise DomainError("branch lengths must be positive and finite")
    return branches


def _rescale(x, log_scale):
    m = x.max(axis=-1, keepdims=True)
    x = x / m
    return x, log_scale + np.log(m[..., 0])


def _prune(aln: Alignment, tree: Topology, P):
    """Post-order pass; returns scaled conditional vectors and log scalers."""
    n = tree.n_taxa
    leaves = aln.leaf_partials
    batch = P.shape[:-3]
    n_pat = leaves.shape[1]
    partial = [None] * tree.n_nodes
    below = [None] * tree.n_nodes  # P_v @ partial_v, message sent to the parent
    log_scale = np.zeros(batch + (n_pat,))
    for v in range(tree.n_nodes):
        if v < n:
            partial[v] = leaves[v]
        else:
            acc = None
            for c in tree.children[v]:
                acc = below[c] if acc is None else acc * below[c]
            acc, log_scale = _rescale(acc, log_scale)
            partial[v] = acc
        if v != tree.root:
            below[v] = partial[v] @ P[..., v, :, :]
    return partial, below, log_scale


def log_likelihood(aln: Alignment, tree: Topology, branches) -> float | np.ndarray:
    """Log p(X | tree, branches) under JC69 with uniform root frequencies."""
    branches = _check(aln, tree, branches)
    P = jc69_transition(branches)
    partial, _, log_scale = _prune(aln, tree, P)
    site = partial[tree.root] @ STATIONARY
    return (np.log(site) + log_scale) @ aln.pattern_weights


def log_likelihood_and_grad(aln: Alignment, tree: Topology, branches):
    """Log-likelihood and its gradient with respect to every branch length.

    Uses an outside (pre-order) pass: for each edge the site likelihood is
    ``outside_v . P_v partial_v`` and its derivative swaps ``P_v`` for ``dP_v``.
    """
    branches = _check(aln, tree, branches)
    P = jc69_transition(branches)
    dP = jc69_transition_derivative(branches)
    partial, below, log_scale = _prune(aln, tree, P)
    root = tree.root
    site = partial[root] @ STATIONARY
    weights = aln.pattern_weights
    ll = (np.log(site) + log_scale) @ weights

    # outside[v]: everything outside the subtree of v, as a function of the
    # state at v's parent (scaled per site; only ratios are used)
    outside = [None] * tree.n_nodes
    grad = np.empty(branches.shape)
    for p in range(root, tree.n_taxa - 1, -1):
        kids = tree.children[p]
        if p == root:
            up = np.broadcast_to(STATIONARY, partial[p].shape)
        else:
            up = outside[p] @ P[..., p, :, :]
        for c in kids:
            acc = up
            for s in kids:
                if s != c:
                    acc = acc * below[s]
            acc = acc / acc.max(axis=-1, keepdims=True)
            outside[c] = acc
            num = ((acc @ dP[..., c, :, :]) * partial[c]).sum(axis=-1)
            den = (acc * below[c]).sum(axis=-1)
            grad[..., c] = (num / den) @ weights
    return ll, grad


def grad_branches(aln: Alignment, tree: Topology, branches) -> np.ndarray:
    return log_likelihood_and_grad(aln, tree, branches)[1]


@dataclass(frozen=True)
class PriorConfig:
    """Exponential branch-length prior and uniform unrooted topology prior."""

    branch_rate: float = 10.0
    include_topology_constant: bool = True

    def __post_init__(self):
        if not self.branch_rate > 0:
            raise DomainError("branch_rate must be positive")


def log_prior(tree: Topology, branches, cfg: PriorConfig = PriorConfig()):
    branches = np.asarray(branches, dtype=float)
    if np.any(branches <= 0):
        raise DomainError("branch lengths must be positive")
    lam = cfg.branch_rate
    out = branches.shape[-1] * math.log(lam) - lam * branches.sum(axis=-1)
    if cfg.include_topology_constant:
        out = out - log_n_unrooted(tree.n_taxa)
    return out


def grad_log_prior(tree: Topology, branches, cfg: PriorConfig = PriorConfig()) -> np.ndarray:
    return np.full(np.shape(branches), -cfg.branch_rate)
