"""Amortized LogNormal branch-length approximations.

For edge ``e`` of topology ``t`` with split ``e/t``::

    mu(e, t)        = psi_mu[e/t]    + sum of gamma_mu over the PSPs around e
    sigma_raw(e, t) = psi_sigma[e/t] + sum of gamma_sigma over the same PSPs
    sigma(e, t)     = softplus(sigma_raw(e, t))

and ``log b(e) ~ Normal(mu, sigma**2)`` independently per edge.  The stored
``psi_sigma``/``gamma_sigma`` values are therefore pre-softplus.  PSP terms
are only used in PSP mode; PSPs missing from the table contribute zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, DomainError, SupportViolationError
from .tree import PSP, Subsplit, TaxonSet, Topology, all_psps, check_same_taxa, unroot

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
DEFAULT_MU = math.log(0.1)
DEFAULT_SIGMA = 0.25


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    return np.log(np.expm1(y))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class BranchTables:
    """Global split and PSP tables shared by the branch models of a run."""

    def __init__(self, taxa: TaxonSet, splits, psps):
        self.taxa = taxa
        self.splits: tuple[Subsplit, ...] = tuple(sorted(set(splits)))
        self.psps: tuple[PSP, ...] = tuple(sorted(set(psps)))
        self.split_index = {s: i for i, s in enumerate(self.splits)}
        self.psp_index = {p: i for i, p in enumerate(self.psps)}
        self._cache: dict = {}

    @classmethod
    def from_trees(cls, trees: Sequence[Topology]) -> "BranchTables":
        if not trees:
            raise ContractError("candidate tree set is empty")
        taxa = trees[0].taxa
        check_same_taxa(trees, taxa)
        splits, psps = set(), set()
        for t in set(trees):
            t = unroot(t)
            splits.update(t.edge_splits)
            for edge_psps in all_psps(t):
                psps.update(edge_psps)
        return cls(taxa, splits, psps)

    def __eq__(self, other):
        return (isinstance(other, BranchTables) and self.taxa == other.taxa
                and self.splits == other.splits and self.psps == other.psps)

    __hash__ = object.__hash__

    @property
    def n_splits(self) -> int:
        return len(self.splits)

    @property
    def n_psps(self) -> int:
        return len(self.psps)

    def indices(self, t: Topology) -> tuple[np.ndarray, np.ndarray]:
        """Split index per edge and ``(n_edges, 2)`` PSP indices (``n_psps`` = absent)."""
        hit = self._cache.get(t.key)
        if hit is None:
            if t.rooted:
                raise ContractError("branch models are defined on unrooted topologies")
            try:
                split_idx = np.array([self.split_index[s] for s in t.edge_splits], dtype=np.intp)
            except KeyError as exc:
                split_idx = SupportViolationError(
                    f"split {self.taxa.subsplit_str(exc.args[0])} not in the branch-model table")
            psp_idx = np.full((t.n_edges, 2), self.n_psps, dtype=np.intp)
            for e, edge_psps in enumerate(all_psps(t)):
                for j, p in enumerate(edge_psps):
                    psp_idx[e, j] = self.psp_index.get(p, self.n_psps)
            hit = (split_idx, psp_idx)
            self._cache[t.key] = hit
        if isinstance(hit[0], SupportViolationError):
            raise SupportViolationError(str(hit[0]))
        return hit


@dataclass(frozen=True, eq=False)
class BranchParams:
    """Branch-model parameters, or a gradient with the same layout."""

    psi_mu: np.ndarray
    psi_sigma: np.ndarray
    gamma_mu: np.ndarray
    gamma_sigma: np.ndarray

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.psi_mu, self.psi_sigma, self.gamma_mu, self.gamma_sigma)

    @classmethod
    def zeros_like(cls, other: "BranchParams") -> "BranchParams":
        return cls(*(np.zeros_like(a) for a in other.arrays()))

    def __add__(self, other: "BranchParams") -> "BranchParams":
        return BranchParams(*(a + b for a, b in zip(self.arrays(), other.arrays())))

    def scaled(self, c: float) -> "BranchParams":
        return BranchParams(*(c * a for a in self.arrays()))

    def flat(self) -> np.ndarray:
        return np.concatenate(self.arrays())

    def unflatten(self, x: np.ndarray) -> "BranchParams":
        out, i = [], 0
        for a in self.arrays():
            out.append(np.array(x[i:i + a.size]))
            i += a.size
        return BranchParams(*out)


@dataclass(frozen=True, eq=False)
class BranchModel:
    tables: BranchTables
    params: BranchParams
    use_psp: bool = True

    def __post_init__(self):
        p = self.params
        shapes = (p.psi_mu.shape, p.psi_sigma.shape, p.gamma_mu.shape, p.gamma_sigma.shape)
        want = ((self.tables.n_splits,),) * 2 + ((self.tables.n_psps,),) * 2
        if shapes != want:
            raise ContractError(f"branch parameter shapes {shapes} do not match tables {want}")
        if not all(np.all(np.isfinite(a)) for a in p.arrays()):
            raise ContractError("branch parameters must be finite")
        object.__setattr__(self, "_cache", {})

    @classmethod
    def initial(cls, tables: BranchTables, use_psp: bool = True,
                mu: float = DEFAULT_MU, sigma: float = DEFAULT_SIGMA) -> "BranchModel":
        params = BranchParams(
            np.full(tables.n_splits, mu),
            np.full(tables.n_splits, float(inverse_softplus(sigma))),
            np.zeros(tables.n_psps),
            np.zeros(tables.n_psps),
        )
        return cls(tables, params, use_psp)

    def with_params(self, params: BranchParams) -> "BranchModel":
        return BranchModel(self.tables, params, self.use_psp)

    def _raw(self, t: Topology):
        hit = self._cache.get(t.key)
        if hit is None:
            hit = self._cache[t.key] = self._compute_raw(t)
        return hit

    def _compute_raw(self, t: Topology):
        split_idx, psp_idx = self.tables.indices(t)
        p = self.params
        mu = p.psi_mu[split_idx]
        raw = p.psi_sigma[split_idx]
        if self.use_psp:
            gmu = np.append(p.gamma_mu, 0.0)
            gsig = np.append(p.gamma_sigma, 0.0)
            mu = mu + gmu[psp_idx].sum(axis=1)
            raw = raw + gsig[psp_idx].sum(axis=1)
        for a in (mu, raw):
            a.flags.writeable = False
        return mu, raw, softplus(raw)

    def distribution(self, t: Topology) -> tuple[np.ndarray, np.ndarray]:
        """Per-edge ``(mu, sigma)`` of the log branch lengths."""
        return self._raw(t)[0], self._raw(t)[2]

    def edge_params(self, t: Topology, split: Subsplit) -> tuple[float, float]:
        e = t.edge_of(split)
        mu, sigma = self.distribution(t)
        return float(mu[e]), float(sigma[e])

    def sample(self, t: Topology, rng) -> tuple[np.ndarray, np.ndarray]:
        mu, sigma = self.distribution(t)
        eps = rng.standard_normal(t.n_edges)
        return np.exp(mu + sigma * eps), eps

    def log_density(self, t: Topology, branches) -> float:
        b = np.asarray(branches, dtype=float)
        if np.any(b <= 0):
            raise DomainError("branch lengths must be positive")
        mu, sigma = self.distribution(t)
        logb = np.log(b)
        z = (logb - mu) / sigma
        return float(np.sum(-logb - np.log(sigma) - LOG_SQRT_2PI - 0.5 * z * z))

    def grad_log_density_branches(self, t: Topology, branches) -> np.ndarray:
        """d log q(B|t) / d b(e), parameters held fixed."""
        b = np.asarray(branches, dtype=float)
        mu, sigma = self.distribution(t)
        return -(1.0 + (np.log(b) - mu) / sigma**2) / b

    def grad_log_density_params(self, t: Topology, branches) -> tuple[np.ndarray, np.ndarray]:
        """Per-edge d log q(B|t) / d mu and d / d sigma, branches held fixed."""
        mu, sigma = self.distribution(t)
        d = np.log(np.asarray(branches, dtype=float)) - mu
        return d / sigma**2, -1.0 / sigma + d * d / sigma**3

    def accumulate(self, t: Topology, d_mu, d_sigma) -> BranchParams:
        """Scatter per-edge derivatives w.r.t. (mu, sigma) onto the parameters."""
        split_idx, psp_idx = self.tables.indices(t)
        raw = self._raw(t)[1]
        d_raw = np.asarray(d_sigma) * sigmoid(raw)
        d_mu = np.asarray(d_mu, dtype=float)
        n_s, n_p = self.tables.n_splits, self.tables.n_psps
        g_psi_mu = np.bincount(split_idx, weights=d_mu, minlength=n_s)
        g_psi_sigma = np.bincount(split_idx, weights=d_raw, minlength=n_s)
        if self.use_psp:
            flat = psp_idx.ravel()
            g_gamma_mu = np.bincount(flat, weights=np.repeat(d_mu, 2), minlength=n_p + 1)[:n_p]
            g_gamma_sigma = np.bincount(flat, weights=np.repeat(d_raw, 2), minlength=n_p + 1)[:n_p]
        else:
            g_gamma_mu = np.zeros(n_p)
            g_gamma_sigma = np.zeros(n_p)
        return BranchParams(g_psi_mu, g_psi_sigma, g_gamma_mu, g_gamma_sigma)

    def grad_params(self, t: Topology, eps, dlogf_db) -> BranchParams:
        """Pathwise gradient through ``b = exp(mu + sigma * eps)``."""
        eps = np.asarray(eps, dtype=float)
        g = np.asarray(dlogf_db, dtype=float)
        if eps.shape != (t.n_edges,) or g.shape != (t.n_edges,):
            raise ContractError("eps and dlogf_db must have one entry per edge")
        mu, sigma = self.distribution(t)
        b = np.exp(mu + sigma * eps)
        return self.accumulate(t, g * b, g * b * eps)
