"""Uniformly weighted mixtures of (SBN, branch model) pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .branch import BranchModel, BranchTables
from .errors import ContractError, SupportViolationError
from .sbn import SBN, SBNSupport
from .tree import Topology


@dataclass(frozen=True, eq=False)
class Component:
    sbn: SBN
    branch: BranchModel


class MixtureApprox:
    """``q(B, t) = 1/S * sum_j q_j(B | t) q_j(t)`` with shared tables."""

    def __init__(self, components: Sequence[Component]):
        components = tuple(components)
        if not components:
            raise ContractError("a mixture needs at least one component")
        support = components[0].sbn.support
        tables = components[0].branch.tables
        for c in components:
            if c.sbn.support is not support and c.sbn.support != support:
                raise ContractError("all components must share one SBN support")
            if c.branch.tables is not tables and c.branch.tables != tables:
                raise ContractError("all components must share one branch table")
        self.components = components

    @classmethod
    def initial(cls, trees: Sequence[Topology], n_components: int = 1, use_psp: bool = True,
                init: str = "frequency", jitter: float = 0.0, rng=None,
                rooted: bool = False) -> "MixtureApprox":
        """Fresh mixture whose SBN support and branch tables come from ``trees``.

        ``init`` is ``"frequency"`` (smoothed candidate counts) or ``"uniform"``.
        ``jitter`` adds Gaussian noise to every component's logits.  With
        ``rooted=True`` the SBNs model the given rooted trees as they are.
        """
        support = SBNSupport.from_trees(trees, rooted=rooted)
        tables = BranchTables.from_trees(trees)
        return cls.from_tables(support, tables, n_components, use_psp, init, jitter, rng, trees)

    @classmethod
    def from_tables(cls, support: SBNSupport, tables: BranchTables, n_components: int = 1,
                    use_psp: bool = True, init: str = "frequency", jitter: float = 0.0,
                    rng=None, trees: Sequence[Topology] | None = None) -> "MixtureApprox":
        if n_components < 1:
            raise ContractError("n_components must be >= 1")
        if init == "frequency":
            if trees is None:
                raise ContractError("frequency initialization needs the candidate trees")
            base = support.frequency_logits(trees)
        elif init == "uniform":
            base = np.zeros(support.n_params)
        else:
            raise ContractError(f"unknown init {init!r}")
        if jitter and rng is None:
            rng = np.random.default_rng(0)
        comps = []
        for _ in range(n_components):
            logits = base + (jitter * rng.standard_normal(base.shape) if jitter else 0.0)
            comps.append(Component(SBN(support, logits), BranchModel.initial(tables, use_psp)))
        return cls(comps)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def support(self) -> SBNSupport:
        return self.components[0].sbn.support

    @property
    def tables(self) -> BranchTables:
        return self.components[0].branch.tables

    @property
    def taxa(self):
        return self.support.taxa

    @property
    def use_psp(self) -> bool:
        return self.components[0].branch.use_psp

    def component_log_probs(self, t: Topology) -> np.ndarray:
        """``log q_j(t)`` for every component; ``-inf`` outside the support."""
        out = np.empty(self.n_components)
        for j, c in enumerate(self.components):
            try:
                out[j] = c.sbn.log_prob(t)
            except SupportViolationError:
                out[j] = -np.inf
        return out

    def component_log_joints(self, t: Topology, branches) -> np.ndarray:
        lq = self.component_log_probs(t)
        out = np.full(self.n_components, -np.inf)
        for j, c in enumerate(self.components):
            if np.isfinite(lq[j]):
                out[j] = lq[j] + c.branch.log_density(t, branches)
        return out

    def _mix(self, per_component: np.ndarray) -> float:
        if not np.any(np.isfinite(per_component)):
            raise SupportViolationError("topology lies outside the support of every component")
        if self.n_components == 1:
            return float(per_component[0])
        return float(logsumexp(per_component) - math.log(self.n_components))

    def log_prob(self, t: Topology) -> float:
        return self._mix(self.component_log_probs(t))

    def log_joint(self, t: Topology, branches) -> float:
        return self._mix(self.component_log_joints(t, branches))

    def sample(self, rng, component: int | None = None):
        """Draw ``(component, topology, branches, eps)``; component uniform if not given."""
        j = int(rng.integers(self.n_components)) if component is None else component
        c = self.components[j]
        t = c.sbn.sample(rng)
        b, eps = c.branch.sample(t, rng)
        return j, t, b, eps

    def replace(self, components: Sequence[Component]) -> "MixtureApprox":
        return MixtureApprox(components)
