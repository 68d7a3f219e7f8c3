"""Two-level hierarchical categorical targets and their mixture approximations.

The target is ``p(z1, z2) = p(z2 | z1) p(z1)`` with Dirichlet(0.5) draws for
every categorical.  Each mixture component has the same two-level form, with
logits for ``q(z1)`` and a logit row for every ``q(z2 | z1)``.  Training uses
the mixture VIMCO estimator from :mod:`vbpimix.objective` and plain
stochastic gradient ascent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, logsumexp

from .errors import BaselineUndefinedError, ContractError
from .objective import iwelbo, score_coefficients

#: tuned step sizes for 1..5 components (larger mixtures tolerate larger steps)
TOY_LEARNING_RATES = {1: 0.01, 2: 0.1, 3: 0.1, 4: 0.2, 5: 0.25}


@dataclass(frozen=True, eq=False)
class HierTarget:
    p1: np.ndarray  # (n1,)
    p2: np.ndarray  # (n1, n2), rows p(z2 | z1)

    def __post_init__(self):
        p1 = np.asarray(self.p1, dtype=float)
        p2 = np.asarray(self.p2, dtype=float)
        if p1.ndim != 1 or p2.ndim != 2 or p2.shape[0] != p1.shape[0]:
            raise ContractError("p1 must be (n1,) and p2 (n1, n2)")
        if np.any(p1 < 0) or np.any(p2 < 0):
            raise ContractError("probabilities must be non-negative")
        if abs(p1.sum() - 1) > 1e-12 or np.any(np.abs(p2.sum(axis=1) - 1) > 1e-12):
            raise ContractError("target rows must sum to one")
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "p2", p2)

    @property
    def shape(self) -> tuple[int, int]:
        return self.p2.shape

    @property
    def joint(self) -> np.ndarray:
        return self.p1[:, None] * self.p2

    @property
    def log_joint(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.joint)


def make_target(n1: int, n2: int, seed=None, concentration: float = 0.5) -> HierTarget:
    """Random target; Dirichlet draws are normalized Gamma variates."""
    if n1 < 2 or n2 < 2:
        raise ContractError("n1 and n2 must be at least 2")
    rng = np.random.default_rng(seed)
    g1 = rng.gamma(concentration, 1.0, size=n1)
    g2 = rng.gamma(concentration, 1.0, size=(n1, n2))
    return HierTarget(g1 / g1.sum(), g2 / g2.sum(axis=1, keepdims=True))


@dataclass(frozen=True, eq=False)
class HierApprox:
    logits1: np.ndarray  # (S, n1)
    logits2: np.ndarray  # (S, n1, n2)

    @classmethod
    def uniform(cls, n_components: int, n1: int, n2: int) -> "HierApprox":
        return cls(np.zeros((n_components, n1)), np.zeros((n_components, n1, n2)))

    @property
    def n_components(self) -> int:
        return self.logits1.shape[0]

    def component_log_joint(self) -> np.ndarray:
        """``(S, n1, n2)`` log q_s(z1, z2)."""
        return log_softmax(self.logits1, axis=-1)[:, :, None] + log_softmax(self.logits2, axis=-1)

    def component_joint(self) -> np.ndarray:
        return np.exp(self.component_log_joint())

    def mixture_joint(self) -> np.ndarray:
        return self.component_joint().mean(axis=0)

    def log_mixture_joint(self) -> np.ndarray:
        return logsumexp(self.component_log_joint(), axis=0) - math.log(self.n_components)


def kl_q_to_p(approx: HierApprox, target: HierTarget) -> float:
    """Exact ``KL(q_mix || p)``; ``inf`` if ``q`` puts mass where ``p`` has none."""
    q = approx.mixture_joint()
    lq = approx.log_mixture_joint()
    lp = target.log_joint
    mask = q > 0
    if np.any(np.isneginf(lp[mask])):
        return math.inf
    return float(np.sum(q[mask] * (lq[mask] - lp[mask])))


def kl_p_to_q(approx: HierApprox, target: HierTarget) -> float:
    """Exact ``KL(p || q_mix)`` over the states where ``p`` has mass."""
    p = target.joint
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - approx.log_mixture_joint()[mask])))


def sample_states(approx: HierApprox, K: int, rng, n_batches: int | None = None):
    """Draw ``K`` states from every component: ``z1, z2`` of shape ``(..., S, K)``."""
    probs1 = np.exp(log_softmax(approx.logits1, axis=-1))          # (S, n1)
    probs2 = np.exp(log_softmax(approx.logits2, axis=-1))          # (S, n1, n2)
    S = approx.n_components
    lead = () if n_batches is None else (n_batches,)
    shape = lead + (S, K)
    comp = np.broadcast_to(np.arange(S)[:, None], shape)
    cum1 = np.cumsum(probs1, axis=-1)
    u1 = rng.random(shape)
    z1 = np.minimum((u1[..., None] > cum1[comp, :-1]).sum(axis=-1), probs1.shape[1] - 1)
    cum2 = np.cumsum(probs2, axis=-1)
    u2 = rng.random(shape)
    z2 = np.minimum((u2[..., None] > cum2[comp, z1, :-1]).sum(axis=-1), probs2.shape[2] - 1)
    return z1, z2


def vimco_gradient(approx: HierApprox, target: HierTarget, z1, z2):
    """Mixture VIMCO gradient for sampled states ``z1, z2`` of shape ``(..., S, K)``.

    Returns ``(g1, g2)`` with shapes ``(..., S, n1)`` and ``(..., S, n1, n2)``.
    """
    S, n1 = approx.logits1.shape
    n2 = approx.logits2.shape[2]
    K = z1.shape[-1]
    if K < 2:
        raise BaselineUndefinedError("the leave-one-out baseline needs K >= 2")
    comp_lj = approx.component_log_joint()                         # (S, n1, n2)
    log_q = np.moveaxis(comp_lj[:, z1, z2], 0, -1)                 # (..., S, K, S)
    log_mix = logsumexp(log_q, axis=-1) - math.log(S)
    lf = target.log_joint[z1, z2] - log_mix
    coef = score_coefficients(lf, log_q)                           # (..., S_i, S, K)

    p1 = np.exp(log_softmax(approx.logits1, axis=-1))
    p2 = np.exp(log_softmax(approx.logits2, axis=-1))
    oh1 = np.eye(n1)[z1]                                           # (..., S, K, n1)
    oh2 = np.eye(n2)[z2]
    # score of component i at state (z1, z2):
    #   level 1: onehot(z1) - p1_i ; level 2 row z1: onehot(z2) - p2_i[z1]
    tot = coef.sum(axis=(-2, -1))                                  # (..., S_i)
    g1 = np.einsum("...isk,...skn->...in", coef, oh1) - tot[..., None] * p1
    row_w = np.einsum("...isk,...skn->...in", coef, oh1)           # weight per (i, z1 row)
    g2 = np.einsum("...isk,...skn,...skm->...inm", coef, oh1, oh2)
    g2 = g2 - row_w[..., None] * p2
    return g1, g2


def miselbo_estimate(approx: HierApprox, target: HierTarget, z1, z2) -> np.ndarray:
    S = approx.n_components
    comp_lj = approx.component_log_joint()
    log_q = np.moveaxis(comp_lj[:, z1, z2], 0, -1)
    lf = target.log_joint[z1, z2] - (logsumexp(log_q, axis=-1) - math.log(S))
    return iwelbo(lf).mean(axis=-1)


def exact_miselbo(approx: HierApprox, target: HierTarget, K: int) -> float:
    """Expected mixture bound by enumerating every K-tuple of states."""
    S = approx.n_components
    n1, n2 = target.shape
    lq_comp = approx.component_log_joint().reshape(S, -1)
    lf = target.log_joint.ravel() - (logsumexp(lq_comp, axis=0) - math.log(S))
    n = n1 * n2
    total = 0.0
    for tup in itertools.product(range(n), repeat=K):
        tup = list(tup)
        inner = logsumexp(lf[tup]) - math.log(K)
        total += np.exp(lq_comp[:, tup].sum(axis=1)).sum() * inner
    return float(total / S)


@dataclass
class ToyRun:
    approx: HierApprox
    iterations: np.ndarray
    kl: np.ndarray
    target: HierTarget

    @property
    def final_kl(self) -> float:
        return kl_q_to_p(self.approx, self.target)

    def curve_csv(self) -> str:
        lines = ["iter,kl"]
        lines += [f"{i},{v:.10g}" for i, v in zip(self.iterations, self.kl)]
        return "\n".join(lines) + "\n"


def train_toy(target: HierTarget, n_components: int, K: int | None = None, iters: int = 10000,
              lr: float | None = None, seed=None, log_every: int = 100,
              init: HierApprox | None = None) -> ToyRun:
    """Fit a mixture with VIMCO and record exact ``KL(q_mix || p)``.

    The curve holds the KL before the updates of iterations 0, log_every, ...

    Defaults: ``K = floor(20 / S)`` and the per-``S`` learning rates of
    :data:`TOY_LEARNING_RATES`.  All components start uniform.
    """
    S = n_components
    if S < 1:
        raise ContractError("need at least one component")
    K = max(20 // S, 1) if K is None else K
    if K < 2:
        raise BaselineUndefinedError("the leave-one-out baseline needs K >= 2")
    lr = TOY_LEARNING_RATES.get(S, 0.25) if lr is None else lr
    n1, n2 = target.shape
    approx = HierApprox.uniform(S, n1, n2) if init is None else init
    rng = np.random.default_rng(seed)
    its, kls = [], []
    l1, l2 = approx.logits1.copy(), approx.logits2.copy()
    for it in range(iters):
        if it % log_every == 0:
            its.append(it)
            kls.append(kl_q_to_p(HierApprox(l1, l2), target))
        cur = HierApprox(l1, l2)
        z1, z2 = sample_states(cur, K, rng)
        g1, g2 = vimco_gradient(cur, target, z1, z2)
        l1 = l1 + lr * g1
        l2 = l2 + lr * g2
    return ToyRun(HierApprox(l1, l2), np.array(its), np.array(kls), target)


def total_variation(approx: HierApprox, i: int, j: int) -> float:
    q = approx.component_joint()
    return 0.5 * float(np.abs(q[i] - q[j]).sum())
