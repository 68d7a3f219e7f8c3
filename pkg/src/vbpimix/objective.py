"""Multi-sample bounds, the mixture VIMCO gradient estimator, and evaluation metrics.

Notation follows the estimator: ``S`` components each draw ``K`` particles.
``log_f[s, k]`` is the log importance weight of particle ``k`` of component
``s`` against the *mixture* density, and ``log_q[s, k, j]`` is component
``j``'s joint log density at that particle.

The generic pieces (:func:`vimco_signals`, :func:`score_coefficients`) work on
arrays with arbitrary leading batch dimensions and are shared with the
discrete toy model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .alignment import Alignment
from .branch import BranchParams
from .errors import BaselineUndefinedError, ContractError, InvalidParticleError, SupportViolationError
from .likelihood import PriorConfig, grad_log_prior, log_likelihood, log_likelihood_and_grad, log_prior
from .mixture import MixtureApprox
from .tree import Topology


def log_mean_exp(x, axis=-1):
    x = np.asarray(x, dtype=float)
    return logsumexp(x, axis=axis) - math.log(x.shape[axis])


def iwelbo(log_weights) -> float | np.ndarray:
    """K-sample importance-weighted bound from per-particle log weights."""
    return log_mean_exp(log_weights, axis=-1)


def vimco_signals(log_f):
    """Bound, leave-one-out local learning signals and normalized weights.

    The held-out weight of particle ``k`` is replaced by the geometric mean of
    the other ``K - 1`` weights.  Returns ``(L_hat, local, w_tilde)`` with
    shapes ``(...,)``, ``(..., K)``, ``(..., K)``.
    """
    log_f = np.asarray(log_f, dtype=float)
    K = log_f.shape[-1]
    if K < 2:
        raise BaselineUndefinedError("the leave-one-out baseline needs K >= 2")
    if not np.all(np.isfinite(log_f)):
        raise InvalidParticleError("non-finite log importance weight")
    lse = logsumexp(log_f, axis=-1)
    L_hat = lse - math.log(K)
    w = np.exp(log_f - lse[..., None])
    geo = (log_f.sum(axis=-1, keepdims=True) - log_f) / (K - 1)
    # row k holds the weights with entry k swapped for its geometric-mean stand-in
    held = np.broadcast_to(log_f[..., None, :], log_f.shape + (K,)).copy()
    diag = np.arange(K)
    held[..., diag, diag] = geo
    baseline = logsumexp(held, axis=-1) - math.log(K)
    return L_hat, L_hat[..., None] - baseline, w


def responsibilities(log_q) -> np.ndarray:
    """Posterior component probabilities ``q_j / sum_j q_j`` along the last axis."""
    log_q = np.asarray(log_q, dtype=float)
    return np.exp(log_q - logsumexp(log_q, axis=-1, keepdims=True))


def score_coefficients(log_f, log_q):
    """Weights on the score functions in the mixture VIMCO estimator.

    ``coef[..., i, s, k]`` multiplies ``grad_{phi_i} log q_{phi_i}(t_s^k)``::

        coef[i, s, k] = (1/S) * ([i == s] * local[s, k] - w_tilde[s, k] * r[s, k, i])

    where ``r`` are the mixture responsibilities of the particle.
    """
    log_f = np.asarray(log_f, dtype=float)
    S = log_f.shape[-2]
    _, local, w = vimco_signals(log_f)
    r = responsibilities(log_q)
    coef = -np.moveaxis(w[..., None] * r, -1, -3)
    idx = np.arange(S)
    coef[..., idx, idx, :] += local
    return coef / S


# -- phylogenetic particles ------------------------------------------------


@dataclass
class ParticleBatch:
    """``S x K`` particles with cached densities.

    ``log_q_tau[s, k, j]`` and ``log_q_b[s, k, j]`` are component ``j``'s topology
    and branch log densities at particle ``(s, k)``; ``grad_ll`` holds the
    likelihood gradient per particle when requested.
    """

    trees: list[list[Topology]]
    branches: list[list[np.ndarray]]
    eps: list[list[np.ndarray]]
    log_lik: np.ndarray
    log_prior: np.ndarray
    log_q_tau: np.ndarray
    log_q_b: np.ndarray
    grad_ll: list[list[np.ndarray]] | None = None

    @property
    def S(self) -> int:
        return self.log_lik.shape[0]

    @property
    def K(self) -> int:
        return self.log_lik.shape[1]

    @property
    def log_q(self) -> np.ndarray:
        return self.log_q_tau + self.log_q_b


def _component_rngs(rngs, S):
    if isinstance(rngs, np.random.Generator):
        return [rngs] * S
    rngs = list(rngs)
    if len(rngs) != S:
        raise ContractError("need one random generator per component")
    return rngs


def draw_particles(model: MixtureApprox, aln: Alignment, K: int, rngs,
                   prior: PriorConfig = PriorConfig(), with_grad: bool = False,
                   executor=None) -> ParticleBatch:
    """Sample ``K`` particles from every component and evaluate all densities.

    ``executor`` (anything with ``map``) may parallelize likelihood evaluation;
    results are gathered in particle order so the batch is deterministic.
    """
    if K < 1:
        raise ContractError("K must be positive")
    S = model.n_components
    rngs = _component_rngs(rngs, S)
    trees, branches, eps = [], [], []
    for s, comp in enumerate(model.components):
        ts, bs, es = [], [], []
        for _ in range(K):
            t = comp.sbn.sample(rngs[s])
            b, e = comp.branch.sample(t, rngs[s])
            ts.append(t)
            bs.append(b)
            es.append(e)
        trees.append(ts)
        branches.append(bs)
        eps.append(es)
    # particles that share a topology are evaluated as one batched call
    groups: dict = {}
    for s in range(S):
        for k in range(K):
            groups.setdefault(trees[s][k].key, []).append((s, k))
    jobs = [(trees[g[0][0]][g[0][1]], np.stack([branches[s][k] for s, k in g])) for g in groups.values()]
    if with_grad:
        fn = lambda tb: log_likelihood_and_grad(aln, tb[0], tb[1])
    else:
        fn = lambda tb: (log_likelihood(aln, tb[0], tb[1]), None)
    results = list(executor.map(fn, jobs) if executor is not None else map(fn, jobs))
    log_lik = np.empty((S, K))
    grad_ll = [[None] * K for _ in range(S)] if with_grad else None
    for g, (ll, gr) in zip(groups.values(), results):
        for n, (s, k) in enumerate(g):
            log_lik[s, k] = ll[n]
            if with_grad:
                grad_ll[s][k] = gr[n]
    lp = np.empty((S, K))
    lq_tau = np.empty((S, K, S))
    lq_b = np.empty((S, K, S))
    for s in range(S):
        for k in range(K):
            t, b = trees[s][k], branches[s][k]
            lp[s, k] = log_prior(t, b, prior)
            lq_tau[s, k] = model.component_log_probs(t)
            for j, comp in enumerate(model.components):
                lq_b[s, k, j] = comp.branch.log_density(t, b) if np.isfinite(lq_tau[s, k, j]) else -np.inf
    return ParticleBatch(trees, branches, eps, log_lik, lp, lq_tau, lq_b, grad_ll)


def mixture_log_q(log_q: np.ndarray) -> np.ndarray:
    """Log of the uniform mixture density from per-component log densities."""
    S = log_q.shape[-1]
    if S == 1:
        return log_q[..., 0]
    return logsumexp(log_q, axis=-1) - math.log(S)


def log_f(batch: ParticleBatch, beta: float = 1.0) -> np.ndarray:
    """``(S, K)`` log importance weights; ``beta`` anneals the likelihood only."""
    denom = mixture_log_q(batch.log_q)
    if not np.all(np.isfinite(denom)):
        raise InvalidParticleError("a particle lies outside the support of every component")
    return beta * batch.log_lik + batch.log_prior - denom


def component_bounds(batch: ParticleBatch, beta: float = 1.0) -> np.ndarray:
    """Per-component ``L_hat_s`` (each against the mixture density)."""
    return iwelbo(log_f(batch, beta))


def miselbo(batch: ParticleBatch, beta: float = 1.0) -> float:
    if batch.log_lik.size == 0:
        raise ContractError("empty particle batch")
    return float(np.mean(component_bounds(batch, beta)))


@dataclass
class ComponentGrad:
    sbn: np.ndarray
    branch: BranchParams


def vimco_grads(model: MixtureApprox, batch: ParticleBatch, beta: float = 1.0,
                prior: PriorConfig = PriorConfig()) -> list[ComponentGrad]:
    """Stochastic gradient of the mixture bound for every component.

    SBN logits use the score-function estimator with leave-one-out signals;
    branch parameters use the reparameterization path through each particle's
    own component plus the direct dependence of the mixture density on every
    component's branch parameters.
    """
    if batch.grad_ll is None:
        raise ContractError("particle batch was drawn without likelihood gradients")
    S, K = batch.S, batch.K
    comps = model.components
    lf = log_f(batch, beta)
    lq = batch.log_q
    coef = score_coefficients(lf, lq)
    _, _, w = vimco_signals(lf)
    r = responsibilities(lq)

    sbn_grads = [np.zeros(c.sbn.support.n_params) for c in comps]
    for i, comp in enumerate(comps):
        for s in range(S):
            for k in range(K):
                c = coef[i, s, k]
                if c != 0.0:
                    sbn_grads[i] += c * comp.sbn.grad_log_prob(batch.trees[s][k])

    branch_grads = [BranchParams.zeros_like(c.branch.params) for c in comps]
    for s in range(S):
        for k in range(K):
            t, b, e = batch.trees[s][k], batch.branches[s][k], batch.eps[s][k]
            dlogf = beta * batch.grad_ll[s][k] + grad_log_prior(t, b, prior)
            for j, comp in enumerate(comps):
                rj = r[s, k, j]
                if rj == 0.0:
                    continue
                dlogf = dlogf - rj * comp.branch.grad_log_density_branches(t, b)
                d_mu, d_sigma = comp.branch.grad_log_density_params(t, b)
                scale = -w[s, k] * rj / S
                branch_grads[j] = branch_grads[j] + comp.branch.accumulate(t, scale * d_mu, scale * d_sigma)
            branch_grads[s] = branch_grads[s] + comps[s].branch.grad_params(t, e, (w[s, k] / S) * dlogf)
    return [ComponentGrad(g, h) for g, h in zip(sbn_grads, branch_grads)]


# -- evaluation ---------------------------------------------------------------


@dataclass
class MarginalLikelihoodEstimate:
    mean: float
    std: float
    values: np.ndarray

    def __str__(self):
        return f"{self.mean:.2f} ({self.std:.2f})"


def importance_log_weights(model: MixtureApprox, aln: Alignment, n_samples: int, rng,
                           prior: PriorConfig = PriorConfig()) -> np.ndarray:
    """Log ``p(X, t, B) / q_mix(t, B)`` for draws from the mixture."""
    out = np.empty(n_samples)
    for n in range(n_samples):
        _, t, b, _ = model.sample(rng)
        out[n] = log_likelihood(aln, t, b) + log_prior(t, b, prior) - model.log_joint(t, b)
    return out


def estimate_marginal_ll(model: MixtureApprox, aln: Alignment, n_samples: int = 1000,
                         runs: int = 1, rng=None, prior: PriorConfig = PriorConfig(),
                         K_inner: int = 1) -> MarginalLikelihoodEstimate:
    """Importance-sampling estimate of ``log p(X)``, repeated ``runs`` times."""
    if K_inner != 1:
        raise ContractError("only single-particle importance samples are supported")
    rng = np.random.default_rng() if rng is None else rng
    values = np.array([log_mean_exp(importance_log_weights(model, aln, n_samples, rng, prior))
                       for _ in range(runs)])
    std = float(values.std(ddof=1)) if runs > 1 else 0.0
    return MarginalLikelihoodEstimate(float(values.mean()), std, values)


@dataclass
class KLResult:
    kl: float
    out_of_support_mass: float


def kl_reference_to_model(reference, model) -> KLResult:
    """``KL(p || q)`` over the reference topologies that ``q`` supports.

    ``reference`` is any iterable of ``(topology, probability)`` pairs or an
    object with ``entries``.  Mass on unsupported topologies is excluded from
    the sum and reported separately.
    """
    entries = getattr(reference, "entries", reference)
    kl, leftover = 0.0, 0.0
    for t, p in entries:
        try:
            lq = model.log_prob(t)
        except SupportViolationError:
            leftover += p
            continue
        kl += p * (math.log(p) - lq)
    return KLResult(kl, leftover)


def topology_distribution(model, trees: Sequence[Topology]) -> np.ndarray:
    """Model probability of each listed topology (0 outside the support)."""
    out = np.zeros(len(trees))
    for n, t in enumerate(trees):
        try:
            out[n] = math.exp(model.log_prob(t))
        except SupportViolationError:
            pass
    return out


def fit_topologies(model: MixtureApprox, reference, iterations: int = 2000, lr: float = 0.05) -> MixtureApprox:
    """Fit the SBN logits of every component to a reference topology distribution.

    Maximizes the exact ``sum_t p(t) log q_mix(t)`` (equivalently minimizes
    ``KL(p || q_mix)``) with Adam; component ``j`` receives the
    responsibility-weighted scores ``sum_t p(t) r_j(t) grad log q_j(t)``.
    Branch models are left untouched.
    """
    from .trainer import adam_update

    entries = list(getattr(reference, "entries", reference))
    trees = [t for t, _ in entries]
    p = np.array([w for _, w in entries])
    comps = list(model.components)
    moments = [(np.zeros(c.sbn.logits.size), np.zeros(c.sbn.logits.size)) for c in comps]
    for step in range(1, iterations + 1):
        lq = np.array([[c.sbn.log_prob(t) for c in comps] for t in trees])
        r = responsibilities(lq)
        new = []
        for j, c in enumerate(comps):
            g = np.zeros(c.sbn.logits.size)
            for n, t in enumerate(trees):
                g += p[n] * r[n, j] * c.sbn.grad_log_prob(t)
            m, v = moments[j]
            new.append(type(c)(c.sbn.with_logits(adam_update(c.sbn.logits, g, m, v, lr, step)), c.branch))
        comps = new
    return model.replace(comps)
