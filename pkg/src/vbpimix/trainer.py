"""Training loop: particle sampling, mixture VIMCO gradients and Adam updates.

Every step ``it`` draws component ``s``'s particles from its own generator
seeded with ``(seed, it, s)``, so a run is a pure function of its seed,
configuration and inputs, and can resume from any checkpoint exactly.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .alignment import Alignment
from .errors import ContractError, InvalidParticleError, NonFiniteGradientError
from .io import TrainerState, save_checkpoint
from .likelihood import PriorConfig
from .mixture import Component, MixtureApprox
from .objective import component_bounds, draw_particles, vimco_grads
from .tree import to_newick

ADAM_B1 = 0.9
ADAM_B2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    S: int = 1
    K: int = 10
    iterations: int = 400_000
    lr_sbn: float = 1e-3
    lr_branch: float = 1e-3
    annealing_init: float = 0.001
    annealing_horizon: int = 100_000
    seed: int = 0
    checkpoint_every: int = 0
    eval_every: int = 0
    # optional stepwise decay: multiply both rates by lr_decay every lr_decay_every steps
    lr_decay: float = 1.0
    lr_decay_every: int = 0
    use_psp: bool = True
    branch_rate: float = 10.0
    threads: int = 1

    def __post_init__(self):
        if self.S < 1:
            raise ContractError("S must be >= 1")
        if self.K < 2:
            raise ContractError("K must be >= 2 for the leave-one-out baseline")
        if self.iterations < 0:
            raise ContractError("iterations must be >= 0")
        if not (self.lr_sbn > 0 and self.lr_branch > 0):
            raise ContractError("learning rates must be positive")
        if not (0 < self.annealing_init <= 1):
            raise ContractError("annealing_init must lie in (0, 1]")
        if self.annealing_horizon < 1:
            raise ContractError("annealing_horizon must be >= 1")
        if not (0 < self.lr_decay <= 1):
            raise ContractError("lr_decay must lie in (0, 1]")
        if self.threads < 1:
            raise ContractError("threads must be >= 1")

    @property
    def prior(self) -> PriorConfig:
        return PriorConfig(branch_rate=self.branch_rate)

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in values.items():
            if k not in known:
                raise ContractError(f"unknown config key {k!r}")
            kw[k] = _coerce(cls.__dataclass_fields__[k].default, v)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_mapping(read_config(path))

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


def _coerce(default, value):
    if not isinstance(value, str):
        return value
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ContractError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            k, sep, v = line.partition("=")
            if not sep:
                raise ContractError(f"{path}:{lineno}: expected key = value")
            out[k.strip()] = v.strip()
    return out


def anneal(iteration: int, cfg: TrainConfig) -> float:
    """Linear likelihood weight from ``annealing_init`` up to 1 at the horizon."""
    if iteration < 0:
        raise ContractError("iteration must be >= 0")
    return min(1.0, cfg.annealing_init + iteration * (1.0 - cfg.annealing_init) / cfg.annealing_horizon)


def learning_rates(iteration: int, cfg: TrainConfig) -> tuple[float, float]:
    f = 1.0
    if cfg.lr_decay_every and cfg.lr_decay < 1.0:
        f = cfg.lr_decay ** (iteration // cfg.lr_decay_every)
    return cfg.lr_sbn * f, cfg.lr_branch * f


def component_rngs(seed: int, iteration: int, S: int) -> list[np.random.Generator]:
    return [np.random.default_rng([seed, iteration, s]) for s in range(S)]


# -- records ------------------------------------------------------------------


@dataclass
class LogRecord:
    iteration: int
    miselbo: float
    elbos: np.ndarray
    beta: float
    elapsed: float


@dataclass
class RunLog:
    records: list[LogRecord] = field(default_factory=list)
    checkpoints: list[int] = field(default_factory=list)

    def append(self, rec: LogRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ContractError("log iterations must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def to_csv(self, S: int, timing: bool = False) -> str:
        """CSV text; wall-clock times are left out unless ``timing`` is set."""
        head = ["iteration", "miselbo", "beta"] + [f"elbo_{s}" for s in range(S)]
        if timing:
            head.append("elapsed")
        lines = [",".join(head)]
        for r in self.records:
            row = [str(r.iteration), f"{r.miselbo:.10g}", f"{r.beta:.10g}"]
            row += [f"{e:.10g}" for e in r.elbos]
            if timing:
                row.append(f"{r.elapsed:.3f}")
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def write_csv(self, path, S: int, timing: bool = False):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv(S, timing))


# -- optimizer ------------------------------------------------------------------


def _fresh_moments(model: MixtureApprox) -> list[dict[str, np.ndarray]]:
    out = []
    for c in model.components:
        nb = c.branch.params.flat().size
        ns = c.sbn.logits.size
        out.append({"m_sbn": np.zeros(ns), "v_sbn": np.zeros(ns),
                    "m_branch": np.zeros(nb), "v_branch": np.zeros(nb)})
    return out


def initial_state(model: MixtureApprox, cfg: TrainConfig) -> TrainerState:
    return TrainerState(iteration=0, seed=cfg.seed, step=0, moments=_fresh_moments(model))


def adam_update(x, g, m, v, lr, step):
    """One ascent step; moments ``m`` and ``v`` are updated in place."""
    m[:] = ADAM_B1 * m + (1 - ADAM_B1) * g
    v[:] = ADAM_B2 * v + (1 - ADAM_B2) * g * g
    mhat = m / (1 - ADAM_B1 ** step)
    vhat = v / (1 - ADAM_B2 ** step)
    return x + lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


def _diagnose(batch, beta):
    """Describe the first particle with a non-finite weight or gradient."""
    lf = beta * batch.log_lik + batch.log_prior
    for s in range(batch.S):
        for k in range(batch.K):
            g = batch.grad_ll[s][k] if batch.grad_ll is not None else np.zeros(1)
            bad = (not np.isfinite(lf[s, k]) or not np.all(np.isfinite(batch.log_q[s, k]))
                   or not np.all(np.isfinite(g)))
            if bad:
                return (f"component {s} particle {k}: tree {to_newick(batch.trees[s][k], batch.branches[s][k], 6)} "
                        f"log_lik={batch.log_lik[s, k]!r} log_q={batch.log_q[s, k].tolist()!r}")
    return "no individual particle is non-finite"


def train_step(model: MixtureApprox, aln: Alignment, cfg: TrainConfig, state: TrainerState,
               executor=None) -> tuple[MixtureApprox, LogRecord]:
    """One update of every component.  ``state`` is advanced in place."""
    it = state.iteration
    beta = anneal(it, cfg)
    rngs = component_rngs(cfg.seed, it, model.n_components)
    batch = draw_particles(model, aln, cfg.K, rngs, cfg.prior, with_grad=True, executor=executor)
    try:
        grads = vimco_grads(model, batch, beta, cfg.prior)
        bounds = component_bounds(batch, beta)
    except InvalidParticleError as exc:
        raise NonFiniteGradientError(f"iteration {it}: {exc}; {_diagnose(batch, beta)}") from None
    lr_s, lr_b = learning_rates(it, cfg)
    state.step += 1
    comps = []
    for j, (c, g) in enumerate(zip(model.components, grads)):
        gb = g.branch.flat()
        if not (np.all(np.isfinite(g.sbn)) and np.all(np.isfinite(gb))):
            raise NonFiniteGradientError(f"iteration {it}, component {j}: non-finite gradient; "
                                         f"{_diagnose(batch, beta)}")
        mom = state.moments[j]
        logits = adam_update(c.sbn.logits, g.sbn, mom["m_sbn"], mom["v_sbn"], lr_s, state.step)
        flat = adam_update(c.branch.params.flat(), gb, mom["m_branch"], mom["v_branch"], lr_b, state.step)
        if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(flat))):
            raise NonFiniteGradientError(f"iteration {it}, component {j}: parameters became non-finite")
        comps.append(Component(c.sbn.with_logits(logits),
                               c.branch.with_params(c.branch.params.unflatten(flat))))
    state.iteration += 1
    rec = LogRecord(it + 1, float(np.mean(bounds)), bounds, beta, 0.0)
    return MixtureApprox(comps), rec


def _checkpoint_path(pattern: str, iteration: int) -> str:
    return pattern.format(iteration=iteration) if "{iteration" in pattern else pattern


def train(model: MixtureApprox, aln: Alignment, cfg: TrainConfig, state: TrainerState | None = None,
          checkpoint_path: str | None = None,
          callback: Callable[[int, MixtureApprox, LogRecord], None] | None = None):
    """Run (or resume) training up to ``cfg.iterations`` steps.

    A log row is kept after every ``eval_every`` steps and a checkpoint with
    optimizer state written after every ``checkpoint_every`` steps (and at the
    end).  ``checkpoint_path`` may contain ``{iteration}``.
    Returns ``(model, log, state)``.
    """
    if model.n_components != cfg.S:
        raise ContractError(f"model has {model.n_components} components but the config asks for {cfg.S}")
    if state is None:
        state = initial_state(model, cfg)
    if len(state.moments) != model.n_components:
        raise ContractError("optimizer state does not match the model")
    log = RunLog()
    t0 = time.perf_counter()
    executor = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        while state.iteration < cfg.iterations:
            model, rec = train_step(model, aln, cfg, state, executor)
            done = state.iteration
            rec.elapsed = time.perf_counter() - t0
            if cfg.eval_every and done % cfg.eval_every == 0:
                log.append(rec)
            if callback is not None:
                callback(done, model, rec)
            if checkpoint_path and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
                save_checkpoint(model, _checkpoint_path(checkpoint_path, done), state)
                log.checkpoints.append(done)
    finally:
        if executor is not None:
            executor.shutdown()
    if checkpoint_path and (not log.checkpoints or log.checkpoints[-1] != state.iteration):
        save_checkpoint(model, _checkpoint_path(checkpoint_path, state.iteration), state)
        log.checkpoints.append(state.iteration)
    return model, log, state


def new_model(trees, cfg: TrainConfig, init: str = "frequency") -> MixtureApprox:
    """Fresh mixture for ``trees``; components differ only through training noise."""
    return MixtureApprox.initial(trees, cfg.S, use_psp=cfg.use_psp, init=init)


def exact_bound_gain(values) -> float:
    """Fraction of consecutive logged values that strictly increase."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return math.nan
    return float(np.mean(np.diff(v) > 0))
