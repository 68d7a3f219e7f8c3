"""Command-line entry point: ``vbpimix <command> [--flags]``.

Every command accepts ``--config FILE`` (flat ``key = value`` lines using the
long flag names with dashes or underscores); flags given on the command line
win over the file.  Errors print one ``error: <Kind>: <message>`` line to
stderr and exit with status 1 (usage errors: status 2).
"""

from __future__ import annotations

import argparse
import math
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .errors import VBPIError
from .io import (
    load_checkpoint,
    read_fasta,
    read_reference_posterior,
    read_tree_list,
    save_checkpoint,
    write_fasta,
    write_tree_list,
)
from .mixture import Component, MixtureApprox
from .objective import estimate_marginal_ll, kl_reference_to_model
from .parsimony import render_example
from .simulate import perturbed_trees, simulate_dataset
from .toy import make_target, train_toy
from .trainer import TrainConfig, read_config, train
from .tree import to_newick


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# option tables: flag -> (type, default, help); defaults are applied after the
# config file so that only flags typed on the command line override it
_COMMON = {
    "config": (str, None, "key = value file with defaults for the flags below"),
    "threads": (int, 1, "particle-evaluation threads"),
}

COMMANDS = {
    "build-support": ("build an SBN support and initial model from candidate trees", {
        "trees": (str, None, "Newick tree list (one tree per line)"),
        "fasta": (str, None, "FASTA alignment fixing the taxon order"),
        "out": (str, None, "output checkpoint"),
        "S": (int, 1, "number of mixture components"),
        "init": (str, "frequency", "initial SBN logits: frequency or uniform"),
        "psp": (str, "true", "use PSP branch parameters (true/false)"),
    }),
    "train": ("train a mixture by maximizing the multi-sample mixture bound", {
        "fasta": (str, None, "FASTA alignment"),
        "support": (str, None, "checkpoint from build-support (or a previous run)"),
        "out": (str, None, "output checkpoint"),
        "log": (str, None, "run log CSV (default: <out>.csv)"),
        "S": (int, None, "number of components (default: as in --support)"),
        "K": (int, 10, "particles per component"),
        "iters": (int, 400000, "total iterations"),
        "seed": (int, 0, "master seed"),
        "lr-sbn": (float, 1e-3, "SBN learning rate"),
        "lr-branch": (float, 1e-3, "branch-model learning rate"),
        "annealing-init": (float, 0.001, "initial likelihood weight"),
        "annealing-horizon": (int, 100000, "iterations until the weight reaches 1"),
        "lr-decay": (float, 1.0, "stepwise learning-rate decay factor (1 = off)"),
        "lr-decay-every": (int, 0, "iterations between decays"),
        "eval-every": (int, 100, "iterations between log rows"),
        "checkpoint-every": (int, 0, "iterations between checkpoints (0: only at the end)"),
        "resume": (str, "false", "continue from the optimizer state stored in --support"),
        "log-timing": (str, "false", "add a wall-clock column to the log"),
    }),
    "eval-ml": ("importance-sampling estimate of the marginal log-likelihood", {
        "model": (str, None, "trained checkpoint"),
        "fasta": (str, None, "FASTA alignment"),
        "samples": (int, 1000, "importance samples per run"),
        "runs": (int, 100, "independent runs"),
        "seed": (int, 0, "random seed"),
    }),
    "eval-kl": ("KL divergence from a reference topology posterior", {
        "model": (str, None, "trained checkpoint"),
        "reference": (str, None, "TSV of newick<TAB>probability"),
    }),
    "sample": ("sample topologies from a trained model", {
        "model": (str, None, "trained checkpoint"),
        "n": (int, 1000, "number of samples"),
        "out": (str, None, "output file"),
        "seed": (int, 0, "random seed"),
        "freq": (bool, False, "write a newick<TAB>count<TAB>component table"),
    }),
    "toy": ("fit mixtures to a random two-level categorical target", {
        "n1": (int, 5, "categories of the first level"),
        "n2": (int, 10, "categories of the second level"),
        "S": (int, 1, "number of components"),
        "K": (int, None, "particles per component (default: floor(20 / S))"),
        "lr": (float, None, "SGD step size (default: per-S grid values)"),
        "iters": (int, 10000, "iterations"),
        "seed": (int, 0, "training seed"),
        "target-seed": (int, None, "seed of the random target (default: --seed)"),
        "out": (str, None, "KL-curve CSV"),
        "approx-out": (str, None, "final approximation TSV (default: <out>.approx.tsv)"),
    }),
    "simulate": ("simulate a JC69 alignment on a random tree", {
        "taxa": (int, 10, "number of taxa"),
        "sites": (int, 500, "alignment length"),
        "seed": (int, 0, "random seed"),
        "out": (str, None, "output FASTA"),
        "tree-out": (str, None, "true tree with branch lengths (default: <out>.tree.nwk)"),
        "perturbed": (int, 0, "also write this many NNI-perturbed trees"),
        "trees-out": (str, None, "perturbed tree list (default: <out>.trees.nwk)"),
        "branch-rate": (float, 10.0, "rate of the exponential branch lengths"),
    }),
    "parsimony-demo": ("print the conflicting-signal parsimony tables", {}),
}

_REQUIRED = {
    "build-support": ("trees", "fasta", "out"),
    "train": ("fasta", "support", "out"),
    "eval-ml": ("model", "fasta"),
    "eval-kl": ("model", "reference"),
    "sample": ("model", "out"),
    "toy": ("out",),
    "simulate": ("out",),
}


def _dest(flag: str) -> str:
    return flag.replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vbpimix", description="Mixtures of subsplit Bayesian networks for phylogenetics.")
    parser.add_argument("--version", action="version", version=f"vbpimix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        for flag, (typ, default, h) in {**opts, **_COMMON}.items():
            shown = f"{h} (default: {default})" if default is not None else h
            if typ is bool:
                p.add_argument(f"--{flag}", dest=_dest(flag), action="store_true",
                               default=argparse.SUPPRESS, help=h)
            else:
                p.add_argument(f"--{flag}", dest=_dest(flag), type=typ,
                               default=argparse.SUPPRESS, help=shown)
    return parser


def _truthy(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {v!r}")


def resolve_options(command: str, given: dict) -> argparse.Namespace:
    """Merge defaults, the optional config file and explicit flags."""
    opts = {**COMMANDS[command][1], **_COMMON}
    merged = {_dest(f): d for f, (_, d, _) in opts.items()}
    cfg_path = given.get("config")
    if cfg_path:
        types = {_dest(f): t for f, (t, _, _) in opts.items()}
        for k, v in read_config(cfg_path).items():
            key = _dest(k)
            if key not in types or key == "config":
                raise UsageError(f"unknown key {k!r} in {cfg_path}")
            merged[key] = _truthy(v) if types[key] is bool else types[key](v)
    merged.update(given)
    for key in _REQUIRED.get(command, ()):
        if merged.get(key) is None:
            raise UsageError(f"{command}: --{key.replace('_', '-')} is required")
    return argparse.Namespace(command=command, **merged)


# -- commands ---------------------------------------------------------------------


def cmd_build_support(a, out):
    aln = read_fasta(a.fasta)
    cand = read_tree_list(a.trees, aln.taxa)
    model = MixtureApprox.initial(cand.trees, a.S, use_psp=_truthy(a.psp), init=a.init)
    save_checkpoint(model, a.out)
    sup, tab = model.support, model.tables
    sizes = [len(k) for k in sup.table_children[1:]]
    out.write(f"taxa\t{len(aln.taxa)}\n")
    out.write(f"trees\t{len(cand)}\n")
    out.write(f"distinct_trees\t{len(cand.distinct)}\n")
    out.write(f"root_splits\t{len(sup.root_splits)}\n")
    out.write(f"conditional_tables\t{len(sizes)}\n")
    out.write(f"max_table_size\t{max(sizes, default=0)}\n")
    out.write(f"sbn_parameters\t{sup.n_params}\n")
    out.write(f"splits\t{tab.n_splits}\n")
    out.write(f"psps\t{tab.n_psps}\n")


def cmd_train(a, out):
    aln = read_fasta(a.fasta)
    model, state = load_checkpoint(a.support, aln.taxa, with_state=True)
    resume = _truthy(a.resume)
    S = model.n_components if a.S is None else a.S
    if S != model.n_components:
        if resume:
            raise UsageError("--resume cannot change the number of components")
        first = model.components[0]
        model = MixtureApprox([Component(first.sbn, first.branch) for _ in range(S)])
    cfg = TrainConfig(S=S, K=a.K, iterations=a.iters, lr_sbn=a.lr_sbn, lr_branch=a.lr_branch,
                      annealing_init=a.annealing_init, annealing_horizon=a.annealing_horizon,
                      seed=a.seed, checkpoint_every=a.checkpoint_every, eval_every=a.eval_every,
                      lr_decay=a.lr_decay, lr_decay_every=a.lr_decay_every,
                      use_psp=model.use_psp, threads=a.threads)
    if not resume:
        state = None
    model, log, state = train(model, aln, cfg, state, checkpoint_path=a.out)
    log_path = a.log or f"{a.out}.csv"
    log.write_csv(log_path, S, timing=_truthy(a.log_timing))
    last = log.records[-1].miselbo if log.records else math.nan
    out.write(f"iterations\t{state.iteration}\n")
    out.write(f"components\t{S}\n")
    out.write(f"last_logged_bound\t{last:.2f}\n")


def cmd_eval_ml(a, out):
    aln = read_fasta(a.fasta)
    model = load_checkpoint(a.model, aln.taxa)
    if a.runs < 1 or a.samples < 1:
        raise UsageError("--runs and --samples must be positive")
    est = estimate_marginal_ll(model, aln, a.samples, a.runs, np.random.default_rng(a.seed))
    out.write(f"{est.mean:.2f}\n" if a.runs == 1 else f"{est}\n")


def cmd_eval_kl(a, out):
    model = load_checkpoint(a.model)
    ref = read_reference_posterior(a.reference, model.taxa, rooted=model.support.rooted)
    res = kl_reference_to_model(ref, model)
    out.write(f"kl\t{res.kl:.6f}\n")
    out.write(f"out_of_support_mass\t{res.out_of_support_mass:.6f}\n")


def cmd_sample(a, out):
    model = load_checkpoint(a.model)
    rng = np.random.default_rng(a.seed)
    draws = [model.sample(rng) for _ in range(a.n)]
    with open(a.out, "w", encoding="utf-8", newline="\n") as fh:
        if not a.freq:
            for _, t, _, _ in draws:
                fh.write(to_newick(t) + "\n")
        else:
            per = Counter((j, t) for j, t, _, _ in draws)
            total = Counter(t for _, t, _, _ in draws)
            rows = [(to_newick(t), n, "mixture") for t, n in total.items()]
            rows += [(to_newick(t), n, str(j)) for (j, t), n in per.items()]
            rows.sort(key=lambda r: (r[2] != "mixture", r[2], -r[1], r[0]))
            fh.write("newick\tcount\tcomponent\n")
            for nwk, n, comp in rows:
                fh.write(f"{nwk}\t{n}\t{comp}\n")
    out.write(f"samples\t{a.n}\n")


def cmd_toy(a, out):
    target_seed = a.seed if a.target_seed is None else a.target_seed
    target = make_target(a.n1, a.n2, seed=target_seed)
    run = train_toy(target, a.S, K=a.K, iters=a.iters, lr=a.lr, seed=a.seed)
    Path(a.out).write_text(run.curve_csv(), encoding="utf-8")
    approx_path = a.approx_out or f"{a.out}.approx.tsv"
    q = run.approx.component_joint()
    lines = ["component\tz1\tz2\tq"]
    for s in range(q.shape[0]):
        for i in range(q.shape[1]):
            for j in range(q.shape[2]):
                lines.append(f"{s}\t{i}\t{j}\t{q[s, i, j]:.10g}")
    Path(approx_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    out.write(f"final_kl\t{run.final_kl:.6f}\n")


def cmd_simulate(a, out):
    t, b, aln = simulate_dataset(a.taxa, a.sites, seed=a.seed, rate=a.branch_rate)
    write_fasta(aln, a.out)
    tree_path = a.tree_out or f"{a.out}.tree.nwk"
    Path(tree_path).write_text(to_newick(t, b) + "\n", encoding="utf-8")
    if a.perturbed:
        trees = perturbed_trees(t, a.perturbed, np.random.default_rng([a.seed, 1]))
        write_tree_list(trees, a.trees_out or f"{a.out}.trees.nwk")
    out.write(f"taxa\t{a.taxa}\nsites\t{a.sites}\n")


def cmd_parsimony_demo(a, out):
    out.write(render_example())


HANDLERS = {
    "build-support": cmd_build_support,
    "train": cmd_train,
    "eval-ml": cmd_eval_ml,
    "eval-kl": cmd_eval_kl,
    "sample": cmd_sample,
    "toy": cmd_toy,
    "simulate": cmd_simulate,
    "parsimony-demo": cmd_parsimony_demo,
}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        ns = build_parser().parse_args(argv)
        given = {k: v for k, v in vars(ns).items() if k != "command"}
        args = resolve_options(ns.command, given)
        HANDLERS[args.command](args, stdout)
    except UsageError as exc:
        stderr.write(f"error: UsageError: {exc}\n")
        return 2
    except (VBPIError, OSError, ValueError) as exc:
        msg = " ".join(str(exc).split())
        stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
