"""Variational phylogenetic inference with mixtures of subsplit Bayesian networks.

Typical use::

    from vbpimix import read_fasta, read_tree_list, TrainConfig, MixtureApprox, train

    aln = read_fasta("data.fasta")
    cand = read_tree_list("candidates.nwk", aln.taxa)
    cfg = TrainConfig(S=3, iterations=20000)
    model = MixtureApprox.initial(cand.trees, cfg.S)
    model, log, state = train(model, aln, cfg)
"""

__version__ = "0.1.0"

from .alignment import Alignment
from .branch import BranchModel, BranchParams, BranchTables
from .errors import VBPIError
from .io import (
    load_checkpoint,
    read_fasta,
    read_reference_posterior,
    read_tree_list,
    save_checkpoint,
    write_fasta,
)
from .likelihood import PriorConfig, log_likelihood, log_likelihood_and_grad, log_prior
from .mixture import Component, MixtureApprox
from .objective import (
    estimate_marginal_ll,
    iwelbo,
    kl_reference_to_model,
    miselbo,
    vimco_grads,
)
from .parsimony import parsimony_score, sankoff_scores
from .sbn import SBN, SBNSupport
from .trainer import TrainConfig, anneal, train, train_step
from .tree import TaxonSet, Topology, enumerate_unrooted, parse_newick, to_newick

__all__ = [
    "Alignment", "BranchModel", "BranchParams", "BranchTables", "Component", "MixtureApprox",
    "PriorConfig", "SBN", "SBNSupport", "TaxonSet", "Topology", "TrainConfig", "VBPIError",
    "anneal", "enumerate_unrooted", "estimate_marginal_ll", "iwelbo", "kl_reference_to_model",
    "load_checkpoint", "log_likelihood", "log_likelihood_and_grad", "log_prior", "miselbo",
    "parse_newick", "parsimony_score", "read_fasta", "read_reference_posterior", "read_tree_list",
    "sankoff_scores", "save_checkpoint", "to_newick", "train", "train_step", "vimco_grads",
    "write_fasta",
]
