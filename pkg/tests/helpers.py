"""Shared builders for the test modules."""

import numpy as np

from vbpimix.alignment import Alignment
from vbpimix.mixture import Component, MixtureApprox
from vbpimix.tree import enumerate_unrooted


def random_alignment(taxa, n_sites, rng, ambiguity=0.0):
    letters = np.array(list("ACGT-"))
    codes = rng.integers(4, size=(len(taxa), n_sites))
    if ambiguity:
        codes[rng.random(codes.shape) < ambiguity] = 4
    return Alignment(taxa, tuple("".join(letters[row]) for row in codes))


def randomize(model, rng, scale=0.5):
    """Copy of ``model`` with every logit and branch parameter perturbed."""
    comps = []
    for c in model.components:
        logits = c.sbn.logits + scale * rng.standard_normal(c.sbn.logits.size)
        flat = c.branch.params.flat()
        flat = flat + scale * rng.standard_normal(flat.size)
        comps.append(Component(c.sbn.with_logits(logits), c.branch.with_params(c.branch.params.unflatten(flat))))
    return MixtureApprox(comps)


def random_model(n_taxa=5, n_trees=6, S=2, seed=0, use_psp=True):
    rng = np.random.default_rng(seed)
    pool = enumerate_unrooted(n_taxa) if n_taxa <= 7 else None
    idx = rng.choice(len(pool), size=min(n_trees, len(pool)), replace=False)
    trees = [pool[i] for i in idx]
    model = MixtureApprox.initial(trees, S, use_psp=use_psp)
    return randomize(model, rng), trees




#: acceptance verdicts, criterion number -> (passed, detail); filled by
#: test_acceptance and printed at the end of the session
ACCEPTANCE_RESULTS = {}
N_CRITERIA = 11
