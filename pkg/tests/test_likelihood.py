import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from helpers import random_alignment
from oracles import brute_force
from vbpimix.alignment import Alignment
from vbpimix.errors import ContractError, DomainError
from vbpimix.likelihood import (
    PriorConfig,
    grad_branches,
    grad_log_prior,
    jc69_transition,
    jc69_transition_derivative,
    log_likelihood,
    log_likelihood_and_grad,
    log_prior,
)
from vbpimix.tree import TaxonSet, default_taxa, enumerate_unrooted, parse_newick, random_unrooted, to_newick


def test_transition_limits():
    np.testing.assert_array_equal(jc69_transition(0.0), np.eye(4))
    np.testing.assert_allclose(jc69_transition(1e3), np.full((4, 4), 0.25), atol=1e-15)


def test_transition_matches_expm():
    Q = np.full((4, 4), 1 / 3) - (4 / 3) * np.eye(4)
    np.testing.assert_allclose(jc69_transition(0.1), expm(0.1 * Q), rtol=0, atol=1e-12)


def test_transition_rows_sum_to_one():
    t = np.linspace(0, 100, 1001)
    assert np.max(np.abs(jc69_transition(t).sum(-1) - 1)) <= 1e-14


def test_transition_derivative_matches_finite_difference():
    t, h = 0.37, 1e-6
    fd = (jc69_transition(t + h) - jc69_transition(t - h)) / (2 * h)
    np.testing.assert_allclose(jc69_transition_derivative(t), fd, atol=1e-9)
    e = math.exp(-4 * t / 3)
    d = jc69_transition_derivative(t)
    assert d[0, 0] == pytest.approx(-e) and d[0, 1] == pytest.approx(e / 3)


def test_negative_length_is_domain_error():
    with pytest.raises(DomainError):
        jc69_transition(-0.1)


def two_taxon_equivalent(chars, t1, t2):
    """Star (A,B,C) with C fully ambiguous: the A-B path acts as one edge t1 + t2."""
    taxa = TaxonSet("ABC")
    tree, _ = parse_newick("(A,B,C);", taxa)
    aln = Alignment(taxa, (chars[0], chars[1], "-" * len(chars[0])))
    b = np.empty(3)
    b[tree.edge_of((taxa.clade("A"), taxa.clade("BC")))] = t1
    b[tree.edge_of((taxa.clade("AB"), taxa.clade("C")))] = 0.3
    b[tree.edge_of((taxa.clade("AC"), taxa.clade("B")))] = t2
    return tree, aln, b


def test_single_edge_identical_characters():
    t1, t2 = 0.04, 0.11
    tree, aln, b = two_taxon_equivalent(("G", "G"), t1, t2)
    t = t1 + t2
    want = math.log(0.25 * (0.25 + 0.75 * math.exp(-4 * t / 3)))
    ll, g = log_likelihood_and_grad(aln, tree, b)
    assert ll == pytest.approx(want, abs=1e-14)
    e = math.exp(-4 * t / 3)
    dt = -e / (0.25 + 0.75 * e)
    a_edge = tree.edge_of((aln.taxa.clade("A"), aln.taxa.clade("BC")))
    assert g[a_edge] == pytest.approx(dt, rel=1e-12)
    assert g[tree.edge_of((aln.taxa.clade("AB"), aln.taxa.clade("C")))] == pytest.approx(0.0, abs=1e-14)


def test_star_one_site_matches_enumeration():
    tree, _ = parse_newick("(A,B,C);")
    aln = Alignment(tree.taxa, ("A", "C", "A"))
    b = np.array([0.1, 0.2, 0.3])
    P = jc69_transition(b)
    want = sum(0.25 * P[0][x, 0] * P[1][x, 1] * P[2][x, 0] for x in range(4))
    assert log_likelihood(aln, tree, b) == pytest.approx(math.log(want), abs=1e-14)


def test_all_ambiguous_is_zero():
    t = enumerate_unrooted(5)[3]
    aln = Alignment(t.taxa, ("-?N",) * 5)
    ll, g = log_likelihood_and_grad(aln, t, np.full(7, 0.2))
    assert ll == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(g, 0.0, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_pruning_matches_brute_force(n, m, seed):
    rng = np.random.default_rng(seed)
    t = random_unrooted(default_taxa(n), rng)
    aln = random_alignment(t.taxa, m, rng, ambiguity=0.1)
    b = rng.exponential(0.3, t.n_edges) + 1e-3
    assert abs(log_likelihood(aln, t, b) - brute_force(aln, t, b)) < 1e-10


@pytest.mark.parametrize("seed", range(4))
def test_traversal_root_invariance(seed):
    """Relabel taxa so the pruning starts next to a different leaf."""
    rng = np.random.default_rng(seed)
    t = random_unrooted(default_taxa(6), rng)
    aln = random_alignment(t.taxa, 30, rng)
    b = rng.exponential(0.1, t.n_edges) + 1e-4
    text = to_newick(t, b, digits=17)
    seqs = dict(zip(t.taxa.names, aln.sequences))
    for k in range(1, 6):
        names = t.taxa.names[k:] + t.taxa.names[:k]
        taxa = TaxonSet(names)
        t2, lengths = parse_newick(text, taxa)
        aln2 = Alignment(taxa, tuple(seqs[x] for x in names))
        b2 = t2.branch_array(lengths)
        assert log_likelihood(aln2, t2, b2) == pytest.approx(log_likelihood(aln, t, b), abs=1e-10)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    t = random_unrooted(default_taxa(5), rng)
    aln = random_alignment(t.taxa, 50, rng, ambiguity=0.05)
    b = rng.exponential(0.1, t.n_edges) + 1e-3
    _, g = log_likelihood_and_grad(aln, t, b)
    h = 1e-6
    fd = np.empty_like(b)
    for e in range(b.size):
        up, dn = b.copy(), b.copy()
        up[e] += h
        dn[e] -= h
        fd[e] = (log_likelihood(aln, t, up) - log_likelihood(aln, t, dn)) / (2 * h)
    assert np.max(np.abs(g - fd) / np.abs(fd)) < 1e-5
    np.testing.assert_array_equal(grad_branches(aln, t, b), g)


def test_batched_evaluation_matches_loop(rng):
    t = random_unrooted(default_taxa(7), rng)
    aln = random_alignment(t.taxa, 40, rng)
    B = rng.exponential(0.1, (2, 3, t.n_edges)) + 1e-4
    ll, g = log_likelihood_and_grad(aln, t, B)
    assert ll.shape == (2, 3) and g.shape == B.shape
    for i, j in itertools.product(range(2), range(3)):
        l1, g1 = log_likelihood_and_grad(aln, t, B[i, j])
        assert ll[i, j] == pytest.approx(l1, abs=1e-9)
        np.testing.assert_allclose(g[i, j], g1, rtol=1e-10, atol=1e-12)


def test_pattern_compression_is_exact(rng):
    t = random_unrooted(default_taxa(5), rng)
    aln = random_alignment(t.taxa, 8, rng)
    doubled = Alignment(aln.taxa, tuple(s * 3 for s in aln.sequences))
    b = rng.exponential(0.1, t.n_edges) + 1e-3
    assert log_likelihood(doubled, t, b) == pytest.approx(3 * log_likelihood(aln, t, b), rel=1e-12)


def test_twenty_taxa_tiny_branches_finite(rng):
    t = random_unrooted(default_taxa(20), rng)
    aln = random_alignment(t.taxa, 100, rng)
    ll, g = log_likelihood_and_grad(aln, t, np.full(t.n_edges, 1e-8))
    assert np.isfinite(ll) and np.all(np.isfinite(g))


def test_rescaling_prevents_underflow(rng):
    n, m = 600, 5
    t = random_unrooted(default_taxa(n), rng)
    aln = random_alignment(t.taxa, m, rng)
    # saturated branches make every site probability exactly 4^-n (< 1e-300)
    ll = log_likelihood(aln, t, np.full(t.n_edges, 60.0))
    assert ll == pytest.approx(-m * n * math.log(4), rel=1e-12)


def test_contract_errors(quartet):
    aln = Alignment(quartet.taxa, ("A",) * 4)
    with pytest.raises(ContractError):
        log_likelihood(aln, quartet, np.ones(4))
    with pytest.raises(DomainError):
        log_likelihood(aln, quartet, [0.1, 0.1, 0.1, 0.1, 0.0])


def test_prior_single_edge():
    star, _ = parse_newick("(A,B,C);")
    cfg = PriorConfig(branch_rate=10.0, include_topology_constant=False)
    assert log_prior(star, [0.1, 0.1, 0.1], cfg) == pytest.approx(3 * (math.log(10) - 1))


def test_prior_topology_constant(quartet):
    b = np.full(5, 0.1)
    on = log_prior(quartet, b)
    off = log_prior(quartet, b, PriorConfig(include_topology_constant=False))
    assert on - off == pytest.approx(-math.log(3))
    assert PriorConfig().branch_rate == 10.0
    np.testing.assert_array_equal(grad_log_prior(quartet, b), np.full(5, -10.0))


def test_prior_rate_must_be_positive():
    with pytest.raises(DomainError):
        PriorConfig(branch_rate=0.0)
