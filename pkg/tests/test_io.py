import io

import numpy as np
import pytest

from helpers import random_alignment, random_model
from vbpimix.errors import (
    AlignmentShapeError,
    DuplicateTaxonError,
    DuplicateTopologyError,
    EmptyInputError,
    IncompatibleCheckpointError,
    NewickParseError,
    RangeError,
    TaxonSetError,
)
from vbpimix.io import (
    TrainerState,
    checkpoint_text,
    load_checkpoint,
    read_fasta,
    read_reference_posterior,
    read_tree_list,
    save_checkpoint,
    write_fasta,
    write_reference_posterior,
    write_tree_list,
)
from vbpimix.tree import TaxonSet, default_taxa, enumerate_unrooted, parse_newick


def test_fasta_two_records():
    aln = read_fasta(io.StringIO(">a\nACGT\n>b\nAC\nGT\n"))
    assert (aln.n_taxa, aln.n_sites) == (2, 4)
    assert aln.taxa.names == ("a", "b")


def test_fasta_ambiguity_is_all_ones():
    aln = read_fasta(io.StringIO(">a\nAN-?\n>b\nacgt\n"))
    assert aln.sequences == ("AN-?", "ACGT")
    partials = aln.leaf_partials
    np.testing.assert_array_equal(partials[0, 1:], np.ones((3, 4)))
    np.testing.assert_array_equal(partials[1], np.eye(4))


def test_fasta_header_whitespace_trimmed():
    aln = read_fasta(io.StringIO(">taxon1   \nAC\n>  taxon2\t\nGT\n"))
    assert aln.taxa.names == ("taxon1", "taxon2")


@pytest.mark.parametrize("text,err", [
    (">a\nACGT\n>b\nACG\n", AlignmentShapeError),
    (">a\nAC\n>a\nGT\n", DuplicateTaxonError),
    ("", EmptyInputError),
    ("\n\n", EmptyInputError),
    (">a\nAXGT\n", ValueError),
])
def test_fasta_errors(text, err):
    with pytest.raises(err):
        read_fasta(io.StringIO(text))


def test_fasta_round_trip(rng, tmp_path):
    aln = random_alignment(default_taxa(6), 137, rng, ambiguity=0.1)
    for width in (0, 60):
        p = tmp_path / f"a{width}.fasta"
        write_fasta(aln, p, width=width)
        back = read_fasta(p)
        assert back.taxa == aln.taxa and back.sequences == aln.sequences


def test_tree_list_duplicates():
    cand = read_tree_list(io.StringIO("((A,B),C,D);\n((A,B),C,D);\n(D,C,(B,A));\n"))
    assert len(cand) == 3 and len(cand.distinct) == 1


def test_tree_list_rooted_lines_unrooted():
    cand = read_tree_list(io.StringIO("((A,B),(C,D));\n((A,B),C,D);\n"))
    assert all(not t.rooted for t in cand.trees)
    assert cand.trees[0] == cand.trees[1]


def test_tree_list_skips_blank_lines():
    cand = read_tree_list(io.StringIO("\n((A,B),C,D);\n\n((A,C),B,D);\n  \n"))
    assert len(cand) == 2


def test_tree_list_errors():
    with pytest.raises(TaxonSetError):
        read_tree_list(io.StringIO("((A,B),C,D);\n((A,B),C,E);\n"))
    with pytest.raises(NewickParseError, match="line 2"):
        read_tree_list(io.StringIO("((A,B),C,D);\n((A,B),C,D;\n"))
    with pytest.raises(EmptyInputError):
        read_tree_list(io.StringIO("\n"))
    with pytest.raises(TaxonSetError):
        read_tree_list(io.StringIO("((A,B),C,D);\n"), TaxonSet("ABCE"))


def test_tree_list_round_trip(tmp_path):
    trees = enumerate_unrooted(6)
    p = tmp_path / "t.nwk"
    write_tree_list(trees, p)
    assert read_tree_list(p, trees[0].taxa).trees == trees


def test_reference_posterior_valid():
    ref = read_reference_posterior(io.StringIO("((A,B),C,D);\t0.5\n((A,C),B,D);\t0.5\n"))
    assert len(ref.entries) == 2 and ref.total_mass == pytest.approx(1.0)
    ref = read_reference_posterior(io.StringIO("((A,B),C,D);\t0.5\n((A,C),B,D);\t0.45\n"))
    assert ref.total_mass == pytest.approx(0.95)


@pytest.mark.parametrize("text,err", [
    ("((A,B),C,D);\t-0.1\n", RangeError),
    ("((A,B),C,D);\t0\n", RangeError),
    ("((A,B),C,D);\t1.5\n", RangeError),
    ("((A,B),C,D);\t0.7\n((A,C),B,D);\t0.7\n", RangeError),
    ("((A,B),C,D);\t0.3\n((B,A),D,C);\t0.3\n", DuplicateTopologyError),
    ("((A,B),C,D);\n", NewickParseError),
])
def test_reference_posterior_errors(text, err):
    with pytest.raises(err):
        read_reference_posterior(io.StringIO(text))


def test_reference_posterior_round_trip():
    trees = enumerate_unrooted(5)
    p = np.random.default_rng(3).dirichlet(np.ones(15))
    buf = io.StringIO()
    write_reference_posterior(zip(trees, p), buf)
    ref = read_reference_posterior(io.StringIO(buf.getvalue()), trees[0].taxa)
    assert [t for t, _ in ref] == trees
    np.testing.assert_array_equal([q for _, q in ref], p)


def _all_log_densities(model, trees, rng):
    out = []
    for t in trees:
        for _ in range(3):
            b = rng.exponential(0.1, size=t.n_edges)
            out.append(model.component_log_joints(t, b))
        out.append(model.component_log_probs(t))
    return np.concatenate(out)


@pytest.mark.parametrize("S,use_psp", [(1, True), (3, True), (2, False)])
def test_checkpoint_round_trip(tmp_path, S, use_psp):
    model, trees = random_model(n_taxa=6, n_trees=8, S=S, seed=S, use_psp=use_psp)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, p1)
    back = load_checkpoint(p1, model.taxa)
    assert back.n_components == S
    save_checkpoint(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    for a, b in zip(model.components, back.components):
        np.testing.assert_array_equal(a.sbn.logits, b.sbn.logits)
        np.testing.assert_array_equal(a.branch.params.flat(), b.branch.params.flat())
    assert back.support == model.support and back.tables == model.tables
    x = _all_log_densities(model, enumerate_unrooted(6), np.random.default_rng(0))
    y = _all_log_densities(back, enumerate_unrooted(6), np.random.default_rng(0))
    np.testing.assert_allclose(y, x, rtol=0, atol=1e-12)


def test_checkpoint_permuted_taxa():
    model, _ = random_model(n_taxa=5, S=1)
    text = checkpoint_text(model)
    perm = TaxonSet(reversed(model.taxa.names))
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(io.StringIO(text), perm)


@pytest.mark.parametrize("edit", [
    lambda s: s.replace("version = 1", "version = 2"),
    lambda s: s.replace("format = vbpimix-checkpoint", "format = other"),
    lambda s: s.replace("components = 2", "components = 3"),
    lambda s: s.replace("[sbn]", "[sbnx]", 1),
])
def test_checkpoint_corruption(edit):
    model, _ = random_model(n_taxa=5, S=2)
    with pytest.raises(IncompatibleCheckpointError):
        load_checkpoint(io.StringIO(edit(checkpoint_text(model))))


def test_checkpoint_state_round_trip():
    model, _ = random_model(n_taxa=5, S=2)
    rng = np.random.default_rng(1)
    moments = [{k: rng.standard_normal(n) for k, n in
                (("m_sbn", c.sbn.logits.size), ("v_sbn", c.sbn.logits.size),
                 ("m_branch", c.branch.params.flat().size), ("v_branch", c.branch.params.flat().size))}
               for c in model.components]
    state = TrainerState(iteration=17, seed=4, step=17, moments=moments)
    text = checkpoint_text(model, state)
    back, st = load_checkpoint(io.StringIO(text), with_state=True)
    assert (st.iteration, st.seed, st.step) == (17, 4, 17)
    for a, b in zip(moments, st.moments):
        assert a.keys() == b.keys()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])
    assert checkpoint_text(back, st) == text
    _, none = load_checkpoint(io.StringIO(checkpoint_text(model)), with_state=True)
    assert none is None


def test_checkpoint_write_is_atomic(tmp_path):
    model, _ = random_model(n_taxa=5, S=1)
    p = tmp_path / "m.ckpt"
    save_checkpoint(model, p)
    save_checkpoint(model, p)
    assert [f.name for f in tmp_path.iterdir()] == ["m.ckpt"]


def test_rooted_checkpoint_round_trip():
    from vbpimix.mixture import MixtureApprox

    taxa = TaxonSet("ABCD")
    trees = [parse_newick(s, taxa)[0] for s in ("((A,B),(C,D));", "(((A,B),C),D);")]
    model = MixtureApprox.initial(trees, 2, rooted=True, jitter=0.3)
    back = load_checkpoint(io.StringIO(checkpoint_text(model)))
    assert back.support.rooted
    for t in trees:
        np.testing.assert_array_equal(back.component_log_probs(t), model.component_log_probs(t))
