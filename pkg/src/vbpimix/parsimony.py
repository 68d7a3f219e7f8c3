"""Small parsimony with unit substitution costs (Sankoff's per-state recursion).

Trees are either :class:`~vbpimix.tree.Topology` objects or nested tuples of
leaf labels such as ``((1, 2), 3)``; a bare label is a one-leaf tree.  A site
column maps leaf labels (taxon names for topologies) to nucleotides, or is a
string in taxon order.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .errors import DomainError
from .tree import Topology, parse_newick

STATES = "ACGT"
_INDEX = {c: i for i, c in enumerate(STATES)}
_COST = 1.0 - np.eye(4)


def _leaf_costs(char) -> np.ndarray:
    c = str(char).upper()
    if c not in _INDEX:
        raise DomainError(f"unknown nucleotide {char!r}")
    out = np.full(4, np.inf)
    out[_INDEX[c]] = 0.0
    return out


def _combine(child_costs) -> np.ndarray:
    total = np.zeros(4)
    for c in child_costs:
        total += np.min(c[None, :] + _COST, axis=1)
    return total


def _lookup(col, key, pos=None):
    if isinstance(col, str):
        return col[pos]
    if key in col:
        return col[key]
    return col[str(key)]


def _nested_scores(node, col) -> np.ndarray:
    if isinstance(node, (tuple, list)):
        return _combine([_nested_scores(ch, col) for ch in node])
    return _leaf_costs(_lookup(col, node))


def sankoff_scores(t, col: Mapping | str) -> np.ndarray:
    """Minimum number of changes for each root state, in A, C, G, T order."""
    if not isinstance(t, Topology):
        return _nested_scores(t, col)
    names = t.taxa.names
    if isinstance(col, str) and len(col) != t.n_taxa:
        raise DomainError(f"column has {len(col)} characters for {t.n_taxa} taxa")
    costs = [None] * t.n_nodes
    for v in range(t.n_nodes):
        if t.is_leaf(v):
            costs[v] = _leaf_costs(_lookup(col, names[v], v))
        else:
            costs[v] = _combine([costs[c] for c in t.children[v]])
    return costs[t.root]


def parsimony_score(t, col: Mapping | str) -> int:
    return int(sankoff_scores(t, col).min())


def total_parsimony(t, columns) -> int:
    return sum(parsimony_score(t, c) for c in columns)


def format_scores(scores) -> str:
    """``A→2,C→1,...`` with the minimal states wrapped in ``*``."""
    best = min(scores)
    parts = []
    for s, v in zip(STATES, scores):
        cell = f"{s}→{int(v)}"
        parts.append(f"*{cell}*" if v == best else cell)
    return ",".join(parts)


# -- the conflicting-signal example -------------------------------------------

#: site columns for leaves 1..6
EXAMPLE_SITES = {"i": dict(zip(range(1, 7), "ACCAGG")), "j": dict(zip(range(1, 7), "CCAGGA"))}

#: the four subtrees; A and A' cover leaves 1-3, B and B' leaves 4-6
EXAMPLE_CLADES = {
    "A": ((1, 2), 3),
    "B": ((4, 5), 6),
    "A'": (1, (2, 3)),
    "B'": (4, (5, 6)),
}

#: the four rooted trees built by joining one subtree of each pair
EXAMPLE_TREES = {
    "tau1": ("A", "B"),
    "tau2": ("A'", "B'"),
    "tau3": ("A", "B'"),
    "tau4": ("A'", "B"),
}


def example_tree(name: str):
    left, right = EXAMPLE_TREES[name]
    return (EXAMPLE_CLADES[left], EXAMPLE_CLADES[right])


def example_newick(name: str) -> str:
    def rec(node):
        if isinstance(node, tuple):
            return "(" + ",".join(rec(c) for c in node) + ")"
        return str(node)

    return rec(example_tree(name)) + ";"


def example_topologies(taxa=None) -> dict[str, Topology]:
    """The four example trees as rooted topologies on taxa ``1``..``6``."""
    out = {}
    for name in EXAMPLE_TREES:
        t, _ = parse_newick(example_newick(name), taxa)
        taxa = t.taxa
        out[name] = t
    return out


def example_tables() -> dict:
    """Per-state scores for every subtree and tree at both sites, plus totals."""
    clades = {c: {s: sankoff_scores(tree, col) for s, col in EXAMPLE_SITES.items()}
              for c, tree in EXAMPLE_CLADES.items()}
    trees = {t: {s: sankoff_scores(example_tree(t), col) for s, col in EXAMPLE_SITES.items()}
             for t in EXAMPLE_TREES}
    totals = {t: int(sum(v.min() for v in per.values())) for t, per in trees.items()}
    return {"clades": clades, "trees": trees, "totals": totals}


def render_example() -> str:
    """Plain-text rendering of the site table, the per-subtree and per-tree scores."""
    tab = example_tables()
    lines = ["sites\t" + "\t".join(f"({k})" for k in range(1, 7))]
    for s, col in EXAMPLE_SITES.items():
        lines.append(f"{s}\t" + "\t".join(col[k] for k in range(1, 7)))
    lines.append("")
    lines.append("subtree scores (best states in *)")
    lines.append("site\t" + "\t".join(f"{c}={_fmt_tree(EXAMPLE_CLADES[c])}" for c in EXAMPLE_CLADES))
    for s in EXAMPLE_SITES:
        lines.append(f"{s}\t" + "\t".join(format_scores(tab["clades"][c][s]) for c in EXAMPLE_CLADES))
    lines.append("")
    lines.append("tree scores (best states in *)")
    lines.append("site\t" + "\t".join(f"{t}({EXAMPLE_TREES[t][0]}^{EXAMPLE_TREES[t][1]})" for t in EXAMPLE_TREES))
    for s in EXAMPLE_SITES:
        lines.append(f"{s}\t" + "\t".join(format_scores(tab["trees"][t][s]) for t in EXAMPLE_TREES))
    lines.append("total\t" + "\t".join(str(tab["totals"][t]) for t in EXAMPLE_TREES))
    return "\n".join(lines) + "\n"


def _fmt_tree(node) -> str:
    if isinstance(node, tuple):
        return "(" + ",".join(_fmt_tree(c) for c in node) + ")"
    return str(node)
