"""Readers and writers: FASTA, Newick tree lists, reference posteriors, checkpoints.

Every ``source``/``sink`` argument is a path or an open text stream.

Checkpoint layout (UTF-8, line oriented; floats with 17 significant digits)::

    [meta]
    format = vbpimix-checkpoint
    version = 1
    components = 2
    psp = true
    rooted = false
    [taxa]
    <one name per line>
    [component 0]
    [sbn]
    root <first>|<second> <logit>
    cond <pfirst>|<psecond>/<clade> <first>|<second> <logit>
    [branch]
    split <first>|<second> <psi_mu> <psi_sigma>
    psp <first>|<second>/<sfirst>|<ssecond> <gamma_mu> <gamma_sigma>
    [component 1]
    ...
    [state]                      (optional, written by the trainer)
    iteration = <n>
    ...

Clades are bitstrings in taxon order.  All components must list identical
keys; the keys of component 0 define the shared support and tables.
"""

from __future__ import annotations

import contextlib
import io as _io
import math
import os
import tempfile
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .alignment import Alignment
from .branch import BranchModel, BranchParams, BranchTables
from .errors import (
    DuplicateTaxonError,
    DuplicateTopologyError,
    EmptyInputError,
    IncompatibleCheckpointError,
    NewickParseError,
    RangeError,
    TaxonSetError,
)
from .mixture import Component, MixtureApprox
from .sbn import SBN, SBNSupport
from .tree import TaxonSet, Topology, parse_newick, to_newick

CHECKPOINT_FORMAT = "vbpimix-checkpoint"
CHECKPOINT_VERSION = 1


@contextlib.contextmanager
def _open_text(source, mode="r"):
    if isinstance(source, (str, os.PathLike)):
        with open(source, mode, encoding="utf-8", newline="\n" if "w" in mode else None) as fh:
            yield fh
    else:
        yield source


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# -- FASTA ---------------------------------------------------------------------


def read_fasta(source) -> Alignment:
    names: list[str] = []
    chunks: list[list[str]] = []
    with _open_text(source) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith(">"):
                name = line[1:].strip()
                if not name:
                    raise TaxonSetError("empty FASTA header")
                names.append(name)
                chunks.append([])
            else:
                if not chunks:
                    raise EmptyInputError("sequence data before the first FASTA header")
                chunks[-1].append("".join(line.split()))
    if not names:
        raise EmptyInputError("FASTA input contains no records")
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise DuplicateTaxonError(f"duplicate taxon names: {', '.join(dupes)}")
    return Alignment(TaxonSet(names), tuple("".join(c) for c in chunks))


def write_fasta(aln: Alignment, sink, width: int = 0):
    with _open_text(sink, "w") as fh:
        for name, seq in zip(aln.taxa.names, aln.sequences):
            fh.write(f">{name}\n")
            if width:
                for i in range(0, len(seq), width):
                    fh.write(seq[i:i + width] + "\n")
            else:
                fh.write(seq + "\n")


# -- tree lists ----------------------------------------------------------------


@dataclass
class CandidateTreeSet:
    taxa: TaxonSet
    trees: list[Topology]

    def __len__(self):
        return len(self.trees)

    @property
    def distinct(self) -> list[Topology]:
        return list(dict.fromkeys(self.trees))


def read_tree_list(source, taxa: TaxonSet | None = None) -> CandidateTreeSet:
    """One Newick tree per line; rooted lines are unrooted; blank lines skipped."""
    trees = []
    with _open_text(source) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            t, _ = parse_newick(line, taxa, line=lineno, unrooted=True)
            taxa = t.taxa
            trees.append(t)
    if not trees:
        raise EmptyInputError("tree list contains no trees")
    return CandidateTreeSet(taxa, trees)


def write_tree_list(trees: Iterable[Topology], sink):
    with _open_text(sink, "w") as fh:
        for t in trees:
            fh.write(to_newick(t) + "\n")


# -- reference posterior ----------------------------------------------------------


@dataclass
class ReferencePosterior:
    entries: list[tuple[Topology, float]]

    def __post_init__(self):
        seen = set()
        total = 0.0
        for t, p in self.entries:
            if not (0.0 < p <= 1.0) or math.isnan(p):
                raise RangeError(f"probability {p} outside (0, 1]")
            if t in seen:
                raise DuplicateTopologyError(f"topology listed twice: {to_newick(t)}")
            seen.add(t)
            total += p
        if total > 1.0 + 1e-9:
            raise RangeError(f"reference probabilities sum to {total} > 1")

    @property
    def total_mass(self) -> float:
        return sum(p for _, p in self.entries)

    def __iter__(self):
        return iter(self.entries)


def read_reference_posterior(source, taxa: TaxonSet | None = None, rooted: bool = False) -> ReferencePosterior:
    """Lines of ``<newick>\\t<probability>``; trees are unrooted unless ``rooted``."""
    entries = []
    with _open_text(source) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            nwk, sep, prob = line.rpartition("\t")
            if not sep:
                raise NewickParseError("expected '<newick>\\t<probability>'", lineno)
            try:
                p = float(prob)
            except ValueError:
                raise RangeError(f"line {lineno}: bad probability {prob!r}") from None
            t, _ = parse_newick(nwk, taxa, line=lineno, unrooted=not rooted)
            taxa = t.taxa
            entries.append((t, p))
    if not entries:
        raise EmptyInputError("reference posterior is empty")
    return ReferencePosterior(entries)


def write_reference_posterior(entries, sink):
    with _open_text(sink, "w") as fh:
        for t, p in entries:
            fh.write(f"{to_newick(t)}\t{_fmt(p)}\n")


# -- checkpoints -----------------------------------------------------------------


@dataclass
class TrainerState:
    """Optimizer state stored alongside a model so training can resume exactly."""

    iteration: int = 0
    seed: int = 0
    step: int = 0
    moments: list[dict[str, np.ndarray]] = field(default_factory=list)


def _write_checkpoint(model: MixtureApprox, fh, state: TrainerState | None):
    taxa = model.taxa
    sup = model.support
    tabs = model.tables
    ss = taxa.subsplit_str
    w = fh.write
    w("[meta]\n")
    w(f"format = {CHECKPOINT_FORMAT}\n")
    w(f"version = {CHECKPOINT_VERSION}\n")
    w(f"components = {model.n_components}\n")
    w(f"psp = {'true' if model.use_psp else 'false'}\n")
    w(f"rooted = {'true' if sup.rooted else 'false'}\n")
    w("[taxa]\n")
    for name in taxa.names:
        w(name + "\n")
    cond_labels = []
    for key, kids in zip(sup.table_keys, sup.table_children[1:]):
        (parent, clade) = key
        for child in kids:
            cond_labels.append(f"{ss(parent)}/{taxa.bits(clade)} {ss(child)}")
    for j, comp in enumerate(model.components):
        w(f"[component {j}]\n")
        w("[sbn]\n")
        logits = comp.sbn.logits
        n_root = len(sup.root_splits)
        for i, split in enumerate(sup.root_splits):
            w(f"root {ss(split)} {_fmt(logits[i])}\n")
        for i, label in enumerate(cond_labels):
            w(f"cond {label} {_fmt(logits[n_root + i])}\n")
        w("[branch]\n")
        p = comp.branch.params
        for i, split in enumerate(tabs.splits):
            w(f"split {ss(split)} {_fmt(p.psi_mu[i])} {_fmt(p.psi_sigma[i])}\n")
        for i, (split, side) in enumerate(tabs.psps):
            w(f"psp {ss(split)}/{ss(side)} {_fmt(p.gamma_mu[i])} {_fmt(p.gamma_sigma[i])}\n")
    if state is not None:
        w("[state]\n")
        w(f"iteration = {state.iteration}\n")
        w(f"seed = {state.seed}\n")
        w(f"step = {state.step}\n")
        for j, mom in enumerate(state.moments):
            for name in sorted(mom):
                w(f"moment {j} {name} " + " ".join(_fmt(x) for x in mom[name]) + "\n")


def save_checkpoint(model: MixtureApprox, sink, state: TrainerState | None = None):
    """Write a checkpoint; paths are written atomically via a temp file."""
    if isinstance(sink, (str, os.PathLike)):
        path = os.fspath(sink)
        d = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".ckpt-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                _write_checkpoint(model, fh, state)
            os.replace(tmp, path)
        except BaseException:
            with contextlib.suppress(FileNotFoundError):
                os.unlink(tmp)
            raise
    else:
        _write_checkpoint(model, sink, state)


def checkpoint_text(model: MixtureApprox, state: TrainerState | None = None) -> str:
    buf = _io.StringIO()
    _write_checkpoint(model, buf, state)
    return buf.getvalue()


def _sections(lines):
    out: list[tuple[str, list[str]]] = []
    for raw in lines:
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("[") and line.endswith("]"):
            out.append((line[1:-1], []))
        elif not out:
            raise IncompatibleCheckpointError("checkpoint data before the first section")
        else:
            out[-1][1].append(line)
    return out


def _kv(lines):
    d = {}
    for line in lines:
        k, sep, v = line.partition("=")
        if not sep:
            raise IncompatibleCheckpointError(f"bad key/value line {line!r}")
        d[k.strip()] = v.strip()
    return d


def load_checkpoint(source, taxa: TaxonSet | None = None, with_state: bool = False):
    """Read a checkpoint.  ``taxa`` (if given) must match the stored order exactly.

    Returns the model, or ``(model, state)`` when ``with_state`` is true
    (``state`` is ``None`` if the file has no ``[state]`` section).
    """
    with _open_text(source) as fh:
        secs = _sections(fh)
    if not secs or secs[0][0] != "meta":
        raise IncompatibleCheckpointError("missing [meta] section")
    meta = _kv(secs[0][1])
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise IncompatibleCheckpointError("not a vbpimix checkpoint")
    if meta.get("version") != str(CHECKPOINT_VERSION):
        raise IncompatibleCheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    if len(secs) < 2 or secs[1][0] != "taxa":
        raise IncompatibleCheckpointError("missing [taxa] section")
    stored = TaxonSet(line.strip() for line in secs[1][1])
    if taxa is not None and taxa != stored:
        raise IncompatibleCheckpointError("checkpoint taxon order differs from the given taxon set")
    taxa = stored
    n_comp = int(meta["components"])
    use_psp = meta.get("psp", "true") == "true"
    rooted = meta.get("rooted", "false") == "true"

    comps_raw = []
    state = None
    i = 2
    while i < len(secs):
        name, body = secs[i]
        if name.startswith("component "):
            if i + 2 >= len(secs):
                raise IncompatibleCheckpointError("truncated component")
            sbn_name, sbn_lines = secs[i + 1]
            br_name, br_lines = secs[i + 2]
            if (sbn_name, br_name) != ("sbn", "branch"):
                raise IncompatibleCheckpointError(f"component sections out of order near [{name}]")
            comps_raw.append((sbn_lines, br_lines))
            i += 3
        elif name == "state":
            state = _parse_state(body)
            i += 1
        else:
            raise IncompatibleCheckpointError(f"unknown section [{name}]")
    if len(comps_raw) != n_comp:
        raise IncompatibleCheckpointError(f"expected {n_comp} components, found {len(comps_raw)}")

    support = tables = None
    parsed = []
    for sbn_lines, br_lines in comps_raw:
        roots, conds, logits = [], [], []
        for line in sbn_lines:
            parts = line.split()
            if parts[0] == "root" and len(parts) == 3:
                roots.append(taxa.parse_subsplit(parts[1]))
            elif parts[0] == "cond" and len(parts) == 4:
                pkey, _, clade = parts[1].partition("/")
                conds.append(((taxa.parse_subsplit(pkey), taxa.parse_bits(clade)), taxa.parse_subsplit(parts[2])))
            else:
                raise IncompatibleCheckpointError(f"bad [sbn] line {line!r}")
            logits.append(float(parts[-1]))
        splits, psps, mu, sig, gmu, gsig = [], [], [], [], [], []
        for line in br_lines:
            parts = line.split()
            if parts[0] == "split" and len(parts) == 4:
                splits.append(taxa.parse_subsplit(parts[1]))
                mu.append(float(parts[2]))
                sig.append(float(parts[3]))
            elif parts[0] == "psp" and len(parts) == 4:
                a, _, b = parts[1].partition("/")
                psps.append((taxa.parse_subsplit(a), taxa.parse_subsplit(b)))
                gmu.append(float(parts[2]))
                gsig.append(float(parts[3]))
            else:
                raise IncompatibleCheckpointError(f"bad [branch] line {line!r}")
        if support is None:
            tab: dict = {}
            for key, child in conds:
                tab.setdefault(key, []).append(child)
            support = SBNSupport(taxa, roots, tab, rooted=rooted)
            tables = BranchTables(taxa, splits, psps)
            layout = (roots, conds, splits, psps)
            expected = (list(support.root_splits),
                        [(k, c) for k, kids in zip(support.table_keys, support.table_children[1:]) for c in kids],
                        list(tables.splits), list(tables.psps))
            if layout != expected:
                raise IncompatibleCheckpointError("checkpoint entries are not in canonical order")
        elif (roots, conds, splits, psps) != layout:
            raise IncompatibleCheckpointError("components do not share one support")
        params = BranchParams(np.array(mu), np.array(sig), np.array(gmu), np.array(gsig))
        parsed.append(Component(SBN(support, np.array(logits)), BranchModel(tables, params, use_psp)))
    model = MixtureApprox(parsed)
    return (model, state) if with_state else model


def _parse_state(lines) -> TrainerState:
    st = TrainerState()
    moments: dict[int, dict[str, np.ndarray]] = {}
    for line in lines:
        if line.startswith("moment "):
            parts = line.split()
            j, name = int(parts[1]), parts[2]
            moments.setdefault(j, {})[name] = np.array([float(x) for x in parts[3:]])
        else:
            k, _, v = line.partition("=")
            k = k.strip()
            if k in ("iteration", "seed", "step"):
                setattr(st, k, int(v))
            else:
                raise IncompatibleCheckpointError(f"bad [state] line {line!r}")
    st.moments = [moments[j] for j in sorted(moments)]
    return st


def load_alignment_and_trees(fasta, trees):
    aln = read_fasta(fasta)
    return aln, read_tree_list(trees, aln.taxa)
