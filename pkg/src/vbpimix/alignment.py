"""Nucleotide alignments and their compressed site patterns."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import AlignmentShapeError, DomainError, EmptyInputError
from .tree import TaxonSet

STATES = "ACGT"
AMBIGUOUS = "-?N"

_CODE = {c: i for i, c in enumerate(STATES)}
_CODE.update({c: 4 for c in AMBIGUOUS})

# rows: A, C, G, T, fully ambiguous
_LEAF_PARTIALS = np.vstack([np.eye(4), np.ones(4)])


@dataclass(frozen=True, eq=False)
class Alignment:
    """``N`` sequences of equal length ``M`` over ``ACGT`` plus ``-``, ``?``, ``N``."""

    taxa: TaxonSet
    sequences: tuple[str, ...]

    def __post_init__(self):
        seqs = tuple(s.upper() for s in self.sequences)
        object.__setattr__(self, "sequences", seqs)
        if len(seqs) == 0:
            raise EmptyInputError("alignment has no sequences")
        if len(seqs) != len(self.taxa):
            raise AlignmentShapeError("one sequence per taxon is required")
        lengths = {len(s) for s in seqs}
        if len(lengths) != 1:
            raise AlignmentShapeError(f"ragged alignment, sequence lengths {sorted(lengths)}")
        if 0 in lengths:
            raise AlignmentShapeError("sequences must have at least one site")
        for name, s in zip(self.taxa.names, seqs):
            bad = set(s) - set(_CODE)
            if bad:
                raise DomainError(f"sequence {name!r} has unsupported characters {''.join(sorted(bad))!r}")

    @classmethod
    def from_dict(cls, seqs: dict[str, str]) -> "Alignment":
        return cls(TaxonSet(seqs), tuple(seqs.values()))

    @property
    def n_taxa(self) -> int:
        return len(self.taxa)

    @property
    def n_sites(self) -> int:
        return len(self.sequences[0])

    @cached_property
    def codes(self) -> np.ndarray:
        """``(N, M)`` integer matrix, 0-3 for ACGT and 4 for ambiguity."""
        return np.array([[_CODE[c] for c in s] for s in self.sequences], dtype=np.int8)

    @cached_property
    def patterns(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique columns and their multiplicities, ``((N, P), (P,))``."""
        cols, counts = np.unique(self.codes.T, axis=0, return_counts=True)
        return np.ascontiguousarray(cols.T), counts.astype(float)

    @cached_property
    def leaf_partials(self) -> np.ndarray:
        """``(N, P, 4)`` tip likelihood vectors for the unique patterns."""
        cols, _ = self.patterns
        return _LEAF_PARTIALS[cols]

    @property
    def pattern_weights(self) -> np.ndarray:
        return self.patterns[1]

    def column(self, m: int) -> str:
        return "".join(s[m] for s in self.sequences)
