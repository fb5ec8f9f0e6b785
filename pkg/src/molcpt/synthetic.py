"""Planted-motif benchmark: the label is the presence of an unsubstituted benzene block.

Molecules are chains of two or three ring blocks joined by linkers. Non-planted
slots draw mostly saturated rings plus a share of heteroaromatic decoys, so
aromatic atom content correlates with the label while only the phenyl motif
determines it.
"""

from __future__ import annotations

import numpy as np

from .canon import canonical_key
from .data import TaskDataset
from .smiles import parse_smiles

PLANTED_SMILES = "c1ccccc1"

# each block: (end form, middle form). The end form attaches through its first
# atom when it follows a linker and through its last atom when it leads; the
# middle form is entered at its first atom and left after the branch.
PLANTED_BLOCK = ("c1ccccc1", "c1ccc(cc1)")
ALIPHATIC_BLOCKS = [("C1CCCCC1", "C1CCC(CC1)"), ("C1CCNCC1", "C1CNC(CC1)"), ("C1CCOCC1", "C1COC(CC1)"),
                    ("C1CCCC1", "C1CCC(C1)"), ("C1COCCN1", "C1COCC(N1)"), ("C1CCSCC1", "C1CSC(CC1)")]
DECOY_BLOCKS = [("c1ccncc1", "c1cnc(cc1)"), ("c1ccsc1", "c1csc(c1)"), ("c1ccoc1", "c1coc(c1)"),
                ("c1cncnc1", "c1ncc(cn1)")]
# skeletal linkers; substituents on linker carbons are pruned from the scaffold,
# so several molecules share each scaffold
LINKERS = ["", "C", "O", "N", "C(C)", "C(O)", "C(F)", "C(=O)", "CC", "C(C)C", "N(C)", "C(=O)N"]


def _molecule(rng: np.random.Generator, positive: bool, decoy_rate: float) -> str:
    n_blocks = 3 if rng.random() < 0.5 else 2
    planted = int(rng.integers(n_blocks)) if positive else -1
    parts = []
    for slot in range(n_blocks):
        if slot == planted:
            block = PLANTED_BLOCK
        else:
            pool = DECOY_BLOCKS if rng.random() < decoy_rate else ALIPHATIC_BLOCKS
            block = pool[rng.integers(len(pool))]
        middle = 0 < slot < n_blocks - 1
        if slot:
            parts.append(LINKERS[rng.integers(len(LINKERS))])
        parts.append(block[1] if middle else block[0])
    return "".join(parts)


def planted_smiles(n: int = 200, seed: int = 0, decoy_rate: float = 0.35) -> tuple[list[str], np.ndarray]:
    """``n`` distinct molecules, half carrying the planted motif (label 1)."""
    rng = np.random.default_rng(seed)
    smiles, labels, seen = [], [], set()
    for label in rng.permutation([1] * (n // 2) + [0] * (n - n // 2)):
        for _ in range(1000):
            s = _molecule(rng, bool(label), decoy_rate)
            key = canonical_key(parse_smiles(s))
            if key not in seen:
                break
        else:
            raise RuntimeError("could not generate enough distinct molecules")
        seen.add(key)
        smiles.append(s)
        labels.append(int(label))
    return smiles, np.asarray(labels, dtype=np.int64)


def planted_dataset(n: int = 200, seed: int = 0, decoy_rate: float = 0.35) -> TaskDataset:
    smiles, labels = planted_smiles(n, seed, decoy_rate)
    return TaskDataset([parse_smiles(s) for s in smiles], labels.reshape(-1, 1), ["has_benzene"], "planted")
