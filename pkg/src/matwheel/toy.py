"""Small synthetic crystal dataset with a known structure-property map.

The label is ``2 * mean(atomic number)`` plus Gaussian noise whose scale is a
fixed fraction of the clean label range. Used by the tests and as a smoke
dataset for the CLI.
"""

from __future__ import annotations

import numpy as np

from .data import CrystalStructure, DatasetMeta, PropertyRecord
from .utils import make_rng

TOY_ELEMENTS = np.array([3, 5, 7, 9, 12, 14, 16, 19, 22, 25, 28, 31])
TOY_MAX_ATOMS = 4


def toy_structure(rng, idx: int, max_atoms: int = TOY_MAX_ATOMS, elements=TOY_ELEMENTS) -> CrystalStructure:
    n_atoms = int(rng.integers(1, max_atoms + 1))
    host = rng.choice(elements)
    species = np.full(n_atoms, host)
    if n_atoms > 1 and rng.random() < 0.3:
        species[rng.integers(n_atoms)] = rng.choice(elements)
    lengths = rng.uniform(3.5, 5.5, size=3)
    lattice = np.diag(lengths)
    # mild shear keeps cells non-orthogonal but well conditioned
    lattice[1, 0] = rng.uniform(-0.5, 0.5)
    lattice[2, 0], lattice[2, 1] = rng.uniform(-0.5, 0.5, size=2)
    coords = rng.random((n_atoms, 3))
    return CrystalStructure(lattice, species, coords, f"toy-{idx:04d}")


def toy_property(s: CrystalStructure) -> float:
    return 2.0 * float(np.mean(s.species))


def make_toy_dataset(n: int = 300, seed: int = 0, noise_frac: float = 0.02):
    """Return ``(records, meta)`` for a toy dataset of ``n`` structures."""
    rng = make_rng(seed)
    structures = [toy_structure(rng, i) for i in range(n)]
    clean = np.array([toy_property(s) for s in structures])
    span = float(clean.max() - clean.min()) if n > 1 else 1.0
    noisy = clean + rng.normal(0.0, noise_frac * span, size=n)
    records = [PropertyRecord(s, float(y), "real") for s, y in zip(structures, noisy)]
    low, high = float(noisy.min()), float(noisy.max())
    if not low < high:
        high = low + 1.0
    meta = DatasetMeta("toy", TOY_MAX_ATOMS, (low, high))
    return records, meta
