"""Crystal records, JSON-lines ingestion, validation and dataset splitting.

Records are immutable. Every randomized helper takes an explicit seed and
draws from a Philox (counter-based) generator, so splits are reproducible
bit-for-bit across platforms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    EmptyDataset,
    EmptyStructure,
    InvalidLattice,
    MalformedRecord,
    TooManyAtoms,
)
from .utils import make_rng

LABEL_KINDS = ("real", "pseudo", "synthetic")
MAX_Z = 118


def _wrap(frac: np.ndarray) -> np.ndarray:
    out = frac - np.floor(frac)
    # x - floor(x) rounds up to exactly 1.0 for tiny negative x
    out[out >= 1.0] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class CrystalStructure:
    """A periodic crystal.

    Parameters
    ----------
    lattice : ndarray of shape (3, 3)
        Lattice vectors as rows, in Angstrom.
    species : ndarray of shape (n_atoms,)
        Atomic numbers.
    frac_coords : ndarray of shape (n_atoms, 3)
        Fractional coordinates.
    id : str
        Opaque identifier.
    """

    lattice: np.ndarray
    species: np.ndarray
    frac_coords: np.ndarray
    id: str = ""

    def __post_init__(self):
        lattice = np.array(self.lattice, dtype=np.float64).reshape(3, 3)
        species = np.array(self.species, dtype=np.int64).reshape(-1)
        coords = np.array(self.frac_coords, dtype=np.float64).reshape(-1, 3)
        for arr in (lattice, species, coords):
            arr.setflags(write=False)
        object.__setattr__(self, "lattice", lattice)
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "frac_coords", coords)

    @property
    def n_atoms(self) -> int:
        return int(self.species.shape[0])

    @property
    def cart_coords(self) -> np.ndarray:
        return self.frac_coords @ self.lattice

    def __eq__(self, other):
        if not isinstance(other, CrystalStructure):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.lattice, other.lattice)
            and np.array_equal(self.species, other.species)
            and np.array_equal(self.frac_coords, other.frac_coords)
        )

    __hash__ = None


@dataclass(frozen=True)
class PropertyRecord:
    structure: CrystalStructure
    property: float
    label_kind: str = "real"

    def __post_init__(self):
        if self.label_kind not in LABEL_KINDS:
            raise ValueError(f"label_kind must be one of {LABEL_KINDS}, got {self.label_kind!r}")
        if not math.isfinite(self.property):
            raise ValueError("property must be finite")

    @property
    def id(self) -> str:
        return self.structure.id


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    max_atoms: int
    property_range: tuple[float, float]

    def __post_init__(self):
        low, high = self.property_range
        if not low < high:
            raise ValueError("property_range must satisfy low < high")
        if self.max_atoms < 1:
            raise ValueError("max_atoms must be >= 1")


# Dataset statistics of the two data-scarce benchmarks.
JARVIS2D_EXFOLIATION = DatasetMeta("jarvis2d_exfoliation", 35, (0.03, 1604.04))
MP_POLY_TOTAL = DatasetMeta("mp_poly_total", 20, (2.08, 277.78))


@dataclass(frozen=True)
class SplitAssignment:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    seed: int = 0

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_ids), len(self.val_ids), len(self.test_ids)


@dataclass(frozen=True)
class LabeledPartition:
    labeled_ids: tuple[str, ...]
    unlabeled_ids: tuple[str, ...]


def wrap_coords(s: CrystalStructure) -> CrystalStructure:
    """Map every fractional coordinate into [0, 1)."""
    return replace(s, frac_coords=_wrap(np.array(s.frac_coords)))


def validate_structure(s: CrystalStructure, meta: DatasetMeta | None = None) -> None:
    """Raise if ``s`` violates a structural invariant or the dataset atom bound."""
    if s.n_atoms < 1:
        raise EmptyStructure(f"structure {s.id!r} has no atoms")
    if s.frac_coords.shape != (s.n_atoms, 3):
        raise MalformedRecord(f"structure {s.id!r}: species/coords length mismatch")
    if not np.all(np.isfinite(s.lattice)):
        raise InvalidLattice(f"structure {s.id!r}: non-finite lattice")
    det = float(np.linalg.det(s.lattice))
    if not det > 0:
        raise InvalidLattice(f"structure {s.id!r}: lattice determinant {det:.6g} <= 0")
    if not np.all(np.isfinite(s.frac_coords)):
        raise MalformedRecord(f"structure {s.id!r}: non-finite coordinates")
    if np.any(s.frac_coords < 0.0) or np.any(s.frac_coords >= 1.0):
        raise MalformedRecord(f"structure {s.id!r}: fractional coordinates outside [0, 1)")
    if np.any(s.species < 1) or np.any(s.species > MAX_Z):
        raise MalformedRecord(f"structure {s.id!r}: species outside 1..{MAX_Z}")
    if meta is not None and s.n_atoms > meta.max_atoms:
        raise TooManyAtoms(
            f"structure {s.id!r} has {s.n_atoms} atoms, dataset {meta.name} allows {meta.max_atoms}"
        )


def _number(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedRecord(f"{what} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise MalformedRecord(f"{what} must be finite")
    return value


def parse_structure_record(line: str) -> PropertyRecord:
    """Parse one JSON-lines record into a :class:`PropertyRecord`.

    Coordinates are wrapped into [0, 1). ``label_kind`` defaults to ``"real"``.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise MalformedRecord("record must be a JSON object")
    for key in ("id", "lattice", "species", "frac_coords", "property"):
        if key not in obj:
            raise MalformedRecord(f"missing field {key!r}")
    if not isinstance(obj["id"], str):
        raise MalformedRecord("id must be a string")

    lattice = obj["lattice"]
    if not (isinstance(lattice, list) and len(lattice) == 3
            and all(isinstance(row, list) and len(row) == 3 for row in lattice)):
        raise MalformedRecord("lattice must be a 3x3 array")
    lattice = [[_number(v, "lattice entry") for v in row] for row in lattice]

    species = obj["species"]
    if not isinstance(species, list):
        raise MalformedRecord("species must be an array")
    if len(species) == 0:
        raise MalformedRecord("structure has 0 atoms")
    for z in species:
        if isinstance(z, bool) or not isinstance(z, int):
            raise MalformedRecord(f"species entry {z!r} is not an integer")
        if not 1 <= z <= MAX_Z:
            raise MalformedRecord(f"species {z} outside 1..{MAX_Z}")

    coords = obj["frac_coords"]
    if not isinstance(coords, list) or len(coords) != len(species):
        raise MalformedRecord("frac_coords must have one [x, y, z] per species entry")
    for c in coords:
        if not (isinstance(c, list) and len(c) == 3):
            raise MalformedRecord("each frac_coords entry must be [x, y, z]")
    coords = [[_number(v, "coordinate") for v in c] for c in coords]

    prop = _number(obj["property"], "property")
    label_kind = obj.get("label_kind", "real")
    if label_kind not in LABEL_KINDS:
        raise MalformedRecord(f"label_kind {label_kind!r} not in {LABEL_KINDS}")

    s = CrystalStructure(np.array(lattice), np.array(species), _wrap(np.array(coords)), obj["id"])
    return PropertyRecord(s, prop, label_kind)


def serialize_record(record: PropertyRecord) -> str:
    """Render a record as one canonical JSON line (no trailing newline).

    Floats use ``repr`` precision, so parsing the line back is bit-exact.
    """
    s = record.structure
    obj = {
        "id": s.id,
        "lattice": s.lattice.tolist(),
        "species": [int(z) for z in s.species],
        "frac_coords": s.frac_coords.tolist(),
        "property": float(record.property),
        "label_kind": record.label_kind,
    }
    return json.dumps(obj, separators=(",", ":"))


def read_jsonl(path, meta: DatasetMeta | None = None, strict: bool = True):
    """Read a JSON-lines dataset.

    Returns ``(records, rejected)`` where ``rejected`` lists
    ``(line_number, reason)``. With ``strict=True`` the first bad line raises.
    """
    records, rejected = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = parse_structure_record(line)
                validate_structure(rec.structure, meta)
            except (MalformedRecord, InvalidLattice, TooManyAtoms, EmptyStructure) as exc:
                if strict:
                    raise type(exc)(f"line {lineno}: {exc}") from None
                rejected.append((lineno, f"{type(exc).__name__}: {exc}"))
                continue
            records.append(rec)
    return records, rejected


def write_jsonl(records: Iterable[PropertyRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(serialize_record(rec) + "\n")


def split_sizes(n: int, ratios=(0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    # the small epsilon keeps e.g. 0.7 * 1000 = 699.999... from flooring low
    n_train = int(math.floor(ratios[0] * n + 1e-9))
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    return n_train, n_val, n - n_train - n_val


def split_dataset(records: Sequence[PropertyRecord], ratios=(0.70, 0.15, 0.15), seed: int = 0) -> SplitAssignment:
    """Shuffle record ids and cut them into train / val / test.

    Sizes are ``floor(r_train * N)``, ``floor(r_val * N)`` and the remainder.
    """
    if len(records) == 0:
        raise EmptyDataset("cannot split an empty dataset")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError("record ids must be unique")
    order = make_rng(seed).permutation(len(ids))
    n_train, n_val, _ = split_sizes(len(ids), ratios)
    shuffled = [ids[i] for i in order]
    return SplitAssignment(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train:n_train + n_val]),
        tuple(shuffled[n_train + n_val:]),
        seed,
    )


def subsample_labeled(train_ids: Sequence[str], fraction: float, seed: int = 0) -> LabeledPartition:
    """Carve ``max(1, floor(fraction * n))`` labeled ids out of the training ids."""
    if len(train_ids) == 0:
        raise EmptyDataset("train_ids is empty")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    ids = list(train_ids)
    n_labeled = max(1, int(math.floor(fraction * len(ids) + 1e-9)))
    order = make_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return LabeledPartition(tuple(shuffled[:n_labeled]), tuple(shuffled[n_labeled:]))


def merge_datasets(a: Sequence[PropertyRecord], b: Sequence[PropertyRecord]) -> list[PropertyRecord]:
    return list(a) + list(b)


def composition(records: Iterable[PropertyRecord]) -> dict[str, int]:
    counts = {kind: 0 for kind in LABEL_KINDS}
    for rec in records:
        counts[rec.label_kind] += 1
    return counts


@dataclass
class DatasetHandle:
    """Id-indexed view over a dataset that records who read which labels.

    Structures are free to read; labels go through :meth:`labels` or
    :meth:`records` with a ``stage`` tag so tests can prove that test-split
    labels are only touched during final evaluation.
    """

    records: Sequence[PropertyRecord]
    access_log: list = field(default_factory=list)

    def __post_init__(self):
        self._by_id = {r.id: r for r in self.records}

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def structures(self, ids: Sequence[str]) -> list[CrystalStructure]:
        return [self._by_id[i].structure for i in ids]

    def labeled(self, ids: Sequence[str], stage: str) -> list[PropertyRecord]:
        self.access_log.append((stage, tuple(ids)))
        return [self._by_id[i] for i in ids]

    def labels(self, ids: Sequence[str], stage: str) -> np.ndarray:
        return np.array([r.property for r in self.labeled(ids, stage)], dtype=np.float64)

    def label_readers(self, ids: Iterable[str]) -> set[str]:
        wanted = set(ids)
        return {stage for stage, read in self.access_log if wanted.intersection(read)}
