import itertools
import math

import numpy as np
import pytest

from matwheel.data import CrystalStructure
from matwheel.toy import make_toy_dataset


def random_structure(rng, n_atoms=None, max_atoms=8, min_len=3.0, max_len=6.0, species=None, id="rand"):
    """Random, well-conditioned triclinic cell with random atoms."""
    if n_atoms is None:
        n_atoms = int(rng.integers(1, max_atoms + 1))
    lattice = np.diag(rng.uniform(min_len, max_len, size=3))
    lattice[1, 0] = rng.uniform(-1.0, 1.0)
    lattice[2, :2] = rng.uniform(-1.0, 1.0, size=2)
    if species is None:
        species = rng.integers(1, 60, size=n_atoms)
    return CrystalStructure(lattice, species, rng.random((n_atoms, 3)), id)


def brute_force_neighbors(s, cutoff, max_neighbors, span=3):
    """Independent neighbor oracle: plain loops over a [-span, span]^3 supercell."""
    lat = s.lattice.tolist()
    frac = s.frac_coords.tolist()
    edges = []
    for i in range(s.n_atoms):
        cands = []
        for off in itertools.product(range(-span, span + 1), repeat=3):
            for j in range(s.n_atoms):
                f = [frac[j][k] - frac[i][k] + off[k] for k in range(3)]
                cart = [sum(f[k] * lat[k][m] for k in range(3)) for m in range(3)]
                d = math.sqrt(sum(c * c for c in cart))
                if 1e-10 < d <= cutoff:
                    cands.append((d, off, j))
        cands.sort()
        edges += [(i, j, d) for d, _, j in cands[:max_neighbors]]
    return edges


def central_differences(f, params, eps=1e-5):
    """Numerical gradient of scalar ``f()`` w.r.t. every entry of every array in ``params``."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = f()
            flat[k] = orig - eps
            down = f()
            flat[k] = orig
            gflat[k] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    worst = 0.0
    for name in analytic:
        a, n = np.asarray(analytic[name]), np.asarray(numeric[name])
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


@pytest.fixture(scope="session")
def toy():
    return make_toy_dataset(300, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_run_config(meta, **overrides):
    """A seconds-scale flywheel configuration for orchestration tests."""
    from matwheel.flywheel import RunConfig
    from matwheel.generator import GeneratorConfig
    from matwheel.graph import NeighborParams
    from matwheel.predictor import PredictorConfig

    kw = dict(
        meta=meta,
        n_synthetic=30,
        n_runs=2,
        predictor=PredictorConfig(embed_dim=4, hidden_dim=4, epochs=3, patience=5),
        generator=GeneratorConfig(max_atoms=meta.max_atoms, latent_dim=2, hidden_dim=8, epochs=3),
        neighbor=NeighborParams(cutoff=5.0, max_neighbors=6, n_centers=8, gauss_width=1.0),
        save_checkpoints=False,
    )
    kw.update(overrides)
    return RunConfig(**kw)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
