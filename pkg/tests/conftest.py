import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from hyprec import geometry as geo

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k.csv"

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def random_points(rng, count, dim, max_radius=3.0):
    """Hyperboloid points at hyperbolic radius uniform in [0, max_radius]."""
    r = rng.uniform(0.0, max_radius, size=(count, 1))
    d = rng.standard_normal((count, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return geo.lift_spatial(np.sinh(r) * d)


def random_tangent(rng, x, max_norm=1.0):
    """Tangent vectors at ``x`` with Minkowski norm uniform in [0, max_norm]."""
    v = geo.project_to_tangent(x, rng.standard_normal(x.shape))
    n = geo.minkowski_norm(v)[..., None]
    target = rng.uniform(0.0, max_norm, size=n.shape)
    return v / np.where(n > 0, n, 1.0) * target


def central_difference(f, x, h=1e-6):
    """Gradient of scalar ``f`` at ``x`` (any shape) by central differences."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ml100k_path():
    """MovieLens 100K as CSV, fetched on first use."""
    if not ML100K.exists():
        proc = subprocess.run([sys.executable, str(ROOT / "scripts" / "fetch_movielens100k.py"),
                               str(ML100K)], capture_output=True, text=True)
        if proc.returncode != 0 or not ML100K.exists():
            pytest.skip(f"MovieLens 100K unavailable: {proc.stderr.strip()[-300:]}")
    return ML100K


def synthetic_interactions(seed, n_users=40, n_items=60, per_user=(5, 15)):
    """Random implicit interactions with a popularity skew and distinct timestamps."""
    from hyprec.data import Interaction

    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, n_items + 1)
    weights /= weights.sum()
    rows, t = [], 0
    for u in range(n_users):
        k = rng.integers(per_user[0], per_user[1] + 1)
        for i in rng.choice(n_items, size=k, replace=False, p=weights):
            t += 1
            rows.append(Interaction(f"u{u}", f"i{i}", None, t))
    order = rng.permutation(len(rows))
    return [rows[j] for j in order]


@pytest.fixture
def toy_dataset():
    from hyprec.data import chronological_split

    return chronological_split(synthetic_interactions(0))


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
