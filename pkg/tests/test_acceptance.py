"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the pytest terminal summary (see ``conftest.py``)
and immediately with ``-s``. Run just this suite with::

    pytest tests/test_acceptance.py -v

Criteria 6, 8 and 9 need MovieLens 100K (fetched on first use by
``scripts/fetch_movielens100k.py``); criterion 7 needs the Amazon Musical
Instruments review file, which is not available here, so it is recorded as
waived.
"""

import shutil
import time

import numpy as np
import pytest
from scipy import stats

from conftest import central_difference, random_points, random_tangent, rel_error
from hyprec import geometry as geo
from hyprec import losses
from hyprec import netstats as ns
from hyprec.cli import main
from hyprec.commands import load_model
from hyprec.simulations import SCENARIOS, run_simulation

RESULTS: dict[int, str] = {}


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


# -- 1: geometry identities ---------------------------------------------------

def test_criterion_1_geometry_identities():
    rng = np.random.default_rng(1)
    n, dim = 10_000, 5
    t0 = time.perf_counter()
    x = random_points(rng, n, dim)
    y = geo.exp_map(x, random_tangent(rng, x, 2.0))
    closure = float(np.max(geo.manifold_residual(y)))

    far = random_points(rng, n, dim, max_radius=5.0)
    klein = float(np.max(np.abs(geo.klein_to_hyperboloid(geo.hyperboloid_to_klein(far)) - far)))
    poinc = float(np.max(np.abs(geo.poincare_to_hyperboloid(geo.hyperboloid_to_poincare(far))
                                - far)))

    u, v = random_points(rng, n, dim), random_points(rng, n, dim)
    dp = geo.poincare_distance(geo.hyperboloid_to_poincare(u), geo.hyperboloid_to_poincare(v))
    cross = float(np.max(np.abs(dp - geo.hyperboloid_distance(u, v))))

    w = random_tangent(rng, x, 10.0)
    metric = float(np.max(np.abs(geo.hyperboloid_distance(x, geo.exp_map(x, w))
                                 - geo.minkowski_norm(w))))
    elapsed = time.perf_counter() - t0
    ok = (closure <= 1e-9 and klein <= 1e-9 and poinc <= 1e-9 and cross <= 1e-6
          and metric <= 1e-6 and elapsed < 10)
    record(1, ok, f"closure {closure:.1e}, klein {klein:.1e}, poincare {poinc:.1e}, "
                  f"cross-model {cross:.1e}, exp metric {metric:.1e}, {elapsed:.1f}s")


# -- 2: gradient oracles -------------------------------------------------------

def _away_from_kinks(u, vp, vn, mode, geometry):
    margins = 1.0 - losses.score(u, vp, mode, geometry) + losses.score(u, vn, mode, geometry)
    return np.min(np.abs(margins)) > 1e-3


def _aggregate(items, geometry):
    cls = losses.MidpointAggregate if geometry == "hyperboloid" else losses.MeanAggregate
    return cls(items, np.zeros(len(items), dtype=int), 1).users[0]


def test_criterion_2_gradient_oracles():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = {}

    def note(name, analytic, numeric):
        worst[name] = max(worst.get(name, 0.0), rel_error(analytic, numeric))

    for _ in range(100):
        u, v = random_points(rng, 2, 4, max_radius=2.0)
        note("distance", geo.distance_gradient(u, v),
             central_difference(lambda z: geo.hyperboloid_distance(u, z), v.copy()))

    for mode in losses.SCORE_MODES:
        for _ in range(100):
            u, vp, vn = random_points(rng, 3, 4, max_radius=1.5)
            _, gu, gp, gn = losses.bpr_gradients(u, vp, vn, mode)

            def bpr(a, b, c):
                return losses.bpr_loss(losses.score(a, b, mode), losses.score(a, c, mode))

            note("bpr", np.concatenate([gu, gp, gn]), np.concatenate([
                central_difference(lambda z: bpr(z, vp, vn), u.copy()),
                central_difference(lambda z: bpr(u, z, vn), vp.copy()),
                central_difference(lambda z: bpr(u, vp, z), vn.copy())]))

        done = 0
        while done < 100:
            u, vp = random_points(rng, 2, 4, max_radius=1.5)
            vn = random_points(rng, 5, 4, max_radius=1.5)
            if not _away_from_kinks(u, vp, vn, mode, "hyperboloid"):
                continue

            def wmrb(a, b, c):
                return losses.wmrb_loss(-losses.score(a, b, mode), -losses.score(a, c, mode))

            _, gu, gp, gn = losses.wmrb_gradients_arrays(u[None], vp[None], vn[None], 1.0, mode)
            note("wmrb", np.concatenate([gu[0], gp[0], gn[0].ravel()]), np.concatenate([
                central_difference(lambda z: wmrb(z, vp, vn), u.copy()),
                central_difference(lambda z: wmrb(u, z, vn), vp.copy()),
                central_difference(lambda z: wmrb(u, vp, z), vn.copy()).ravel()]))
            done += 1

        done = 0
        while done < 100:
            items = random_points(rng, 12, 4, max_radius=1.5)
            perm = rng.permutation(12)
            hist, pos, negs = list(perm[:4]), int(perm[4]), list(perm[5:10])
            if not _away_from_kinks(_aggregate(items[hist], "hyperboloid"), items[pos],
                                    items[negs], mode, "hyperboloid"):
                continue

            def asym(table):
                user = _aggregate(table[hist], "hyperboloid")
                return losses.wmrb_loss(-losses.score(user, table[pos], mode),
                                        -losses.score(user, table[negs], mode))

            res = losses.wmrb_gradients(losses.WmrbBatch(0, pos, tuple(negs), 1.0, tuple(hist)),
                                        items, user_repr_mode="asymmetric", mode=mode)
            analytic = np.zeros_like(items)
            analytic[pos] += res.wrt_positive
            for n, g in zip(negs, res.wrt_negatives):
                analytic[n] += g
            for i, g in res.wrt_user_items.items():
                analytic[i] += g
            note("asymmetric wmrb", analytic, central_difference(asym, items.copy()))
            done += 1

    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 30
    record(2, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s")


# -- 3: Einstein midpoint vs Frechet mean ----------------------------------------

def test_criterion_3_midpoint_vs_frechet():
    t0 = time.perf_counter()
    alphas = np.round(np.arange(-2.0, 2.0 + 1e-9, 0.1), 10)
    worst = 0.0
    for i, a in enumerate(alphas):
        for b in alphas[i + 1:]:
            pts = np.array([[np.cosh(a), np.sinh(a)], [np.cosh(b), np.sinh(b)]])
            ein = geo.klein_to_hyperboloid(geo.einstein_midpoint(geo.hyperboloid_to_klein(pts)))
            fre = geo.frechet_mean(pts)
            worst = max(worst, np.linalg.norm(ein - fre) / np.linalg.norm(fre))
    elapsed = time.perf_counter() - t0
    record(3, worst <= 0.003 and elapsed < 5,
           f"max relative deviation {100 * worst:.3f}% over {len(alphas)} alphas, {elapsed:.1f}s")


# -- 4: toy simulations ------------------------------------------------------------

def test_criterion_4_simulations():
    t0 = time.perf_counter()
    passes = {}
    for name in SCENARIOS:
        passes[name] = sum(run_simulation(name, seed)[2].passed for seed in range(10))
    elapsed = time.perf_counter() - t0
    ok = all(p >= 9 for p in passes.values()) and elapsed < 60
    record(4, ok, ", ".join(f"{k} {v}/10" for k, v in passes.items()) + f", {elapsed:.1f}s")


# -- 5: power-law fitter ------------------------------------------------------------

def test_criterion_5_power_law():
    t0 = time.perf_counter()
    parts, ok = [], True
    for k, gamma in enumerate((2.2, 2.5, 3.0)):
        degrees = stats.zipf.rvs(gamma, size=100_000, random_state=np.random.default_rng(50 + k))
        fit = ns.powerlaw_fit(degrees)
        p = ns.ks_p_value(fit, degrees, 1000, seed=k)
        ok &= abs(fit.gamma_hat - gamma) <= 0.05 and p > 0.05
        parts.append(f"gamma {gamma}: hat {fit.gamma_hat:.3f} p {p:.3f}")
    rng = np.random.default_rng(9)
    mixed = np.concatenate([stats.zipf.rvs(2.5, size=50_000, random_state=rng),
                            rng.integers(1, 101, 50_000)])
    fit = ns.powerlaw_fit(mixed)
    p = ns.ks_p_value(fit, mixed, 1000, seed=3)
    ok &= p < 0.05
    parts.append(f"contaminated p {p:.3f}")
    elapsed = time.perf_counter() - t0
    record(5, ok and elapsed < 120, "; ".join(parts) + f"; {elapsed:.1f}s")


# -- 6, 8, 9: MovieLens 100K --------------------------------------------------------

@pytest.fixture(scope="module")
def ml_split(ml100k_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("ml100k") / "split"
    assert main(["split", "--input", str(ml100k_path), "--min-rating", "4",
                 "--out-dir", str(out)]) == 0
    return out


def _hr(path):
    fields = dict(kv.split("=") for kv in path.read_text().split())
    return float(fields["hr@10"])


@pytest.fixture(scope="module")
def symmetric_model(ml_split, tmp_path_factory):
    """Default-config model directory and the seconds spent training and evaluating it."""
    t0 = time.perf_counter()
    model = tmp_path_factory.mktemp("ml100k") / "symmetric"
    assert main(["train", "--input", str(ml_split), "--out-dir", str(model)]) == 0
    assert main(["evaluate", "--input", str(model)]) == 0
    return model, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_6_movielens_end_to_end(ml_split, symmetric_model, tmp_path):
    model, elapsed = symmetric_model
    assert main(["evaluate", "--input", str(ml_split), "--baseline", "popularity",
                 "--out-dir", str(tmp_path)]) == 0
    hr = _hr(model / "eval_model_test.txt")
    pop = _hr(tmp_path / "eval_popularity_test.txt")
    log = np.loadtxt(model / "training_log.tsv", skiprows=1, ndmin=2)
    val = log[:5, 2]
    monotone = bool(np.all(np.diff(val) >= -0.01))
    ok = hr > 10 / 101 and hr > pop and monotone and elapsed < 900
    record(6, ok, f"test HR@10 {hr:.4f} vs random {10 / 101:.4f}, popularity {pop:.4f}; "
                  f"val HR@10 epochs 1-5 {np.round(val, 4).tolist()}; {elapsed:.0f}s")


def test_criterion_7_amazon_waived():
    RESULTS[7] = ("criterion 7: WAIVED  Amazon Musical Instruments reviews not available; "
                  "criterion 6 governs")
    print(RESULTS[7])
    pytest.skip("Amazon Musical Instruments review file not available")


@pytest.mark.slow
def test_criterion_8_asymmetric_parity(ml_split, symmetric_model, tmp_path):
    hrs = {"symmetric": _hr(symmetric_model[0] / "eval_model_test.txt")}
    out = tmp_path / "asymmetric"
    assert main(["train", "--input", str(ml_split), "--out-dir", str(out),
                 "--user-mode", "asymmetric"]) == 0
    assert main(["evaluate", "--input", str(out)]) == 0
    hrs["asymmetric"] = _hr(out / "eval_model_test.txt")
    model, dataset, _ = load_model(tmp_path / "asymmetric")
    params = model.embeddings.parameter_count
    expected = dataset.n_items * (model.config.dim + 1)
    gap = hrs["symmetric"] - hrs["asymmetric"]
    ok = abs(gap) <= 0.05 and params == expected and model.embeddings.users is None
    record(8, ok, f"symmetric {hrs['symmetric']:.4f}, asymmetric {hrs['asymmetric']:.4f}, "
                  f"gap {gap:+.4f}; asymmetric parameters {params} = "
                  f"{dataset.n_items} x {model.config.dim + 1}")


@pytest.mark.slow
def test_criterion_9_determinism(ml100k_path, tmp_path):
    def run(out):
        split, model = out / "split", out / "model"
        codes = [
            main(["analyze", "--input", str(ml100k_path), "--min-rating", "4",
                  "--bootstraps", "100", "--out-dir", str(out / "analyze"),
                  "--dump-ccdf", str(out / "analyze" / "ccdf.tsv")]),
            main(["split", "--input", str(ml100k_path), "--min-rating", "4",
                  "--out-dir", str(split)]),
            main(["train", "--input", str(split), "--out-dir", str(model), "--epochs", "1"]),
            main(["evaluate", "--input", str(model)]),
            main(["export", "--input", str(model), "--target", "poincare"]),
            main(["simulate", "all", "--seeds", "2", "--out-dir", str(out / "sim")]),
        ]
        assert codes == [0] * len(codes)
        return {str(p.relative_to(out)): p.read_bytes()
                for p in sorted(out.rglob("*")) if p.is_file()}

    # identical paths too, since config.txt records the split directory
    first = run(tmp_path / "run")
    shutil.rmtree(tmp_path / "run")
    second = run(tmp_path / "run")
    differing = sorted(k for k in first if first[k] != second.get(k))
    ok = set(first) == set(second) and not differing
    record(9, ok, f"{len(first)} output files from analyze, split, train, evaluate, export "
                  f"and simulate; differing: {differing or 'none'}")
