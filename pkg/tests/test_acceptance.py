"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to watch the lines appear;
the heavyweight experiment criteria reuse the config-driven pipeline end to
end (simulate -> train -> recalibrate -> evaluate) on pinned seeds.
"""

import json
import time

import numpy as np

from localrecal import pipeline
from localrecal.config import config_from_dict
from localrecal.data import SplitSpec, gen_gaussian_quadratic, split
from localrecal.distributions import Gamma, Normal
from localrecal.knn import build_index, query_knn
from localrecal.metrics import coverage, pit_uniformity
from localrecal.mlp import LayerSpec, MlpModel, evaluate_loss, loss_and_gradients
from localrecal.recalibration import (KernelSpec, KNearest, WeightedSampleSet,
                                      build_recalibrator, compute_pits, global_recalibrate,
                                      pav, recalibrate_point)


def _report(criterion, ok, detail):
    print(f"[ACCEPTANCE] criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def _cfg(d):
    return config_from_dict(json.loads(json.dumps(d)))


GAUSSIAN_QUADRATIC = {
    "experiment": "gaussian_quadratic",
    "n": 100_000,
    "seed": 1,
    "model": {"hidden": [], "loss": "mse",
              "train": {"learning_rate": 0.05, "batch_size": 256, "max_epochs": 60,
                        "patience": 10, "seed": 1}},
    "predictive": {"method": "wsir_gaussian"},
    "recalibration": {"mode": "local", "layer": 1,
                      "rule": {"type": "knearest", "k": 1000, "eps": 0.0},
                      "kernel": {"family": "epanechnikov", "bandwidth": "kth_neighbor"}},
    "levels": [0.95],
}

ROSENBROCK = {
    "experiment": "rosenbrock_gamma",
    "n": 20_000,
    "seed": 1,
    "model": {"hidden": [{"width": 64, "activation": "relu", "dropout": 0.2},
                          {"width": 64, "activation": "relu", "dropout": 0.2},
                          {"width": 16, "activation": "relu", "dropout": 0.2},
                          {"width": 16, "activation": "relu", "dropout": 0.2}],
              "loss": "mse", "log_response": True,
              "train": {"learning_rate": 0.001, "batch_size": 100, "max_epochs": 75,
                        "patience": 15, "seed": 1}},
    "predictive": {"method": "wsir_log_gaussian", "T": 300, "seed": 11},
    "recalibration": {"mode": "local", "layer": 1, "standardize": False,
                      "rule": {"type": "radius", "r": 0.5},
                      "kernel": {"family": "epanechnikov", "bandwidth": "fixed_radius",
                                 "radius": 0.5}},
    "levels": [0.95],
}

from localrecal.config import NONLINEAR20_SMALL_NET

NONLINEAR20 = {
    "experiment": "nonlinear20",
    "n": 10_000,
    "seed": 1,
    "model": {"hidden": NONLINEAR20_SMALL_NET,
              "loss": "mse",
              "train": {"learning_rate": 0.003, "batch_size": 64, "max_epochs": 200,
                        "patience": 20, "seed": 1}},
    "predictive": {"method": "wsir_gaussian"},
    "recalibration": {"mode": "local", "layer": 1,
                      "rule": {"type": "knearest", "k": 1000, "eps": 0.0},
                      "kernel": {"family": "epanechnikov", "bandwidth": "kth_neighbor"}},
    "levels": [0.95],
}

GAMMA_GLM = {
    "experiment": "gamma_glm",
    "n": 53_940,
    "seed": 1,
    "split": {"train": 0.7, "validation": 0.2, "test": 0.1},
    "model": {"hidden": [{"width": 100, "activation": "relu"},
                          {"width": 5, "activation": "relu"},
                          {"width": 5, "activation": "relu"}],
              "loss": "gamma_nll", "standardize_y": False,
              "train": {"learning_rate": 0.001, "batch_size": 100, "max_epochs": 60,
                        "patience": 8, "seed": 1}},
    "predictive": {"method": "gamma_heads"},
    "recalibration": {"mode": "local", "layer": 1,
                      "rule": {"type": "knearest", "k": 1000, "eps": 0.0},
                      "kernel": {"family": "epanechnikov", "bandwidth": "kth_neighbor"}},
    "levels": [0.90, 0.95, 0.99],
}


def test_criterion_1_heteroscedastic_quadratic_table(tmp_path):
    t0 = time.perf_counter()
    cfg = _cfg(GAUSSIAN_QUADRATIC)
    pipeline.simulate(cfg, tmp_path)
    ckpt, _ = pipeline.train_model(cfg, tmp_path, tmp_path)
    files = [pipeline.recalibrate(cfg, tmp_path, ckpt, tmp_path, mode=m)
             for m in ("none", "local", "global")]
    base, local, glob = pipeline.evaluate(files, tmp_path)
    elapsed = time.perf_counter() - t0

    detail = (f"true-mean MSE base={base.mse_true_mean:.1f} local={local.mse_true_mean:.1f} "
              f"global={glob.mse_true_mean:.1f}; cov95(local)={local.coverage[0.95]:.4f}; "
              f"smis {local.smis:.4f} vs {base.smis:.4f}; "
              f"KL {local.gaussian_kl:.4f} < {glob.gaussian_kl:.4f} < {base.gaussian_kl:.4f}; "
              f"{elapsed:.0f}s")
    ok = (local.mse_true_mean <= 0.1 * base.mse_true_mean
          and abs(glob.mse_true_mean - base.mse_true_mean) <= 0.1 * base.mse_true_mean
          and 0.94 <= local.coverage[0.95] <= 0.96
          and local.smis < base.smis
          and local.gaussian_kl < glob.gaussian_kl < base.gaussian_kl
          and elapsed <= 300.0)
    _report(1, ok, detail)


def test_criterion_2_golden_pit():
    pit = Normal(1484.01, 384.41).cdf(2146.22)
    ok = abs(pit - 0.9575) <= 5e-4
    _report(2, ok, f"cdf(Normal(1484.01, 384.41), 2146.22) = {pit:.6f}")


def test_criterion_3_rosenbrock_gamma_reduced(tmp_path):
    t0 = time.perf_counter()
    cfg = _cfg(ROSENBROCK)
    pipeline.simulate(cfg, tmp_path)
    ckpt, _ = pipeline.train_model(cfg, tmp_path, tmp_path)
    f_none = pipeline.recalibrate(cfg, tmp_path, ckpt, tmp_path, mode="none")
    f_loc = pipeline.recalibrate(cfg, tmp_path, ckpt, tmp_path, mode="local")
    base, local = pipeline.evaluate([f_none, f_loc], tmp_path)

    # Monte Carlo dropout route at T=300, resampled to unweighted sets
    mc_dict = json.loads(json.dumps(ROSENBROCK))
    mc_dict["predictive"]["method"] = "mc_dropout"
    mc_dict["recalibration"]["resample"] = True
    cfg_mc = _cfg(mc_dict)
    mc_dir = tmp_path / "mc"
    f_mc_none = pipeline.recalibrate(cfg_mc, tmp_path, ckpt, mc_dir, mode="none")
    f_mc_loc = pipeline.recalibrate(cfg_mc, tmp_path, ckpt, mc_dir, mode="local")
    mc_base, mc_local = pipeline.evaluate([f_mc_none, f_mc_loc], tmp_path)

    # true-model oracle intervals from the generating gamma parameters
    _, val_ds, test_ds = pipeline.load_splits(tmp_path)
    lo = np.empty(test_ds.n)
    hi = np.empty(test_ds.n)
    for j in range(test_ds.n):
        d = Gamma(test_ds.true_params["shape"][j], test_ds.true_params["scale"][j])
        lo[j] = d.quantile(0.025)
        hi[j] = d.quantile(0.975)
    oracle_cov = coverage(lo, hi, test_ds.y)
    elapsed = time.perf_counter() - t0

    print(f"    WSIR base: mse={base.mse:.1f} cov={base.coverage[0.95]:.3f} smis={base.smis:.3f}")
    print(f"    WSIR recal: mse={local.mse:.1f} cov={local.coverage[0.95]:.3f} smis={local.smis:.3f}")
    print(f"    MC base: mse={mc_base.mse:.1f} cov={mc_base.coverage[0.95]:.3f} smis={mc_base.smis:.3f}")
    print(f"    MC recal: mse={mc_local.mse:.1f} cov={mc_local.coverage[0.95]:.3f} smis={mc_local.smis:.3f}")
    detail = (f"recal WSIR cov={local.coverage[0.95]:.4f}, smis {local.smis:.4f} <= "
              f"{base.smis:.4f}, oracle cov={oracle_cov:.4f}; {elapsed:.0f}s")
    ok = (0.93 <= local.coverage[0.95] <= 0.965
          and local.smis <= base.smis
          and 0.935 <= oracle_cov <= 0.955
          and elapsed <= 900.0)
    _report(3, ok, detail)


def test_criterion_4_nonlinear_sweep_trends(tmp_path):
    t0 = time.perf_counter()
    seeds = [1, 2, 3, 4, 5]
    base_mse, local_mse_k100, cov_k1000 = [], [], []
    predict_by_k = {100: [], 500: [], 1000: []}
    knn_eps = {0.0: [], 1.0: []}

    for seed in seeds:
        d = json.loads(json.dumps(NONLINEAR20))
        d["seed"] = seed
        d["model"]["train"]["seed"] = seed
        cfg = _cfg(d)
        run_dir = tmp_path / f"seed{seed}"
        pipeline.simulate(cfg, run_dir)
        ckpt, _ = pipeline.train_model(cfg, run_dir, run_dir)
        f_none = pipeline.recalibrate(cfg, run_dir, ckpt, run_dir, mode="none")
        (rep_base,) = pipeline.evaluate([f_none], run_dir)
        base_mse.append(rep_base.mse)

        for k in (100, 500, 1000):
            dk = json.loads(json.dumps(d))
            dk["recalibration"]["rule"]["k"] = k
            cfg_k = _cfg(dk)
            out_k = run_dir / f"k{k}"
            f_k = pipeline.recalibrate(cfg_k, run_dir, ckpt, out_k, mode="local")
            (rep_k,) = pipeline.evaluate([f_k], run_dir)
            log = json.loads((out_k / "run_log_local.json").read_text())
            predict_by_k[k].append(log["predict_seconds"])
            if k == 100:
                local_mse_k100.append(rep_k.mse)
            if k == 1000:
                cov_k1000.append(rep_k.coverage[0.95])

        # approximation-level timing at a low-dimensional layer (5 units)
        for eps in (0.0, 1.0):
            de = json.loads(json.dumps(d))
            de["recalibration"]["layer"] = 5
            de["recalibration"]["rule"]["k"] = 100
            de["recalibration"]["rule"]["eps"] = eps
            cfg_e = _cfg(de)
            out_e = run_dir / f"eps{eps}"
            pipeline.recalibrate(cfg_e, run_dir, ckpt, out_e, mode="local")
            log = json.loads((out_e / "run_log_local.json").read_text())
            knn_eps[eps].append(log["knn_query_seconds"])

    elapsed = time.perf_counter() - t0
    mean = lambda xs: sum(xs) / len(xs)
    mean_cov = mean(cov_k1000)
    times_k = [mean(predict_by_k[k]) for k in (100, 500, 1000)]
    detail = (f"mse base={mean(base_mse):.2f} recal(k=100)={mean(local_mse_k100):.2f}; "
              f"cov95(k=1000)={mean_cov:.4f}; knn s eps0={mean(knn_eps[0.0]):.3f} "
              f"eps1={mean(knn_eps[1.0]):.3f}; predict s by k={['%.3f' % t for t in times_k]}; "
              f"{elapsed:.0f}s")
    ok = (mean(local_mse_k100) < mean(base_mse)
          and 0.92 <= mean_cov <= 0.97
          and mean(knn_eps[1.0]) <= mean(knn_eps[0.0])
          and times_k[0] <= times_k[1] <= times_k[2]
          and elapsed <= 1200.0)
    _report(4, ok, detail)


def test_criterion_5_gamma_regression_surrogate(tmp_path):
    t0 = time.perf_counter()
    cfg = _cfg(GAMMA_GLM)
    pipeline.simulate(cfg, tmp_path)
    ckpt, _ = pipeline.train_model(cfg, tmp_path, tmp_path)
    f_none = pipeline.recalibrate(cfg, tmp_path, ckpt, tmp_path, mode="none")
    f_loc = pipeline.recalibrate(cfg, tmp_path, ckpt, tmp_path, mode="local")
    base, local = pipeline.evaluate([f_none, f_loc], tmp_path)
    elapsed = time.perf_counter() - t0

    covs = {lvl: local.coverage[lvl] for lvl in (0.90, 0.95, 0.99)}
    detail = (f"rmse {local.rmse:.1f} <= {base.rmse:.1f}; coverage "
              + " ".join(f"{lvl:.0%}={covs[lvl]:.3f}" for lvl in covs)
              + f"; {elapsed:.0f}s")
    ok = (local.rmse <= base.rmse
          and all(abs(covs[lvl] - lvl) <= 0.02 for lvl in covs)
          and elapsed <= 900.0)
    _report(5, ok, detail)


def test_criterion_6_property_suites(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    checks = []

    # exact KNN vs brute force and (1+eps) bounds
    pts = rng.normal(size=(1500, 6))
    idx = build_index(pts, leaf_size=12)
    knn_ok = True
    for _ in range(30):
        q = rng.normal(size=6)
        k = int(rng.integers(1, 50))
        d2 = np.sum((pts - q) ** 2, axis=1)
        order = np.lexsort((np.arange(1500), d2))[:k]
        nl = query_knn(idx, q, k, 0.0)
        knn_ok &= bool(np.array_equal(nl.ids, order))
        for eps in (0.5, 1.0):
            nla = query_knn(idx, q, k, eps)
            knn_ok &= bool(np.all(nla.distances <= (1 + eps) * np.sqrt(d2[order]) + 1e-12))
    checks.append(("knn exact + eps bound", knn_ok))

    # CDF/quantile round trips and the gamma residual cap
    p = np.concatenate([rng.uniform(1e-6, 1 - 1e-6, 500), [1e-6, 1 - 1e-6]])
    round_ok = True
    for dist in (Normal(2.0, 3.0), Gamma(7.5, 2.0),):
        q = dist.quantile(p)
        round_ok &= bool(np.max(np.abs(dist.cdf(q) - p)) <= 1e-9)
    from localrecal.distributions import LogNormal
    q = LogNormal(0.5, 0.8).quantile(p)
    round_ok &= bool(np.max(np.abs(LogNormal(0.5, 0.8).cdf(q) - p)) <= 1e-9)
    gam = Gamma(100.0, 0.5)
    qg = gam.quantile(p)
    round_ok &= bool(np.max(np.abs(gam.cdf(qg) - p)) <= 1e-10)
    checks.append(("cdf/quantile round trips", round_ok))

    # backprop vs central finite differences
    grad_ok = True
    for loss in ("mse", "gaussian_nll", "gamma_nll"):
        model = MlpModel(2, [LayerSpec(3, "relu")], loss=loss, rng_seed=2,
                         output_bias=0.3 if loss == "gamma_nll" else 0.0)
        X = rng.normal(size=(8, 2))
        y = np.abs(rng.normal(size=8)) + 0.5 if loss == "gamma_nll" else rng.normal(size=8)
        _, grads = loss_and_gradients(model, X, y, mode="inference")
        g = np.concatenate([np.atleast_1d(gg).ravel() for gg in grads])
        params = model.parameters()
        fd = np.empty_like(g)
        pos = 0
        for prm in params:
            flat = prm.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + 1e-5
                lp = evaluate_loss(model, X, y)
                flat[i] = orig - 1e-5
                lm = evaluate_loss(model, X, y)
                flat[i] = orig
                fd[pos] = (lp - lm) / 2e-5
                pos += 1
        grad_ok &= bool(np.max(np.abs(g - fd)) / max(np.abs(fd).max(), 1e-8) < 1e-4)
    checks.append(("backprop vs finite differences", grad_ok))

    # PAV monotonicity
    pav_ok = all(np.all(np.diff(pav(rng.normal(size=int(rng.integers(1, 50))))) >= -1e-12)
                 for _ in range(25))
    checks.append(("pav monotone", pav_ok))

    # weighted quantile vs resampling oracle
    values = np.sort(rng.normal(size=25))
    wss = WeightedSampleSet(values, rng.uniform(0.1, 1.0, 25))
    draws = rng.choice(values, size=10 ** 6, p=wss.weights)
    wq_ok = True
    for prob in (0.1, 0.5, 0.9):
        got = wss.weighted_quantile(prob)
        oracle = np.quantile(draws, prob, method="inverted_cdf")
        posn = np.searchsorted(values, got)
        gap = values[min(posn + 1, 24)] - values[max(posn - 1, 0)]
        wq_ok &= bool(abs(got - oracle) <= gap + 1e-12)
    checks.append(("weighted quantile vs resampling", wq_ok))

    # k = n with uniform kernel reproduces global recalibration bitwise
    reps = rng.normal(size=(80, 2))
    pits = rng.uniform(0.05, 0.95, 80)
    ridx = build_recalibrator(reps, pits, KernelSpec("uniform"), KNearest(80))
    d = Normal(0.5, 1.5)
    wss_l = recalibrate_point(ridx, d, rng.normal(size=2))
    wss_g = global_recalibrate(pits, d)
    kn_ok = (np.array_equal(np.sort(wss_l.values), np.sort(wss_g.values))
             and wss_l.point_estimate() == wss_g.point_estimate()
             and wss_l.weighted_quantile(0.975) == wss_g.weighted_quantile(0.975))
    checks.append(("k=n uniform == global bitwise", kn_ok))

    # split partition property
    ds = gen_gaussian_quadratic(1234, 0)
    parts = split(ds, SplitSpec(0.6, 0.25, 0.15, seed=3))
    merged = np.sort(np.concatenate([p.x[:, 0] for p in parts]))
    checks.append(("split partition", bool(np.array_equal(merged, np.sort(ds.x[:, 0])))))

    # seed determinism: generators and commands are byte-identical on rerun
    from localrecal.cli import main
    cfg = {"experiment": "nonlinear20", "n": 300, "seed": 9,
           "model": {"hidden": [], "loss": "mse",
                     "train": {"learning_rate": 0.05, "batch_size": 32,
                               "max_epochs": 10, "patience": 5, "seed": 9}},
           "predictive": {"method": "wsir_gaussian"},
           "recalibration": {"mode": "local", "layer": 1,
                             "rule": {"type": "knearest", "k": 10, "eps": 0.0},
                             "kernel": {"family": "epanechnikov", "bandwidth": "kth_neighbor"}},
           "levels": [0.95]}
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    det_ok = True
    dirs = [tmp_path / "r1", tmp_path / "r2"]
    for d_out in dirs:
        main(["simulate", "--config", str(cfg_path), "--out", str(d_out)])
        main(["train", "--config", str(cfg_path), "--data", str(d_out), "--out", str(d_out)])
        main(["recalibrate", "--config", str(cfg_path), "--data", str(d_out),
              "--checkpoint", str(d_out / "model.npz"), "--out", str(d_out)])
    for name in ("train.csv", "validation.csv", "test.csv", "outputs_local.csv",
                 "loss_history.csv", "model.npz"):
        det_ok &= (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()
    checks.append(("seed determinism (generators + commands)", det_ok))

    elapsed = time.perf_counter() - t0
    for name, ok in checks:
        print(f"    [6] {name}: {'ok' if ok else 'FAILED'}")
    _report(6, all(ok for _, ok in checks), f"{len(checks)} property suites; {elapsed:.0f}s")


def test_criterion_7_global_recalibration_improves_uniformity():
    t0 = time.perf_counter()
    improved = []
    for seed in (0, 1, 2, 3, 4):
        ds = gen_gaussian_quadratic(20_000, seed)
        tr, va, _ = split(ds, SplitSpec(seed=seed))
        A = np.column_stack([np.ones(tr.n), tr.x[:, 0]])
        beta, *_ = np.linalg.lstsq(A, tr.y, rcond=None)
        mu_va = beta[0] + beta[1] * va.x[:, 0]
        resid = float(np.sqrt(np.mean((va.y - mu_va) ** 2)))
        half = va.n // 2
        pits_fit = compute_pits([Normal(m, resid) for m in mu_va[:half]], va.y[:half])
        held = [Normal(m, resid) for m in mu_va[half:]]
        base_pits = compute_pits(held, va.y[half:])
        recal_pits = np.array([global_recalibrate(pits_fit, d).cdf(y)
                               for d, y in zip(held, va.y[half:])])
        before = pit_uniformity(base_pits).cramer_von_mises
        after = pit_uniformity(recal_pits).cramer_von_mises
        improved.append(after < before)
        print(f"    [7] seed {seed}: CvM {before:.4f} -> {after:.4f}")
    elapsed = time.perf_counter() - t0
    _report(7, all(improved), f"held-out CvM improved on {sum(improved)}/5 seeds; {elapsed:.0f}s")
