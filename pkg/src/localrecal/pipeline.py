"""Config-driven experiment pipeline: simulate, train, recalibrate, evaluate,
and sweep. Every step is deterministic given its config; outputs are plain
CSV/JSON files in the chosen directory.

File layout per run directory::

    train.csv / validation.csv / test.csv   simulated (or ingested) splits
    model.npz, loss_history.csv             checkpoint + per-epoch losses
    outputs_<mode>.csv                      one record per test point
    run_log_<mode>.json                     timings and neighbor statistics
    reports.csv / reports.txt               metric tables

The recalibrated-output record is: index, point_estimate, pred_sd, pit,
n_neighbors, bandwidth, then lower/upper columns per level. ``pred_sd`` is the
weighted sd of the recalibrated sample (the predictive sd for mode none) and
``pit`` is the CDF of the observed response under the (re)calibrated
distribution. Full weighted samples go to an optional long-format sidecar.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import mlp
from .config import config_from_dict, override_path
from .data import SplitSpec, Standardizer, load_csv, load_dataset, save_dataset, split
from .distributions import Empirical, Gamma, LogNormal, Normal
from .errors import ConfigError, DomainError
from .metrics import ExperimentReport, coverage, gaussian_kl, mse, pit_uniformity, rmse, smis
from .recalibration import (KernelSpec, KNearest, Radius, build_recalibrator, compute_pits,
                            fit_isotonic, global_recalibrate, isotonic_quantile,
                            recalibrate_point, select_neighbors)

PIT_CLIP = 1e-12
_ISO_GRID = (np.arange(1, 257) - 0.5) / 256.0


def _generate(cfg):
    if cfg.experiment == "csv":
        ordinal = {col: dict(table) for col, table in (cfg.csv.ordinal or {}).items()}
        ds = load_csv(cfg.csv.path, cfg.csv.response, ordinal_maps=ordinal)
        ds.seed = cfg.seed
        return ds
    return data_mod.GENERATORS[cfg.experiment](cfg.n, cfg.seed)


def simulate(cfg, out_dir):
    """Generate (or ingest) the dataset, split it, and write the three split
    files. Idempotent per seed: reruns are byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = _generate(cfg)
    spec = SplitSpec(cfg.split.train, cfg.split.validation, cfg.split.test, seed=cfg.seed)
    parts = split(ds, spec)
    paths = {}
    for name, part in zip(("train", "validation", "test"), parts):
        path = out / f"{name}.csv"
        save_dataset(part, path)
        paths[name] = path
    return paths


def load_splits(data_dir):
    base = Path(data_dir)
    return tuple(load_dataset(base / f"{name}.csv") for name in ("train", "validation", "test"))


def _fit_scalers(cfg, train_ds):
    sx = Standardizer.fit(train_ds.x) if cfg.model.standardize_x else None
    y = train_ds.y
    if cfg.model.log_response:
        if np.any(y <= 0.0):
            raise DomainError("log_response requires strictly positive responses")
        y = np.log(y)
    sy = Standardizer.fit(y[:, None]) if cfg.model.standardize_y else None
    return sx, sy


def _transform_x(scaler, x):
    return scaler.transform(x) if scaler is not None else np.asarray(x, dtype=float)


def _transform_y(cfg, sy, y):
    y = np.asarray(y, dtype=float)
    if cfg.model.log_response:
        y = np.log(y)
    if sy is not None:
        y = sy.transform(y[:, None]).ravel()
    return y


def train_model(cfg, data_dir, out_dir):
    """Train the configured network on the train split, early-stopping on the
    validation split. Writes model.npz plus loss_history.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds, _ = load_splits(data_dir)
    sx, sy = _fit_scalers(cfg, train_ds)

    x_tr = _transform_x(sx, train_ds.x)
    y_tr = _transform_y(cfg, sy, train_ds.y)
    x_va = _transform_x(sx, val_ds.x)
    y_va = _transform_y(cfg, sy, val_ds.y)

    output_bias = 0.0
    if cfg.model.loss == "gamma_nll":
        output_bias = float(np.log(np.mean(train_ds.y)))
    model = mlp.MlpModel(train_ds.dim, [mlp.LayerSpec(**h) for h in cfg.model.hidden],
                         loss=cfg.model.loss, rng_seed=cfg.model.train.seed,
                         output_bias=output_bias)
    tcfg = mlp.TrainConfig(learning_rate=cfg.model.train.learning_rate,
                           batch_size=cfg.model.train.batch_size,
                           max_epochs=cfg.model.train.max_epochs,
                           patience=cfg.model.train.patience,
                           beta1=cfg.model.train.beta1,
                           beta2=cfg.model.train.beta2,
                           adam_eps=cfg.model.train.adam_eps,
                           seed=cfg.model.train.seed)
    t0 = time.perf_counter()
    model, history = mlp.train(model, (x_tr, y_tr), (x_va, y_va), tcfg)
    train_seconds = time.perf_counter() - t0

    out_va, _ = mlp.forward(model, x_va, "inference")
    residual_sd_t = float(np.sqrt(np.mean((out_va[:, 0] - y_va) ** 2)))

    extra = {
        "residual_sd_t": residual_sd_t,
        "log_response": cfg.model.log_response,
        "scaler_x": None if sx is None else {"mean": sx.mean.tolist(), "sd": sx.sd.tolist()},
        "scaler_y": None if sy is None else {"mean": sy.mean.tolist(), "sd": sy.sd.tolist()},
    }
    ckpt = out / "model.npz"
    mlp.save_checkpoint(model, ckpt, extra=extra)
    # timings live in a log, keeping the checkpoint byte-deterministic
    with open(out / "train_log.json", "w", encoding="utf-8") as fh:
        json.dump({"train_seconds": train_seconds, "best_epoch": history["best_epoch"]}, fh)
        fh.write("\n")
    with open(out / "loss_history.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for i, (lt, lv) in enumerate(zip(history["train"], history["val"])):
            writer.writerow([i, repr(lt), repr(lv)])
    return ckpt, history


def _scalers_from_extra(extra):
    sx = sy = None
    if extra.get("scaler_x"):
        sx = Standardizer(np.asarray(extra["scaler_x"]["mean"]), np.asarray(extra["scaler_x"]["sd"]))
    if extra.get("scaler_y"):
        sy = Standardizer(np.asarray(extra["scaler_y"]["mean"]), np.asarray(extra["scaler_y"]["sd"]))
    return sx, sy


def _unscale_output(extra, sy, out_col):
    if sy is not None:
        return sy.inverse(out_col[:, None])[:, 0]
    return out_col


def predictive_batch(cfg, model, extra, x_raw, stream):
    """Per-point predictive distributions for a feature matrix.

    ``stream`` separates the Monte Carlo draws of different splits so that
    validation and test PITs never share dropout masks.
    """
    sx, sy = _scalers_from_extra(extra)
    x_t = _transform_x(sx, x_raw)
    method = cfg.predictive.method
    residual_sd_t = float(extra["residual_sd_t"])
    sd_scale = float(sy.sd[0]) if sy is not None else 1.0
    if method in ("wsir_gaussian", "wsir_log_gaussian"):
        out, _ = mlp.forward(model, x_t, "inference")
        mu = _unscale_output(extra, sy, out[:, 0])
        sd = residual_sd_t * sd_scale
        fam = Normal if method == "wsir_gaussian" else LogNormal
        return [fam(float(m), sd) for m in mu]
    if method == "gamma_heads":
        out, _ = mlp.forward(model, x_t, "inference")
        return [Gamma(shape=float(a), scale=float(m) / float(a)) for m, a in out]
    # mc_dropout: draws on the transformed scale, mapped back to the response
    rng = np.random.default_rng([cfg.predictive.seed, stream])
    draws = mlp.mc_dropout_sample(model, x_t, cfg.predictive.T, rng=rng)
    if sy is not None:
        draws = draws * float(sy.sd[0]) + float(sy.mean[0])
    if extra.get("log_response"):
        draws = np.exp(draws)
    return [Empirical(draws[:, j]) for j in range(draws.shape[1])]


def representations(cfg, model, extra, x_raw):
    """Layer-l representations: raw inputs for l=1, network activations
    otherwise."""
    layer = cfg.recalibration.layer
    if layer == 1:
        return np.asarray(x_raw, dtype=float)
    sx, _ = _scalers_from_extra(extra)
    return mlp.hidden_representation(model, _transform_x(sx, x_raw), layer)


def _neighbor_rule(cfg):
    rule = cfg.recalibration.rule
    if rule.type == "radius":
        return Radius(rule.r)
    return KNearest(rule.k, rule.eps)


def _kernel_spec(cfg):
    k = cfg.recalibration.kernel
    return KernelSpec(k.family, k.bandwidth, k.radius)


def recalibrate(cfg, data_dir, checkpoint, out_dir, mode=None, include_samples=False):
    """Produce the per-test-point recalibrated output file for the configured
    mode (none / local / global / isotonic)."""
    mode = mode or cfg.recalibration.mode
    if mode not in ("none", "local", "global", "isotonic"):
        raise ConfigError(f"unknown recalibration mode {mode!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, val_ds, test_ds = load_splits(data_dir)
    model, extra = mlp.load_checkpoint(checkpoint)
    if cfg.recalibration.layer > model.num_layers:
        raise ConfigError(f"recalibration.layer {cfg.recalibration.layer} exceeds "
                          f"model layer count {model.num_layers}")

    dists_test = predictive_batch(cfg, model, extra, test_ds.x, stream=1)
    levels = sorted(cfg.levels)
    n_test = test_ds.n
    point = np.empty(n_test)
    pred_sd = np.empty(n_test)
    pit = np.empty(n_test)
    n_nb = np.zeros(n_test, dtype=np.int64)
    bandwidth = np.full(n_test, np.nan)
    bounds = {level: (np.empty(n_test), np.empty(n_test)) for level in levels}
    samples_rows = []

    knn_seconds = 0.0
    if mode != "none":
        dists_val = predictive_batch(cfg, model, extra, val_ds.x, stream=0)
        pits = compute_pits(dists_val, val_ds.y)
    t_predict = time.perf_counter()
    if mode == "none":
        for j, dist in enumerate(dists_test):
            point[j] = dist.mean
            pred_sd[j] = dist.sd
            pit[j] = float(np.clip(dist.cdf(float(test_ds.y[j])), PIT_CLIP, 1 - PIT_CLIP))
            for level in levels:
                alpha = 1.0 - level
                bounds[level][0][j] = dist.quantile(alpha / 2.0)
                bounds[level][1][j] = dist.quantile(1.0 - alpha / 2.0)
    else:
        if mode == "global":
            for j, dist in enumerate(dists_test):
                wss = global_recalibrate(pits, dist)
                _fill_row(wss, j, test_ds.y[j], levels, point, pred_sd, pit, n_nb, bandwidth, bounds)
                if include_samples:
                    samples_rows.append((j, wss))
        elif mode == "isotonic":
            iso = fit_isotonic(pits)
            for j, dist in enumerate(dists_test):
                q_grid = dist.quantile(np.clip(iso.inverse(_ISO_GRID), PIT_CLIP, 1 - PIT_CLIP))
                point[j] = float(np.mean(q_grid))
                pred_sd[j] = float(np.std(q_grid))
                base_pit = float(np.clip(dist.cdf(float(test_ds.y[j])), PIT_CLIP, 1 - PIT_CLIP))
                pit[j] = float(np.clip(iso.evaluate(base_pit), PIT_CLIP, 1 - PIT_CLIP))
                for level in levels:
                    alpha = 1.0 - level
                    bounds[level][0][j] = isotonic_quantile(iso, dist, alpha / 2.0)
                    bounds[level][1][j] = isotonic_quantile(iso, dist, 1.0 - alpha / 2.0)
        else:  # local
            reps_val = representations(cfg, model, extra, val_ds.x)
            reps_test = representations(cfg, model, extra, test_ds.x)
            index = build_recalibrator(reps_val, pits, _kernel_spec(cfg), _neighbor_rule(cfg),
                                       layer=cfg.recalibration.layer,
                                       standardize=cfg.recalibration.standardize,
                                       leaf_size=cfg.recalibration.leaf_size)
            for j, dist in enumerate(dists_test):
                t0 = time.perf_counter()
                nl = select_neighbors(index, reps_test[j])
                knn_seconds += time.perf_counter() - t0
                wss = recalibrate_point(index, dist, reps_test[j], neighbors=nl)
                if cfg.recalibration.resample:
                    wss = wss.resample(len(wss), np.random.default_rng([cfg.recalibration.resample_seed, j]))
                _fill_row(wss, j, test_ds.y[j], levels, point, pred_sd, pit, n_nb, bandwidth, bounds)
                if include_samples:
                    samples_rows.append((j, wss))
    predict_seconds = time.perf_counter() - t_predict

    out_path = out / f"outputs_{mode}.csv"
    header = ["index", "point_estimate", "pred_sd", "pit", "n_neighbors", "bandwidth"]
    for level in levels:
        tag = f"{100 * level:g}".replace(".", "_")
        header += [f"lower_{tag}", f"upper_{tag}"]
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j in range(n_test):
            row = [j, repr(float(point[j])), repr(float(pred_sd[j])), repr(float(pit[j])),
                   int(n_nb[j]), "" if np.isnan(bandwidth[j]) else repr(float(bandwidth[j]))]
            for level in levels:
                row += [repr(float(bounds[level][0][j])), repr(float(bounds[level][1][j]))]
            writer.writerow(row)

    if include_samples and samples_rows:
        with open(out / f"samples_{mode}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "value", "weight"])
            for j, wss in samples_rows:
                for v, w in zip(wss.values, wss.weights):
                    writer.writerow([j, repr(float(v)), repr(float(w))])

    train_seconds = 0.0
    train_log = Path(checkpoint).parent / "train_log.json"
    if train_log.exists():
        with open(train_log, encoding="utf-8") as fh:
            train_seconds = float(json.load(fh).get("train_seconds", 0.0))
    log = {
        "mode": mode,
        "n_test": int(n_test),
        "levels": levels,
        "train_seconds": train_seconds,
        "predict_seconds": predict_seconds,
        "knn_query_seconds": knn_seconds,
        "mean_neighbors": float(np.mean(n_nb)) if n_test else 0.0,
    }
    if mode == "local":
        log["rule"] = {"type": cfg.recalibration.rule.type, "k": cfg.recalibration.rule.k,
                       "eps": cfg.recalibration.rule.eps, "r": cfg.recalibration.rule.r}
        log["layer"] = cfg.recalibration.layer
    with open(out / f"run_log_{mode}.json", "w", encoding="utf-8") as fh:
        json.dump(log, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_path


def _fill_row(wss, j, y_j, levels, point, pred_sd, pit, n_nb, bandwidth, bounds):
    point[j] = wss.point_estimate()
    pred_sd[j] = wss.weighted_sd()
    pit[j] = float(np.clip(wss.cdf(float(y_j)), PIT_CLIP, 1 - PIT_CLIP))
    n_nb[j] = len(wss)
    if wss.bandwidth is not None:
        bandwidth[j] = wss.bandwidth
    for level in levels:
        lo, hi = wss.interval(level)
        bounds[level][0][j] = lo
        bounds[level][1][j] = hi


def read_outputs(path):
    """Load a recalibrated-output file into a dict of numpy columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {h: [] for h in header}
        for row in reader:
            for h, cell in zip(header, row):
                cols[h].append(cell)
    out = {}
    for h, cells in cols.items():
        if h == "index" or h == "n_neighbors":
            out[h] = np.asarray([int(c) for c in cells], dtype=np.int64)
        else:
            out[h] = np.asarray([float(c) if c else np.nan for c in cells])
    return out


def evaluate(output_files, data_dir, out_dir=None, labels=None):
    """Build one ExperimentReport per output file against the test split.

    Coverage is reported at every level present in the file; the interval
    score uses the 95% level when available (else the widest level present).
    The oracle mean-squared error against the true conditional mean and the
    Gaussian KL are included when the split carries true parameters.
    """
    train_path = Path(data_dir)
    _, val_ds, test_ds = load_splits(train_path)
    standardizer = float(np.mean(np.abs(val_ds.y)))
    reports = []
    for i, path in enumerate(output_files):
        path = Path(path)
        cols = read_outputs(path)
        if cols["index"].size != test_ds.n:
            raise DomainError(f"{path}: row count {cols['index'].size} does not match "
                              f"test split size {test_ds.n}")
        label = labels[i] if labels else path.stem.replace("outputs_", "")
        level_tags = sorted({h.split("_", 1)[1] for h in cols if h.startswith("lower_")})
        levels = {float(tag.replace("_", ".")) / 100.0: tag for tag in level_tags}
        cov = {level: coverage(cols[f"lower_{tag}"], cols[f"upper_{tag}"], test_ds.y)
               for level, tag in levels.items()}
        smis_level = 0.95 if 0.95 in levels else max(levels)
        tag = levels[smis_level]
        s = smis(cols[f"lower_{tag}"], cols[f"upper_{tag}"], test_ds.y,
                 1.0 - smis_level, standardizer)
        stats = pit_uniformity(cols["pit"])
        kl = None
        mse_true = None
        tp = test_ds.true_params or {}
        if "mean" in tp:
            mse_true = mse(cols["point_estimate"], tp["mean"])
            if "sd" in tp:
                kl = gaussian_kl(tp["mean"], tp["sd"], cols["point_estimate"], cols["pred_sd"])
        timings = {}
        log_path = path.with_name(path.name.replace("outputs_", "run_log_").replace(".csv", ".json"))
        if log_path.exists():
            with open(log_path, encoding="utf-8") as fh:
                timings = json.load(fh)
        reports.append(ExperimentReport(
            label=label,
            mse=mse(cols["point_estimate"], test_ds.y),
            rmse=rmse(cols["point_estimate"], test_ds.y),
            coverage=cov,
            smis=s,
            cramer_von_mises=stats.cramer_von_mises,
            wasserstein1=stats.wasserstein1,
            frosini=stats.frosini,
            gaussian_kl=kl,
            mse_true_mean=mse_true,
            train_seconds=float(timings.get("train_seconds", 0.0)),
            predict_seconds=float(timings.get("predict_seconds", 0.0)),
        ))
    if out_dir is not None:
        write_reports(reports, out_dir)
    return reports


def write_reports(reports, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "reports.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(reports[0].header_row())
        for rep in reports:
            writer.writerow(rep.to_row())
    with open(out / "reports.txt", "w", encoding="utf-8") as fh:
        for rep in reports:
            fh.write(rep.to_kv_text())
            fh.write("\n")
    return out / "reports.csv"


def run_single(cfg, out_dir, modes=("none",), include_samples=False):
    """Simulate + train + recalibrate (one file per mode) + evaluate, all in
    one directory. Returns the reports keyed by mode."""
    out = Path(out_dir)
    simulate(cfg, out)
    ckpt, _ = train_model(cfg, out, out)
    files = [recalibrate(cfg, out, ckpt, out, mode=m, include_samples=include_samples)
             for m in modes]
    reports = evaluate(files, out, out_dir=out)
    return dict(zip(modes, reports))


def expand_matrix(base_dict, matrix):
    """Cartesian product of dotted-path overrides; yields full config dicts."""
    if not matrix:
        yield dict(base_dict), {}
        return
    keys = sorted(matrix)
    counts = [len(matrix[k]) for k in keys]
    if any(c == 0 for c in counts):
        raise ConfigError("matrix lists must be nonempty")
    total = int(np.prod(counts))
    for flat in range(total):
        cell = json.loads(json.dumps(base_dict))
        chosen = {}
        rem = flat
        for k, c in zip(keys, counts):
            value = matrix[k][rem % c]
            rem //= c
            override_path(cell, k, value)
            chosen[k] = value
        yield cell, chosen


def run_sweep_cell(args):
    """One sweep cell: full pipeline in its own subdirectory. Module-level so
    process pools can pickle it."""
    cell_dict, chosen, cell_dir, modes = args
    try:
        cfg = config_from_dict(cell_dict)
        cell_dir = Path(cell_dir)
        cell_dir.mkdir(parents=True, exist_ok=True)
        with open(cell_dir / "config.json", "w", encoding="utf-8") as fh:
            json.dump(cell_dict, fh, indent=2, sort_keys=True)
            fh.write("\n")
        reports = run_single(cfg, cell_dir, modes=modes)
        row = {"cell": cell_dir.name, "status": "ok", **{f"param:{k}": v for k, v in chosen.items()}}
        for mode, rep in reports.items():
            row[f"{mode}:mse"] = rep.mse
            if rep.mse_true_mean is not None:
                row[f"{mode}:mse_true_mean"] = rep.mse_true_mean
            for level in rep.levels():
                row[f"{mode}:coverage_{level}"] = rep.coverage[level]
            row[f"{mode}:smis"] = rep.smis
            row[f"{mode}:train_seconds"] = rep.train_seconds
            row[f"{mode}:predict_seconds"] = rep.predict_seconds
            log_path = cell_dir / f"run_log_{mode}.json"
            if log_path.exists():
                with open(log_path, encoding="utf-8") as fh:
                    row[f"{mode}:knn_query_seconds"] = json.load(fh).get("knn_query_seconds", 0.0)
        return row
    except Exception as exc:  # per-cell failures must not kill the sweep
        return {"cell": Path(cell_dir).name, "status": f"failed: {exc}",
                **{f"param:{k}": v for k, v in chosen.items()}}


def run_sweep(sweep_dict, out_dir, workers=1, modes=("none", "local")):
    """Cartesian sweep over the config matrix; each cell runs the full
    pipeline in its own subdirectory and the summary lands in
    sweep_summary.csv. Returns (rows, any_failed)."""
    if "base" not in sweep_dict:
        raise ConfigError("sweep config needs a 'base' section")
    base = config_from_dict(json.loads(json.dumps(sweep_dict["base"]))).to_dict()
    matrix = sweep_dict.get("matrix", {})
    if not isinstance(matrix, dict):
        raise ConfigError("sweep 'matrix' must map dotted paths to value lists")
    replicates = int(sweep_dict.get("replicates", 1))
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    if replicates > 1:
        matrix = dict(matrix)
        matrix["seed"] = [base["seed"] + i for i in range(replicates)]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for i, (cell_dict, chosen) in enumerate(expand_matrix(base, matrix)):
        cells.append((cell_dict, chosen, str(out / f"cell_{i:03d}"), tuple(modes)))

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_sweep_cell, cells))
    else:
        rows = [run_sweep_cell(c) for c in cells]

    keys = ["cell", "status"]
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(out / "sweep_summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for row in rows:
            writer.writerow([row.get(k, "") for k in keys])
    any_failed = any(row["status"] != "ok" for row in rows)
    return rows, any_failed
