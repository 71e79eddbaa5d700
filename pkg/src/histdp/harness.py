"""Experiment orchestration: single runs, sweeps over history length and
privacy budget, seed repetition, paired significance tests, and CSV reports.

A run is fully determined by (config, seed); rows carry a config hash so
interrupted sweeps resume and any row can be regenerated bit-identically.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import accountant, attack, data, dp_optimizer, metrics, model
from .accountant import PrivacySpec
from .loss import CbFocalConfig
from .numerics import RngStream

RESULT_COLUMNS = [
    "config_hash",
    "seed",
    "history_len",
    "sigma",
    "clip",
    "epsilon",
    "macro_f1",
    "recall_minority",
    "precision_minority",
    "graded_p",
    "graded_r",
    "graded_f",
    "pl",
    "wall_time",
]


@dataclass(frozen=True)
class ExperimentConfig:
    # data source: synthetic generator or a JSONL timeline file
    synthetic: data.SyntheticConfig | None = None
    jsonl_path: str | None = None
    task: str = data.POST_LEVEL
    history_len: int | None = None  # None = full history
    history_window_days: float | None = None
    imbalance_target: float | None = None
    # privacy: sigma == 0 is the non-private sentinel; target_epsilon, when
    # set, calibrates sigma and takes precedence
    sigma: float = 0.0
    clip_bound: float = math.inf
    q: float = 0.05
    delta: float = 1e-3
    target_epsilon: float | None = None
    # model / training
    hidden: int = 8
    epochs: int = 4
    learning_rate: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    loss_beta: float = 0.999
    loss_gamma: float = 2.0
    # attack
    run_attack: bool = False
    attack_calibration_fraction: float = 0.5

    def resolve_sigma(self) -> float:
        if self.target_epsilon is not None and math.isfinite(self.target_epsilon):
            steps = self.epochs * dp_optimizer.steps_per_epoch(self.q)
            return accountant.calibrate_sigma(self.target_epsilon, self.delta, self.q, steps)
        return self.sigma


def config_hash(config: ExperimentConfig) -> str:
    payload = asdict(config)
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@functools.lru_cache(maxsize=10)
def _generate_cached(cfg: data.SyntheticConfig) -> data.Dataset:
    # Sweeps revisit the same (generator config, seed) under many history
    # lengths and privacy settings; the base dataset is never mutated
    # downstream (truncation and subsampling build new Dataset objects),
    # so caching it is safe and removes the dominant regeneration cost.
    return data.generate_synthetic(cfg)


def _load_dataset(config: ExperimentConfig, seed: int) -> data.Dataset:
    if (config.synthetic is None) == (config.jsonl_path is None):
        raise ValueError("configure exactly one of synthetic / jsonl_path")
    if config.synthetic is not None:
        cfg = replace(config.synthetic, seed=config.synthetic.seed + seed, task=config.task)
        ds = _generate_cached(cfg)
    else:
        ds = data.ingest_jsonl(config.jsonl_path, config.task, dim=_jsonl_dim(config.jsonl_path))
    if config.imbalance_target is not None:
        ds = data.subsample_imbalance(ds, config.imbalance_target, seed=seed + 7919)
    if config.history_len is not None:
        ds = data.truncate_history(ds, length=config.history_len)
    elif config.history_window_days is not None:
        ds = data.truncate_history(ds, window_days=config.history_window_days)
    return ds


def _jsonl_dim(path) -> int:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                if "emb" in rec:
                    return len(rec["emb"])
                raise ValueError("text payloads need an explicit encoder; use emb records")
    raise ValueError("empty dataset")


def _evaluate(params, samples, minority_class: int, classes):
    probs, _ = model.forward_batch(
        [s.history for s in samples], [s.current for s in samples], params
    )
    pred = np.argmax(probs, axis=1)
    true = np.array([s.label for s in samples])
    gp, gr, gf = metrics.graded_metrics(true, pred)
    return {
        "macro_f1": metrics.macro_f1(true, pred, classes=classes),
        "recall_minority": metrics.class_recall(true, pred, minority_class),
        "precision_minority": metrics.class_precision(true, pred, minority_class),
        "graded_p": gp,
        "graded_r": gr,
        "graded_f": gf,
    }


@dataclass
class RunResult:
    row: dict
    params: model.ModelParams
    epsilon_per_epoch: list
    config: ExperimentConfig
    seed: int
    attack_result: attack.AttackResult | None = None
    dp_bound: tuple | None = None


def run(config: ExperimentConfig, seed: int, checkpoint_path=None) -> RunResult:
    """One deterministic experiment: train, select best-val epoch, evaluate."""
    t0 = time.monotonic()
    rng = RngStream(seed, ("run",))
    ds = _load_dataset(config, seed)
    split_kind = data.TEMPORAL if ds.task == data.POST_LEVEL else data.STRATIFIED
    sp = data.split(ds, split_kind, seed=seed)
    train_samples = [ds.samples[i] for i in sp.train]
    val_samples = [ds.samples[i] for i in sp.val]
    test_samples = [ds.samples[i] for i in sp.test]

    counts = ds.class_counts(sp.train)
    loss_cfg = CbFocalConfig(config.loss_beta, config.loss_gamma, counts)
    labels_all = ds.labels()
    minority = int(np.argmin([np.sum(labels_all == c) for c in range(ds.num_classes)]))
    classes = list(range(ds.num_classes))

    sigma = config.resolve_sigma()
    steps = config.epochs * dp_optimizer.steps_per_epoch(config.q)
    privacy = PrivacySpec(config.q, sigma, config.clip_bound, config.delta, steps)

    params0 = model.ModelParams.init(rng.child("init"), ds.dim, config.hidden, ds.num_classes)
    best = {"score": -math.inf, "params": params0, "epoch": -1}
    select_key = "macro_f1" if ds.task == data.POST_LEVEL else "graded_f"

    def on_epoch_end(epoch, params, eps):
        val = _evaluate(params, val_samples, minority, classes)
        if val[select_key] > best["score"]:
            best.update(score=val[select_key], params=params.copy(), epoch=epoch)

    result = dp_optimizer.train(
        params0,
        train_samples,
        privacy,
        loss_cfg,
        config.epochs,
        rng.child("train"),
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        on_epoch_end=on_epoch_end,
    )
    final_params = best["params"] if best["epoch"] >= 0 else result.params
    test_metrics = _evaluate(final_params, test_samples, minority, classes)
    eps = result.epsilon_per_epoch[-1] if result.epsilon_per_epoch else accountant.NONPRIVATE

    attack_result = None
    dp_bound = None
    pl = math.nan
    if config.run_attack:
        gen = rng.child("attack-split").generator()
        n_side = min(len(train_samples), len(test_samples))
        mem = [train_samples[i] for i in gen.permutation(len(train_samples))[:n_side]]
        non = [test_samples[i] for i in gen.permutation(len(test_samples))[:n_side]]
        mem_scores = attack.score_samples(final_params, mem, loss_cfg)
        non_scores = attack.score_samples(final_params, non, loss_cfg)
        attack_result = attack.threshold_attack(
            mem_scores, non_scores, config.attack_calibration_fraction, rng.child("attack")
        )
        pl = attack_result.leakage
        dp_bound = attack.dp_bound_check(attack_result, eps, config.delta)

    hist_len = config.history_len if config.history_len is not None else -1
    row = {
        "config_hash": config_hash(config),
        "seed": seed,
        "history_len": hist_len,
        "sigma": sigma,
        "clip": config.clip_bound,
        "epsilon": eps,
        **test_metrics,
        "pl": pl,
        "wall_time": time.monotonic() - t0,
    }
    if checkpoint_path is not None:
        enc = model.EncoderConfig("precomputed", ds.dim)
        model.save_checkpoint(checkpoint_path, final_params, enc)
    return RunResult(row, final_params, result.epsilon_per_epoch, config, seed, attack_result, dp_bound)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepGrid:
    history_lens: tuple
    privacy_settings: tuple  # dicts: {"sigma":..,"clip":..} or {"target_epsilon":..}
    repetitions: int = 1

    def __post_init__(self):
        if not self.history_lens or not self.privacy_settings:
            raise ValueError("grid axes must be nonempty")
        if self.repetitions < 1:
            raise ValueError("need at least one repetition")


def _apply_setting(base: ExperimentConfig, history_len, setting: dict) -> ExperimentConfig:
    kw = {"history_len": history_len}
    if "target_epsilon" in setting:
        te = setting["target_epsilon"]
        if te is None or math.isinf(te):
            kw.update(target_epsilon=None, sigma=0.0, clip_bound=math.inf)
        else:
            kw.update(target_epsilon=te, clip_bound=setting.get("clip", base.clip_bound))
    else:
        kw.update(
            sigma=setting["sigma"],
            clip_bound=setting.get("clip", base.clip_bound),
            target_epsilon=None,
        )
    return replace(base, **kw)


def _existing_keys(csv_path):
    done = set()
    if csv_path and os.path.exists(csv_path):
        with open(csv_path) as fh:
            for row in csv.DictReader(fh):
                done.add((row["config_hash"], int(row["seed"])))
    return done


def append_row(csv_path, row: dict):
    exists = os.path.exists(csv_path) and os.path.getsize(csv_path) > 0
    with open(csv_path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if not exists:
            w.writeheader()
        w.writerow({k: row.get(k) for k in RESULT_COLUMNS})
        fh.flush()


def sweep(grid: SweepGrid, base_config: ExperimentConfig, csv_path=None, seeds=None, progress=None):
    """Cross-product of history lengths x privacy settings x seeds.

    Rows are appended to csv_path as they finish; rerunning an interrupted
    sweep skips (config_hash, seed) pairs already present.
    """
    seeds = list(seeds) if seeds is not None else list(range(grid.repetitions))
    done = _existing_keys(csv_path)
    rows = []
    for hl in grid.history_lens:
        for setting in grid.privacy_settings:
            cfg = _apply_setting(base_config, hl, setting)
            h = config_hash(cfg)
            for seed in seeds:
                if (h, seed) in done:
                    continue
                try:
                    res = run(cfg, seed)
                    row = res.row
                except Exception as exc:  # flag and continue per sweep contract
                    row = {k: math.nan for k in RESULT_COLUMNS}
                    row.update(config_hash=h, seed=seed, history_len=hl)
                    row["error"] = str(exc)
                rows.append(row)
                if csv_path:
                    append_row(csv_path, row)
                if progress:
                    progress(row)
    return rows


def compare(results_a, results_b, metric: str):
    """Paired-by-seed two-sided Wilcoxon; returns (p_value, direction).

    direction is the sign of median(a - b) for the chosen metric.
    """
    by_seed_a = {int(r["seed"]): float(r[metric]) for r in results_a}
    by_seed_b = {int(r["seed"]): float(r[metric]) for r in results_b}
    common = sorted(set(by_seed_a) & set(by_seed_b))
    if len(common) != len(by_seed_a) or len(common) != len(by_seed_b):
        raise ValueError("inputs are not paired by seed")
    a = [by_seed_a[s] for s in common]
    b = [by_seed_b[s] for s in common]
    p = metrics.wilcoxon_signed_rank(a, b)
    direction = float(np.sign(np.median(np.array(a) - np.array(b))))
    return p, direction


def _mean_ci(values, z: float = 1.96):
    v = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(v))
    half = float(z * np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return mean, half


def report(rows, out_dir):
    """Write the tidy results CSV plus per-figure aggregation files."""
    if not rows:
        raise ValueError("no rows to report")
    os.makedirs(out_dir, exist_ok=True)
    tidy = os.path.join(out_dir, "results.csv")
    with open(tidy, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k) for k in RESULT_COLUMNS})

    by_cell = {}
    for r in rows:
        key = (r["history_len"], r["epsilon"])
        by_cell.setdefault(key, []).append(r)
    agg = os.path.join(out_dir, "by_history_and_epsilon.csv")
    with open(agg, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["history_len", "epsilon", "n", "macro_f1_mean", "macro_f1_ci", "recall_minority_mean", "recall_minority_ci"])
        for (hl, eps), cell in sorted(by_cell.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
            f1m, f1c = _mean_ci([float(r["macro_f1"]) for r in cell])
            rm, rc = _mean_ci([float(r["recall_minority"]) for r in cell])
            w.writerow([hl, eps, len(cell), f1m, f1c, rm, rc])
    return tidy, agg
