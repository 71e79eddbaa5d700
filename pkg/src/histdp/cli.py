"""Command-line interface.

Subcommands: generate-data, train, sweep, attack, accountant, calibrate,
compare, report.  Experiment configs are JSON files matching the
ExperimentConfig schema; individual keys can be overridden with --set
key=value flags.  HISTDP_OUT overrides the default output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, fields

from . import accountant, data, harness
from .data import SyntheticConfig


def _out_dir(args) -> str:
    return args.out or os.environ.get("HISTDP_OUT", "results")


def _parse_value(raw: str):
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if raw.lower() in ("inf", "+inf"):
        return math.inf
    if raw.lower() in ("none", "null"):
        return None
    return raw


def load_experiment_config(path=None, overrides=()) -> harness.ExperimentConfig:
    payload = {}
    if path:
        with open(path) as fh:
            payload = json.load(fh)
    for item in overrides or ():
        key, _, raw = item.partition("=")
        if not _:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        payload[key] = _parse_value(raw)
    syn = payload.pop("synthetic", None)
    valid = {f.name for f in fields(harness.ExperimentConfig)}
    syn_valid = {f.name for f in fields(SyntheticConfig)}
    # allow synthetic.* overrides at the top level
    syn_over = {k.split(".", 1)[1]: v for k, v in payload.items() if k.startswith("synthetic.")}
    payload = {k: v for k, v in payload.items() if not k.startswith("synthetic.")}
    unknown = set(payload) - valid
    if unknown:
        raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    if syn is not None or syn_over:
        syn = dict(syn or {})
        syn.update(syn_over)
        bad = set(syn) - syn_valid
        if bad:
            raise SystemExit(f"unknown synthetic config keys: {sorted(bad)}")
        payload["synthetic"] = SyntheticConfig(**syn)
    if payload.get("synthetic") is None and payload.get("jsonl_path") is None:
        payload["synthetic"] = SyntheticConfig()
    if "clip_bound" in payload and payload["clip_bound"] is None:
        payload["clip_bound"] = math.inf
    return harness.ExperimentConfig(**payload)


def cmd_generate_data(args):
    cfg = SyntheticConfig(
        num_users=args.users,
        task=args.task,
        dim=args.dim,
        imbalance_ratio=args.imbalance,
        signal_strength=args.signal,
        seed=args.seed,
    )
    ds = data.generate_synthetic(cfg)
    data.export_jsonl(ds, args.output)
    print(f"wrote {len(ds)} samples ({ds.task}, dim={ds.dim}) to {args.output}")


def cmd_train(args):
    cfg = load_experiment_config(args.config, args.set)
    os.makedirs(_out_dir(args), exist_ok=True)
    ckpt = os.path.join(_out_dir(args), f"model_{harness.config_hash(cfg)}_{args.seed}.json")
    res = harness.run(cfg, args.seed, checkpoint_path=ckpt)
    print(json.dumps(res.row, default=str, indent=2))
    print(f"checkpoint: {ckpt}", file=sys.stderr)


def cmd_sweep(args):
    cfg = load_experiment_config(args.config, args.set)
    eps_axis = [_parse_value(v) for v in args.epsilons.split(",")] if args.epsilons else [None]
    settings = tuple(
        {"target_epsilon": e, "clip": args.clip} if e is not None else {"sigma": cfg.sigma, "clip": cfg.clip_bound}
        for e in eps_axis
    )
    grid = harness.SweepGrid(
        history_lens=tuple(int(v) for v in args.history_lens.split(",")),
        privacy_settings=settings,
        repetitions=args.repetitions,
    )
    out = _out_dir(args)
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, "sweep.csv")
    rows = harness.sweep(grid, cfg, csv_path=csv_path, progress=lambda r: print(
        f"L={r['history_len']} eps={r['epsilon']} seed={r['seed']} "
        f"macro_f1={r['macro_f1']}", file=sys.stderr))
    print(f"{len(rows)} new rows appended to {csv_path}")


def cmd_attack(args):
    from . import attack as attack_mod
    from .loss import CbFocalConfig
    from .model import load_checkpoint

    params, _ = load_checkpoint(args.model_checkpoint)
    ds = data.ingest_jsonl(args.dataset, args.task, dim=params.dim)
    sp = data.split(ds, data.TEMPORAL if args.task == data.POST_LEVEL else data.STRATIFIED)
    loss_cfg = CbFocalConfig(class_counts=ds.class_counts(sp.train))
    mem = [ds.samples[i] for i in sp.train]
    non = [ds.samples[i] for i in sp.test]
    n = min(len(mem), len(non))
    scores_m = attack_mod.score_samples(params, mem[:n], loss_cfg)
    scores_n = attack_mod.score_samples(params, non[:n], loss_cfg)
    result = attack_mod.threshold_attack(scores_m, scores_n)
    passed, margin = attack_mod.dp_bound_check(result, args.epsilon, args.delta)
    print(json.dumps({
        "threshold": result.threshold,
        "tpr": result.rates.tpr,
        "fpr": result.rates.fpr,
        "privacy_leakage": result.leakage,
        "dp_bound_passed": passed,
        "dp_bound_margin": margin,
    }, default=str, indent=2))


def cmd_accountant(args):
    eps, order = accountant.epsilon(args.q, args.sigma, args.steps, args.delta)
    print(json.dumps({"epsilon": eps, "best_order": order}, default=str))


def cmd_calibrate(args):
    sigma = accountant.calibrate_sigma(args.epsilon, args.delta, args.q, args.steps)
    print(json.dumps({"sigma": sigma}))


def _read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def cmd_compare(args):
    p, direction = harness.compare(_read_rows(args.a), _read_rows(args.b), args.metric)
    print(json.dumps({"p_value": p, "direction": direction}))


def cmd_report(args):
    tidy, agg = harness.report(_read_rows(args.results), _out_dir(args))
    print(f"wrote {tidy} and {agg}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="histdp")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write a synthetic JSONL dataset")
    g.add_argument("--output", required=True)
    g.add_argument("--users", type=int, default=1000)
    g.add_argument("--task", default=data.POST_LEVEL, choices=[data.POST_LEVEL, data.USER_LEVEL])
    g.add_argument("--dim", type=int, default=16)
    g.add_argument("--imbalance", type=float, default=9.0)
    g.add_argument("--signal", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="one training run")
    t.add_argument("--config", help="JSON ExperimentConfig file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="history-length x privacy-budget sweep")
    s.add_argument("--config")
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.add_argument("--history-lens", default="0,1,5,10,25,50")
    s.add_argument("--epsilons", default="inf,2.6,0.6", help="comma list; inf = non-private")
    s.add_argument("--clip", type=float, default=1.0)
    s.add_argument("--repetitions", type=int, default=10)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("attack", help="membership inference against a checkpoint")
    a.add_argument("--model-checkpoint", required=True)
    a.add_argument("--dataset", required=True)
    a.add_argument("--task", default=data.POST_LEVEL)
    a.add_argument("--epsilon", type=float, required=True)
    a.add_argument("--delta", type=float, default=1e-3)
    a.set_defaults(func=cmd_attack)

    ac = sub.add_parser("accountant", help="accounted epsilon for (q, sigma, steps, delta)")
    ac.add_argument("--q", type=float, required=True)
    ac.add_argument("--sigma", type=float, required=True)
    ac.add_argument("--steps", type=int, required=True)
    ac.add_argument("--delta", type=float, required=True)
    ac.set_defaults(func=cmd_accountant)

    ca = sub.add_parser("calibrate", help="noise multiplier for a target epsilon")
    ca.add_argument("--epsilon", type=float, required=True)
    ca.add_argument("--delta", type=float, required=True)
    ca.add_argument("--q", type=float, required=True)
    ca.add_argument("--steps", type=int, required=True)
    ca.set_defaults(func=cmd_calibrate)

    cp = sub.add_parser("compare", help="paired Wilcoxon between two result CSVs")
    cp.add_argument("--a", required=True)
    cp.add_argument("--b", required=True)
    cp.add_argument("--metric", default="macro_f1")
    cp.set_defaults(func=cmd_compare)

    rp = sub.add_parser("report", help="aggregate a results CSV into plot data")
    rp.add_argument("--results", required=True)
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
