"""Command-line front end.

    mamstpp simulate --config cfg.yaml --out DIR [--seed N] [--replicates R]
    mamstpp decide   (--config cfg.yaml | --dataset DIR) --out DIR [tpp flags]
    mamstpp study    --config cfg.yaml --out DIR [--workers W] [--replicates R]
    mamstpp report   --in DIR

Exit codes: 0 ok, 1 usage, 2 configuration, 3 runtime.  Without ``--out``,
output goes to ``$MAMSTPP_OUTPUT_ROOT/<command>`` (default root
``./mamstpp-output``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import io
from .config import load_config, resolve, scenario_configs
from .dgm import ConfigError, simulate_trial, take_interim_snapshot
from .harness import aggregate, run_scenario
from .lmm import fit
from .decision import evaluate_interim

log = logging.getLogger("mamstpp")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "MAMSTPP_OUTPUT_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args, cfg):
    if args.out:
        out = Path(args.out)
    elif cfg.get("out"):
        out = Path(cfg["out"])
    else:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "mamstpp-output")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    cfg = load_config(args.config) if args.config else resolve({})
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    tpp = {k: getattr(args, k) for k in ("theta_mav", "theta_tv", "tau_mav", "tau_tv")
           if getattr(args, k, None) is not None}
    if tpp:
        overrides["tpp"] = {**cfg["tpp"], **tpp}
    if getattr(args, "threshold", None) is not None:
        overrides["policy"] = {**cfg["policy"], "unfavorable_threshold": args.threshold}
    if overrides:
        cfg = resolve({**cfg, **overrides})
    return cfg


def cmd_simulate(args):
    cfg = _load(args)
    (scenario,) = scenario_configs(cfg, study=False)
    out = _out_dir(args, cfg)
    n = args.replicates or 1
    datasets = {}
    seeds = {}
    for i in range(n):
        data_seed, _ = scenario.replicate_seed(i).spawn(2)
        datasets[i] = simulate_trial(
            scenario.lmm_params(), scenario.weibull_spec(), scenario.design_spec(), data_seed
        )
        seeds[i] = {"entropy": data_seed.entropy, "spawn_key": list(data_seed.spawn_key)}
    outputs = io.write_dataset(datasets, out)
    io.write_manifest(out, "simulate", cfg, {"scenario_seed": scenario.seed, "replicates": seeds},
                      outputs)
    print(f"wrote {n} dataset(s) for {scenario.scenario_id} to {out}")
    return EXIT_OK


def cmd_decide(args):
    if args.dataset and not args.config:
        manifest_path = Path(args.dataset) / "manifest.json"
        if manifest_path.exists():
            args.config = manifest_path
    cfg = _load(args)
    (scenario,) = scenario_configs(cfg, study=False)
    design = scenario.design_spec()
    replicate = args.replicate or 0
    data_seed, fit_seed = scenario.replicate_seed(replicate).spawn(2)
    if args.dataset:
        try:
            dataset = io.read_dataset(args.dataset, design, replicate)
        except (OSError, ValueError, KeyError) as exc:
            log.error("cannot read dataset: %s", exc)
            return EXIT_RUNTIME
    else:
        dataset = simulate_trial(scenario.lmm_params(), scenario.weibull_spec(), design, data_seed)
    try:
        snapshot = take_interim_snapshot(dataset)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    out = _out_dir(args, cfg)
    draws, diagnostics = fit(snapshot, scenario.priors, scenario.sampler, seed=fit_seed)
    _, rows = evaluate_interim(snapshot, draws, scenario.tpp, scenario.policy, scenario.alpha)
    outputs = io.write_report(rows, out, converged=diagnostics.converged)
    text = io.format_report(io.report_records(rows))
    (out / "report.txt").write_text(text + "\n")
    outputs.append(out / "report.txt")
    if args.draws:
        io.write_draws(draws, out / "draws.csv")
        outputs.append(out / "draws.csv")
    io.write_manifest(
        out, "decide", cfg,
        {"scenario_seed": scenario.seed, "replicate": replicate,
         "dataset": str(args.dataset) if args.dataset else None},
        outputs,
        failures=[] if diagnostics.converged else ["not_converged"],
    )
    print(f"interim week {snapshot.interim_week}; converged={diagnostics.converged}")
    print(text)
    return EXIT_OK


def cmd_study(args):
    cfg = _load(args)
    configs = scenario_configs(cfg, study=True, replicates=args.replicates)
    out = _out_dir(args, cfg)
    workers = args.workers or cfg["workers"]
    results, records, failures = [], {}, []
    for scenario in configs:
        log.info("running %s (%d replicates)", scenario.scenario_id, scenario.replicates)
        try:
            recs = run_scenario(scenario, workers=workers)
        except Exception as exc:  # noqa: BLE001 - recorded in the manifest
            log.error("scenario %s failed: %s", scenario.scenario_id, exc)
            failures.append({"scenario_id": scenario.scenario_id, "error": repr(exc)})
            continue
        records[scenario.scenario_id] = recs
        results.append(aggregate(recs, scenario))
    outputs = [io.write_oc(results, out / "operating_characteristics.csv")]
    tables = io.plot_data(results, records, {c.scenario_id: c for c in configs})
    outputs += io.write_plot_data(tables, out)
    summary_path = out / "scenario_summary.json"
    summary_path.write_text(json.dumps([r.summary for r in results], indent=2) + "\n")
    outputs.append(summary_path)
    if args.replicates:
        cfg = resolve({**cfg, "study": {**cfg["study"], "replicates": args.replicates}})
    io.write_manifest(
        out, "study", cfg, {c.scenario_id: c.seed for c in configs}, outputs, failures
    )
    print(f"{len(results)} scenario(s) written to {out}; {len(failures)} failed")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_report(args):
    src = Path(args.input)
    if (src / "decisions.json").exists():
        records = json.loads((src / "decisions.json").read_text())
        print(io.format_report(records))
        return EXIT_OK
    oc = src / "operating_characteristics.csv"
    if oc.exists():
        with open(oc, newline="") as fh:
            rows = list(csv.DictReader(fh))
        cols = ("scenario_id", "arm", "final_go", "final_continue", "final_stop",
                "tpp_no_go", "lack_of_benefit")
        print("  ".join(cols))
        for r in rows:
            print("  ".join(
                r[c] if c in ("scenario_id", "arm") else f"{float(r[c]):.3f}" for c in cols
            ))
        return EXIT_OK
    log.error("no decisions.json or operating_characteristics.csv in %s", src)
    return EXIT_RUNTIME


def build_parser():
    parser = _Parser(prog="mamstpp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, workers=False):
        p.add_argument("--config", help="YAML/JSON config or a manifest.json")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--replicates", type=int)
        if workers:
            p.add_argument("--workers", type=int)

    p = sub.add_parser("simulate", help="simulate trial datasets")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decide", help="fit and report decisions at the first interim")
    common(p)
    p.add_argument("--dataset", help="directory holding ttp.csv and events.csv")
    p.add_argument("--replicate", type=int, default=0)
    p.add_argument("--theta-mav", dest="theta_mav", type=float)
    p.add_argument("--theta-tv", dest="theta_tv", type=float)
    p.add_argument("--tau-mav", dest="tau_mav", type=float)
    p.add_argument("--tau-tv", dest="tau_tv", type=float)
    p.add_argument("--threshold", type=int, help="unfavorable-outcome threshold M")
    p.add_argument("--draws", action="store_true", help="also export posterior draws")
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("study", help="run the scenario grid")
    common(p, workers=True)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("report", help="print a report from an output directory")
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime error: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
