"""File formats: dataset and draw CSVs, interim reports, study tables, manifests."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__

TTP_COLUMNS = ("replicate_id", "patient_id", "arm", "rand_week", "week", "log10_ttp", "censored")
EVENT_COLUMNS = ("replicate_id", "patient_id", "arm", "event_time_weeks", "event_observed")
REPORT_COLUMNS = (
    "arm", "duration", "n", "events", "theta_median", "ci_low", "ci_high", "p_mav", "p_tv",
    "tpp_decision", "psi1", "psi2", "psi3", "final_decision", "reason",
)


def _fmt(v):
    """Text form used in every CSV; ``repr`` keeps floats round-trippable and stable."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            values = [row[c] for c in columns] if isinstance(row, dict) else row
            w.writerow([_fmt(v) for v in values])


def dataset_rows(dataset, replicate_id=0):
    """(ttp_rows, event_rows) for export; arms and patients are labelled from 1."""
    vp = dataset.visit_patient
    ttp = zip(
        [replicate_id] * len(vp), vp + 1, dataset.arm[vp] + 1, dataset.rand_week[vp],
        dataset.visit_week, dataset.log10_ttp, dataset.censored,
    )
    pid = np.arange(dataset.n_patients)
    events = zip(
        [replicate_id] * len(pid), pid + 1, dataset.arm + 1, dataset.event_time,
        dataset.event_observed,
    )
    return list(ttp), list(events)


def write_dataset(datasets, out_dir):
    """Write ``ttp.csv`` and ``events.csv``; ``datasets`` maps replicate id -> TrialDataset."""
    out_dir = Path(out_dir)
    ttp_rows, event_rows = [], []
    for rid, ds in datasets.items():
        t, e = dataset_rows(ds, rid)
        ttp_rows += t
        event_rows += e
    write_csv(out_dir / "ttp.csv", TTP_COLUMNS, ttp_rows)
    write_csv(out_dir / "events.csv", EVENT_COLUMNS, event_rows)
    return [out_dir / "ttp.csv", out_dir / "events.csv"]


def read_dataset(out_dir, design, replicate_id=0):
    """Rebuild a ``TrialDataset`` for one replicate from exported CSVs."""
    from .dgm import TrialDataset

    out_dir = Path(out_dir)
    with open(out_dir / "ttp.csv", newline="") as fh:
        ttp = [r for r in csv.DictReader(fh) if int(r["replicate_id"]) == replicate_id]
    with open(out_dir / "events.csv", newline="") as fh:
        ev = [r for r in csv.DictReader(fh) if int(r["replicate_id"]) == replicate_id]
    if not ttp or not ev:
        raise ValueError(f"no rows for replicate {replicate_id} in {out_dir}")
    ev.sort(key=lambda r: int(r["patient_id"]))
    rand_week = {int(r["patient_id"]): int(r["rand_week"]) for r in ttp}
    pids = [int(r["patient_id"]) for r in ev]
    return TrialDataset(
        design=design,
        arm=np.array([int(r["arm"]) - 1 for r in ev]),
        rand_week=np.array([rand_week[p] for p in pids]),
        visit_patient=np.array([int(r["patient_id"]) - 1 for r in ttp]),
        visit_week=np.array([int(r["week"]) for r in ttp]),
        log10_ttp=np.array([float(r["log10_ttp"]) for r in ttp]),
        censored=np.array([r["censored"] == "1" for r in ttp]),
        event_time=np.array([float(r["event_time_weeks"]) for r in ev]),
        event_observed=np.array([r["event_observed"] == "1" for r in ev]),
    )


def write_draws(draws, path):
    cols = draws.columns()
    names = tuple(cols)
    rows = zip(*(cols[n] for n in names))
    write_csv(path, names, rows)


def report_records(rows, converged=None):
    """Interim report rows as dicts at report precision (theta 1 dp, probabilities 2 dp)."""
    out = []
    for r in rows:
        d = dataclasses.asdict(r)
        d["arm"] = r.arm + 1
        for key in ("theta_median", "ci_low", "ci_high"):
            d[key] = None if d[key] is None else round(d[key], 1)
        for key in ("p_mav", "p_tv", "psi1", "psi2", "psi3"):
            d[key] = None if d[key] is None else round(d[key], 2)
        if converged is not None:
            d["converged"] = bool(converged)
        out.append(d)
    return out


def write_report(rows, out_dir, converged=None):
    out_dir = Path(out_dir)
    records = report_records(rows, converged)
    columns = REPORT_COLUMNS + (("converged",) if converged is not None else ())
    write_csv(out_dir / "decisions.csv", columns, records)
    with open(out_dir / "decisions.json", "w") as fh:
        json.dump(records, fh, indent=2)
        fh.write("\n")
    return [out_dir / "decisions.csv", out_dir / "decisions.json"]


def format_report(records):
    """Plain-text table in the layout of an interim report; control metrics shown as '--'."""

    def pct(v):
        return "--" if v is None else f"{v:.1f}%"

    def prob(v):
        return "--" if v is None else f"{v:.2f}"

    header = ("arm", "dur", "n", "events", "theta (CI)", "P>MAV", "P>=TV", "TPP",
              "psi1", "psi2", "psi3", "final")
    lines = []
    for r in records:
        theta = "--" if r["theta_median"] is None else (
            f"{pct(r['theta_median'])} ({pct(r['ci_low'])}, {pct(r['ci_high'])})"
        )
        lines.append((
            str(r["arm"]), f"{r['duration']:g}", str(r["n"]), str(r["events"]), theta,
            prob(r["p_mav"]), prob(r["p_tv"]), r["tpp_decision"] or "--", prob(r["psi1"]),
            prob(r["psi2"]), prob(r["psi3"]), r["final_decision"] or "--",
        ))
    widths = [max(len(h), *(len(l[i]) for l in lines)) for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    return "\n".join([fmt.format(*header)] + [fmt.format(*l) for l in lines])


def write_oc(results, path):
    """Aggregate operating characteristics, one row per (scenario, arm)."""
    rows = [row for oc in results for row in oc.rows]
    if not rows:
        columns = ("scenario_id", "arm")
    else:
        columns = tuple(rows[0])
    write_csv(path, columns, rows)
    return path


def plot_data(results, records_by_scenario, configs):
    """Long-format tables behind the lack-of-benefit, TPP, overall and ranking figures."""
    fig_lob, fig_tpp, fig_overall, fig_rank = [], [], [], []
    for oc in results:
        cfg = configs[oc.scenario_id]
        recs = records_by_scenario[oc.scenario_id]
        events = np.array([r.events for r in recs])
        psi2 = np.array([r.psi2 for r in recs], dtype=float)
        for row in oc.rows:
            j = row["arm"] - 1
            base = {k: row[k] for k in ("scenario_id", "ttp_setting", "rate_setting", "n_per_arm",
                                        "arm", "theta_true", "rate_true")}
            for m in (1, 2, 3):
                fig_lob.append({**base, "threshold": m,
                                "proportion": float(np.mean(events[:, j] >= m))})
            for d in ("go", "continue", "no_go"):
                fig_tpp.append({**base, "decision": d, "proportion": row[f"tpp_{d}"]})
            for d in ("go", "continue"):
                fig_overall.append({**base, "decision": d, "cause": "", "proportion": row[f"final_{d}"]})
            for cause in ("lack_of_benefit", "tpp_no_go", "lack_of_benefit_and_tpp_no_go"):
                fig_overall.append({**base, "decision": "stop", "cause": cause,
                                    "proportion": row[f"stop_{cause}"]})
        s = oc.summary
        if "best_arm" in s:
            for r_i, rec in enumerate(recs):
                for role, arm in (("first", s["best_arm"]), ("second", s["second_arm"])):
                    fig_rank.append({
                        "scenario_id": oc.scenario_id, "ttp_setting": cfg.ttp_setting,
                        "rate_setting": cfg.rate_setting, "n_per_arm": cfg.n_per_arm,
                        "replicate": rec.replicate, "role": role, "arm": arm,
                        "psi2": float(psi2[r_i, arm - 1]),
                    })
    return {
        "plot_lack_of_benefit.csv": fig_lob,
        "plot_tpp.csv": fig_tpp,
        "plot_overall.csv": fig_overall,
        "plot_ranking.csv": fig_rank,
    }


def write_plot_data(tables, out_dir):
    paths = []
    for name, rows in tables.items():
        columns = tuple(rows[0]) if rows else ("scenario_id",)
        path = Path(out_dir) / name
        write_csv(path, columns, rows)
        paths.append(path)
    return paths


def _jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def config_hash(resolved):
    blob = json.dumps(_jsonable(resolved), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def file_sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command, resolved, seeds, outputs, failures=()):
    """Manifest with the fully resolved config, seeds and output hashes."""
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": config_hash(resolved),
        "resolved_config": _jsonable(resolved),
        "seeds": _jsonable(seeds),
        "outputs": {Path(p).name: file_sha256(p) for p in outputs},
        "failures": list(failures),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
