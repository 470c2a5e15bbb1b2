"""Reports of a completed run: CSV tables, a JSON summary, a markdown summary and PNG strips."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from ..bench import bench_vs_policy_correlation
from ..exceptions import MissingOutputs, NeuralTrajError
from ..gridsim import save_png_strip
from ..trajstore import read_dataset
from .manifest import ExperimentManifest
from .runner import load_run

N_STRIPS = 2


@dataclass
class Report:
    directory: Path
    summary: dict
    files: dict

    def __getitem__(self, k):
        return self.summary[k]


def _load(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError:
        raise MissingOutputs(f"cannot read {path}") from None


def _task_rows(evals):
    by = defaultdict(list)
    for e in evals:
        for task, v in e["per_task"].items():
            by[(task, e["label"], e["x"])].append(v)
    rows = []
    for (task, label, x), vals in sorted(by.items(), key=lambda kv: (kv[0][0], kv[0][1], str(kv[0][2]))):
        rows.append({"task": task, "label": label, "x": "" if x is None else x,
                     "mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)})
    return rows


def _label_summary(rows):
    out = defaultdict(lambda: defaultdict(list))
    for r in rows:
        out[r["label"]][str(r["x"])].append(r["mean"])
    return {lab: {x: {"mean": float(np.mean(v)), "sum": float(np.sum(v)), "n_tasks": len(v)} for x, v in xs.items()}
            for lab, xs in out.items()}


def _series(evals):
    """For labels evaluated at numeric ``x``: per-x means across seeds plus the rank correlation."""
    pts = defaultdict(list)
    for e in evals:
        if isinstance(e["x"], (int, float)):
            pts[e["label"]].append((float(e["x"]), e["mean"]))
    out = {}
    for label, p in pts.items():
        xs = sorted({x for x, _ in p})
        means = [float(np.mean([m for x, m in p if x == xv])) for xv in xs]
        entry = {"x": xs, "mean": means, "n_points": len(p),
                 "nondecreasing": bool(all(b >= a for a, b in zip(means, means[1:])))}
        xa, ya = np.array([x for x, _ in p]), np.array([m for _, m in p])
        entry["spearman"] = float(spearmanr(xa, ya)[0]) if len(xs) > 1 and ya.std() > 0 else None
        out[label] = entry
    return out


def _correlation(evals, benches):
    succ, bench = defaultdict(list), {}
    for e in evals:
        if e.get("group"):
            succ[e["group"]].append(e["mean"])
    for b in benches:
        if b.get("group"):
            bench[b["group"]] = b["summary"]
    groups = sorted(set(succ) & set(bench))
    if len(groups) < 2:
        return None
    variants = [{"name": g, "IF": bench[g]["IF"], "PA": bench[g]["PA"], "success": float(np.mean(succ[g]))}
                for g in groups]
    try:
        res = bench_vs_policy_correlation(variants)
        r = res.r
    except NeuralTrajError as e:  # too few variants or a constant series
        r, res = None, str(e)
    return {"variants": variants, "r": r, "note": "" if r is not None else res}


def _write_csv(path, rows, cols):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in cols})


def _markdown(manifest, rows, summary):
    lines = [f"# {manifest.name}", "", f"preset: {manifest.preset or '-'}  seed: {manifest.seed}", ""]
    labels = sorted({r["label"] for r in rows})
    tasks = sorted({r["task"] for r in rows})
    if rows:
        cell = defaultdict(list)
        for r in rows:
            cell[(r["task"], r["label"])].append(r["mean"])
        lines += ["| task | " + " | ".join(labels) + " |", "|---" * (len(labels) + 1) + "|"]
        for t in tasks + ["average"]:
            vals = []
            for lab in labels:
                v = [np.mean(cell[(tt, lab)]) for tt in tasks if cell[(tt, lab)]] if t == "average" else cell[(t, lab)]
                vals.append(f"{100 * np.mean(v):.1f}" if len(v) else "-")
            lines.append(f"| {t} | " + " | ".join(vals) + " |")
        lines.append("")
    for label, s in summary["series"].items():
        lines.append(f"series {label}: " + ", ".join(f"{x:g}->{100 * m:.1f}" for x, m in zip(s["x"], s["mean"]))
                     + f"  spearman={s['spearman']}")
    if summary["bench"]:
        lines += ["", "| bench | IF | PA | score |", "|---|---|---|---|"]
        for b in summary["bench"]:
            name = b["label"] if b["group"] in ("", b["label"]) else f"{b['label']} ({b['group']})"
            lines.append(f"| {name} | {b['IF']:.1f} | {b['PA']:.1f} | {b['bench']:.1f} |")
    if summary["correlation"]:
        lines.append(f"\nbench vs policy success: r = {summary['correlation']['r']}")
    return "\n".join(lines) + "\n"


def report(manifest: ExperimentManifest, workdir, out_dir=None) -> Report:
    """Summarize the last run of ``manifest``; raises MissingOutputs if any stage output is gone."""
    res = load_run(manifest, workdir)
    out = Path(out_dir) if out_dir else Path(workdir) / "reports" / manifest.name
    out.mkdir(parents=True, exist_ok=True)
    evals, benches = [], []
    for spec in manifest.stages:
        if spec.kind == "eval":
            evals.append(_load(res.path(spec.id, "result")) | {"stage": spec.id})
        elif spec.kind == "bench":
            benches.append(_load(res.path(spec.id, "result")) | {"stage": spec.id})
    rows = _task_rows(evals)
    summary = {
        "name": manifest.name, "preset": manifest.preset, "seed": manifest.seed,
        "labels": _label_summary(rows),
        "evals": [{"stage": e["stage"], "label": e["label"], "x": e["x"], "group": e.get("group", ""),
                   "mean": e["mean"]} for e in evals],
        "series": _series(evals),
        "bench": [{"stage": b["stage"], "label": b["label"], "group": b.get("group", ""), **{
            k: b["summary"][k] for k in ("IF", "PA", "bench", "n")}} for b in benches],
        "correlation": _correlation(evals, benches),
        "digests": res.digests(),
    }
    files = {"results": out / "results.csv", "summary": out / "summary.json", "markdown": out / "summary.md"}
    _write_csv(files["results"], rows, ["task", "label", "x", "mean", "std", "n"])
    if summary["series"]:
        files["series"] = out / "series.csv"
        _write_csv(files["series"], [{"label": lab, "x": x, "mean": m} for lab, s in summary["series"].items()
                                     for x, m in zip(s["x"], s["mean"])], ["label", "x", "mean"])
    if summary["bench"]:
        files["bench"] = out / "bench.csv"
        _write_csv(files["bench"], summary["bench"], ["stage", "label", "group", "IF", "PA", "bench", "n"])
    strips = []
    for spec in manifest.stages:
        if spec.kind == "rollout":
            for i, t in enumerate(read_dataset(res.path(spec.id, "data"))[:N_STRIPS]):
                strips.append(save_png_strip(t.frames, out / "strips" / f"{spec.id}_{i}.png", every=8))
    files["strips"] = strips
    files["summary"].write_text(json.dumps(summary, indent=1, sort_keys=True), encoding="utf-8")
    files["markdown"].write_text(_markdown(manifest, rows, summary), encoding="utf-8")
    return Report(out, summary, files)
