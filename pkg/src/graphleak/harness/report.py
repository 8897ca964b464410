"""Aggregate per-run metric rows into summary tables, a text summary and figures.

Everything here is a pure function of the CSV/JSON tables of a run directory, so
rerunning ``report`` on persisted results reproduces the same bytes.
"""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..metrics import SIMILARITIES, STATISTICS
from .pipeline import load_tables, write_rows

STRATEGY_LABELS = {"concat": "Concat", "distance": "EDist", "difference": "EDiff"}
SIMILARITY_TABLES = {"cosine": "reconstruction_cosine", "wasserstein": "reconstruction_wasserstein", "js": "reconstruction_js"}


def _group(rows, keys, value):
    out = defaultdict(list)
    for r in rows:
        out[tuple(str(r[k]) for k in keys)].append(float(r[value]))
    return dict(sorted(out.items(), key=lambda kv: tuple(_sort_key(x) for x in kv[0])))


def _sort_key(x: str):
    try:
        return (0, float(x), "")
    except ValueError:
        return (1, 0.0, x)


def mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def fmt(values) -> str:
    m, s = mean_std(values)
    return f"{m:.3f} ± {s:.3f}"


def property_table(rows) -> list[dict]:
    """One row per (dataset, pooling, property, k) with attack and both baselines."""
    grouped = _group(rows, ["dataset", "pooling", "property", "k", "method"], "accuracy")
    cells = defaultdict(dict)
    for (ds, pool, prop, k, method), vals in grouped.items():
        cells[(ds, pool, prop, k)][method] = vals
    out = []
    for (ds, pool, prop, k), methods in cells.items():
        row = {"dataset": ds, "pooling": pool, "property": prop, "k": k}
        for method in ("attack", "random", "summarize"):
            if method in methods:
                m, s = mean_std(methods[method])
                row[f"{method}_mean"], row[f"{method}_std"] = round(m, 4), round(s, 4)
            else:
                row[f"{method}_mean"], row[f"{method}_std"] = "", ""
        out.append(row)
    return out


def subgraph_table(rows) -> list[dict]:
    """Strategy x ratio AUC columns per (dataset, pooling, sampler)."""
    grouped = _group(rows, ["dataset", "pooling", "sampler", "method", "strategy", "ratio"], "auc")
    cells = defaultdict(dict)
    for (ds, pool, sampler, method, strategy, ratio), vals in grouped.items():
        label = "Baseline" if method == "baseline" else STRATEGY_LABELS[strategy]
        cells[(ds, pool, sampler)][f"{label}@{ratio}"] = fmt(vals)
    out = []
    for (ds, pool, sampler), cols in cells.items():
        out.append({"dataset": ds, "pooling": pool, "sampler": sampler, **dict(sorted(cols.items()))})
    return out


def reconstruction_tables(rows) -> dict[str, list[dict]]:
    """WL kernel table plus one statistic-similarity table per measure."""
    grouped = _group(rows, ["dataset", "pooling", "metric"], "value")
    tables = {"reconstruction_wl": []}
    by_cell = defaultdict(dict)
    for (ds, pool, metric), vals in grouped.items():
        by_cell[(ds, pool)][metric] = vals
    for (ds, pool), metrics in by_cell.items():
        if "wl_kernel" in metrics:
            tables["reconstruction_wl"].append({"dataset": ds, "pooling": pool, "wl_kernel": fmt(metrics["wl_kernel"])})
        for kind, name in SIMILARITY_TABLES.items():
            row = {"dataset": ds, "pooling": pool}
            for stat in STATISTICS:
                key = f"{stat}.{kind}"
                row[stat] = fmt(metrics[key]) if key in metrics else ""
            tables.setdefault(name, []).append(row)
    return tables


def defense_table(rows) -> list[dict]:
    grouped = _group(rows, ["dataset", "pooling", "metric", "beta"], "value")
    out = []
    for (ds, pool, metric, beta), vals in grouped.items():
        m, s = mean_std(vals)
        out.append({"dataset": ds, "pooling": pool, "metric": metric, "beta": beta,
                    "mean": round(m, 4), "std": round(s, 4)})
    return out


def summary_text(tables: dict) -> str:
    lines = ["# Attack summary", ""]
    if tables.get("target"):
        lines.append("## Target models (test accuracy)")
        for (ds, pool), vals in _group(tables["target"], ["dataset", "pooling"], "test_accuracy").items():
            lines.append(f"- {ds} / {pool}: {fmt(vals)}")
        lines.append("")
    if tables.get("property"):
        lines.append("## Property inference (accuracy vs baselines)")
        for r in property_table(tables["property"]):
            if r["attack_mean"] == "":
                continue
            verdict = "above" if r["attack_mean"] > max(r["random_mean"] or 0, r["summarize_mean"] or 0) else "not above"
            lines.append(f"- {r['dataset']} / {r['pooling']} / {r['property']} k={r['k']}: attack "
                         f"{r['attack_mean']:.3f} ± {r['attack_std']:.3f}, random {r['random_mean']:.3f}, "
                         f"summarize {r['summarize_mean'] if r['summarize_mean'] == '' else format(r['summarize_mean'], '.3f')}"
                         f" ({verdict} both baselines)")
        lines.append("")
    if tables.get("subgraph"):
        lines.append("## Subgraph inference (AUC)")
        for r in subgraph_table(tables["subgraph"]):
            cols = ", ".join(f"{k} {v}" for k, v in r.items() if "@" in k)
            lines.append(f"- {r['dataset']} / {r['pooling']} / {r['sampler']}: {cols}")
        lines.append("")
    if tables.get("reconstruct"):
        lines.append("## Graph reconstruction")
        recon = reconstruction_tables(tables["reconstruct"])
        for r in recon["reconstruction_wl"]:
            lines.append(f"- {r['dataset']} / {r['pooling']}: WL kernel {r['wl_kernel']}")
        for kind, name in SIMILARITY_TABLES.items():
            for r in recon.get(name, []):
                cols = ", ".join(f"{s} {r[s]}" for s in STATISTICS if r[s])
                lines.append(f"  - {kind} {r['dataset']} / {r['pooling']}: {cols}")
        lines.append("")
    if tables.get("defense"):
        lines.append("## Laplace defense (mean per beta)")
        curves = defaultdict(list)
        for r in defense_table(tables["defense"]):
            curves[(r["dataset"], r["pooling"], r["metric"])].append(f"{float(r['beta']):g}:{r['mean']:.3f}")
        for (ds, pool, metric), pts in curves.items():
            lines.append(f"- {ds} / {pool} / {metric}: " + " ".join(pts))
        lines.append("")
    if tables.get("transfer"):
        lines.append("## Transfer")
        lines.append("```")
        lines.append(json.dumps(tables["transfer"], indent=1, sort_keys=True))
        lines.append("```")
        lines.append("")
    return "\n".join(lines)


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})


def plots(tables: dict, out_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = []
    if tables.get("property"):
        rows = [r for r in property_table(tables["property"]) if r["attack_mean"] != ""]
        for (ds, pool) in sorted({(r["dataset"], r["pooling"]) for r in rows}):
            sub = [r for r in rows if r["dataset"] == ds and r["pooling"] == pool]
            props = sorted({r["property"] for r in sub})
            ks = sorted({r["k"] for r in sub}, key=float)
            fig, axes = plt.subplots(1, len(props), figsize=(3 * len(props), 3), squeeze=False)
            for ax, prop in zip(axes[0], props):
                x = np.arange(len(ks))
                for off, method in zip((-0.25, 0, 0.25), ("attack", "random", "summarize")):
                    vals = [next((r[f"{method}_mean"] for r in sub if r["property"] == prop and r["k"] == k), "")
                            for k in ks]
                    ax.bar(x + off, [v if v != "" else 0 for v in vals], 0.25, label=method)
                ax.set_xticks(x, [f"k={k}" for k in ks])
                ax.set_ylim(0, 1)
                ax.set_title(prop)
            axes[0][0].legend(fontsize=7)
            path = out_dir / f"property_{ds}_{pool}.png"
            _save(fig, path)
            plt.close(fig)
            out.append(path)
    if tables.get("subgraph"):
        grouped = _group(tables["subgraph"], ["dataset", "pooling", "sampler", "ratio", "method", "strategy"], "auc")
        labels = [" ".join(k) for k in grouped]
        means = [mean_std(v)[0] for v in grouped.values()]
        fig, ax = plt.subplots(figsize=(max(4, 0.4 * len(labels)), 4))
        ax.bar(np.arange(len(labels)), means)
        ax.set_xticks(np.arange(len(labels)), labels, rotation=90, fontsize=6)
        ax.set_ylim(0, 1)
        ax.set_ylabel("AUC")
        path = out_dir / "subgraph_auc.png"
        _save(fig, path)
        plt.close(fig)
        out.append(path)
    if tables.get("defense"):
        curves = defaultdict(list)
        for r in defense_table(tables["defense"]):
            curves[(r["dataset"], r["pooling"], r["metric"])].append((float(r["beta"]), r["mean"]))
        metrics = sorted({k[2] for k in curves})
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3), squeeze=False)
        for ax, metric in zip(axes[0], metrics):
            for (ds, pool, m), pts in curves.items():
                if m == metric:
                    xs, ys = zip(*pts)
                    ax.plot(xs, ys, marker="o", label=f"{ds}/{pool}")
            ax.set_xlabel("beta")
            ax.set_title(metric, fontsize=8)
        axes[0][0].legend(fontsize=6)
        path = out_dir / "defense.png"
        _save(fig, path)
        plt.close(fig)
        out.append(path)
    return out


def report(run_dir: str | Path, make_plots: bool = True) -> Path:
    """Write ``report/`` inside ``run_dir`` and return the summary path."""
    run_dir = Path(run_dir)
    tables = load_tables(run_dir)
    out = run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    if tables.get("property"):
        write_rows(out / "property_accuracy.csv", property_table(tables["property"]))
    if tables.get("subgraph"):
        write_rows(out / "subgraph_auc.csv", subgraph_table(tables["subgraph"]))
    if tables.get("reconstruct"):
        for name, rows in reconstruction_tables(tables["reconstruct"]).items():
            write_rows(out / f"{name}.csv", rows)
    if tables.get("defense"):
        write_rows(out / "defense.csv", defense_table(tables["defense"]))
    summary = out / "summary.md"
    summary.write_text(summary_text(tables))
    if make_plots:
        plots(tables, out)
    return summary
