"""Plain-text tables and static charts built from report documents."""

from __future__ import annotations

import json
from pathlib import Path

from .core import VIEWS
from .ensemble import Metrics

MODEL_TITLES = {"gnn2": "GNN (2-layer head)", "nn1": "1-layer NN", "nn2": "2-layer NN"}
METRIC_TITLES = {
    "overall_accuracy": "Overall Acc.",
    "improver_accuracy": "Improver Acc.",
    "nonimprover_accuracy": "NonImprover Acc.",
    "roc_auc": "AUC",
    "f1": "F1",
}


def _pct(est: dict) -> str:
    return f"{100 * est['point']:.1f} ({100 * est['lower']:.1f} - {100 * est['upper']:.1f})%"


def _grid(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]) + "\n"


def model_table(report: dict) -> str:
    """Metric estimates with 95% intervals: the ensemble first, then every per-view model."""
    header = ["Model"] + list(METRIC_TITLES.values())
    rows = []
    models = report["models"]
    if "gnn2" in models and "ensemble" in models["gnn2"]:
        ens = models["gnn2"]["ensemble"]
        rows.append(["GNN ensemble (6-view vote)"] + [_pct(ens[m]) for m in Metrics.NAMES])
    for kind, block in models.items():
        for view in VIEWS:
            est = block["per_view"][view.value]
            rows.append([f"{MODEL_TITLES.get(kind, kind)} / {view.value}"] + [_pct(est[m]) for m in Metrics.NAMES])
    return "Classification metrics (mean over repeats, 95% CI)\n" + _grid(header, rows)


def graph_table(graph: dict) -> str:
    header = ["Graph", "Avg. Shortest Path", "Local Eff.", "Global Eff.", "Avg. Clustering", "Density"]
    names = {"similarity": "Subject similarity", "random": "Random", "lattice": "Lattice"}
    rows = []
    for key in ("similarity", "random", "lattice"):
        if key not in graph:
            continue
        g = graph[key]
        asp = "undefined" if g["average_shortest_path"] is None else f"{g['average_shortest_path']:.3g}"
        rows.append([names[key], asp] + [f"{g[m]:.3g}" for m in
                                         ("local_efficiency", "global_efficiency", "average_clustering", "density")])
    return "Graph structure\n" + _grid(header, rows)


def audit_table(audit: dict) -> str:
    views = list(audit["views"])
    header = [""] + views
    rows = [
        ["Pre-propagation"] + [f"{100 * audit['views'][v]['pre_rate']:.2f}%" for v in views],
        ["Post-propagation"] + [f"{100 * audit['views'][v]['post_rate']:.2f}%" for v in views],
        ["SD (Pre)"] + [f"{100 * audit['views'][v]['pre_sd']:.3g}%" for v in views],
        ["SD (Post)"] + [f"{100 * audit['views'][v]['post_sd']:.3g}%" for v in views],
        ["Paired t"] + [_num(audit["views"][v]["t_statistic"]) for v in views],
        ["p-value"] + [_num(audit["views"][v]["p_value"]) for v in views],
        ["Pearson r"] + [_num(audit["views"][v]["pearson_r"]) for v in views],
    ]
    return f"Triad violations ({audit['rule']} rule)\n" + _grid(header, rows)


def _num(x) -> str:
    return "n/a" if x is None else f"{x:.3g}"


def write_tables(report: dict, out_dir: Path) -> list[Path]:
    written = []
    parts = [("table_models.txt", "models", model_table),
             ("table_graph.txt", "graph", graph_table),
             ("table_audit.txt", "audit", audit_table)]
    for name, key, fn in parts:
        if key not in report:
            continue
        p = out_dir / name
        p.write_text(fn(report) if key == "models" else fn(report[key]))
        written.append(p)
    return written


def _accuracy_rows(report: dict) -> list[dict]:
    rows = []
    for kind, block in report.get("models", {}).items():
        for view in VIEWS:
            est = block["per_view"][view.value]["overall_accuracy"]
            rows.append({"model": MODEL_TITLES.get(kind, kind), "view": view.value, **est})
        if "ensemble" in block:
            rows.append({"model": "GNN ensemble", "view": "vote", **block["ensemble"]["overall_accuracy"]})
    return rows


def _audit_rows(audit: dict) -> list[dict]:
    rows = []
    for view, a in audit["views"].items():
        rows.append({"view": view, "stage": "pre", "rate": a["pre_rate"]})
        rows.append({"view": view, "stage": "post", "rate": a["post_rate"]})
    return rows


def vega_specs(report: dict) -> dict[str, dict]:
    """Vega-Lite chart specs keyed by file stem."""
    specs = {}
    if report.get("models"):
        specs["accuracy"] = {
            "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
            "data": {"values": _accuracy_rows(report)},
            "mark": "bar",
            "encoding": {
                "x": {"field": "view", "type": "nominal"},
                "xOffset": {"field": "model"},
                "y": {"field": "point", "type": "quantitative", "title": "overall accuracy"},
                "color": {"field": "model", "type": "nominal"},
            },
        }
    if "audit" in report:
        specs["triads"] = {
            "$schema": "https://vega.github.io/schema/vega-lite/v5.json",
            "data": {"values": _audit_rows(report["audit"])},
            "mark": "bar",
            "encoding": {
                "x": {"field": "view", "type": "nominal"},
                "xOffset": {"field": "stage"},
                "y": {"field": "rate", "type": "quantitative", "title": "triad violation rate"},
                "color": {"field": "stage", "type": "nominal"},
            },
        }
    return specs


def write_plots(report: dict, out_dir: Path) -> list[Path]:
    """Vega-Lite JSON always; PNG renderings too when matplotlib is importable."""
    written = []
    specs = vega_specs(report)
    for stem, spec in specs.items():
        p = out_dir / f"{stem}.vl.json"
        p.write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n")
        written.append(p)
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return written
    for stem, spec in specs.items():
        rows = spec["data"]["values"]
        group, value = ("model", "point") if stem == "accuracy" else ("stage", "rate")
        xs = list(dict.fromkeys(r["view"] for r in rows))
        groups = list(dict.fromkeys(r[group] for r in rows))
        fig, ax = plt.subplots(figsize=(8, 4))
        width = 0.8 / len(groups)
        for gi, g in enumerate(groups):
            pts = [(xs.index(r["view"]), r[value]) for r in rows if r[group] == g]
            ax.bar([x + gi * width for x, _ in pts], [v for _, v in pts], width, label=g)
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(xs))], xs)
        ax.set_ylabel(spec["encoding"]["y"]["title"])
        ax.legend(fontsize=8)
        fig.tight_layout()
        p = out_dir / f"{stem}.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)
    return written
