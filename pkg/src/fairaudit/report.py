"""Render audit bundles as Markdown summaries, CSV flattenings and SVG
bar charts (per-class bars grouped within subgroup, CI whiskers over seeds)."""

from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Optional, Sequence

from .records import CLASSES

CLASS_COLORS = {"control": "#4878a8", "mci": "#e49444", "ad": "#d1605e"}


def _fmt(x: Optional[float], digits: int = 4) -> str:
    if x is None:
        return "n/a"
    return f"{x:.{digits}f}"


def audit_csv(bundle: dict) -> str:
    """Flatten per-seed rate tables into spreadsheet-ready CSV."""
    out = io.StringIO()
    out.write("seed,attribute,class,subgroup,tp,fn,fp,tn,tpr,fpr\n")
    for entry in bundle["per_seed"]:
        attr = bundle["attribute"]
        for key, cell in entry["rate_table"]["cells"].items():
            cls, sub = key.split("|")
            tpr = "" if cell["tpr"] is None else repr(cell["tpr"])
            fpr = "" if cell["fpr"] is None else repr(cell["fpr"])
            out.write(f"{entry['seed']},{attr},{cls},{sub},{cell['tp']},{cell['fn']},"
                      f"{cell['fp']},{cell['tn']},{tpr},{fpr}\n")
    return out.getvalue()


def audit_markdown(bundle: dict) -> str:
    """Human-readable audit summary."""
    lines = [f"# Fairness audit: attribute `{bundle['attribute']}`", ""]
    lines.append(f"Seeds: {', '.join(str(s) for s in bundle['seeds'])}")
    lines.append("")
    agg = bundle.get("aggregate") or {}
    if agg:
        lines.append("## Seed aggregates (mean +/- 95% CI half-width)")
        lines.append("")
        lines.append("| metric | mean | ci95 |")
        lines.append("|---|---|---|")
        for name, stats in agg.items():
            lines.append(f"| {name} | {_fmt(stats['mean'])} | {_fmt(stats['ci95_half_width'])} |")
        lines.append("")
    for entry in bundle["per_seed"]:
        gap = entry["gap_report"]
        lines.append(f"## Seed {entry['seed']}")
        lines.append("")
        lines.append(f"- equal opportunity gap (macro TPR spread): {_fmt(gap['eoo_gap'])}")
        lines.append(f"- equalized odds gap (TPR + FPR spread): {_fmt(gap['eo_gap'])}")
        perf = entry.get("performance") or {}
        if perf:
            parts = [f"{k}={_fmt(v)}" for k, v in perf.items() if not isinstance(v, dict)]
            if parts:
                lines.append(f"- performance: {', '.join(parts)}")
        lines.append("")
        lines.append("| subgroup | macro TPR | macro FPR |")
        lines.append("|---|---|---|")
        for sub in sorted(gap["macro_tpr"]):
            lines.append(f"| {sub} | {_fmt(gap['macro_tpr'][sub])} | "
                         f"{_fmt(gap['macro_fpr'].get(sub))} |")
        lines.append("")
    return "\n".join(lines) + "\n"


def _collect_rate_stats(bundle: dict, rate: str) -> dict[tuple[str, str], tuple[float, Optional[float]]]:
    """Across seeds: mean and CI half-width of one rate per (class, subgroup)."""
    from .metrics import seed_aggregate
    values: dict[tuple[str, str], list[float]] = {}
    for entry in bundle["per_seed"]:
        for key, cell in entry["rate_table"]["cells"].items():
            if cell[rate] is None:
                continue
            cls, sub = key.split("|")
            values.setdefault((cls, sub), []).append(cell[rate])
    stats = {}
    for key, vals in values.items():
        if len(vals) >= 2:
            agg = seed_aggregate(vals)
            stats[key] = (agg.mean, agg.ci95_half_width)
        else:
            stats[key] = (vals[0], None)
    return stats


def rate_bar_svg(bundle: dict, rate: str = "tpr", title: Optional[str] = None,
                 deterministic: bool = True) -> str:
    """Grouped bar chart of one rate: subgroups along the x axis, one bar
    per class inside each subgroup, whiskers showing 95% CIs over seeds."""
    stats = _collect_rate_stats(bundle, rate)
    subgroups = sorted({sub for _, sub in stats})
    class_names = [c.value for c in CLASSES]
    bar_w, gap_in, gap_out = 26, 6, 40
    group_w = len(class_names) * bar_w + (len(class_names) - 1) * gap_in
    margin_l, margin_b, margin_t = 60, 56, 40
    plot_h = 220
    width = margin_l + len(subgroups) * (group_w + gap_out) + 20
    height = margin_t + plot_h + margin_b
    title = title or f"{rate.upper()} by class and subgroup ({bundle['attribute']})"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    if not deterministic:
        import datetime
        stamp = datetime.datetime.now().isoformat(timespec="seconds")
        parts.append(f'<!-- generated {stamp} -->')
    # axes and gridlines
    x0, y0 = margin_l, margin_t + plot_h
    parts.append(f'<line x1="{x0}" y1="{margin_t}" x2="{x0}" y2="{y0}" stroke="#333"/>')
    parts.append(f'<line x1="{x0}" y1="{y0}" x2="{width - 10}" y2="{y0}" stroke="#333"/>')
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y0 - tick * plot_h
        parts.append(f'<line x1="{x0 - 4}" y1="{y:.1f}" x2="{width - 10}" y2="{y:.1f}" '
                     f'stroke="#ddd" stroke-width="0.5"/>')
        parts.append(f'<text x="{x0 - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{tick:.2f}</text>')
    for gi, sub in enumerate(subgroups):
        gx = x0 + gap_out / 2 + gi * (group_w + gap_out)
        for ci, cls in enumerate(class_names):
            stat = stats.get((cls, sub))
            bx = gx + ci * (bar_w + gap_in)
            if stat is None:
                parts.append(f'<text x="{bx + bar_w / 2:.1f}" y="{y0 - 6:.1f}" text-anchor="middle" '
                             f'font-family="sans-serif" font-size="9" fill="#999">n/a</text>')
                continue
            mean, hw = stat
            bh = mean * plot_h
            parts.append(f'<rect x="{bx:.1f}" y="{y0 - bh:.1f}" width="{bar_w}" height="{bh:.1f}" '
                         f'fill="{CLASS_COLORS[cls]}"/>')
            if hw is not None and hw > 0:
                cx = bx + bar_w / 2
                top = y0 - min(1.0, mean + hw) * plot_h
                bot = y0 - max(0.0, mean - hw) * plot_h
                parts.append(f'<line x1="{cx:.1f}" y1="{top:.1f}" x2="{cx:.1f}" y2="{bot:.1f}" '
                             f'stroke="#222" stroke-width="1.5"/>')
                for yy in (top, bot):
                    parts.append(f'<line x1="{cx - 5:.1f}" y1="{yy:.1f}" x2="{cx + 5:.1f}" '
                                 f'y2="{yy:.1f}" stroke="#222" stroke-width="1.5"/>')
        parts.append(f'<text x="{gx + group_w / 2:.1f}" y="{y0 + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{sub}</text>')
    # legend
    lx = margin_l
    ly = height - 18
    for cls in class_names:
        parts.append(f'<rect x="{lx}" y="{ly - 10}" width="12" height="12" fill="{CLASS_COLORS[cls]}"/>')
        parts.append(f'<text x="{lx + 16}" y="{ly}" font-family="sans-serif" font-size="11">{cls}</text>')
        lx += 16 + 8 * len(cls) + 24
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def simulate_markdown(result: dict) -> str:
    """Comparative summary of baseline vs mitigated runs."""
    lines = [f"# Bias simulation: scenario `{result['scenario']['name']}`", ""]
    lines.append(f"Attribute: `{result['attribute']}`; model: {result['model_kind']}; "
                 f"seeds: {', '.join(str(s) for s in result['seeds'])}")
    if result.get("biased_subgroup"):
        lines.append(f"Biased subgroup: `{result['biased_subgroup']}`")
    lines.append("")
    lines.append("| seed | baseline EOO gap | reweighted EOO gap | CEO EOO gap | "
                 "val TPR dev pre | post |")
    lines.append("|---|---|---|---|---|---|")
    for e in result["per_seed"]:
        lines.append("| {seed} | {b:.4f} | {r:.4f} | {c:.4f} | {pre:.4f} | {post:.4f} |".format(
            seed=e["seed"],
            b=e["baseline"]["test_gap"]["eoo_gap"],
            r=e["reweighted"]["test_gap"]["eoo_gap"],
            c=e["ceo"]["test_gap"]["eoo_gap"],
            pre=e["ceo"]["val_tpr_deviation_sum_pre"],
            post=e["ceo"]["val_tpr_deviation_sum_post"]))
    lines.append("")
    agg = result.get("aggregate") or {}
    hits_r = agg.get("reweighting_reduced_eoo_gap_in")
    hits_c = agg.get("ceo_reduced_val_tpr_deviation_in")
    n = len(result["per_seed"])
    if hits_r is not None:
        lines.append(f"- frequency reweighting reduced the EOO gap in {hits_r}/{n} seeds")
    if hits_c is not None:
        lines.append(f"- CEO reduced the validation TPR deviation sum in {hits_c}/{n} seeds")
    for key in ("baseline_eoo_gap", "reweighted_eoo_gap", "ceo_eoo_gap"):
        if key in agg:
            s = agg[key]
            lines.append(f"- {key}: {s['mean']:.4f} +/- {s['ci95_half_width']:.4f}")
    lines.append("")
    return "\n".join(lines) + "\n"


def load_bundle(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
