"""Reports over finished runs, and the rectified-sine spectrum demo.

The report reader treats the run directory as the source of truth: it
re-derives every area metric from the stored curve CSVs and cross-checks the
stored checksums, so a report silently diverging from its inputs is loud
rather than possible.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .metrics import DegenerateCurveError, area_metrics, curve_from_csv

AUDIT_TOL = 1e-9


def load_run(run_dir) -> dict:
    run = Path(run_dir)
    doc = {}
    for name in ("manifest", "metrics", "reliability"):
        path = run / f"{name}.json"
        if not path.exists():
            raise FileNotFoundError(f"{path} missing; not a finished run directory")
        doc[name] = json.loads(path.read_text())
    return doc


def audit_run(run_dir) -> list[str]:
    """Recompute everything derivable from the raw curves; return discrepancies."""
    run = Path(run_dir)
    doc = load_run(run)
    problems = []
    for rel, digest in doc["manifest"]["files"].items():
        path = run / rel
        if not path.exists():
            problems.append(f"missing file: {rel}")
            continue
        actual = hashlib.sha256(path.read_bytes()).hexdigest()
        if actual != digest:
            problems.append(f"checksum mismatch: {rel}")
    for op_name, by_domain in doc["metrics"]["metrics"].items():
        for domain, by_method in by_domain.items():
            for mtag, stored in by_method.items():
                rel = Path("curves") / f"curve__{op_name}__{domain}__{mtag}.csv"
                if not (run / rel).exists():
                    problems.append(f"missing curve: {rel}")
                    continue
                curve = curve_from_csv(run / rel)
                try:
                    fresh = area_metrics(curve).as_dict()
                except DegenerateCurveError:
                    if not stored.get("degenerate"):
                        problems.append(f"{rel}: degenerate on recompute, "
                                        f"stored as valid")
                    continue
                if stored.get("degenerate"):
                    problems.append(f"{rel}: valid on recompute, stored degenerate")
                    continue
                for key in ("aoc", "abc", "auc"):
                    if abs(fresh[key] - stored[key]) > AUDIT_TOL:
                        problems.append(f"{rel}: {key} recomputed {fresh[key]!r} "
                                        f"!= stored {stored[key]!r}")
    return problems


def _fmt(v) -> str:
    return f"{v:+.4f}" if isinstance(v, float) else str(v)


def _best_by_abc(scored: list[tuple]) -> tuple | None:
    """Highest-ABC method; RANDOM only wins when nothing else is on the table."""
    informative = [s for s in scored if s[0] != "RANDOM"]
    pool = informative or scored
    return max(pool, key=lambda s: s[1]) if pool else None


def render_report(run_dir) -> str:
    run = Path(run_dir)
    doc = load_run(run)
    problems = audit_run(run)
    m = doc["metrics"]
    lines = ["aimeval report", "=" * 14, "",
             f"task: {m['task']}  train_acc: {m['train_acc']:.4f}  "
             f"test_acc: {m['test_acc']:.4f}  eval_samples: {m['eval_samples']}",
             ""]
    lines.append("audit: clean" if not problems else
                 "audit: " + "; ".join(problems))
    lines.append("")
    for line in m["compatibility"]:
        lines.append(f"compat  {line}")
    lines.append("")
    for op_name in sorted(m["metrics"]):
        for domain in sorted(m["metrics"][op_name]):
            by_method = m["metrics"][op_name][domain]
            lines.append(f"operator {op_name}  domain {domain}")
            lines.append(f"  {'method':<8} {'AOC':>9} {'ABC':>9} {'AUC':>9}")
            scored = []
            for mtag in by_method:
                vals = by_method[mtag]
                if vals.get("degenerate"):
                    lines.append(f"  {mtag:<8} {'degenerate curve':>29}")
                    continue
                lines.append(f"  {mtag:<8} {_fmt(vals['aoc']):>9} "
                             f"{_fmt(vals['abc']):>9} {_fmt(vals['auc']):>9}")
                scored.append((mtag, vals["abc"]))
            best = _best_by_abc(scored)
            if best:
                lines.append(f"  best by ABC: {best[0]} ({_fmt(best[1])})")
            rel = doc["reliability"].get(op_name, {}).get(domain, {})
            bias = rel.get("random_bias")
            if bias:
                lines.append(f"  random bias: mean={_fmt(bias['mean_abc'])} "
                             f"std={bias['std_abc']:.4f} "
                             f"n={bias['n_perm']} "
                             f"within 3-sigma band: "
                             f"{'yes' if bias['within_band'] else 'NO'}")
            cons = rel.get("consistency")
            if cons:
                flags = sum(cons["degenerate"])
                lines.append(f"  consistency: mean rho={_fmt(cons['mean_rho'])}"
                             + (f"  degenerate ratios: {flags}" if flags else ""))
            lines.append("")
    for op_name in sorted(m["metrics"]):
        by_domain = m["metrics"][op_name]
        if len(by_domain) < 2:
            continue
        rows: dict[str, list] = {}
        for dom_doc in by_domain.values():
            for mtag, vals in dom_doc.items():
                if not vals.get("degenerate"):
                    rows.setdefault(mtag, []).append(vals)
        lines.append(f"operator {op_name}  aggregate over "
                     f"{len(by_domain)} domains (mean +/- std)")
        lines.append(f"  {'method':<8} {'AOC':>17} {'ABC':>17} {'AUC':>17}")
        scored = []
        for mtag in sorted(rows):
            cell = []
            for key in ("aoc", "abc", "auc"):
                vs = np.array([v[key] for v in rows[mtag]])
                cell.append(f"{vs.mean():+.4f} +/- {vs.std():.4f}")
            lines.append(f"  {mtag:<8} {cell[0]:>17} {cell[1]:>17} {cell[2]:>17}")
            scored.append((mtag, float(np.mean([v["abc"] for v in rows[mtag]]))))
        best = _best_by_abc(scored)
        if best:
            lines.append(f"  best by mean ABC: {best[0]} ({_fmt(best[1])})")
        lines.append("")
    for op_name in sorted(doc["reliability"]):
        stab = doc["reliability"][op_name].get("stability")
        if stab:
            lines.append(f"operator {op_name}  cross-domain stability (std)")
            for mtag in sorted(stab):
                s = stab[mtag]
                lines.append(f"  {mtag:<8} aoc={s['aoc']:.4f} abc={s['abc']:.4f} "
                             f"auc={s['auc']:.4f}")
            lines.append("")
    return "\n".join(lines) + "\n"


def write_report(run_dir, out_dir=None) -> list[Path]:
    run = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run
    out.mkdir(parents=True, exist_ok=True)
    text = render_report(run)
    (out / "report.txt").write_text(text)
    doc = load_run(run)["metrics"]
    rows = ["operator,domain,method,aoc,abc,auc,degenerate"]
    for op_name in sorted(doc["metrics"]):
        for domain in sorted(doc["metrics"][op_name]):
            for mtag, vals in doc["metrics"][op_name][domain].items():
                if vals.get("degenerate"):
                    rows.append(f"{op_name},{domain},{mtag},,,,true")
                else:
                    rows.append(f"{op_name},{domain},{mtag},{vals['aoc']!r},"
                                f"{vals['abc']!r},{vals['auc']!r},false")
    (out / "report.csv").write_text("\n".join(rows) + "\n")
    return [out / "report.txt", out / "report.csv"]


# ---------------------------------------------------------------------------
# rectified-sine spectrum demo
# ---------------------------------------------------------------------------

def _svg_panel(freqs, amps, x0, title, fmax, peak) -> list[str]:
    width, height = 380.0, 260.0
    pad_l, pad_b, pad_t = 46.0, 36.0, 28.0
    keep = freqs <= fmax
    f, a = freqs[keep], amps[keep]
    amax = float(a.max()) or 1.0
    xs = pad_l + (width - pad_l - 10.0) * f / fmax
    ys = (height - pad_b) - (height - pad_b - pad_t) * a / amax
    parts = [f'<g transform="translate({x0:.1f},0)">',
             f'<text x="{pad_l:.1f}" y="18" font-size="13" '
             f'font-family="sans-serif">{title}</text>',
             f'<line x1="{pad_l:.1f}" y1="{height - pad_b:.1f}" '
             f'x2="{width - 8:.1f}" y2="{height - pad_b:.1f}" stroke="black"/>',
             f'<line x1="{pad_l:.1f}" y1="{pad_t:.1f}" x2="{pad_l:.1f}" '
             f'y2="{height - pad_b:.1f}" stroke="black"/>']
    for fx, fy in zip(xs, ys):
        parts.append(f'<line x1="{fx:.2f}" y1="{height - pad_b:.2f}" '
                     f'x2="{fx:.2f}" y2="{fy:.2f}" stroke="#2060c0" '
                     f'stroke-width="2"/>')
    for tick in range(0, int(fmax) + 1, 10):
        tx = pad_l + (width - pad_l - 10.0) * tick / fmax
        parts.append(f'<text x="{tx:.1f}" y="{height - pad_b + 16:.1f}" '
                     f'font-size="10" text-anchor="middle" '
                     f'font-family="sans-serif">{tick}</text>')
    parts.append(f'<text x="{(pad_l + width - 10) / 2:.1f}" '
                 f'y="{height - 6:.1f}" font-size="11" text-anchor="middle" '
                 f'font-family="sans-serif">frequency (Hz)</text>')
    px = pad_l + (width - pad_l - 10.0) * peak / fmax
    parts.append(f'<text x="{px:.1f}" y="{pad_t + 10:.1f}" font-size="11" '
                 f'text-anchor="middle" fill="#c03020" '
                 f'font-family="sans-serif">peak {peak:g} Hz</text>')
    parts.append("</g>")
    return parts


def demo_sign_distortion(out_dir, fs: int = 512, duration: float = 1.0,
                         freq: float = 10.0) -> dict:
    """Amplitude spectra of a sine and its rectification, side by side.

    Rectifying sin(2*pi*f*t) moves all the signal power off the f bin onto DC
    and the even harmonics, so a pipeline that drops sign information reports
    activity at 2f where the signal actually lives at f. Writes a two-panel
    SVG, a CSV of both spectra, and a CSV of both traces (one row per time
    sample); returns the located peaks.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = int(round(fs * duration))
    t = np.arange(n) / fs
    x = np.sin(2.0 * np.pi * freq * t)
    r = np.abs(x)
    fgrid = np.fft.rfftfreq(n, d=1.0 / fs)
    amp_x = np.abs(np.fft.rfft(x))
    amp_r = np.abs(np.fft.rfft(r))
    peak_x = float(fgrid[np.argmax(amp_x)])
    nz = fgrid > 0.5          # peak among nonzero bins; rectification is DC-heavy
    peak_r = float(fgrid[nz][np.argmax(amp_r[nz])])

    rows = ["freq_hz,amp_original,amp_rectified"]
    for f, ax_, ar_ in zip(fgrid, amp_x, amp_r):
        rows.append(f"{float(f)!r},{float(ax_)!r},{float(ar_)!r}")
    (out / "sign_distortion.csv").write_text("\n".join(rows) + "\n")

    trace = ["t,original,rectified"]
    for tv, xv, rv in zip(t, x, r):
        trace.append(f"{float(tv)!r},{float(xv)!r},{float(rv)!r}")
    (out / "sign_trace.csv").write_text("\n".join(trace) + "\n")

    fmax = max(60.0, 3.0 * freq)
    parts = ['<svg xmlns="http://www.w3.org/2000/svg" width="800" '
             'height="260" viewBox="0 0 800 260">',
             '<rect width="800" height="260" fill="white"/>']
    parts += _svg_panel(fgrid, amp_x, 10.0, f"sin({freq:g} Hz)", fmax, peak_x)
    parts += _svg_panel(fgrid, amp_r, 410.0, f"|sin({freq:g} Hz)|", fmax, peak_r)
    parts.append("</svg>")
    (out / "sign_distortion.svg").write_text("\n".join(parts) + "\n")

    return {"peak_original_hz": peak_x, "peak_rectified_hz": peak_r,
            "files": ["sign_distortion.csv", "sign_trace.csv",
                      "sign_distortion.svg"]}
