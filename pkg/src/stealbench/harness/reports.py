"""Report files: curves.csv, summary.json, gridsearch.csv.

All writes go to a temporary file in the target directory and are renamed
into place, so a reader never sees a half-written report. Wall-clock timings
live in ``timing.json`` so that ``summary.json`` stays byte-identical across
runs of the same spec.
"""

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from .. import __version__
from ..metrics import MetricsReport

CURVE_COLUMNS = ("attack_name", "queries", "agreement", "cosine", "mae", "kl", "accuracy")
GRID_COLUMNS = ("kind", "beta", "gamma", "rho_width", "f_freq", "protected_agreement", "cosine",
                "mae", "kl", "protected_accuracy", "stolen_agreement", "drop", "selected")


def _num(x):
    # repr gives the shortest round-tripping form and never uses locale separators
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return repr(x)
    return str(x)


def preflight(outdir):
    """Create ``outdir`` and prove it is writable; raises OSError otherwise."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fd, probe = tempfile.mkstemp(dir=outdir, prefix=".probe-")
    os.close(fd)
    os.unlink(probe)
    return outdir


def atomic_write(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_num(row[c]) for c in columns])
    return buf.getvalue()


def curves_rows(result):
    rows = []
    for name, attack in result.curves.items():
        for point in attack.curve:
            rows.append({"attack_name": name, "queries": point.queries, **point.report.to_dict()})
    return rows


def _defense_dict(defense):
    return defense.model_dump(mode="json")


def summary_dict(result):
    attacks = {}
    for cfg in result.spec.attack_configs():
        res = result.curves[cfg.name]
        attacks[cfg.name] = {
            "config": cfg.model_dump(mode="json", by_alias=True),
            "final": res.final.to_dict(),
            "queries_used": res.ledger.used,
            "query_tallies": res.ledger.to_dict()["tallies"],
            "info": res.info,
        }
    out = {
        "version": __version__,
        "spec": result.spec.to_json_dict(include_out_dir=False),
        "fingerprint": result.spec.fingerprint(),
        "seeds": result.seeds,
        "dataset": result.dataset_info,
        "chosen_defense": _defense_dict(result.defense),
        "base_accuracy": result.base_accuracy,
        "protected_vs_base": result.protected_report.to_dict(),
        "attacks": attacks,
    }
    if result.inversion:
        out["inversion"] = result.inversion
    if result.grid is not None:
        out["grid_search"] = {
            "reference_agreement": result.grid.reference_agreement,
            "met_threshold": result.grid.met_threshold,
            "n_points": len(result.grid.rows),
        }
    if result.strength:
        out["strength_sweep"] = result.strength
    return out


def emit_reports(result, outdir):
    """Write curves.csv, summary.json, timing.json and (with a grid) gridsearch.csv."""
    outdir = preflight(outdir)
    written = []
    atomic_write(outdir / "curves.csv", _csv_text(CURVE_COLUMNS, curves_rows(result)))
    written.append(outdir / "curves.csv")
    if result.grid is not None:
        atomic_write(outdir / "gridsearch.csv", _csv_text(GRID_COLUMNS, result.grid.rows))
        written.append(outdir / "gridsearch.csv")
    atomic_write(outdir / "summary.json", json.dumps(summary_dict(result), indent=2, sort_keys=True) + "\n")
    written.append(outdir / "summary.json")
    atomic_write(outdir / "timing.json", json.dumps(result.timings, indent=2, sort_keys=True) + "\n")
    written.append(outdir / "timing.json")
    return written


def write_failure(outdir, stage, message):
    """Mark a directory as holding partial outputs of a failed run."""
    try:
        outdir = preflight(outdir)
        atomic_write(outdir / "FAILED.json",
                     json.dumps({"stage": stage, "error": message, "partial": True}, indent=2) + "\n")
    except OSError:
        pass


def read_curves(path):
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({
                "attack_name": row["attack_name"],
                "queries": int(row["queries"]),
                **{k: float(row[k]) for k in CURVE_COLUMNS[2:]},
            })
    return rows


def read_results(result_dir):
    """Load a result directory written by :func:`emit_reports`."""
    result_dir = Path(result_dir)
    summary_path = result_dir / "summary.json"
    if not summary_path.is_file():
        raise FileNotFoundError(f"no summary.json in {result_dir}")
    summary = json.loads(summary_path.read_text())
    curves = read_curves(result_dir / "curves.csv") if (result_dir / "curves.csv").is_file() else []
    return summary, curves


def format_report(summary, curves):
    lines = [f"experiment: {summary['spec'].get('name')} (seed {summary['spec'].get('seed')})"]
    d = summary["chosen_defense"]
    lines.append(f"defense: {d['kind']} beta={d['beta']} gamma={d['gamma']} rank_clamp={d['rank_clamp']}")
    lines.append(f"base accuracy: {summary['base_accuracy']:.4f}")
    pv = MetricsReport.from_dict(summary["protected_vs_base"])
    lines.append(f"protected vs base: agreement={pv.agreement:.4f} cosine={pv.cosine:.4f} "
                 f"mae={pv.mae:.4f} kl={pv.kl:.4f} accuracy={pv.accuracy:.4f}")
    lines.append("")
    lines.append(f"{'attack':<24}{'queries':>9}{'agree':>9}{'cosine':>9}{'mae':>9}{'kl':>9}{'acc':>9}")
    for r in curves:
        lines.append(f"{r['attack_name']:<24}{r['queries']:>9d}{r['agreement']:>9.4f}{r['cosine']:>9.4f}"
                     f"{r['mae']:>9.4f}{r['kl']:>9.4f}{r['accuracy']:>9.4f}")
    if "inversion" in summary:
        lines.append("")
        inv = summary["inversion"]
        lines.append(f"inversion ({inv['kl_orientation']}): protected baseline {inv['protected_heldout_kl']:.4f}")
        for kind in ("linear", "mlp"):
            if kind in inv:
                lines.append(f"  {kind}: held-out KL {inv[kind]['heldout_kl']:.4f}")
    return "\n".join(lines)
