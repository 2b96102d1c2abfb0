"""Tables (JSON/CSV/markdown) and plot-data CSVs from a BenchmarkReport.

CSV columns
-----------
``table.csv``            method, split, fraction, auc_mean, auc_stderr, acc_mean, acc_stderr
``referral_curves.csv``  method, split, fraction, auc_mean, auc_stderr, acc_mean, acc_stderr,
                         oracle_acc_mean, oracle_acc_stderr
``roc_curves.csv``       method, split, retention, seed_index, fpr, tpr,
                         nhs_sensitivity, nhs_specificity

Values are fractions in [0, 1] written with ``repr`` precision; missing
values are empty cells. The markdown table shows percentages as
``mean±stderr`` with one decimal.
"""

import csv
import math
from pathlib import Path

from .bench import EVAL_SPLITS, write_report_json
from .metrics import NHS_SENSITIVITY, NHS_SPECIFICITY, ReferralCurve, _fraction_index

METHOD_LABELS = {
    "mc_dropout": "MC Dropout",
    "mfvi": "Mean-field VI",
    "deep_ensemble": "Deep Ensembles",
    "deterministic": "Deterministic",
    "ensemble_mc_dropout": "Ensemble MC Dropout",
    "random": "Random",
}
SPLIT_LABELS = {"test": "In-distribution test", "shifted_test": "Shifted test (distribution shift)"}
TABLE_COLUMNS = ("method", "split", "fraction", "auc_mean", "auc_stderr", "acc_mean", "acc_stderr")
FORMATS = ("json", "csv", "markdown")


def _num(v):
    return "" if v is None else repr(float(v))


def _parse(v):
    return None if v == "" else float(v)


def format_cell(mean, stderr):
    """``87.8±1.1`` from fractions; stderr omitted when undefined."""
    if mean is None or (isinstance(mean, float) and math.isnan(mean)):
        return "n/a"
    if stderr is None:
        return f"{100 * mean:.1f}"
    return f"{100 * mean:.1f}±{100 * stderr:.1f}"


def _curve_rows(report, fractions=None):
    for method in report.results:
        for split in EVAL_SPLITS:
            cell = report.results[method].get(split)
            if cell is None or cell.get("status") != "ok":
                continue
            c = ReferralCurve.from_dict(cell["curve"])
            grid = c.fractions if fractions is None else fractions
            for f in grid:
                i = _fraction_index(c.fractions, f)
                yield method, split, c, i


def _stderr(values, i):
    return None if values is None else values[i]


def markdown_table(report, fractions=None):
    fractions = tuple(fractions or report.config.get("table_fractions", (0.5, 0.7, 1.0)))
    head = ["Method"]
    for f in fractions:
        pct = f"{100 * f:g}%"
        head += [f"{pct} AUC", f"{pct} Accuracy"]
    lines = []
    for split in EVAL_SPLITS:
        if not any(split in r for r in report.results.values()):
            continue
        lines += [f"### {SPLIT_LABELS.get(split, split)}", "",
                  "| " + " | ".join(head) + " |",
                  "|" + "|".join(["---"] + [":---:"] * (len(head) - 1)) + "|"]
        for method, cells in report.results.items():
            cell = cells.get(split)
            row = [METHOD_LABELS.get(method, method)]
            if cell is None or cell.get("status") != "ok":
                row += ["failed"] * (2 * len(fractions))
            else:
                c = ReferralCurve.from_dict(cell["curve"])
                for f in fractions:
                    i = _fraction_index(c.fractions, f)
                    row.append(format_cell(c.auc[i], _stderr(c.auc_stderr, i)))
                    row.append(format_cell(c.accuracy[i], _stderr(c.accuracy_stderr, i)))
            lines.append("| " + " | ".join(row) + " |")
        lines.append("")
    return "\n".join(lines)


def write_table_csv(report, path, fractions=None):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TABLE_COLUMNS)
        for method, split, c, i in _curve_rows(report, fractions):
            w.writerow([method, split, repr(c.fractions[i]), _num(c.auc[i]),
                        _num(_stderr(c.auc_stderr, i)), _num(c.accuracy[i]),
                        _num(_stderr(c.accuracy_stderr, i))])
    return path


def read_table_csv(path):
    """``{(method, split, fraction): {column: value}}`` from a table CSV."""
    out = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], row["split"], float(row["fraction"]))
            out[key] = {k: _parse(row[k]) for k in TABLE_COLUMNS[3:]}
    return out


def emit_report(report, out_dir, formats=FORMATS, fractions=None):
    """Write ``report.json``, ``table.csv`` and/or ``table.md``; returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    paths = []
    if "json" in formats:
        paths.append(write_report_json(report, out_dir / "report.json"))
    if "csv" in formats:
        paths.append(write_table_csv(report, out_dir / "table.csv"))
    if "markdown" in formats:
        p = out_dir / "table.md"
        p.write_text(markdown_table(report, fractions))
        paths.append(p)
    return paths


def emit_plot_data(report, out_dir):
    """Referral-curve and ROC point files for plotting tools."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves_path = out_dir / "referral_curves.csv"
    with curves_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "split", "fraction", "auc_mean", "auc_stderr", "acc_mean",
                    "acc_stderr", "oracle_acc_mean", "oracle_acc_stderr"])
        for method, split, c, i in _curve_rows(report):
            o = ReferralCurve.from_dict(report.results[method][split]["oracle"])
            w.writerow([method, split, repr(c.fractions[i]), _num(c.auc[i]),
                        _num(_stderr(c.auc_stderr, i)), _num(c.accuracy[i]),
                        _num(_stderr(c.accuracy_stderr, i)), _num(o.accuracy[i]),
                        _num(_stderr(o.accuracy_stderr, i))])

    roc_path = out_dir / "roc_curves.csv"
    with roc_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "split", "retention", "seed_index", "fpr", "tpr",
                    "nhs_sensitivity", "nhs_specificity"])
        for method, cells in report.results.items():
            for split in EVAL_SPLITS:
                cell = cells.get(split)
                if cell is None or cell.get("status") != "ok":
                    continue
                for seed_index, rocs in zip(cell["seed_indices"], cell["roc"]):
                    for retention, roc in sorted(rocs.items(), key=lambda kv: float(kv[0])):
                        if roc is None:
                            continue
                        for x, y in zip(roc["fpr"], roc["tpr"]):
                            w.writerow([method, split, retention, seed_index, repr(x), repr(y),
                                        NHS_SENSITIVITY, NHS_SPECIFICITY])
    return [curves_path, roc_path]
