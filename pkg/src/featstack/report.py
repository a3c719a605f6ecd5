"""Rendering of :class:`~featstack.evaluation.EvalReport` as text tables or CSV.

Every number is formatted once and the same strings feed both output formats.

Delimited files (comma-separated, one header line):

``accuracy.csv``
    ``group,model,hidden_layers,mse,mse_se,mae,mae_se,n_test[,fit_time_s]``
``correlation.csv``
    ``learner,<learner 1>,...,<learner k>``; undefined entries are ``nan``
``weights.csv``
    ``model,learner,min,q25,median,q75,max``
"""

import math
import os

from .evaluation import QUANTILE_KEYS

GROUP_LABELS = {"stacked": "Stacked", "direct": "Direct", "base": "Base"}
DISPLAY_NAMES = {
    "unns": "UNNS", "unns_phi": "UNNS + phi", "cnns": "CNNS", "cnns_phi": "CNNS + phi",
    "breiman": "Breiman's stacking", "meta_nn": "Meta-regression neural net",
    "direct_nn": "Direct neural net",
}


def _num(x):
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def _corr(x):
    return "nan" if math.isnan(x) else f"{x:.2f}"


def _accuracy_rows(report, include_timings):
    header = ["group", "model", "hidden_layers", "mse", "mse_se", "mae", "mae_se", "n_test"]
    if include_timings:
        header.append("fit_time_s")
    rows = []
    for m in report.models:
        row = [m.group, m.name, "" if m.hidden_layers is None else str(m.hidden_layers),
               _num(m.mse.value), _num(m.mse.se), _num(m.mae.value), _num(m.mae.se),
               str(m.mse.n)]
        if include_timings:
            row.append("" if m.fit_time is None else f"{m.fit_time:.3f}")
        rows.append(row)
    return header, rows


def _correlation_rows(report):
    names = list(report.learner_names)
    rows = []
    if report.error_correlation is not None:
        for name, line in zip(names, report.error_correlation):
            rows.append([name] + [_corr(float(v)) for v in line])
    return ["learner"] + names, rows


def _weight_rows(report):
    rows = []
    for model, summary in report.weight_quantiles.items():
        for entry in summary:
            rows.append([model, entry["name"]] + [_num(entry[k]) for k in QUANTILE_KEYS])
    return ["model", "learner"] + list(QUANTILE_KEYS), rows


def _delimited(header, rows):
    lines = [",".join(header)] + [",".join(r) for r in rows]
    return "\n".join(lines) + "\n"


def _table(header, rows, title):
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

    def line(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

    out = [title, sep, line(header), sep] + [line(r) for r in rows] + [sep]
    return "\n".join(out) + "\n"


def _accuracy_table(report, include_timings):
    header, rows = _accuracy_rows(report, include_timings)
    pretty = ["Type", "Model", "MSE", "MAE"] + (["Total fit time (s)"] if include_timings else [])
    table_rows = []
    for m, r in zip(report.models, rows):
        label = DISPLAY_NAMES.get(m.name, m.name)
        if r[2]:
            label += f" ({r[2]} layer{'s' if r[2] != '1' else ''})"
        cells = [GROUP_LABELS.get(m.group, m.group), label,
                 f"{r[3]} (± {r[4]})", f"{r[5]} (± {r[6]})"]
        if include_timings:
            cells.append(r[8] if r[8] else "-")
        table_rows.append(cells)
    return _table(pretty, table_rows,
                  f"Model accuracy on the test set (n = {rows[0][7] if rows else 0}; ± is 1 SE)")


def render_report(report, fmt="table", include_timings=True):
    """Return ``{filename: text}`` for the accuracy, correlation and weight tables."""
    if fmt == "delimited":
        h, r = _accuracy_rows(report, include_timings)
        files = {"accuracy.csv": _delimited(h, r)}
        h, r = _correlation_rows(report)
        files["correlation.csv"] = _delimited(h, r)
        h, r = _weight_rows(report)
        files["weights.csv"] = _delimited(h, r)
        return files
    if fmt != "table":
        raise ValueError(f"unknown report format {fmt!r}; use 'table' or 'delimited'")
    text = _accuracy_table(report, include_timings) + "\n"
    h, r = _correlation_rows(report)
    text += _table(h, r, "Pearson correlation between base learner errors "
                         "(out-of-fold, training part)") + "\n"
    h, r = _weight_rows(report)
    text += _table(h, r, "Weight distribution on the test set")
    if report.redundancy_pairs:
        names = report.learner_names
        text += "\nRedundant learner pairs:\n"
        for i, j, rho in report.redundancy_pairs:
            text += f"  {names[i]} ~ {names[j]}: rho = {rho:.4f}\n"
    return {"report.txt": text}


def emit_report(report, fmt="table", out_dir=None, include_timings=True):
    """Render ``report`` and, when ``out_dir`` is given, write the files there."""
    files = render_report(report, fmt, include_timings)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name, text in files.items():
            with open(os.path.join(out_dir, name), "w") as fh:
                fh.write(text)
    return files
