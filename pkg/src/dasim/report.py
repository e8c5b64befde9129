"""Output writers: versioned CSV tables, plot scripts and optional PNG figures."""

import math
import os

import numpy as np

SERIES_VERSION = "# dasim series v1"
SUMMARY_VERSION = "# dasim summary v1"


def fmt(x):
    """Reals at 17 significant digits; integers and strings verbatim."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    if x is None:
        return ""
    s = str(x)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_series(path, columns, rows, int_columns=()):
    ints = set(int_columns)
    idx = [i for i, c in enumerate(columns) if c in ints]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SERIES_VERSION + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            cells = [fmt(v) for v in row]
            for i in idx:
                cells[i] = str(int(row[i]))
            fh.write(",".join(cells) + "\n")


def write_summary(path, items):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SUMMARY_VERSION + "\n")
        fh.write("key,value\n")
        for k, v in items:
            fh.write(f"{k},{fmt(v)}\n")


def read_series(path):
    """(columns, float array) from a series file."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln and not ln.startswith("#")]
    cols = lines[0].split(",")
    data = np.array([[float(c) for c in ln.split(",")] for ln in lines[1:]])
    return cols, data.reshape(-1, len(cols))


def read_summary(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln and not ln.startswith("#")]
    for ln in lines[1:]:
        k, v = ln.split(",", 1)
        out[k] = v
    return out


def write_plot_script(path, name, columns, groups):
    """Gnuplot-style script; `groups` maps a panel title to the y columns it plots."""
    csv = f"{name}_series.csv"
    lines = [
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        "set terminal pngcairo size 900,600",
    ]
    for k, (title, ycols) in enumerate(groups):
        lines.append(f"set output '{name}_{k}.png'")
        lines.append(f"set title '{title}'")
        lines.append(f"set xlabel '{columns[0]}'")
        parts = [f"'{csv}' using 1:{columns.index(c) + 1} with lines title '{c}'" for c in ycols]
        lines.append("plot " + ", \\\n     ".join(parts))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def render_figures(outdir, name, columns, rows, groups):
    """PNG rendering through matplotlib's non-interactive backend; returns written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = np.asarray(rows, dtype=float)
    paths = []
    for k, (title, ycols) in enumerate(groups):
        fig, ax = plt.subplots(figsize=(9, 6))
        x = data[:, 0]
        for c in ycols:
            ax.plot(x, data[:, columns.index(c)], label=c, lw=0.8)
        ax.set_title(title)
        ax.set_xlabel(columns[0])
        ax.legend(loc="best", fontsize="small")
        p = os.path.join(outdir, f"{name}_{k}.png")
        fig.savefig(p, dpi=100)
        plt.close(fig)
        paths.append(p)
    return paths


def write_error_record(path, exc, exit_code):
    msg = str(exc).replace("\n", " ")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"error.type = {type(exc).__name__}\n")
        fh.write(f"error.exit_code = {exit_code}\n")
        fh.write(f"error.message = {msg}\n")
