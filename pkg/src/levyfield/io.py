"""Deterministic CSV and SVG output."""

import csv
import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams["svg.hashsalt"] = "levyfield"


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv(path, header, rows):
    """Write rows with round-trip float formatting and ``\\n`` line endings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def field_rows(fr):
    """Rows ``(x..., value, drift, gaussian, jump)`` of a field realization."""
    for i in range(len(fr.values)):
        yield (*fr.nodes[i], fr.values[i], fr.drift_part[i], fr.gaussian_part[i], fr.jump_part[i])


def field_header(d):
    return [f"x{i}" for i in range(d)] + ["value", "drift", "gaussian", "jump"]


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_field(fr, path, title=""):
    """Line plot (1D) or tripcolor map (2D) of a field realization."""
    return plot_nodal(fr.nodes, fr.values, path, title)


def plot_nodal(nodes, values, path, title="", label="field"):
    fig, ax = plt.subplots(figsize=(6, 4))
    if nodes.shape[1] == 1:
        order = np.argsort(nodes[:, 0])
        ax.plot(nodes[order, 0], values[order], lw=1.0)
        ax.set_xlabel("x")
        ax.set_ylabel(label)
    else:
        tpc = ax.tripcolor(nodes[:, 0], nodes[:, 1], values, shading="gouraud")
        fig.colorbar(tpc, ax=ax)
        ax.set_aspect("equal")
    ax.set_title(title)
    return _save(fig, path)


def plot_rate(fit, path, title="", xlabel="x", ylabel="error"):
    """Errors with the fitted rate line (log-log or semi-log)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x, y = np.asarray(fit.x), np.asarray(fit.y)
    ax.plot(x, y, "o")
    if fit.scale == "loglog":
        ax.loglog(x, np.exp(fit.intercept) * x ** fit.slope, "-")
    else:
        ax.semilogy(x, np.exp(fit.intercept + fit.slope * x), "-")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(f"{title} slope={fit.slope:.3f}")
    return _save(fig, path)


def plot_lines(x, series, path, title="", logy=False, xlabel="x", ylabel=""):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in series.items():
        ax.plot(x, y, marker="o", ms=3, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def atomic_write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
