"""PNG figures for scenario reports (Agg backend, no timestamps in the files)."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import IoError  # noqa: E402

STYLE = {"figure.figsize": (6.0, 4.0), "figure.dpi": 100, "font.size": 9}


def _save(fig, out_dir, name):
    path = os.path.join(out_dir, f"{name}.png")
    try:
        fig.savefig(path, metadata={"Software": None})
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from exc
    finally:
        plt.close(fig)
    return path


def line_figure(name, curves, xlabel, ylabel, title="", logy=False, logx=False):
    """Deferred line plot; ``curves`` is a list of ``(x, y, label)``."""

    def render(out_dir):
        with plt.rc_context(STYLE):
            fig, ax = plt.subplots()
            for x, y, label in curves:
                ax.plot(x, y, marker="o" if len(x) < 12 else None, ms=3, label=label)
            if logy:
                ax.set_yscale("log")
            if logx:
                ax.set_xscale("log")
            ax.set_xlabel(xlabel)
            ax.set_ylabel(ylabel)
            if title:
                ax.set_title(title)
            if any(label for _, _, label in curves):
                ax.legend(fontsize=7)
            ax.grid(True, alpha=0.3)
            fig.tight_layout()
            return _save(fig, out_dir, name)

    return render


def bar_figure(name, labels, values, ylabel, title="", reference=None, logy=True):
    """Deferred bar chart with an optional horizontal reference line."""

    def render(out_dir):
        with plt.rc_context(STYLE):
            fig, ax = plt.subplots()
            ax.bar(range(len(values)), values)
            ax.set_xticks(range(len(values)))
            ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
            if reference is not None:
                ax.axhline(reference, color="k", lw=0.8, ls="--")
            if logy:
                ax.set_yscale("log")
            ax.set_ylabel(ylabel)
            if title:
                ax.set_title(title)
            fig.tight_layout()
            return _save(fig, out_dir, name)

    return render
