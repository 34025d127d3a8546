"""Publication figures for scaled-SGLD sweep summaries.

This package reads only the ``summary.json`` that the sweep commands
publish; nothing here imports the simulator.  Three figure kinds, one
curve per alpha:

    loss        mean excess-risk gap vs t, plus a dotted
                gap0 * exp(-lambda^2 t) reference through (0, gap0)
    distance    mean parameter distance ||omega_t - omega_0|| vs t
    lambda_min  mean minimum kernel eigenvalue along the path vs t

SVG output is byte-stable: a fixed hash salt pins the generated element
ids and the date header is suppressed, so rerendering the same summary
reproduces the file exactly.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.figure import Figure

__all__ = ["FigureSpec", "SchemaError", "EmptyDataError", "KINDS",
           "build_figure", "render"]

# series key and y axis label per figure kind
KINDS = {
    "loss": ("mean_gap", "excess risk gap"),
    "distance": ("mean_dist", "parameter distance"),
    "lambda_min": ("mean_lambda_min", "min kernel eigenvalue"),
}

_HASH_SALT = "lazysgld-figures"
_REF_LABEL = "exp(-lambda^2 t) reference"


class SchemaError(ValueError):
    """The summary is missing a column the requested figure needs."""


class EmptyDataError(ValueError):
    """The summary carries no usable curves."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: which summary, which kind, where to write."""

    summary: Path
    kind: str
    out: Path
    logy: bool = False
    logx: bool = False


def _load_summary(path: Path) -> dict:
    summary = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(summary, dict) or "per_alpha" not in summary:
        raise SchemaError(f"{path} has no per_alpha section; "
                          "expected a sweep summary.json")
    return summary


def _curves(summary: dict, kind: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(label, times, values) per alpha, sorted by alpha value.

    Cells whose trials all diverged carry no series and are skipped; the
    summary itself records the omission.  An alpha that is present but
    lacks the requested column is a schema error, not a silent drop.
    """
    key = KINDS[kind][0]
    curves = []
    per_alpha = summary["per_alpha"]
    for label in sorted(per_alpha, key=float):
        entry = per_alpha[label]
        if entry.get("status") != "ok":
            continue
        if "times" not in entry or entry.get(key) is None:
            raise SchemaError(f"alpha {label} has no {key} column; "
                              "was the quantity tracked in this run?")
        times = np.asarray(entry["times"], dtype=float)
        values = np.asarray(entry[key], dtype=float)
        if times.size == 0:
            raise EmptyDataError(f"alpha {label} has an empty time grid")
        if values.shape != times.shape:
            raise SchemaError(f"alpha {label}: {key} has {values.size} "
                              f"entries for {times.size} times")
        curves.append((label, times, values))
    if not curves:
        raise EmptyDataError("summary contains no usable curves "
                             "(empty alpha grid or every cell diverged)")
    return curves


def _reference(summary: dict, gap0: float) -> tuple[np.ndarray, np.ndarray]:
    ref = summary.get("reference_curve")
    if ref is None:
        raise SchemaError("summary has no reference_curve; the loss figure "
                          "needs the kernel eigenvalue recorded at "
                          "initialization (rerun with lambda tracking on)")
    times = np.asarray(ref["times"], dtype=float)
    lam_sq = float(ref["lambda_sq"])
    # recompute from the recorded rate so the line passes through
    # (0, gap0) exactly whatever the stored values were normalized to
    return times, gap0 * np.exp(-lam_sq * times)


def build_figure(spec: FigureSpec) -> Figure:
    """Assemble the figure without touching the filesystem output."""
    if spec.kind not in KINDS:
        raise ValueError(f"unknown figure kind {spec.kind!r}; "
                         f"choose from {sorted(KINDS)}")
    summary = _load_summary(spec.summary)
    curves = _curves(summary, spec.kind)
    fig = Figure(figsize=(6.4, 4.2))
    ax = fig.add_subplot(111)
    for label, times, values in curves:
        ax.plot(times, values, label=f"alpha = {label}")
    if spec.kind == "loss":
        gap0 = float(np.mean([v[0] for _, _, v in curves]))
        ref_t, ref_v = _reference(summary, gap0)
        ax.plot(ref_t, ref_v, color="black", linestyle=":", label=_REF_LABEL)
    ax.set_xlabel("t (units of eta)")
    ax.set_ylabel(KINDS[spec.kind][1])
    if spec.logx:
        ax.set_xscale("log")
    if spec.logy:
        ax.set_yscale("log")
    ax.legend(frameon=False)
    fig.tight_layout()
    return fig


def _write_bytes(path: Path, payload: bytes) -> None:
    # tmp + replace keeps rerenders atomic alongside the rest of a report
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def render(spec, kind: str | None = None, out=None, *,
           logy: bool = False, logx: bool = False) -> Path:
    """Render one figure to ``spec.out`` and return that path.

    Accepts either a :class:`FigureSpec` or the convenience form
    ``render(summary, kind, out, logy=...)`` that report pipelines use.
    """
    if not isinstance(spec, FigureSpec):
        if kind is None or out is None:
            raise TypeError("render(summary, kind, out) needs all three "
                            "arguments when not given a FigureSpec")
        spec = FigureSpec(summary=Path(spec), kind=kind, out=Path(out),
                          logy=logy, logx=logx)
    fig = build_figure(spec)
    out_path = Path(spec.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fmt = out_path.suffix.lstrip(".").lower() or "svg"
    with mpl.rc_context({"svg.hashsalt": _HASH_SALT}):
        if fmt == "svg":
            buf = io.BytesIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
            _write_bytes(out_path, buf.getvalue())
        else:
            fig.savefig(out_path, format=fmt, dpi=200)
    return out_path
