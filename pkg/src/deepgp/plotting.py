"""SVG rendering of CSV outputs (line plots, quantile bands, heat maps)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed salt and no date keep SVG output byte-stable
matplotlib.rcParams["svg.hashsalt"] = "deepgp"


def read_csv(path):
    """Column names and float data of a CSV with optional ``#`` comment lines."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    if not lines:
        raise ValueError(f"{path} has no data")
    names = lines[0].strip().split(",")
    data = np.array([[float(v) if v else np.nan for v in ln.strip().split(",")] for ln in lines[1:]])
    return names, data.reshape(-1, len(names))


def _save(fig, out):
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)


def _heatmap(ax, x, y, v):
    xs, ys = np.unique(x), np.unique(y)
    img = np.full((ys.size, xs.size), np.nan)
    img[np.searchsorted(ys, y), np.searchsorted(xs, x)] = v
    im = ax.imshow(img, origin="lower", extent=(0, 1, 0, 1), cmap="viridis")
    plt.colorbar(im, ax=ax)


def plot_csv(path, out, kind: str = "auto", title: str = "") -> str:
    """Render one CSV file to SVG and return the kind used.

    ``auto`` picks a quantile-band plot for posterior summaries, a heat map
    when there are ``x`` and ``y`` columns, one curve per layer for long
    layer tables and plain line plots otherwise.
    """
    names, data = read_csv(path)
    col = {n: i for i, n in enumerate(names)}
    if kind == "auto":
        if "q05" in col:
            kind = "band"
        elif "x" in col and "y" in col:
            kind = "heatmap"
        elif "layer" in col and "node" in col:
            kind = "layers"
        else:
            kind = "line"
    fig, ax = plt.subplots(figsize=(6, 4))
    value_cols = [n for n in names if n not in ("x", "y", "node", "layer")]
    if kind == "band":
        if "y" in col:
            _heatmap(ax, data[:, col["x"]], data[:, col["y"]], data[:, col["mean"]])
        else:
            x = data[:, col["x"]]
            ax.fill_between(x, data[:, col["q05"]], data[:, col["q95"]], alpha=0.3, label="5-95%")
            ax.plot(x, data[:, col["mean"]], label="mean")
            ax.legend()
    elif kind == "heatmap":
        _heatmap(ax, data[:, col["x"]], data[:, col["y"]], data[:, col[value_cols[0]]])
    elif kind == "layers":
        v = col[value_cols[0]]
        for n in np.unique(data[:, col["layer"]]):
            rows = data[:, col["layer"]] == n
            ax.plot(data[rows, col["node"]], data[rows, v], lw=0.8, label=f"layer {int(n)}")
        ax.legend(fontsize="small")
    elif kind == "line":
        xcol = names[0]
        for n in names[1:]:
            ax.plot(data[:, col[xcol]], data[:, col[n]], label=n)
        ax.set_xlabel(xcol)
        ax.legend(fontsize="small")
    else:
        plt.close(fig)
        raise ValueError(f"unknown plot kind {kind!r}")
    if title:
        ax.set_title(title)
    _save(fig, out)
    return kind
