"""Static report figures rendered next to the CSV/JSON outputs.

Figures are written as SVG with a fixed hash salt and no timestamp so
repeated runs produce identical files.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "svg.hashsalt": "progspace",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}

PALETTE = {
    "HC": "#8c8c8c",
    "PDVec1": "#1b9e77",
    "PDVec2": "#d95f02",
    "PDVec3": "#7570b3",
}


def _color(label, i):
    return PALETTE.get(label, f"C{i % 10}")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _groups(labels):
    order = sorted(set(labels), key=lambda s: (s != "HC", s))
    labels = np.asarray(labels)
    return [(g, labels == g) for g in order]


def scatter_2d(path, xy, labels, xlabel="motor", ylabel="cognitive + sleep", title=None):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        for i, (g, mask) in enumerate(_groups(labels)):
            ax.scatter(xy[mask, 0], xy[mask, 1], s=10, alpha=0.7, color=_color(g, i), label=g, linewidths=0)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(markerscale=2)
        _save(fig, path)


def scatter_3d(path, xyz, labels, names):
    with plt.rc_context(RC):
        fig = plt.figure(figsize=(5, 4.5))
        ax = fig.add_subplot(projection="3d")
        for i, (g, mask) in enumerate(_groups(labels)):
            ax.scatter(xyz[mask, 0], xyz[mask, 1], xyz[mask, 2], s=6, color=_color(g, i), label=g)
        ax.set_xlabel(names[0])
        ax.set_ylabel(names[1])
        ax.set_zlabel(names[2])
        ax.legend(markerscale=2, loc="upper left")
        _save(fig, path)


def dimension_distributions(path, coords, labels, names):
    groups = _groups(labels)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(names), figsize=(3 * len(names), 3.2), squeeze=False)
        for d, (ax, name) in enumerate(zip(axes[0], names)):
            data = [coords[mask, d] for _, mask in groups]
            parts = ax.boxplot(data, patch_artist=True, showfliers=False)
            for i, (patch, (g, _)) in enumerate(zip(parts["boxes"], groups)):
                patch.set_facecolor(_color(g, i))
                patch.set_alpha(0.7)
            ax.set_xticks(range(1, len(groups) + 1), [g for g, _ in groups], rotation=30)
            ax.set_title(name)
        _save(fig, path)


def importance_bar(path, ranked, top=20):
    ranked = ranked[:top]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 0.25 * len(ranked) + 1))
        names = [n for n, _ in ranked][::-1]
        vals = [v for _, v in ranked][::-1]
        ax.barh(names, vals, color="#4c72b0")
        ax.set_xlabel("mean decrease in Gini impurity (normalized)")
        _save(fig, path)


def roc_curves(path, rocs, title=None):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.2, 4))
        ax.plot([0, 1], [0, 1], ls="--", color="0.6", lw=0.8)
        for i, (name, roc) in enumerate(rocs.items()):
            ax.plot(roc.fpr, roc.tpr, color=_color(name, i), label=f"{name} (AUC {roc.auc:.3f})")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right")
        _save(fig, path)


def bic_curve(path, candidates, chosen):
    ks = sorted(k for k, c in candidates.items() if "bic" in c)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(ks, [candidates[k]["bic"] for k in ks], marker="o", color="#4c72b0")
        ax.axvline(chosen, ls=":", color="0.4")
        ax.set_xlabel("number of components")
        ax.set_ylabel("BIC")
        _save(fig, path)
