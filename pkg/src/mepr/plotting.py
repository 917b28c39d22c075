"""Matplotlib figures written next to the CSV/PGM outputs (Agg backend, PNG)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def _extent(dmap):
    g = dmap.grid
    return (g[:, 0].min(), g[:, 0].max(), g[:, 1].min(), g[:, 1].max())


def sir_curves(res, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    fams = sorted({r[0] for r in res.rows})
    for fam in fams:
        Ms, med = res.curve(fam)
        ax.plot(Ms, med, "o-", label=fam)
    ax.set_xscale("log")
    ax.set_xlabel("coding length M (T_L / T_c)")
    ax.set_ylabel("median SIR [dB]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def map_panel(maps: dict, path) -> Path:
    keys = sorted(maps, key=lambda k: (k[0], k[1]))
    fams = sorted({k[0] for k in keys})
    Ms = sorted({k[1] for k in keys})
    fig, axes = plt.subplots(len(fams), len(Ms), figsize=(2.2 * len(Ms), 2.2 * len(fams)), squeeze=False)
    for i, fam in enumerate(fams):
        for j, M in enumerate(Ms):
            ax = axes[i, j]
            m = maps.get((fam, M))
            if m is not None and m.shape is not None:
                ax.imshow(m.normalized().reshape(m.shape), extent=_extent(m), cmap="viridis", vmin=0, vmax=1)
            ax.set_title(f"{fam} M={M}", fontsize=8)
            ax.set_xticks([])
            ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, path)


def resolution_grid(res, seeds: int, path) -> Path:
    counts = res.counts()
    seps = sorted({k[0] for k in counts})
    Ms = sorted({k[1] for k in counts})
    frac = np.array([[counts[(u, M)] / seeds for M in Ms] for u in seps])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    im = ax.imshow(frac, origin="lower", cmap="magma", vmin=0, vmax=1, aspect="auto")
    ax.set_xticks(range(len(Ms)), [str(M) for M in Ms])
    ax.set_yticks(range(len(seps)), [f"{u:g}" for u in seps])
    ax.set_xlabel("coding length M")
    ax.set_ylabel("separation / ((lambda/D) R)")
    fig.colorbar(im, ax=ax, label="fraction resolved")
    fig.tight_layout()
    return _save(fig, path)


def pair_profiles(res, path) -> Path:
    Ms = sorted({k[1] for k in res.profiles})
    seps = sorted({k[0] for k in res.profiles})
    fig, axes = plt.subplots(1, len(seps), figsize=(2.6 * len(seps), 2.8), squeeze=False, sharey=True)
    for ax, u in zip(axes[0], seps):
        for M in Ms:
            offs, mag = res.profiles[(u, M)]
            peak = mag.max() if mag.max() > 0 else 1.0
            ax.plot(offs, mag / peak, lw=1, label=f"M={M}")
        for s in (-u / 2, u / 2):
            ax.axvline(s * res.resolution, color="k", ls=":", lw=0.8)
        ax.set_title(f"sep {u:g}", fontsize=9)
        ax.set_xlabel("offset [m]")
    axes[0, 0].set_ylabel("|map| (normalised)")
    axes[0, -1].legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


def image_panel(images: dict, path) -> Path:
    Ms = sorted(images)
    fig, axes = plt.subplots(1, len(Ms), figsize=(2.3 * len(Ms), 2.5), squeeze=False)
    for ax, M in zip(axes[0], Ms):
        img = images[M]
        ax.imshow(img.normalized().reshape(img.shape), extent=_extent(img), cmap="gray", vmin=0, vmax=1)
        ax.set_title(f"M={M}", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, path)


def contrast_curve(medians: dict, path) -> Path:
    Ms = sorted(medians)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(Ms, [medians[M] for M in Ms], "o-")
    ax.set_xscale("log")
    ax.set_xlabel("coding length M")
    ax.set_ylabel("median contrast")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def interference_pair(study, path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(6, 3))
    for ax, img, title in zip(axes, (study.clean, study.interfered), ("clean", "with interferer")):
        ax.imshow(img.normalized().reshape(img.shape), extent=_extent(img), cmap="gray", vmin=0, vmax=1)
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def track_panel(res, path) -> Path:
    letters = list(dict.fromkeys(k[0] for k in res.runs))
    fig, axes = plt.subplots(1, len(letters), figsize=(2.4 * len(letters), 2.8), squeeze=False)
    for ax, L in zip(axes[0], letters):
        for cond, style in (("clean", "o-"), ("interfered", "x--")):
            r = res.runs.get((L, cond))
            if r is None:
                continue
            est = np.array([f.estimate[:2] if f.estimate is not None else (np.nan, np.nan) for f in r.frames])
            ax.plot(est[:, 0], est[:, 1], style, ms=3, lw=0.8, label=cond)
        truth = np.array([f.truth[:2] for f in res.runs[(L, "clean")].frames])
        ax.plot(truth[:, 0], truth[:, 1], "k-", lw=0.6, alpha=0.5, label="truth")
        ax.set_aspect("equal")
        ax.set_title(L)
    axes[0, 0].legend(fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


def correlation_profile(pr, path) -> Path:
    prof = pr.profile
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(prof.lags * 1e6, prof.magnitude, lw=1)
    ax.set_xlabel("lag [us]")
    ax.set_ylabel("|R|")
    ax.set_title(f"|value| = {abs(pr.value):.3g}", fontsize=9)
    fig.tight_layout()
    return _save(fig, path)
