"""Report figures, written to files next to the text reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "image.cmap": "gray_r",
}


def save_figure(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def slice_panel(path, volumes: dict, slice_index=None, title=None):
    """Side-by-side transaxial slices, each panel scaled to its own max."""
    with plt.rc_context(STYLE):
        n = len(volumes)
        fig, axes = plt.subplots(1, n, figsize=(2.6 * n, 2.8), squeeze=False)
        for ax, (name, vol) in zip(axes[0], volumes.items()):
            k = vol.shape[0] // 2 if slice_index is None else slice_index
            img = vol[k]
            ax.imshow(img, vmin=0, vmax=max(float(img.max()), 1e-12), interpolation="nearest")
            ax.set_title(name)
            ax.set_xticks([])
            ax.set_yticks([])
        if title:
            fig.suptitle(title)
        return save_figure(fig, path)


def slice_metrics(path, mae_slices, ssim_slices):
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7, 2.6))
        k = np.arange(len(mae_slices))
        a1.plot(k, mae_slices, marker="o", ms=3)
        a1.set_xlabel("slice")
        a1.set_ylabel("MAE")
        a2.plot(k, ssim_slices, marker="o", ms=3, color="C1")
        a2.set_xlabel("slice")
        a2.set_ylabel("MS-SSIM")
        a2.set_ylim(min(0.0, float(np.min(ssim_slices))), 1.02)
        return save_figure(fig, path)


def profile_plot(path, profiles: dict, xlabel="position (mm)"):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for name, (pos, vals) in profiles.items():
            ax.plot(pos, vals, label=name)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("value")
        ax.legend(frameon=False)
        return save_figure(fig, path)


def loss_curves(path, history: list, width: int = 50):
    steps = [r["step"] for r in history]
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(7.5, 2.8))
        for key in ("total", "ssim_loss"):
            a1.plot(steps, [r[key] for r in history], lw=0.6, label=key)
        a1.set_yscale("log")
        a1.set_xlabel("iteration")
        a1.legend(frameon=False)
        a2.plot(steps, [r["lr"] for r in history], lw=0.8, label="lr")
        a2.set_xlabel("iteration")
        a2.set_ylabel("learning rate")
        tw = a2.twinx()
        tw.plot(steps, [r["alpha"] for r in history], color="C2", lw=0.8)
        tw.set_ylabel("alpha")
        return save_figure(fig, path)


def throughput_bars(path, workers, events_per_second, recon_seconds=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.8))
        ax.bar([str(w) for w in workers], np.asarray(events_per_second) / 1e6)
        ax.set_xlabel("workers")
        ax.set_ylabel("histogramming (M events/s)")
        if recon_seconds is not None:
            ax.set_title(f"reconstruction {recon_seconds:.2f} s / volume")
        return save_figure(fig, path)
