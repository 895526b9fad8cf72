"""Figures written next to the CSV/JSON reports."""

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams.update({
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.direction": "out",
    "ytick.direction": "out",
    "savefig.dpi": 110,
})

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no version/date chunks, so reruns produce identical files
_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, metadata=_META, bbox_inches="tight")
    plt.close(fig)


def plot_phase_series(report, path):
    """D_n against frame index with ED/ES markers and live-point count."""
    d = np.asarray(report.series.d)
    frames = np.arange(len(d)) + report.frame_offset
    fig, ax = plt.subplots(figsize=(6.0, 3.0))
    ax.plot(frames, d, color="0.2", lw=1.2, label="$D_n$")
    for phase, marker, color in (("ED", "^", "tab:red"), ("ES", "v", "tab:blue")):
        idx = [e.frame for e in report.events if e.phase == phase]
        if idx:
            ax.plot(np.asarray(idx) + report.frame_offset, d[idx], marker, color=color,
                    ms=7, ls="none", label=phase)
    ax.set_xlabel("frame")
    ax.set_ylabel("distance to origin (px)")
    counts = np.asarray(report.series.active_counts)
    if counts.size and counts[0] != counts[-1]:
        ax2 = ax.twinx()
        ax2.step(frames, counts, where="mid", color="0.6", lw=0.8)
        ax2.set_ylabel("tracked points", color="0.5")
    ax.legend(loc="best", frameon=False)
    ax.set_title(report.source_id or "phase report")
    _save(fig, path)


def plot_trajectories(frame, bundle, path, roi=None, frame_offset=0):
    """Key-point paths drawn over the detection frame."""
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.imshow(frame, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    for k in range(bundle.num_points):
        xy = bundle.positions[k]
        ok = np.isfinite(xy[:, 0])
        ax.plot(xy[ok, 0], xy[ok, 1], lw=0.8)
        ax.plot(xy[0, 0], xy[0, 1], ".", color="yellow", ms=3)
    if roi is not None:
        ax.add_patch(plt.Rectangle((roi.x0 - 0.5, roi.y0 - 0.5), roi.w, roi.h,
                                   fill=False, ec="tab:green", lw=1.0))
    ax.set_axis_off()
    ax.set_title(f"trajectories from frame {frame_offset}")
    _save(fig, path)


def plot_sweep(sweep, path):
    """Grouped DF0..DF3 percentages per detection threshold."""
    rows = sweep.rows
    fig, ax = plt.subplots(figsize=(5.5, 3.0))
    width = 0.8 / max(len(rows), 1)
    x = np.arange(4)
    for i, r in enumerate(rows):
        ax.bar(x + (i - (len(rows) - 1) / 2) * width, r.histogram.percentages(), width,
               label=f"threshold {r.threshold:g}")
    ax.set_xticks(x, [f"DF{k}" for k in range(4)])
    ax.set_ylabel("events (%)")
    ax.set_ylim(0, 100)
    ax.legend(frameon=False)
    _save(fig, path)
