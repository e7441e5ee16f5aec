"""Deterministic SVG renderings of traces, profiles, CD, fit residuals and delays.

Each function returns the axis limits it drew so callers (and tests) can
check the plotted ranges without parsing SVG.
"""
import io as _io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import atomic_write  # noqa: E402
from .model import WAVES  # noqa: E402

_STYLE = {"svg.hashsalt": "pwrabbit", "svg.fonttype": "path", "figure.dpi": 100, "font.size": 9}
_COLORS = {"d2": "tab:blue", "d0": "tab:orange", "s": "tab:green", "co": "tab:red", "counter": "tab:purple"}


def _save(fig, path):
    buf = _io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def _limits(*axes):
    return [{"xlim": tuple(float(v) for v in ax.get_xlim()), "ylim": tuple(float(v) for v in ax.get_ylim())}
            for ax in axes]


def trace_extent(trace):
    """(tau_lo, tau_hi, theta_lo_deg, theta_hi_deg): delay window of the scan
    (one cell of width d_tau per sample) by the full theta bin range."""
    tau = trace.tau_samples
    return (float(tau[0]), float(tau[0] + tau.size * trace.tau_step),
            float(np.degrees(trace.theta_edges[0])), float(np.degrees(trace.theta_edges[-1])))


def plot_trace_heatmap(trace, path):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.6))
        tau_edges = trace.tau_samples[0] + np.arange(trace.tau_samples.size + 1) * trace.tau_step
        mesh = ax.pcolormesh(tau_edges, np.degrees(trace.theta_edges), trace.counts, shading="flat",
                             cmap="viridis", rasterized=False)
        x0, x1, y0, y1 = trace_extent(trace)
        ax.set_xlim(x0, x1)
        ax.set_ylim(y0, y1)
        ax.set_xlabel("XUV-IR delay (as)")
        ax.set_ylabel("emission angle theta (deg)")
        ax.set_title(f"SB{trace.sideband_order} {trace.geometry.value}")
        fig.colorbar(mesh, ax=ax, label="counts")
        fig.tight_layout()
        lim = _limits(ax)[0]
        _save(fig, path)
    return lim


def plot_phase_profiles(profiles, path):
    """RABBIT phase against theta for the profiles of one sideband."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.4))
        for p in profiles:
            ok = ~p.low_snr
            ax.errorbar(np.degrees(p.theta_centers[ok]), p.phase[ok], yerr=p.sigma_phase[ok], fmt=".", ms=3,
                        lw=0.6, color=_COLORS.get(p.geometry), label=p.geometry)
        ax.set_xlim(0, 180)
        ax.set_ylim(-np.pi, np.pi)
        ax.set_xlabel("emission angle theta (deg)")
        ax.set_ylabel("RABBIT phase (rad)")
        if profiles:
            ax.set_title(f"SB{profiles[0].sideband_order}")
            ax.legend(loc="best")
        fig.tight_layout()
        lim = _limits(ax)[0]
        _save(fig, path)
    return lim


def plot_cd(energies, cd, path, orders=None):
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.axhline(0, color="0.6", lw=0.6)
        ax.plot(energies, cd, "o-", color="k", ms=4)
        if orders is not None:
            for e, c, n in zip(energies, cd, orders):
                ax.annotate(f"SB{n}", (e, c), textcoords="offset points", xytext=(0, 6), ha="center", fontsize=7)
        ax.set_xlabel("photoelectron energy (eV)")
        ax.set_ylabel("CD")
        fig.tight_layout()
        lim = _limits(ax)[0]
        _save(fig, path)
    return lim


def plot_fit_residuals(traces, models, path):
    """Data, fitted model and normalised residual maps for a co/counter pair."""
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(len(traces), 3, figsize=(10, 3.2 * len(traces)), squeeze=False)
        for row, (trace, model) in zip(axes, zip(traces, models)):
            tau_edges = trace.tau_samples[0] + np.arange(trace.tau_samples.size + 1) * trace.tau_step
            th = np.degrees(trace.theta_edges)
            resid = (trace.counts - model) / np.sqrt(np.maximum(model, 1.0))
            for ax, data, title, cmap in ((row[0], trace.counts, "data", "viridis"),
                                          (row[1], model, "fit", "viridis"),
                                          (row[2], resid, "normalised residual", "RdBu_r")):
                m = ax.pcolormesh(tau_edges, th, data, shading="flat", cmap=cmap)
                ax.set_xlim(tau_edges[0], tau_edges[-1])
                ax.set_ylim(th[0], th[-1])
                ax.set_title(f"{trace.geometry.value}: {title}")
                ax.set_xlabel("delay (as)")
                fig.colorbar(m, ax=ax)
            row[0].set_ylabel("theta (deg)")
        fig.tight_layout()
        lim = _limits(*axes.ravel())
        _save(fig, path)
    return lim


def plot_separation(table, path_phases, path_delays, sidecar=None):
    """Wigner and CC phases per sideband, Wigner and CC delays per midpoint."""
    sig = table.sigma
    with plt.rc_context(_STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.4))
        for w in WAVES:
            a1.errorbar(table.energies, table.wigner_phase[w], yerr=sig["wigner_phase"][w], fmt="o", ms=3,
                        color=_COLORS[w], label=w)
            a2.errorbar(table.energies, table.cc_phase[w], yerr=sig["cc_phase"][w], fmt="o", ms=3,
                        color=_COLORS[w], label=f"{w} ({'abs' if w == 'd2' else 'em'})")
        if sidecar is not None:
            sbs = sidecar["sidebands"]
            a1.plot([s["energy_ev"] for s in sbs], [s["wigner_phase"] for s in sbs], "k--", lw=0.8, label="truth")
        a1.set_xlabel("energy (eV)")
        a1.set_ylabel("Wigner phase (rad)")
        a2.set_xlabel("energy (eV)")
        a2.set_ylabel("CC phase (rad)")
        a1.legend(fontsize=7)
        a2.legend(fontsize=7)
        fig.tight_layout()
        lim = _limits(a1, a2)
        _save(fig, path_phases)

        fig, (b1, b2) = plt.subplots(1, 2, figsize=(9, 3.4))
        for w in WAVES:
            if table.mid_energies.size:
                b1.errorbar(table.mid_energies, table.wigner_delay[w], yerr=sig["wigner_delay"][w], fmt="o",
                            ms=3, color=_COLORS[w], label=w)
                b2.errorbar(table.mid_energies, table.cc_delay[w], yerr=sig["cc_delay"][w], fmt="o", ms=3,
                            color=_COLORS[w], label=w)
        if sidecar is not None and sidecar.get("midpoints"):
            mids = sidecar["midpoints"]
            b1.plot([m["energy_ev"] for m in mids], [m["wigner_delay_as"] for m in mids], "k--", lw=0.8,
                    label="analytic")
        b1.set_xlabel("energy (eV)")
        b1.set_ylabel("Wigner delay (as)")
        b2.set_xlabel("energy (eV)")
        b2.set_ylabel("CC delay (as)")
        b1.legend(fontsize=7)
        b2.legend(fontsize=7)
        fig.tight_layout()
        lim += _limits(b1, b2)
        _save(fig, path_delays)
    return lim
