"""Figure rendering for the report paths.

Every CLI report that writes delimited output also drops a PNG next to it.
All rendering is off-screen; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_dispersion_figure(disp, path):
    """Frequency curve over [0, pi] with its critical points marked."""
    lam = np.linspace(0.0, np.pi, 1024)
    om = disp.potential.omega(lam)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(lam, om, lw=1.5)
    ax.plot(disp.critical_points, disp.frequencies, "o", ms=6, color="crimson")
    for x, w in zip(disp.critical_points, disp.frequencies):
        ax.annotate(f"{w:.3f}", (x, w), textcoords="offset points", xytext=(4, 6), fontsize=8)
    ax.set_xlabel(r"wavenumber $\lambda$")
    ax.set_ylabel(r"frequency $\omega(\lambda)$")
    ax.set_title(f"dispersion ({len(disp.critical_points) - 2} interior critical points)")
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_kernel_figure(table, path):
    """Displacement and velocity kernels against time, one panel each."""
    fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for j, s in enumerate(table.sites):
        axes[0].plot(table.times, table.x[:, j], lw=0.9, label=f"n = {s}")
        axes[1].plot(table.times, table.y[:, j], lw=0.9, label=f"n = {s}")
    axes[0].set_ylabel("displacement kernel x")
    axes[1].set_ylabel("velocity kernel y")
    axes[1].set_xlabel("t")
    for ax in axes:
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8, ncol=3)
    return _finish(fig, path)


def save_global_theory_figure(pred, path):
    """Predicted global energies plus the variance-to-t^2 ratio."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    axes[0].plot(pred.times, pred.EH, label="H", lw=1.5)
    axes[0].plot(pred.times, pred.ET, label="T", lw=1.2)
    axes[0].plot(pred.times, pred.EU, label="U", lw=1.2)
    axes[0].set_xlabel("t")
    axes[0].set_ylabel("mean energy")
    axes[0].legend()
    axes[0].grid(alpha=0.3)
    pos = pred.times > 0
    axes[1].plot(pred.times[pos], pred.VarH[pos] / pred.times[pos] ** 2, lw=1.2, color="darkorange")
    axes[1].set_xlabel("t")
    axes[1].set_ylabel(r"Var$(H)/t^2$")
    axes[1].grid(alpha=0.3)
    return _finish(fig, path)


def save_local_theory_figure(preds, path):
    """Site energies against ln t with the predicted slope as a guide line."""
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    for pred in preds:
        if pred.kinetic is not None:
            ax.semilogx(pred.times, pred.kinetic, lw=1.2, label=f"T at n = {pred.site}")
        if pred.potential is not None:
            ax.semilogx(pred.times, pred.potential, lw=1.2, ls="--", label=f"U at n = {pred.site}")
    ref = preds[0]
    if ref.dn is not None:
        t = ref.times[ref.times > 1]
        anchor = ref.kinetic if ref.kinetic is not None else ref.potential
        c = anchor[-1] - ref.dn * np.log(ref.times[-1])
        ax.semilogx(t, ref.dn * np.log(t) + c, color="k", lw=1.0, alpha=0.6,
                    label=f"slope d = {ref.dn:.4f}")
    ax.set_xlabel("t")
    ax.set_ylabel("mean site energy")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_simulation_figure(report, path, theory=None):
    """Ensemble means with error bars, against the linear growth law."""
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    for name, color in (("H", "tab:blue"), ("T", "tab:green"), ("U", "tab:red")):
        if (name, None) not in report.entries:
            continue
        mean, se = report.get(name)
        ax.errorbar(report.times, mean, yerr=3 * se, fmt="o-", ms=3, lw=1.0,
                    capsize=2, color=color, label=name)
    sigma = report.provenance.get("sigma", None)
    if sigma and ("H", None) in report.entries:
        t = np.linspace(0, report.times.max(), 64)
        ax.plot(t, 0.5 * sigma ** 2 * t, "k:", lw=1.0, label=r"$\sigma^2 t/2$")
    if theory is not None:
        ax.plot(theory.times, theory.ET, "g--", lw=0.8, alpha=0.7)
        ax.plot(theory.times, theory.EU, "r--", lw=0.8, alpha=0.7)
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.set_title(f"{report.provenance.get('engine', '?')} engine, R = {report.replicas}")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def save_verification_figure(summary, path):
    """One bar per check: measured against its tolerance band."""
    checks = [c for c in summary.checks if c.status != "skip" and c.measured is not None
              and c.tolerance not in (None, 0)]
    if not checks:
        checks = summary.checks
    fig, ax = plt.subplots(figsize=(7, 0.45 * max(4, len(checks))))
    names = [c.name for c in checks]
    ratios = []
    colors = []
    for c in checks:
        if c.tolerance:
            ratios.append(abs((c.measured or 0) - (c.target or 0)) / c.tolerance)
        else:
            ratios.append(0.0 if c.status == "pass" else 1.5)
        colors.append("tab:green" if c.status == "pass" else "tab:red")
    ax.barh(range(len(checks)), ratios, color=colors)
    ax.axvline(1.0, color="k", lw=1.0, ls="--")
    ax.set_yticks(range(len(checks)), names, fontsize=8)
    ax.set_xlabel("|measured - target| / tolerance")
    ax.invert_yaxis()
    return _finish(fig, path)
