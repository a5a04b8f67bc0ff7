"""PNG figures written next to the CSV results (matplotlib, Agg backend).

Figures carry the run identifier in their PNG text chunk and no software
or timestamp metadata, so reruns are byte-identical.
"""

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path, run_id):
    fig.savefig(path, dpi=100, metadata={"Software": None, "run_id": run_id})


def _positive(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 0, y, np.nan)


def decay_figure(path, report, run_id):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(report.times, _positive(report.beta_psi), label="|psi_p(s)|_beta")
    ax.semilogy(report.times, _positive(report.beta_eta), label="|eta_p(s)|_beta")
    ax.semilogy(report.times, _positive(report.scaled_psi), "--", label="(1+s)^sigma |psi_p|_beta")
    ax.semilogy(report.times, _positive(report.scaled_eta), "--", label="(1+(t-s))^sigma |eta_p|_beta")
    ax.set_xlabel("s")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path, run_id)
    plt.close(fig)


def history_figure(path, history, run_id):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    k = [h[0] for h in history]
    ax.semilogy(k, _positive([h[1] for h in history]), "o-", label="psi increment")
    ax.semilogy(k, _positive([h[2] for h in history]), "s-", label="eta increment")
    ax.set_xlabel("Picard iterate")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path, run_id)
    plt.close(fig)


def functional_figure(path, ts, gaps, residuals, run_id):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(ts, _positive(gaps), "o-", label="|I(t) - I_inf|")
    ax.semilogy(ts, _positive(residuals), "s--", label="HJ residual")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path, run_id)
    plt.close(fig)


def sweep_figure(path, points, gaps, run_id):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(points, _positive(gaps), "o")
    ax.set_xlabel("sweep point")
    ax.set_ylabel("|I(t) - I_inf|")
    fig.tight_layout()
    _save(fig, path, run_id)
    plt.close(fig)
