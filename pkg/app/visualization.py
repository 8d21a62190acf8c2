"""Plots of convergence sweeps and truncation demos."""
import io
from pathlib import Path
from typing import Union

import matplotlib
matplotlib.use('Agg')  # Use non-interactive backend
import matplotlib.pyplot as plt
import numpy as np
import plotly.graph_objects as go

from app.stability_lab import ConvergenceReport, TruncationDemo

PathLike = Union[str, Path]


def _empty_png(message: str) -> io.BytesIO:
    fig, ax = plt.subplots(figsize=(10, 6))
    ax.text(0.5, 0.5, message, ha='center', va='center', fontsize=14)
    ax.set_xticks([])
    ax.set_yticks([])
    buf = io.BytesIO()
    plt.savefig(buf, format='png', bbox_inches='tight', dpi=100)
    plt.close(fig)
    buf.seek(0)
    return buf


def _positive(n: np.ndarray, gaps: np.ndarray):
    keep = np.isfinite(gaps) & (gaps > 0)
    return n[keep], gaps[keep]


def create_convergence_plot(report: ConvergenceReport) -> io.BytesIO:
    """
    Log-log plot of every computed gap column and the TV distance against n.

    Returns:
        BytesIO buffer containing PNG image
    """
    columns = report.computed_columns
    if not report.n_values or not columns:
        return _empty_png('No convergence data available.')

    n = np.asarray(report.n_values, dtype=float)
    fig, ax = plt.subplots(figsize=(10, 7))
    for name in columns:
        xs, ys = _positive(n, report.column(name))
        if len(xs):
            ax.loglog(xs, ys, marker='o', label=name)
    xs, ys = _positive(n, np.asarray(report.tv, dtype=float))
    if len(xs):
        ax.loglog(xs, ys, linestyle='--', color='grey', label='tv')
    if report.tolerance > 0:
        ax.axhline(report.tolerance, color='red', linewidth=0.8, label='tolerance')

    ax.set_xlabel('n', fontsize=12)
    ax.set_ylabel('gap', fontsize=12)
    ax.set_title(f'{report.experiment} convergence', fontsize=14, fontweight='bold')
    ax.legend(loc='lower left')
    ax.grid(True, which='both', alpha=0.3)
    plt.tight_layout()

    buf = io.BytesIO()
    plt.savefig(buf, format='png', bbox_inches='tight', dpi=100)
    plt.close(fig)
    buf.seek(0)
    return buf


def create_truncation_plot(demo: TruncationDemo) -> io.BytesIO:
    """Log of the truncated expectation against the cutoff M."""
    fig, ax = plt.subplots(figsize=(10, 6))
    ax.plot(demo.cutoffs, demo.log_values, marker='o')
    ax.set_xlabel('cutoff M (standard deviations)', fontsize=12)
    ax.set_ylabel('log truncated expectation', fontsize=12)
    verdict = 'diverges' if demo.diverges else 'bounded'
    ax.set_title(f'{demo.which}, n={demo.n}: {verdict} (ratio {demo.ratio:.3g})', fontsize=14, fontweight='bold')
    ax.grid(True, alpha=0.3)
    plt.tight_layout()

    buf = io.BytesIO()
    plt.savefig(buf, format='png', bbox_inches='tight', dpi=100)
    plt.close(fig)
    buf.seek(0)
    return buf


def create_plotly_convergence(report: ConvergenceReport) -> str:
    """
    Interactive log-log version of the convergence plot.

    Returns:
        HTML string with embedded Plotly plot
    """
    fig = go.Figure()
    columns = report.computed_columns
    if not report.n_values or not columns:
        fig.add_annotation(
            text="No convergence data available.",
            xref="paper", yref="paper",
            x=0.5, y=0.5, showarrow=False,
            font=dict(size=16)
        )
        return fig.to_html(include_plotlyjs='cdn')

    n = np.asarray(report.n_values, dtype=float)
    for name in [*columns, 'tv']:
        values = np.asarray(report.tv, dtype=float) if name == 'tv' else report.column(name)
        xs, ys = _positive(n, values)
        fig.add_trace(go.Scatter(
            x=xs.tolist(),
            y=ys.tolist(),
            mode='lines+markers',
            name=name,
            hovertemplate='n=%{x}<br>' + name + '=%{y:.3e}<extra></extra>',
        ))
    fig.update_layout(
        title=f'{report.experiment} convergence',
        xaxis=dict(type='log', title='n'),
        yaxis=dict(type='log', title='gap'),
        width=1000,
        height=700,
        title_x=0.5,
        hovermode='closest'
    )
    return fig.to_html(include_plotlyjs='cdn')


def save_convergence_plot(report: ConvergenceReport, path: PathLike) -> Path:
    """Write the plot as HTML (plotly) for ".html" paths, PNG otherwise."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    if target.suffix.lower() == '.html':
        target.write_text(create_plotly_convergence(report), encoding='utf-8')
    else:
        target.write_bytes(create_convergence_plot(report).getvalue())
    return target


def save_truncation_plot(demo: TruncationDemo, path: PathLike) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    if target.suffix.lower() == '.html':
        fig = go.Figure(go.Scatter(x=demo.cutoffs, y=demo.log_values, mode='lines+markers', name=demo.which))
        fig.update_layout(title=f'{demo.which}, n={demo.n}', xaxis_title='cutoff M', yaxis_title='log value', title_x=0.5)
        target.write_text(fig.to_html(include_plotlyjs='cdn'), encoding='utf-8')
    else:
        target.write_bytes(create_truncation_plot(demo).getvalue())
    return target
