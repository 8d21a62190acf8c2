"""Tests for convergence and truncation plots."""
from app.stability_lab import ASSUMPTION_ASUI1, ConvergenceReport, counterexample_truncation
from app.visualization import (
    create_convergence_plot,
    create_plotly_convergence,
    create_truncation_plot,
    save_convergence_plot,
    save_truncation_plot,
)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def sample_report():
    report = ConvergenceReport("value")
    for n in (1, 10, 100, 1000):
        report.add_row(n, 0.2 / n, u_gap=0.1 / n, v_gap=0.05 / n)
    report.finalize(1e-3)
    return report


def test_convergence_png():
    """Test that the convergence plot is a PNG."""
    buf = create_convergence_plot(sample_report())
    assert buf.getvalue().startswith(PNG_MAGIC)


def test_empty_convergence_plot():
    """Test the placeholder for a report without rows."""
    assert create_convergence_plot(ConvergenceReport("price")).getvalue().startswith(PNG_MAGIC)
    assert "No convergence data available." in create_plotly_convergence(ConvergenceReport("price"))


def test_plotly_convergence():
    """Test the interactive HTML plot."""
    html = create_plotly_convergence(sample_report())
    assert "<html>" in html
    assert "u_gap" in html


def test_truncation_plot():
    """Test the truncation demo plot."""
    demo = counterexample_truncation(ASSUMPTION_ASUI1, 2, terms=3)
    assert create_truncation_plot(demo).getvalue().startswith(PNG_MAGIC)


def test_save_plots(tmp_path):
    """Test that the suffix selects HTML or PNG output."""
    report = sample_report()
    assert save_convergence_plot(report, tmp_path / "gaps.png").read_bytes().startswith(PNG_MAGIC)
    assert "plotly" in save_convergence_plot(report, tmp_path / "gaps.html").read_text(encoding="utf-8")
    demo = counterexample_truncation(ASSUMPTION_ASUI1, 2, terms=3)
    assert save_truncation_plot(demo, tmp_path / "demo" / "trunc.html").exists()
