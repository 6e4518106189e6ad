import csv

import pytest

from core.errors import InvalidArgumentError, OutputExistsError, ReportParseError
from core.evaluator import (
    METRICS_HEADER,
    MetricRow,
    build_report,
    check_dominance,
    read_metrics_csv,
    run_report,
    write_metrics_csv,
)


def _write(path, mode, curves, loss=0.5):
    rows = [
        MetricRow(f"{mode}-run", mode, seed, k, value, value / 2, loss)
        for seed, values in curves.items()
        for k, value in enumerate(values, start=1)
    ]
    return write_metrics_csv(path, rows)


def test_round_trip(tmp_path):
    rows = [MetricRow("r", "erft", 1, 1, 0.1, 0.05, None), MetricRow("r", "erft", 1, 2, 0.2, 0.1, 1.25)]
    assert read_metrics_csv(write_metrics_csv(tmp_path / "m.csv", rows)) == rows


def test_header_is_stable(tmp_path):
    path = _write(tmp_path / "m.csv", "erft", {1: [0.1]})
    assert path.read_text().splitlines()[0] == ",".join(METRICS_HEADER)
    assert METRICS_HEADER == ("run_id", "mode", "seed", "clip_index", "norm_drift", "step_drift", "loss_final")


def test_malformed_row_reports_line_number(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(",".join(METRICS_HEADER) + "\nr,erft,1,1,0.1,0.05,\nr,erft,1,two,0.2,0.1,\n")
    with pytest.raises(ReportParseError) as info:
        read_metrics_csv(path)
    assert info.value.line_number == 3


def test_wrong_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("a,b\n")
    with pytest.raises(ReportParseError) as info:
        read_metrics_csv(path)
    assert info.value.line_number == 1


def test_short_row(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(",".join(METRICS_HEADER) + "\nr,erft,1\n")
    with pytest.raises(ReportParseError):
        read_metrics_csv(path)


def test_single_method_has_no_comparison(tmp_path):
    path = _write(tmp_path / "m.csv", "erft", {1: [0.1, 0.2], 2: [0.1, 0.3]})
    text, report, dominance = run_report([path])
    assert report.comparisons == []
    assert "Comparisons" not in text
    assert dominance is None
    summary = report.summaries["erft"]
    assert summary.terminal_mean == pytest.approx(0.25)
    assert summary.slope == pytest.approx(0.15)
    assert summary.loss_final == pytest.approx(0.5)


def test_hand_statistics(tmp_path):
    a = _write(tmp_path / "a.csv", "erft", {s: [0.1, 0.1, 0.1] for s in range(1, 6)})
    b = _write(tmp_path / "b.csv", "baseline", {s: [0.1, 0.2, 0.3 + 0.01 * s] for s in range(1, 6)})
    out = tmp_path / "comparison.csv"
    _, report, _ = run_report([a, b], comparison_out=out)
    (mode_a, mode_b, seeds, comparison), = report.comparisons
    assert (mode_a, mode_b, seeds) == ("baseline", "erft", [1, 2, 3, 4, 5])
    assert comparison.terminal_a == pytest.approx(0.33)
    assert comparison.terminal_b == pytest.approx(0.1)
    # mean baseline curve 0.1, 0.2, 0.33
    assert comparison.slope_a == pytest.approx(0.115)
    assert comparison.slope_b == pytest.approx(0.0, abs=1e-12)
    assert (comparison.wins_a, comparison.wins_b, comparison.ties) == (0, 5, 0)
    with out.open() as handle:
        rows = list(csv.DictReader(handle))
    assert rows[0]["wins_b"] == "5"


def test_dominance(tmp_path):
    good = _write(tmp_path / "good.csv", "erft", {s: [0.1, 0.11, 0.12] for s in range(1, 6)})
    bad = _write(tmp_path / "bad.csv", "baseline", {s: [0.1, 0.3, 0.5] for s in range(1, 6)})
    _, _, holds = run_report([good, bad], dominance=("erft", "baseline"))
    assert holds.holds and holds.wins == 5
    _, _, fails = run_report([good, bad], dominance=("baseline", "erft"))
    assert not fails.holds
    assert len(fails.failures) == 2


def test_dominance_needs_positive_worse_slope(tmp_path):
    flat = _write(tmp_path / "flat.csv", "baseline", {s: [0.5, 0.5] for s in range(1, 6)})
    low = _write(tmp_path / "low.csv", "erft", {s: [0.1, 0.1] for s in range(1, 6)})
    _, report, _ = run_report([flat, low])
    result = check_dominance(report, "erft", "baseline")
    assert result.wins == 5
    assert not result.holds
    assert "not positive" in result.failures[0]


def test_unknown_mode_in_dominance(tmp_path):
    path = _write(tmp_path / "m.csv", "erft", {1: [0.1]})
    with pytest.raises(InvalidArgumentError):
        run_report([path], dominance=("erft", "baseline"))


def test_duplicate_rows_rejected():
    row = MetricRow("r", "erft", 1, 1, 0.1, 0.05, None)
    with pytest.raises(InvalidArgumentError):
        build_report([row, row])


def test_gaps_in_clip_indices_rejected():
    rows = [MetricRow("r", "erft", 1, 1, 0.1, 0.0, None), MetricRow("r", "erft", 1, 3, 0.1, 0.0, None)]
    with pytest.raises(InvalidArgumentError):
        build_report(rows)


def test_comparison_csv_is_write_once(tmp_path):
    a = _write(tmp_path / "a.csv", "erft", {1: [0.1, 0.2]})
    b = _write(tmp_path / "b.csv", "baseline", {1: [0.1, 0.4]})
    out = tmp_path / "comparison.csv"
    out.write_text("keep me\n")
    with pytest.raises(OutputExistsError):
        run_report([a, b], comparison_out=out)
    assert out.read_text() == "keep me\n"
