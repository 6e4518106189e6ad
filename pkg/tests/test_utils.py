import pytest

from core.errors import OutputExistsError
from core.utils import claim_output, format_curve, format_float, format_verdict


def test_format_verdict_labels():
    assert format_verdict("holds").endswith("Dominance holds")
    assert format_verdict("fails").endswith("Dominance fails")
    assert format_verdict("something else") == "something else"


def test_format_float_and_curve():
    assert format_float(None) == "-"
    assert format_float(0.123456) == "0.1235"
    curve = format_curve([float(i) for i in range(25)], max_points=5)
    assert curve.split() == ["0.000", "6.000", "12.000", "18.000", "24.000"]


def test_claim_output(tmp_path):
    path = tmp_path / "out.csv"
    assert claim_output(str(path)) == path
    path.write_text("x")
    with pytest.raises(OutputExistsError):
        claim_output(path)
