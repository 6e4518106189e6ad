"""
Simple smoke script to verify the training and rollout pipeline works.

Run directly (``python test_example.py``) or through pytest.
"""
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.config import parse_config  # noqa: E402
from core.evaluator import run_report  # noqa: E402
from core.experiment import run_rollout, run_train  # noqa: E402


def test_basic_pipeline(tmp_path=None):
    """Train both modes briefly, roll out, and print the drift report."""
    root = str(tmp_path) if tmp_path is not None else tempfile.mkdtemp(prefix="erft-")
    config = parse_config(overrides={
        "steps": "20",
        "num_workers": "2",
        "batch_size": "4",
        "frames": "4",
        "dim": "4",
        "motion_frames": "2",
        "width": "16",
        "timestep_grids": "10",
        "warmup_iterations": "5",
        "output_dir": root,
    })

    metrics = []
    for mode in ("baseline", "erft"):
        print(f"Training {mode}...")
        artifacts = run_train(config, mode)
        print(f"   final loss {artifacts.summary.loss_final:.4f}")
        out = os.path.join(root, f"{mode}.csv")
        metrics.append(run_rollout(config, artifacts.checkpoint, 5, [1, 2], out))

    text, report, _ = run_report(metrics)
    print("")
    print(text)
    assert set(report.summaries) == {"baseline", "erft"}
    assert len(report.comparisons) == 1


if __name__ == "__main__":
    test_basic_pipeline()
