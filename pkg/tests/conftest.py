import pytest

from lpfm.harness import ExperimentConfig, SweepAxes
from lpfm.model import ModelConfig
from lpfm.train import TrainHyper


def small_config(out_dir, **sweep) -> ExperimentConfig:
    """A sweep that trains in well under a second per cell."""
    return ExperimentConfig(
        model=ModelConfig(depth=2, heads=2, dim=8, num_classes=3, input_dim=6, seq_len=4),
        train=TrainHyper(epochs=2, batch_size=8, peak_lr=3e-3, warmup_epochs=1),
        data={"kind": "synthetic", "num_classes": 3, "per_class": 8, "seq_len": 4, "dim": 6,
              "center_scale": 2.0, "class_noise": 0.3, "seq_noise": 1.0, "seed": 0},
        sweep=SweepAxes(**sweep),
        formats=["json", "csv", "svg"],
        out_dir=str(out_dir),
    )


@pytest.fixture
def small_cfg(tmp_path):
    return lambda **sweep: small_config(tmp_path / "runs", **sweep)


# one line per acceptance criterion, echoed after the run even when output is captured
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
