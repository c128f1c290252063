import pytest
import torch

from relayjscc.data import natural_patches
from relayjscc.models import EncoderConfig


@pytest.fixture
def tiny_cfg():
    """Smallest architecture that still exercises every block: 3x8x8 images, k=24."""
    return EncoderConfig(image_dims=(3, 8, 8), cpp=0.125, c_feat=8, c_out=12, n_downsample=2, n_blocks=1)


@pytest.fixture
def small_cfg():
    return EncoderConfig(c_feat=16)


@pytest.fixture(scope="session")
def patches():
    return natural_patches(16, seed=7)


@pytest.fixture
def tiny_images():
    return torch.rand(4, 3, 8, 8, generator=torch.Generator().manual_seed(3), dtype=torch.float64)


ACCEPTANCE_LINES = []


def report_criterion(number, passed, detail):
    """Record one acceptance criterion outcome; all are echoed in the terminal summary."""
    status = {True: "PASS", False: "FAIL", None: "SKIP"}[passed]
    line = f"criterion {number:>2}: {status}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
