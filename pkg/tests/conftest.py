import numpy as np
import pytest

from roiattn.data import BBox, ImageRecord, RoiProposal, RoiRecord
from roiattn.rng import SplitMix64

ACCEPTANCE_LINES: list[str] = []


def random_record(seed: int, k: int = 6, a: int = 8, label: int | None = None) -> ImageRecord:
    """Record with a full-image anchor and k - 1 random smaller boxes."""
    s = SplitMix64(seed).child("test-record")
    emb = s.normal(k * a).reshape(k, a)
    geo = s.uniform(4 * (k - 1)).reshape(k - 1, 4)
    rois = [RoiRecord(RoiProposal(BBox(0.0, 0.0, 1.0, 1.0), 1.0), emb[0])]
    for j in range(k - 1):
        w, h = 0.05 + 0.3 * geo[j, 0], 0.05 + 0.3 * geo[j, 1]
        x1, y1 = geo[j, 2] * (1 - w), geo[j, 3] * (1 - h)
        rois.append(RoiRecord(RoiProposal(BBox(x1, y1, x1 + w, y1 + h), 0.5), emb[j + 1]))
    if label is None:
        label = s.below(2)
    return ImageRecord(f"r{seed}", label, rois)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
