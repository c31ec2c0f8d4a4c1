"""Bounding boxes, confidence-ranked top-k selection, anchor lookup."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized [0, 1] image coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(0.0 <= c <= 1.0 for c in coords):
            raise ValueError(f"box coordinates must lie in [0, 1], got {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"box must satisfy x1 < x2 and y1 < y2, got {coords}")

    @classmethod
    def from_corners(cls, xa: float, ya: float, xb: float, yb: float) -> "BBox":
        """Build from two opposite corners given in any order."""
        return cls(min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb))

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class RoiProposal:
    bbox: BBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class SelectedRoi:
    """One slot of a top-k selection; ``index`` points into the input list."""

    index: int
    proposal: RoiProposal
    padded: bool = False


def box_center(b: BBox) -> tuple[float, float]:
    return (b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0


def box_area(b: BBox) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def select_top_k(proposals: list[RoiProposal], k: int) -> list[SelectedRoi]:
    """Keep the k most confident proposals.

    Ordering is descending confidence, then larger area, then lower input
    index. Short inputs are padded with copies of the largest-area proposal,
    marked ``padded=True``.
    """
    if not proposals:
        raise ValueError("no proposals")
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    order = sorted(
        range(len(proposals)),
        key=lambda i: (-proposals[i].confidence, -box_area(proposals[i].bbox), i),
    )
    chosen = [SelectedRoi(i, proposals[i]) for i in order[:k]]
    if len(chosen) < k:
        big = identify_anchor(proposals)
        chosen += [SelectedRoi(big, proposals[big], padded=True)] * (k - len(chosen))
    return chosen


def identify_anchor(selected: list[RoiProposal] | list[SelectedRoi]) -> int:
    """Index of the largest-area box, lowest index on ties."""
    if not selected:
        raise ValueError("no proposals")
    best, best_area = 0, -1.0
    for i, item in enumerate(selected):
        prop = item.proposal if isinstance(item, SelectedRoi) else item
        area = box_area(prop.bbox)
        if area > best_area:
            best, best_area = i, area
    return best


def anchor_first(items: list, anchor: int) -> list:
    """Move ``items[anchor]`` to position 0, keeping the others in order."""
    return [items[anchor]] + items[:anchor] + items[anchor + 1 :]
