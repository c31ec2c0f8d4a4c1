"""RoI embedding datasets: JSONL ingestion and the planted-signal generator."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox, RoiProposal, anchor_first, box_center, identify_anchor
from .rng import SplitMix64


class DatasetError(ValueError):
    pass


@dataclass
class RoiRecord:
    proposal: RoiProposal
    embedding: np.ndarray
    padded: bool = False


@dataclass
class ImageRecord:
    id: str
    label: int
    rois: list[RoiRecord]

    @property
    def k(self) -> int:
        return len(self.rois)

    def embeddings(self) -> np.ndarray:
        return np.stack([r.embedding for r in self.rois])

    def centers(self) -> np.ndarray:
        return np.array([box_center(r.proposal.bbox) for r in self.rois])


@dataclass(frozen=True)
class SynthConfig:
    n: int = 2500
    k: int = 8
    a: int = 32
    signal_strength: float = 2.0
    noise_std: float = 1.0
    positive_rate: float = 0.5
    seed: int = 0
    # index of the first generated image; lets disjoint splits share a seed
    offset: int = 0

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError("n >= 1 required")
        if self.k < 2:
            raise ValueError("k >= 2 required")
        if self.a < 2:
            raise ValueError("a >= 2 required")
        if self.signal_strength < 0:
            raise ValueError("signal_strength >= 0 required")
        if self.noise_std <= 0:
            raise ValueError("noise_std > 0 required")
        if not 0.0 < self.positive_rate < 1.0:
            raise ValueError("positive_rate in (0, 1) required")
        if self.offset < 0:
            raise ValueError("offset >= 0 required")


@dataclass
class ArrayDataset:
    """Dense view of a record list used by the trainer."""

    embeddings: np.ndarray  # (n, k, a)
    centers: np.ndarray  # (n, k, 2)
    labels: np.ndarray  # (n,)
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx: np.ndarray) -> "ArrayDataset":
        return ArrayDataset(
            self.embeddings[idx],
            self.centers[idx],
            self.labels[idx],
            [self.ids[i] for i in idx] if self.ids else [],
        )


def to_arrays(records: list[ImageRecord]) -> ArrayDataset:
    if not records:
        raise DatasetError("empty dataset")
    return ArrayDataset(
        np.stack([r.embeddings() for r in records]),
        np.stack([r.centers() for r in records]),
        np.array([r.label for r in records], dtype=np.float64),
        [r.id for r in records],
    )


def _parse_record(obj: dict, lineno: int) -> ImageRecord:
    try:
        label = obj["label"]
        if label not in (0, 1) or isinstance(label, bool):
            raise DatasetError(f"line {lineno}: label must be 0 or 1, got {label!r}")
        rois = []
        for roi in obj["rois"]:
            emb = np.asarray(roi["embedding"], dtype=np.float64)
            if emb.ndim != 1 or not np.all(np.isfinite(emb)):
                raise DatasetError(f"line {lineno}: embedding must be a finite vector")
            prop = RoiProposal(BBox(*map(float, roi["bbox"])), float(roi["confidence"]))
            rois.append(RoiRecord(prop, emb, bool(roi.get("padded", False))))
        if not rois:
            raise DatasetError(f"line {lineno}: record has no rois")
        rois = anchor_first(rois, identify_anchor([r.proposal for r in rois]))
        return ImageRecord(str(obj["id"]), int(label), rois)
    except DatasetError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"line {lineno}: malformed record ({exc})") from exc


def load_dataset(path: str | Path) -> list[ImageRecord]:
    """Read a JSONL dataset, validating shapes and moving each anchor to index 0."""
    records: list[ImageRecord] = []
    dim = k = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            rec = _parse_record(obj, lineno)
            for roi in rec.rois:
                d = roi.embedding.shape[0]
                if dim is None:
                    dim = d
                elif d != dim:
                    raise DatasetError(
                        f"line {lineno}: embedding dimension mismatch ({d} vs {dim})"
                    )
            if k is None:
                k = rec.k
            elif rec.k != k:
                raise DatasetError(f"line {lineno}: RoI count mismatch ({rec.k} vs {k})")
            records.append(rec)
    return records


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _roi_json(roi: RoiRecord) -> str:
    bbox = ", ".join(_fmt(c) for c in roi.proposal.bbox.as_list())
    emb = ", ".join(_fmt(v) for v in roi.embedding)
    padded = "true" if roi.padded else "false"
    return (
        f'{{"bbox": [{bbox}], "confidence": {_fmt(roi.proposal.confidence)}, '
        f'"embedding": [{emb}], "padded": {padded}}}'
    )


def write_dataset(records: list[ImageRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            rois = ", ".join(_roi_json(r) for r in rec.rois)
            fh.write(f'{{"id": {json.dumps(rec.id)}, "label": {rec.label}, "rois": [{rois}]}}\n')


def signal_direction(seed: int, a: int) -> np.ndarray:
    v = SplitMix64(seed).child("direction").normal(a)
    return v / np.linalg.norm(v)


def generate_synthetic(cfg: SynthConfig) -> list[ImageRecord]:
    """Planted-signal benchmark.

    Image ``i`` draws from its own stream ``root.child("image", offset + i)``
    in a fixed order, so any image can be regenerated on its own:

    1. one uniform for the label (positive iff u < positive_rate)
    2. one integer in [0, k-1) for the signal slot (drawn for every image)
    3. 4 uniforms per fine RoI for width, height, x1, y1
    4. one uniform per fine RoI for its confidence
    5. k * a normals for the embeddings, anchor first

    The anchor is the unit box with confidence 1. Fine RoIs are listed by
    descending confidence. Positives get ``signal_strength * v`` added to the
    fine RoI in the signal slot.
    """
    cfg.validate()
    root = SplitMix64(cfg.seed)
    v = signal_direction(cfg.seed, cfg.a)
    n_fine = cfg.k - 1
    anchor_box = BBox(0.0, 0.0, 1.0, 1.0)
    records = []
    for i in range(cfg.offset, cfg.offset + cfg.n):
        s = root.child("image", i)
        label = int(s.uniform(1)[0] < cfg.positive_rate)
        slot = s.below(n_fine)
        geo = s.uniform(4 * n_fine).reshape(n_fine, 4)
        conf = s.uniform(n_fine)
        emb = cfg.noise_std * s.normal(cfg.k * cfg.a).reshape(cfg.k, cfg.a)
        if label:
            emb[1 + slot] += cfg.signal_strength * v

        w = 0.05 + 0.25 * geo[:, 0]
        h = 0.05 + 0.25 * geo[:, 1]
        x1 = geo[:, 2] * (1.0 - w)
        y1 = geo[:, 3] * (1.0 - h)
        fine = [
            RoiRecord(
                RoiProposal(
                    BBox(x1[j], y1[j], min(x1[j] + w[j], 1.0), min(y1[j] + h[j], 1.0)),
                    float(conf[j]),
                ),
                emb[1 + j],
            )
            for j in range(n_fine)
        ]
        fine.sort(key=lambda r: -r.proposal.confidence)
        anchor = RoiRecord(RoiProposal(anchor_box, 1.0), emb[0])
        records.append(ImageRecord(f"synth-{cfg.seed}-{i}", label, [anchor] + fine))
    return records

