"""Detection and end-to-end precision/recall/F over a split."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..spotter import Spotter, Spotting, greedy_match

IOU_THRESHOLD = 0.5


def f_measure(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class MetricsReport:
    det_P: float
    det_R: float
    det_F: float
    e2e_P: float
    e2e_R: float
    e2e_F: float
    trainable_params: int = 0
    total_params: int = 0
    wall_s: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def trainable_fraction(self) -> float:
        return self.trainable_params / self.total_params if self.total_params else 0.0


@dataclass
class Counts:
    det_tp: int = 0
    det_pred: int = 0
    e2e_tp: int = 0
    e2e_pred: int = 0
    gt: int = 0

    def add(self, other: "Counts") -> None:
        self.det_tp += other.det_tp
        self.det_pred += other.det_pred
        self.e2e_tp += other.e2e_tp
        self.e2e_pred += other.e2e_pred
        self.gt += other.gt


def score_image(spotting: Spotting, gt_boxes: np.ndarray, gt_texts: list[str]) -> Counts:
    """Counts for one image.

    Detection: greedy one-to-one IoU >= 0.5 matching over every box.
    End-to-end: the same matching over boxes with a non-empty transcription;
    a match counts only if the strings are identical.
    """
    c = Counts(gt=len(gt_boxes), det_pred=len(spotting.boxes))
    c.det_tp = len(greedy_match(spotting.boxes, gt_boxes, IOU_THRESHOLD))
    keep = [i for i, t in enumerate(spotting.texts) if t]
    c.e2e_pred = len(keep)
    if keep:
        matches = greedy_match(spotting.boxes[keep], gt_boxes, IOU_THRESHOLD)
        c.e2e_tp = sum(1 for p, g, _ in matches if spotting.texts[keep[p]] == gt_texts[g])
    return c


def report_from_counts(c: Counts, **extra) -> MetricsReport:
    dp = c.det_tp / c.det_pred if c.det_pred else 0.0
    dr = c.det_tp / c.gt if c.gt else 0.0
    ep = c.e2e_tp / c.e2e_pred if c.e2e_pred else 0.0
    er = c.e2e_tp / c.gt if c.gt else 0.0
    return MetricsReport(dp, dr, f_measure(dp, dr), ep, er, f_measure(ep, er), **extra)


def evaluate(spotter: Spotter, split, batch: int = 50, limit: int | None = None,
             **extra) -> MetricsReport:
    n = len(split) if limit is None else min(limit, len(split))
    total = Counts()
    for start in range(0, n, batch):
        samples = [split[i] for i in range(start, min(n, start + batch))]
        results = spotter.spot_batch(np.stack([s.image for s in samples]))
        for s, r in zip(samples, results):
            total.add(score_image(r, s.boxes, s.texts))
    return report_from_counts(total, **extra)
