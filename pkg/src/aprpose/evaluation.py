"""Median/mean pose errors over a manifest and trajectory exports (CSV + SVG)."""
from __future__ import annotations

import csv
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import DatasetManifest, FrameRecord
from .errors import AprError, DomainError
from .geometry import Pose, position_error, quat_angular_distance


@dataclass
class FrameResult:
    frame: str
    predicted: Pose
    truth: Pose
    position_error: float
    orientation_error: float
    inference_ms: float = field(default=0.0, compare=False)


@dataclass
class EvalReport:
    results: list[FrameResult]
    failures: list[tuple[str, str]] = field(default_factory=list)

    def _series(self, attr: str) -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.results], dtype=np.float64)

    @property
    def median_position_error(self) -> float:
        return float(np.median(self._series("position_error"))) if self.results else float("nan")

    @property
    def median_orientation_error(self) -> float:
        return float(np.median(self._series("orientation_error"))) if self.results else float("nan")

    @property
    def mean_position_error(self) -> float:
        return float(np.mean(self._series("position_error"))) if self.results else float("nan")

    @property
    def mean_orientation_error(self) -> float:
        return float(np.mean(self._series("orientation_error"))) if self.results else float("nan")

    def summary(self) -> dict:
        return {
            "frames": len(self.results),
            "failed": len(self.failures),
            "median_position_error_m": self.median_position_error,
            "median_orientation_error_deg": self.median_orientation_error,
            "mean_position_error_m": self.mean_position_error,
            "mean_orientation_error_deg": self.mean_orientation_error,
            "mean_inference_ms": float(np.mean(self._series("inference_ms"))) if self.results else 0.0,
        }


def frame_result(frame: str, predicted: Pose, truth: Pose, inference_ms: float = 0.0) -> FrameResult:
    return FrameResult(frame, predicted, truth,
                       position_error(predicted.position, truth.position),
                       quat_angular_distance(predicted.orientation, truth.orientation),
                       inference_ms)


Predictor = Callable[[FrameRecord], "tuple[Pose, float]"]


def evaluate(predict: Predictor, manifest: DatasetManifest) -> EvalReport:
    """Run ``predict`` on every record; failing frames are recorded and left out of the metrics."""
    report = EvalReport([])
    for rec in manifest.records:
        try:
            pose, ms = predict(rec)
        except (AprError, OSError) as e:
            report.failures.append((rec.frame, str(e)))
            continue
        report.results.append(frame_result(rec.frame, pose, rec.pose, ms))
    return report


def estimator_predictor(estimator, manifest: DatasetManifest) -> Predictor:
    def predict(rec: FrameRecord):
        path = manifest.payload_path(rec, estimator.modality)
        if path is None:
            raise DomainError(f"frame {rec.frame} has no {estimator.modality} payload")
        return estimator.estimate_file(path)
    return predict


def table_predictor(predictions: DatasetManifest) -> Predictor:
    """Predictor that looks poses up in a second manifest by frame id."""
    table = {r.frame: r.pose for r in predictions.records}

    def predict(rec: FrameRecord):
        if rec.frame not in table:
            raise DomainError(f"no prediction for frame {rec.frame}")
        return table[rec.frame], 0.0
    return predict


def export_trajectory(report: EvalReport, path: str) -> tuple[str, str]:
    """Write ``<path>.csv`` and ``<path>.svg``; returns both paths."""
    if not report.results:
        raise DomainError("cannot export an empty report")
    base = path[:-4] if path.endswith((".csv", ".svg")) else path
    csv_path, svg_path = base + ".csv", base + ".svg"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["frame", "gt_x", "gt_y", "pred_x", "pred_y", "pos_err_m", "orient_err_deg"])
        for r in report.results:
            w.writerow([r.frame, repr(float(r.truth.position[0])), repr(float(r.truth.position[1])),
                        repr(float(r.predicted.position[0])), repr(float(r.predicted.position[1])),
                        repr(r.position_error), repr(r.orientation_error)])
    _write_svg(report, svg_path)
    return csv_path, svg_path


def _write_svg(report: EvalReport, path: str, size: int = 600, margin: int = 60) -> None:
    gt = np.array([r.truth.position[:2] for r in report.results])
    pred = np.array([r.predicted.position[:2] for r in report.results])
    allp = np.vstack([gt, pred])
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = float(max((hi - lo).max(), 1e-9))
    inner = size - 2 * margin

    def to_px(p):
        x = margin + (p[0] - lo[0]) / span * inner
        y = size - margin - (p[1] - lo[1]) / span * inner
        return f"{x:.3f},{y:.3f}"

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(size), height=str(size),
                     viewBox=f"0 0 {size} {size}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(size), height=str(size), fill="white")
    ET.SubElement(svg, "rect", x=str(margin), y=str(margin), width=str(inner), height=str(inner),
                  fill="none", stroke="black")
    ET.SubElement(svg, "polyline", id="ground_truth", fill="none", stroke="red",
                  points=" ".join(to_px(p) for p in gt))
    ET.SubElement(svg, "polyline", id="prediction", fill="none", stroke="blue",
                  points=" ".join(to_px(p) for p in pred))
    ET.SubElement(svg, "text", x=str(size / 2), y=str(size - 15), attrib={"text-anchor": "middle"}).text = \
        f"x [m] ({lo[0]:.1f} .. {lo[0] + span:.1f})"
    ET.SubElement(svg, "text", x="15", y=str(size / 2),
                  transform=f"rotate(-90 15 {size / 2})", attrib={"text-anchor": "middle"}).text = \
        f"y [m] ({lo[1]:.1f} .. {lo[1] + span:.1f})"
    legend = ET.SubElement(svg, "text", x=str(margin), y=str(margin - 20))
    legend.text = "ground truth (red), prediction (blue)"
    ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
