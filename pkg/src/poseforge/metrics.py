"""Pose-accuracy metrics and report rendering.

ADD is the mean distance between model points transformed by the predicted
and ground-truth poses. ADD-S replaces the paired distance with, per
prediction-transformed point, the distance to the closest ground-truth-
transformed point (appropriate for symmetric objects); that direction keeps
ADD-S <= ADD by construction. Rotation error is the geodesic angle in
degrees, translation error the Euclidean distance in millimeters.

Both ADD and ADD-S are computed from the same exact pairwise-distance
matrix (chunked for large models), so ADD-S <= ADD holds to the last ulp.
"""

import csv
import io
from dataclasses import InitVar, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .geometry import Pose, rotation_geodesic_deg, translation_error_mm
from .object_model import ObjectModel

METRIC_LABELS = (
    "ADD Distance (mm)",
    "ADD-S Distance (mm)",
    "Rotation Error (°)",
    "Translation Error (mm)",
)

CSV_HEADER = ("method", "scene_id", "add_mm", "adds_mm", "rot_err_deg", "trans_err_mm")

_CHUNK = 2048


def _paired_and_nearest(model: ObjectModel, pred: Pose, gt: Pose):
    """Per-point paired distance and nearest-neighbor distance, shared rows."""
    p = pred.apply(model.points)
    g = gt.apply(model.points)
    paired = np.empty(len(p))
    nearest = np.empty(len(p))
    for start in range(0, len(p), _CHUNK):
        rows = cdist(p[start : start + _CHUNK], g)
        idx = np.arange(start, min(start + _CHUNK, len(p)))
        paired[idx] = rows[np.arange(len(idx)), idx]
        nearest[idx] = rows.min(axis=1)
    return paired, nearest


def add_metric(model: ObjectModel, pred: Pose, gt: Pose) -> float:
    """Mean distance between pred- and gt-transformed model points (mm)."""
    paired, _ = _paired_and_nearest(model, pred, gt)
    return float(paired.mean())


def adds_metric(model: ObjectModel, pred: Pose, gt: Pose) -> float:
    """Mean closest-point distance from pred- to gt-transformed points (mm)."""
    _, nearest = _paired_and_nearest(model, pred, gt)
    return float(nearest.mean())


@dataclass(frozen=True)
class EvalRecord:
    """Per-scene metric tuple; one row of a report.

    Records computed here always satisfy ADD-S <= ADD; rows ingested from a
    foreign evaluator (whose ADD-S direction may differ) can skip that
    cross-check with consistent=False. Values must be finite and
    non-negative either way.
    """

    scene_id: str
    add_mm: float
    adds_mm: float
    rot_err_deg: float
    trans_err_mm: float
    consistent: InitVar[bool] = True

    def __post_init__(self, consistent):
        vals = (self.add_mm, self.adds_mm, self.rot_err_deg, self.trans_err_mm)
        if any(v < 0 or not np.isfinite(v) for v in vals):
            raise ValueError("metric values must be finite and non-negative")
        if consistent and self.adds_mm > self.add_mm + 1e-9:
            raise ValueError("ADD-S cannot exceed ADD")

    def values(self):
        return (self.add_mm, self.adds_mm, self.rot_err_deg, self.trans_err_mm)


def evaluate_scene(model: ObjectModel, pred: Pose, gt: Pose, scene_id="scene") -> EvalRecord:
    """All four metrics for one scene.

    Both distance columns are always reported; the model's symmetry flag only
    tells downstream consumers which column to read.
    """
    paired, nearest = _paired_and_nearest(model, pred, gt)
    return EvalRecord(
        scene_id=scene_id,
        add_mm=float(paired.mean()),
        adds_mm=float(nearest.mean()),
        rot_err_deg=rotation_geodesic_deg(pred.rotation, gt.rotation),
        trans_err_mm=translation_error_mm(pred.translation, gt.translation),
    )


@dataclass(frozen=True)
class Report:
    """One method's per-scene records; aggregates are unweighted means."""

    method_name: str
    records: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise ValueError("a report needs at least one record")

    def aggregate(self):
        """Mean (add, adds, rot, trans) over scenes."""
        cols = np.array([r.values() for r in self.records])
        return tuple(float(v) for v in cols.mean(axis=0))


def render_report(reports, n_reference=0) -> str:
    """Fixed-width text table, one column per method, values to 2 decimals.

    The first n_reference reports are treated as injected from an external
    source rather than measured here; a footer calls them out by name.
    """
    if not reports:
        raise ValueError("need at least one report")
    if not 0 <= n_reference <= len(reports):
        raise ValueError("n_reference out of range")
    label_w = max(len(s) for s in ("Metric",) + METRIC_LABELS)
    aggs = [r.aggregate() for r in reports]
    cells = [[f"{v:.2f}" for v in a] for a in aggs]
    widths = [
        max(len(r.method_name), max(len(c) for c in col))
        for r, col in zip(reports, cells)
    ]
    lines = []
    header = "Metric".ljust(label_w)
    for r, w in zip(reports, widths):
        header += "  " + r.method_name.rjust(w)
    lines.append(header)
    lines.append("-" * len(header))
    for i, label in enumerate(METRIC_LABELS):
        row = label.ljust(label_w)
        for col, w in zip(cells, widths):
            row += "  " + col[i].rjust(w)
        lines.append(row)
    text = "\n".join(lines) + "\n"
    if n_reference:
        marked = [r.method_name for r in reports[:n_reference]]
        text += "\n[reference] injected, not measured: " + ", ".join(marked) + "\n"
    return text


def render_csv(reports) -> str:
    """Machine-readable per-scene rows (UTF-8 text, LF line endings)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for report in reports:
        for rec in report.records:
            writer.writerow(
                [
                    report.method_name,
                    rec.scene_id,
                    repr(rec.add_mm),
                    repr(rec.adds_mm),
                    repr(rec.rot_err_deg),
                    repr(rec.trans_err_mm),
                ]
            )
    return buf.getvalue()


def parse_csv(text, source="<csv>", consistent=True):
    """Parse render_csv output back into Reports (method order preserved).

    consistent=False admits rows from foreign evaluators whose ADD-S may
    exceed ADD (the published driller reference numbers do).
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError(f"{source}: empty CSV")
    if tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"{source}: line 1: bad header {rows[0]!r}")
    by_method = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ValueError(f"{source}: line {lineno}: expected {len(CSV_HEADER)} fields")
        try:
            rec = EvalRecord(
                row[1], float(row[2]), float(row[3]), float(row[4]), float(row[5]),
                consistent=consistent,
            )
        except ValueError as exc:
            raise ValueError(f"{source}: line {lineno}: {exc}") from None
        by_method.setdefault(row[0], []).append(rec)
    if not by_method:
        raise ValueError(f"{source}: CSV has a header but no rows")
    return [Report(m, tuple(recs)) for m, recs in by_method.items()]
