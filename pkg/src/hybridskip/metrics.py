"""Depth, boundary, and surface-orientation metrics plus the aggregate
indicators and radar comparison used to rank trained models.

Per-sample results are accumulated as sufficient statistics (sums and
counts) so that serial and parallel evaluation reduce to the same totals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (ComparisonError, DimensionError, EvaluationError,
                     ParameterError)

DELTA_THRESHOLDS = (1.05, 1.10, 1.25, 1.25 ** 2, 1.25 ** 3)
ALPHA_THRESHOLDS = (11.25, 22.5, 30.0)
F1_THRESHOLDS = (0.25, 0.5, 1.0)
DBE_EDGE_THRESHOLD = 0.5
DBE_CAP = 10.0
F1_TOLERANCE = 1.0
MAX_DEPTH = 10.0
MIN_PRED_DEPTH = 1e-6

RADAR_AXES = ("d_a", "d_e", "b_a", "b_e", "s_a", "s_e")
RADAR_FLOOR = 0.05
HEXAGON_AREA = 1.5 * math.sqrt(3.0)
# Raw accuracy aggregates are reciprocals of bigger-is-better quantities,
# so on these axes a smaller raw value marks the better model.
_ACCURACY_AXES = (0, 2, 4)


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float


def _as_map(x, name):
    a = np.asarray(getattr(x, "data", x), dtype=float)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise DimensionError(f"{name} must be a single-channel map, got shape {a.shape}")
    return a


# ----------------------------------------------------------------- depth

@dataclass
class DepthStats:
    count: int = 0
    clamped: int = 0
    sq_sum: float = 0.0
    sq_log_sum: float = 0.0
    absrel_sum: float = 0.0
    sqrel_sum: float = 0.0
    delta_hits: np.ndarray = field(
        default_factory=lambda: np.zeros(len(DELTA_THRESHOLDS)))

    def merge(self, other: "DepthStats") -> "DepthStats":
        return DepthStats(self.count + other.count,
                          self.clamped + other.clamped,
                          self.sq_sum + other.sq_sum,
                          self.sq_log_sum + other.sq_log_sum,
                          self.absrel_sum + other.absrel_sum,
                          self.sqrel_sum + other.sqrel_sum,
                          self.delta_hits + other.delta_hits)

    def finalize(self) -> dict:
        if self.count == 0:
            raise EvaluationError("no pixels with valid ground truth accumulated")
        n = float(self.count)
        d = 100.0 * self.delta_hits / n
        return {"rmse": math.sqrt(self.sq_sum / n),
                "rmsle": math.sqrt(self.sq_log_sum / n),
                "absrel": self.absrel_sum / n,
                "sqrel": self.sqrel_sum / n,
                "delta_105": d[0], "delta_110": d[1], "delta_125": d[2],
                "delta_125sq": d[3], "delta_125cu": d[4]}


def depth_stats(pred, gt, max_depth: float = MAX_DEPTH) -> DepthStats:
    p = _as_map(pred, "pred")
    g = _as_map(gt, "gt")
    if p.shape != g.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {g.shape}")
    mask = (g > 0) & (g <= max_depth)
    if not mask.any():
        raise EvaluationError("no ground-truth pixels inside the depth range")
    pv, gv = p[mask], g[mask]
    clamped = int(np.count_nonzero(pv < MIN_PRED_DEPTH))
    pv = np.maximum(pv, MIN_PRED_DEPTH)
    diff = pv - gv
    ratio = np.maximum(pv / gv, gv / pv)
    hits = np.array([np.count_nonzero(ratio < t) for t in DELTA_THRESHOLDS],
                    dtype=float)
    return DepthStats(count=pv.size, clamped=clamped,
                      sq_sum=float(np.sum(diff * diff)),
                      sq_log_sum=float(np.sum((np.log(pv) - np.log(gv)) ** 2)),
                      absrel_sum=float(np.sum(np.abs(diff) / gv)),
                      sqrel_sum=float(np.sum(diff * diff / gv)),
                      delta_hits=hits)


def direct_depth_metrics(pred, gt, max_depth: float = MAX_DEPTH) -> dict:
    return depth_stats(pred, gt, max_depth).finalize()


# -------------------------------------------------------------- boundary

def extract_depth_edges(depth, threshold_m: float) -> np.ndarray:
    """Mark pixels whose largest absolute depth step to a 4-neighbor
    exceeds the threshold; both sides of a step are marked."""
    if not threshold_m > 0:
        raise ParameterError("edge threshold must be positive")
    d = _as_map(depth, "depth")
    edges = np.zeros(d.shape, dtype=bool)
    jump = np.abs(d[1:, :] - d[:-1, :]) > threshold_m
    edges[1:, :] |= jump
    edges[:-1, :] |= jump
    jump = np.abs(d[:, 1:] - d[:, :-1]) > threshold_m
    edges[:, 1:] |= jump
    edges[:, :-1] |= jump
    return edges


def _edge_distance_field(edges: np.ndarray) -> np.ndarray:
    if not edges.any():
        return np.full(edges.shape, np.inf)
    return ndimage.distance_transform_edt(~edges)


@dataclass
class BoundaryStats:
    pred_edge_count: int = 0
    gt_edge_count: int = 0
    dist_to_gt_sum: float = 0.0
    dist_to_pred_sum: float = 0.0
    f1_pred_count: np.ndarray = field(
        default_factory=lambda: np.zeros(len(F1_THRESHOLDS)))
    f1_gt_count: np.ndarray = field(
        default_factory=lambda: np.zeros(len(F1_THRESHOLDS)))
    f1_pred_matched: np.ndarray = field(
        default_factory=lambda: np.zeros(len(F1_THRESHOLDS)))
    f1_gt_matched: np.ndarray = field(
        default_factory=lambda: np.zeros(len(F1_THRESHOLDS)))

    def merge(self, other: "BoundaryStats") -> "BoundaryStats":
        return BoundaryStats(
            self.pred_edge_count + other.pred_edge_count,
            self.gt_edge_count + other.gt_edge_count,
            self.dist_to_gt_sum + other.dist_to_gt_sum,
            self.dist_to_pred_sum + other.dist_to_pred_sum,
            self.f1_pred_count + other.f1_pred_count,
            self.f1_gt_count + other.f1_gt_count,
            self.f1_pred_matched + other.f1_pred_matched,
            self.f1_gt_matched + other.f1_gt_matched)

    def finalize(self) -> dict:
        def mean_dist(total, count, other_count):
            if count > 0:
                return total / count
            # empty edge set: agreement when the other side is empty too,
            # otherwise the cap stands in for the missing boundary
            return 0.0 if other_count == 0 else DBE_CAP

        out = {"dbe_acc": mean_dist(self.dist_to_gt_sum,
                                    self.pred_edge_count, self.gt_edge_count),
               "dbe_comp": mean_dist(self.dist_to_pred_sum,
                                     self.gt_edge_count, self.pred_edge_count)}
        for i, key in enumerate(("f1_025", "f1_050", "f1_100")):
            pn, gn = self.f1_pred_count[i], self.f1_gt_count[i]
            if pn == 0 and gn == 0:
                out[key] = 1.0
            elif pn == 0 or gn == 0:
                out[key] = 0.0
            else:
                precision = self.f1_pred_matched[i] / pn
                recall = self.f1_gt_matched[i] / gn
                out[key] = (0.0 if precision + recall == 0
                            else 2 * precision * recall / (precision + recall))
        return out


def boundary_stats_from_edges(pred_edges, gt_edges,
                              f1_pred_edges=None, f1_gt_edges=None) -> BoundaryStats:
    """Boundary statistics from already-extracted edge maps. The first pair
    feeds the distance errors; the optional per-threshold lists feed F1 and
    default to the first pair at every threshold."""
    pe = np.asarray(pred_edges, dtype=bool)
    ge = np.asarray(gt_edges, dtype=bool)
    if pe.shape != ge.shape:
        raise DimensionError(f"shape mismatch {pe.shape} vs {ge.shape}")
    if f1_pred_edges is None:
        f1_pred_edges = [pe] * len(F1_THRESHOLDS)
    if f1_gt_edges is None:
        f1_gt_edges = [ge] * len(F1_THRESHOLDS)
    stats = BoundaryStats()
    stats.pred_edge_count = int(pe.sum())
    stats.gt_edge_count = int(ge.sum())
    stats.dist_to_gt_sum = float(
        np.minimum(_edge_distance_field(ge), DBE_CAP)[pe].sum())
    stats.dist_to_pred_sum = float(
        np.minimum(_edge_distance_field(pe), DBE_CAP)[ge].sum())
    for i, (pt, gt_t) in enumerate(zip(f1_pred_edges, f1_gt_edges)):
        pt = np.asarray(pt, dtype=bool)
        gt_t = np.asarray(gt_t, dtype=bool)
        stats.f1_pred_count[i] = np.count_nonzero(pt)
        stats.f1_gt_count[i] = np.count_nonzero(gt_t)
        stats.f1_pred_matched[i] = np.count_nonzero(
            pt & (_edge_distance_field(gt_t) <= F1_TOLERANCE))
        stats.f1_gt_matched[i] = np.count_nonzero(
            gt_t & (_edge_distance_field(pt) <= F1_TOLERANCE))
    return stats


def boundary_stats(pred, gt) -> BoundaryStats:
    p = _as_map(pred, "pred")
    g = _as_map(gt, "gt")
    if p.shape != g.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {g.shape}")
    pe = {t: extract_depth_edges(p, t) for t in F1_THRESHOLDS}
    ge = {t: extract_depth_edges(g, t) for t in F1_THRESHOLDS}
    return boundary_stats_from_edges(
        pe[DBE_EDGE_THRESHOLD], ge[DBE_EDGE_THRESHOLD],
        [pe[t] for t in F1_THRESHOLDS], [ge[t] for t in F1_THRESHOLDS])


def boundary_metrics(pred, gt) -> dict:
    return boundary_stats(pred, gt).finalize()


# --------------------------------------------------------------- normals

def normals_from_depth(depth, camera: PinholeCamera):
    """Unit normals from a z-depth map: unproject through the pinhole
    intrinsics, take central-difference tangents along the image axes,
    cross them, and orient the result toward the camera (against the view
    ray; for fronto-parallel surfaces this is the flip-positive-z rule,
    and unlike that rule it stays decisive on surfaces seen edge-on).
    Returns the normal map (3,H,W) and a validity mask; borders and
    degenerate pixels are invalid."""
    d = _as_map(depth, "depth")
    h, w = d.shape
    if h < 3 or w < 3:
        raise DimensionError("need at least 3x3 depth for central differences")
    uu, vv = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    rays = np.stack([(uu - camera.cx) / camera.fx,
                     (vv - camera.cy) / camera.fy,
                     np.ones_like(d)])
    pts = rays * d
    tan_u = (pts[:, 1:-1, 2:] - pts[:, 1:-1, :-2]) * 0.5
    tan_v = (pts[:, 2:, 1:-1] - pts[:, :-2, 1:-1]) * 0.5
    cross = np.cross(tan_u, tan_v, axis=0)
    length = np.sqrt(np.sum(cross * cross, axis=0))
    pos = d > 0
    usable = (pos[1:-1, 1:-1] & pos[1:-1, 2:] & pos[1:-1, :-2]
              & pos[2:, 1:-1] & pos[:-2, 1:-1] & (length > 0))
    flip = usable & (np.sum(cross * rays[:, 1:-1, 1:-1], axis=0) > 0)
    cross[:, flip] *= -1.0
    normals = np.zeros((3, h, w))
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = cross / length
    unit[:, ~usable] = 0.0
    normals[:, 1:-1, 1:-1] = unit
    valid = np.zeros((h, w), dtype=bool)
    valid[1:-1, 1:-1] = usable
    return normals, valid


@dataclass
class SmoothStats:
    count: int = 0
    sq_deg_sum: float = 0.0
    alpha_hits: np.ndarray = field(
        default_factory=lambda: np.zeros(len(ALPHA_THRESHOLDS)))

    def merge(self, other: "SmoothStats") -> "SmoothStats":
        return SmoothStats(self.count + other.count,
                           self.sq_deg_sum + other.sq_deg_sum,
                           self.alpha_hits + other.alpha_hits)

    def finalize(self) -> dict:
        if self.count == 0:
            raise EvaluationError("no valid normal pixels accumulated")
        n = float(self.count)
        a = 100.0 * self.alpha_hits / n
        return {"alpha_1125": a[0], "alpha_225": a[1], "alpha_30": a[2],
                "rmse_deg": math.sqrt(self.sq_deg_sum / n)}


def smoothness_stats(pred_normals, gt_normals, valid) -> SmoothStats:
    p = np.asarray(getattr(pred_normals, "data", pred_normals), dtype=float)
    g = np.asarray(getattr(gt_normals, "data", gt_normals), dtype=float)
    v = np.asarray(valid, dtype=bool)
    if p.shape != g.shape or p.ndim != 3 or p.shape[0] != 3:
        raise DimensionError(f"normal maps must share shape (3,H,W), got {p.shape} vs {g.shape}")
    if not v.any():
        raise EvaluationError("empty validity mask")
    dot = np.clip(np.sum(p * g, axis=0)[v], -1.0, 1.0)
    theta = np.degrees(np.arccos(dot))
    # bitwise-equal vectors subtend angle 0; the dot product alone rounds
    # their arccos to ~1e-7 degrees, which would spoil perfect scores
    theta[np.all(p == g, axis=0)[v]] = 0.0
    hits = np.array([np.count_nonzero(theta < t) for t in ALPHA_THRESHOLDS],
                    dtype=float)
    return SmoothStats(count=theta.size,
                       sq_deg_sum=float(np.sum(theta * theta)),
                       alpha_hits=hits)


def smoothness_metrics(pred_normals, gt_normals, valid) -> dict:
    return smoothness_stats(pred_normals, gt_normals, valid).finalize()


# ---------------------------------------------------------------- report

_REPORT_COLUMNS = (
    ("rmse", "rmse"), ("rmsle", "rmsle"), ("absrel", "absrel"),
    ("sqrel", "sqrel"),
    ("delta_105", "delta_1.05"), ("delta_110", "delta_1.10"),
    ("delta_125", "delta_1.25"), ("delta_125sq", "delta_1.25^2"),
    ("delta_125cu", "delta_1.25^3"),
    ("dbe_acc", "dbe_acc"), ("dbe_comp", "dbe_comp"),
    ("f1_025", "f1_0.25"), ("f1_050", "f1_0.50"), ("f1_100", "f1_1.00"),
    ("alpha_1125", "alpha_11.25"), ("alpha_225", "alpha_22.50"),
    ("alpha_30", "alpha_30.00"),
    ("rmse_deg", "rmse_deg"),
    ("i_d", "i_d"), ("i_b", "i_b"), ("i_s", "i_s"),
)


@dataclass
class MetricsReport:
    rmse: float
    rmsle: float
    absrel: float
    sqrel: float
    delta_105: float
    delta_110: float
    delta_125: float
    delta_125sq: float
    delta_125cu: float
    dbe_acc: float
    dbe_comp: float
    f1_025: float
    f1_050: float
    f1_100: float
    alpha_1125: float
    alpha_225: float
    alpha_30: float
    rmse_deg: float
    i_d: float = math.nan
    i_b: float = math.nan
    i_s: float = math.nan


def _safe_inverse(x: float) -> float:
    return math.inf if x <= 0 else 1.0 / x


def indicators(report: MetricsReport):
    """Aggregate indicators; ratio metrics enter as fractions. Perfect
    scores make a factor vanish and return the +infinity sentinel."""
    f1_mean = (report.f1_025 + report.f1_050 + report.f1_100) / 3.0
    alpha_mean = (report.alpha_1125 + report.alpha_225 + report.alpha_30) / 300.0
    i_d = _safe_inverse((1.0 - report.delta_125 / 100.0) * report.rmse)
    i_b = _safe_inverse((1.0 - f1_mean) * report.dbe_acc)
    i_s = _safe_inverse((1.0 - alpha_mean) * report.rmse_deg)
    return i_d, i_b, i_s


def build_report(depth: dict, boundary: dict, smooth: dict) -> MetricsReport:
    report = MetricsReport(**{**depth, **boundary, **smooth})
    report.i_d, report.i_b, report.i_s = indicators(report)
    return report


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.10g}"


def report_text(report: MetricsReport) -> str:
    lines = [f"{label} = {_fmt(getattr(report, attr))}"
             for attr, label in _REPORT_COLUMNS]
    return "\n".join(lines) + "\n"


def report_csv(named_reports) -> str:
    header = "model," + ",".join(label for _, label in _REPORT_COLUMNS)
    lines = [header]
    for name, report in named_reports:
        lines.append(name + "," + ",".join(
            _fmt(getattr(report, attr)) for attr, _ in _REPORT_COLUMNS))
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- radar

@dataclass
class RadarRow:
    name: str
    raw: np.ndarray
    axes: np.ndarray
    area: float


def radar_axes_raw(report: MetricsReport) -> np.ndarray:
    delta_sum = (report.delta_105 + report.delta_110 + report.delta_125
                 + report.delta_125sq + report.delta_125cu) / 100.0
    f1_mean = (report.f1_025 + report.f1_050 + report.f1_100) / 3.0
    alpha_mean = (report.alpha_1125 + report.alpha_225 + report.alpha_30) / 300.0
    return np.array([_safe_inverse(0.2 * delta_sum),
                     _safe_inverse(report.rmse * report.rmsle),
                     _safe_inverse(f1_mean),
                     _safe_inverse(report.dbe_acc * report.dbe_comp),
                     _safe_inverse(alpha_mean),
                     _safe_inverse(report.rmse_deg)])


def polygon_area(radii) -> float:
    r = np.asarray(radii, dtype=float)
    if r.shape != (len(RADAR_AXES),):
        raise ComparisonError(f"expected {len(RADAR_AXES)} radii, got shape {r.shape}")
    s = math.sin(math.pi / 3.0)
    return 0.5 * s * float(np.sum(r * np.roll(r, -1)))


def radar(named_reports) -> list:
    """Normalized radar rows for a comparison set. Each axis is min-max
    scaled across the set onto [floor, 1] with the better model at 1;
    areas are relative to the unit regular hexagon."""
    rows = list(named_reports)
    if len(rows) < 2:
        raise ComparisonError("radar normalization needs at least two models")
    raw = np.stack([radar_axes_raw(report) for _, report in rows])
    if not np.all(np.isfinite(raw)):
        raise ComparisonError("radar axes undefined for perfect scores")
    norm = np.ones_like(raw)
    for j in range(raw.shape[1]):
        lo, hi = raw[:, j].min(), raw[:, j].max()
        if hi == lo:
            continue
        t = (raw[:, j] - lo) / (hi - lo)
        if j in _ACCURACY_AXES:
            t = 1.0 - t
        norm[:, j] = RADAR_FLOOR + (1.0 - RADAR_FLOOR) * t
    return [RadarRow(name=name, raw=raw[i], axes=norm[i],
                     area=polygon_area(norm[i]) / HEXAGON_AREA)
            for i, (name, _) in enumerate(rows)]


def radar_csv(rows) -> str:
    header = "model," + ",".join(RADAR_AXES) + ",area"
    lines = [header]
    for row in rows:
        lines.append(row.name + "," + ",".join(_fmt(v) for v in row.axes)
                     + "," + _fmt(row.area))
    return "\n".join(lines) + "\n"
