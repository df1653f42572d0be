"""Dice at global, per-case and per-tumor level, instance extraction and paired t-tests."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
from scipy import ndimage, special

LARGE_TUMOR_MM3 = 125.0
DEFAULT_MARGIN_VOX = 5
DASH = "—"

_STRUCTURE_26 = np.ones((3, 3, 3), dtype=bool)


def _binary(a):
    a = a.data if hasattr(a, "data") else a
    return np.asarray(a).astype(bool)


def _counts(pred, gt):
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} does not match ground truth {g.shape}")
    tp = int(np.count_nonzero(p & g))
    return tp, int(np.count_nonzero(p)) - tp, int(np.count_nonzero(g)) - tp


def _dice_from_counts(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def dice(pred, gt) -> float:
    """2|P & G| / (|P| + |G|), 1.0 when both are empty."""
    return _dice_from_counts(*_counts(pred, gt))


def global_dice(cases) -> float:
    """Dice on TP/FP/FN pooled over all ``(pred, gt)`` pairs."""
    tp = fp = fn = 0
    for pred, gt in cases:
        a, b, c = _counts(pred, gt)
        tp, fp, fn = tp + a, fp + b, fn + c
    return _dice_from_counts(tp, fp, fn)


def per_case_dice(cases):
    """Mean, population std and list of per-case Dice."""
    values = [dice(p, g) for p, g in cases]
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std()), values


@dataclass(frozen=True, eq=False)
class TumorInstance:
    case_id: str
    voxels: np.ndarray  # (n, 3) int (z, y, x), sorted in raster order
    volume_mm3: float
    bbox: tuple  # ((z0, y0, x0), (z1, y1, x1)), exclusive upper bound

    @property
    def voxel_count(self) -> int:
        return len(self.voxels)


def extract_instances(gt, spacing=None, case_id: str = "") -> list:
    """26-connected components of a mask, ordered by their first voxel in raster order."""
    g = _binary(gt)
    if spacing is None:
        spacing = getattr(gt, "spacing_mm", (1.0, 1.0, 1.0))
    voxel_mm3 = float(np.prod(spacing))
    labels, n = ndimage.label(g, structure=_STRUCTURE_26)
    instances = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        local = np.argwhere(labels[sl] == idx)
        coords = local + np.array([s.start for s in sl])
        lo = tuple(int(s.start) for s in sl)
        hi = tuple(int(s.stop) for s in sl)
        instances.append(TumorInstance(case_id, coords, len(coords) * voxel_mm3, (lo, hi)))
    instances.sort(key=lambda t: tuple(t.voxels[0]))
    return instances


def instance_dice(inst: TumorInstance, pred, margin_vox=DEFAULT_MARGIN_VOX, others=None) -> float:
    """Dice of one instance against ``pred`` inside its box dilated by ``margin_vox``.

    ``others`` is an optional mask of the remaining ground-truth tumors; predicted
    voxels on them are ignored so a neighbouring tumor never counts as a false positive.
    """
    p = _binary(pred)
    lo = [max(0, a - margin_vox) for a in inst.bbox[0]]
    hi = [min(n, b + margin_vox) for b, n in zip(inst.bbox[1], p.shape)]
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    local_gt = np.zeros([b - a for a, b in zip(lo, hi)], dtype=bool)
    rel = inst.voxels - np.array(lo)
    local_gt[rel[:, 0], rel[:, 1], rel[:, 2]] = True
    local_pred = p[box]
    if others is not None:
        local_pred = local_pred & ~(_binary(others)[box] & ~local_gt)
    return dice(local_pred, local_gt)


def _instance_masks(instances, shape):
    full = np.zeros(shape, dtype=bool)
    for inst in instances:
        full[tuple(inst.voxels.T)] = True
    return full


def per_tumor_dice(instances, pred, margin_vox=DEFAULT_MARGIN_VOX):
    """Dice of each instance against the prediction inside its margin-dilated box.

    Voxels of the other instances are excluded from the prediction in each box.
    """
    all_gt = _instance_masks(instances, _binary(pred).shape)
    values = [instance_dice(inst, pred, margin_vox, all_gt) for inst in instances]
    if not values:
        return math.nan, math.nan, values
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std()), values


def size_filter(instances, min_mm3=LARGE_TUMOR_MM3):
    return [t for t in instances if t.volume_mm3 >= min_mm3]


def paired_t_test(a, b):
    """Two-sided paired t-test; returns ``(t, p)``.

    The Student-t tail is taken from the regularized incomplete beta function:
    P(|T| > t) = I_{nu/(nu+t^2)}(nu/2, 1/2).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1D and equally long")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0:
        raise ValueError("differences have zero variance; t statistic undefined")
    t = float(d.mean() / (sd / math.sqrt(n)))
    nu = n - 1
    p = float(special.betainc(nu / 2.0, 0.5, nu / (nu + t * t)))
    return t, min(max(p, 0.0), 1.0)


# --------------------------------------------------------------------------- reports


@dataclass
class MetricsReport:
    variant: str
    global_dice: float
    case_ids: list
    per_case: list
    tumor_keys: list  # (case_id, instance index) per tumor
    per_tumor: list
    large_mask: list  # True where the tumor passes the size filter
    extras: dict = field(default_factory=dict)

    @property
    def per_tumor_large(self):
        return [v for v, big in zip(self.per_tumor, self.large_mask) if big]

    @property
    def large_keys(self):
        return [k for k, big in zip(self.tumor_keys, self.large_mask) if big]

    @staticmethod
    def _mean_std(values):
        if not values:
            return math.nan, math.nan
        arr = np.asarray(values, dtype=np.float64)
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return float(arr.mean()), sd

    def summary(self) -> dict:
        pc = self._mean_std(self.per_case)
        pt = self._mean_std(self.per_tumor)
        pl = self._mean_std(self.per_tumor_large)
        return {
            "variant": self.variant,
            "global_dice": self.global_dice,
            "per_case_mean": pc[0],
            "per_case_std": pc[1],
            "per_tumor_mean": pt[0],
            "per_tumor_std": pt[1],
            "per_tumor_large_mean": pl[0],
            "per_tumor_large_std": pl[1],
        }


def evaluate_cases(variant, cases, margin_vox=DEFAULT_MARGIN_VOX, min_mm3=LARGE_TUMOR_MM3) -> MetricsReport:
    """Build a report from ``(case_id, pred_mask, gt_mask)`` triples."""
    cases = sorted(cases, key=lambda c: c[0])
    pairs = [(p, g) for _, p, g in cases]
    per_case = [dice(p, g) for p, g in pairs]
    keys, values, large = [], [], []
    for case_id, pred, gt in cases:
        gt_bool = _binary(gt)
        for i, inst in enumerate(extract_instances(gt, case_id=case_id)):
            keys.append((case_id, i))
            values.append(instance_dice(inst, pred, margin_vox, gt_bool))
            large.append(inst.volume_mm3 >= min_mm3)
    return MetricsReport(variant, global_dice(pairs), [c[0] for c in cases], per_case, keys, values, large)


REPORT_COLUMNS = [
    "variant",
    "global_dice",
    "per_case_mean",
    "per_case_std",
    "per_tumor_mean",
    "per_tumor_std",
    "per_tumor_large_mean",
    "per_tumor_large_std",
    "p_per_case",
    "p_per_tumor",
    "p_per_tumor_large",
]


def _p_or_none(a, b):
    try:
        return paired_t_test(a, b)[1]
    except ValueError:
        return None


def report(reports, reference: str | None = "seg_il") -> list:
    """Table rows (dicts keyed by REPORT_COLUMNS) with p-values against ``reference``.

    p-values are None for the reference row, when there is no reference, and when
    the paired test is undefined (fewer than two pairs or identical results).
    """
    reports = list(reports)
    by_name = {r.variant: r for r in reports}
    ref = by_name.get(reference) if reference else None
    rows = []
    for r in reports:
        if ref is not None and r is not ref:
            if r.case_ids != ref.case_ids or r.tumor_keys != ref.tumor_keys:
                raise ValueError(f"variant {r.variant!r} was evaluated on different cases than {reference!r}")
        row = r.summary()
        if ref is None or r is ref:
            row.update(p_per_case=None, p_per_tumor=None, p_per_tumor_large=None)
        else:
            row["p_per_case"] = _p_or_none(r.per_case, ref.per_case)
            row["p_per_tumor"] = _p_or_none(r.per_tumor, ref.per_tumor)
            row["p_per_tumor_large"] = _p_or_none(r.per_tumor_large, ref.per_tumor_large)
        rows.append(row)
    return rows


def _fmt_raw(v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return DASH
    if isinstance(v, str):
        return v
    return f"{v:.6f}"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for row in rows:
        writer.writerow([_fmt_raw(row[c]) for c in REPORT_COLUMNS])
    return buf.getvalue()


def round_half_away(x: float, digits: int = 1) -> str:
    q = Decimal(1).scaleb(-digits)
    d = Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP)
    return f"{d:.{digits}f}"


def _pct(v):
    return DASH if v is None or math.isnan(v) else round_half_away(100.0 * v, 1)


def _pct_pm(mean, std):
    return DASH if math.isnan(mean) else f"{_pct(mean)} ± {_pct(std)}"


def _pval(p):
    return DASH if p is None else round_half_away(p, 4)


def rows_to_markdown(rows) -> str:
    """Render rows in the layout of a Dice comparison table (percent, one decimal)."""
    with_p = len(rows) > 1
    if with_p:
        header = ["Method", "Global Dice (%)", "Per case Dice (%)", "p-value", "Per tumor Dice (%)", "p-value",
                  f"Per tumor (>= {LARGE_TUMOR_MM3:g} mm^3) Dice (%)", "p-value"]
    else:
        header = ["Method", "Global Dice (%)", "Per case Dice (%)", "Per tumor Dice (%)",
                  f"Per tumor (>= {LARGE_TUMOR_MM3:g} mm^3) Dice (%)"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        cells = [r["variant"], _pct(r["global_dice"])]
        trio = [
            (_pct_pm(r["per_case_mean"], r["per_case_std"]), r["p_per_case"]),
            (_pct_pm(r["per_tumor_mean"], r["per_tumor_std"]), r["p_per_tumor"]),
            (_pct_pm(r["per_tumor_large_mean"], r["per_tumor_large_std"]), r["p_per_tumor_large"]),
        ]
        for text, p in trio:
            cells.append(text)
            if with_p:
                cells.append(_pval(p))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
