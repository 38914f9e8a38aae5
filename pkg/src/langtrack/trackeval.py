"""Class-agnostic per video-prompt tracking metrics (AMOTA, AMOTP, MOTA, recall, IDS).

AMOTA follows the recall-integrated MOTAR definition used by the nuScenes
tracking benchmark: for each recall target the most conservative confidence
threshold reaching it is selected and MOTAR is evaluated there, with the
recall term taken as the recall actually achieved at that threshold.
Unreachable targets contribute zero. Frames are matched with an optimal
assignment on ground-plane centre distance, gated at ``gate`` metres.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .assign import solve_assignment
from .geom3d import Box3D

DEFAULT_GATE = 2.0
DEFAULT_RECALL_SAMPLES = 40
TABLE_COLUMNS = ("AMOTA", "AMOTP", "RECALL", "MOTA", "IDS")

GTFrames = Mapping[int, Sequence[tuple[int, Box3D]]]


@dataclass
class Tracklet:
    pred_id: int
    boxes: dict[int, Box3D]
    conf: dict[int, float]

    def __post_init__(self) -> None:
        if set(self.boxes) != set(self.conf):
            raise ValueError(f"tracklet {self.pred_id}: boxes and confidences cover different frames")
        for f, c in self.conf.items():
            if not (0.0 <= c <= 1.0):
                raise ValueError(f"tracklet {self.pred_id}: confidence {c!r} at frame {f} outside [0, 1]")


@dataclass(frozen=True)
class FrameMatch:
    tp: list[tuple[int, int, float]]  # (gt_id, pred_id, distance)
    fp: list[int]
    fn: list[int]


def _distance_matrix(gt_xy: np.ndarray, pred_xy: np.ndarray) -> np.ndarray:
    if len(gt_xy) == 0 or len(pred_xy) == 0:
        return np.zeros((len(gt_xy), len(pred_xy)))
    d = gt_xy[:, None, :] - pred_xy[None, :, :]
    return np.hypot(d[..., 0], d[..., 1])


def match_frame(gt: Sequence[tuple[int, Box3D]], pred: Sequence[tuple[int, Box3D]],
                gate: float = DEFAULT_GATE) -> FrameMatch:
    gt_xy = np.array([b.center[:2] for _, b in gt]).reshape(-1, 2)
    pred_xy = np.array([b.center[:2] for _, b in pred]).reshape(-1, 2)
    if len({b.frame for _, b in gt} | {b.frame for _, b in pred}) > 1:
        raise ValueError("ground truth and predictions are in different frames")
    dist = _distance_matrix(gt_xy, pred_xy)
    pairs = solve_assignment(dist, gate=gate)
    tp = [(gt[i][0], pred[j][0], float(dist[i, j])) for i, j in pairs]
    mg = {i for i, _ in pairs}
    mp = {j for _, j in pairs}
    return FrameMatch(
        tp=tp,
        fp=[pid for j, (pid, _) in enumerate(pred) if j not in mp],
        fn=[gid for i, (gid, _) in enumerate(gt) if i not in mg],
    )


@dataclass(frozen=True)
class ClearMot:
    mota: float
    motp: float
    recall: float
    ids: int
    fp: int
    fn: int
    tp: int
    n_gt: int

    @property
    def empty_gt(self) -> bool:
        return self.n_gt == 0


@dataclass
class _Frame:
    gt_ids: list[int]
    pred_ids: list[int]
    conf: np.ndarray
    dist: np.ndarray
    conf_sorted: np.ndarray = field(init=False)  # ascending, for counting kept predictions
    matches: dict = field(init=False)  # number kept -> [(gt_id, pred_id, distance)]

    def __post_init__(self) -> None:
        self.conf_sorted = np.sort(self.conf)
        self.matches = {}

    def matched(self, thr: float, gate: float) -> tuple[int, list[tuple[int, int, float]]]:
        n_keep = len(self.conf) - int(np.searchsorted(self.conf_sorted, thr, side="left"))
        if n_keep not in self.matches:
            keep = np.nonzero(self.conf >= thr)[0]
            pairs = []
            if len(keep) and self.gt_ids:
                dist = self.dist[:, keep]
                pairs = [(self.gt_ids[i], self.pred_ids[keep[j]], float(dist[i, j]))
                         for i, j in solve_assignment(dist, gate=gate)]
            self.matches[n_keep] = pairs
        return n_keep, self.matches[n_keep]


class PairEvaluator:
    """Pre-computed per-frame geometry for one video-prompt pair.

    Results for a confidence threshold are cached; thresholds are handled by
    rank in the sorted set of submitted confidences, so any strictly
    increasing re-mapping of confidences yields identical results.
    """

    def __init__(self, gt: GTFrames, preds: Sequence[Tracklet], gate: float = DEFAULT_GATE):
        self.gate = gate
        ids = [t.pred_id for t in preds]
        if len(set(ids)) != len(ids):
            raise ValueError("pred_ids must be unique within a pair")
        frames = sorted(set(gt) | {f for t in preds for f in t.boxes})
        self.frames: list[_Frame] = []
        all_conf = []
        for f in frames:
            g = sorted(gt.get(f, ()), key=lambda x: x[0])
            p = sorted(((t.pred_id, t.boxes[f], t.conf[f]) for t in preds if f in t.boxes), key=lambda x: x[0])
            gxy = np.array([b.center[:2] for _, b in g], dtype=np.float64).reshape(-1, 2)
            pxy = np.array([b.center[:2] for _, b, _ in p], dtype=np.float64).reshape(-1, 2)
            conf = np.array([c for _, _, c in p], dtype=np.float64)
            all_conf.append(conf)
            self.frames.append(_Frame([i for i, _ in g], [i for i, _, _ in p], conf, _distance_matrix(gxy, pxy)))
        self.n_gt = sum(len(fr.gt_ids) for fr in self.frames)
        # distinct confidences, most confident first
        self.thresholds = np.unique(np.concatenate(all_conf))[::-1] if all_conf else np.zeros(0)
        self._cache: dict[int, ClearMot] = {}

    def at_rank(self, rank: Optional[int]) -> ClearMot:
        """CLEAR MOT counts keeping predictions with conf >= thresholds[rank]; None keeps all."""
        key = -1 if rank is None else rank
        if key not in self._cache:
            thr = -math.inf if rank is None else float(self.thresholds[rank])
            self._cache[key] = self._run(thr)
        return self._cache[key]

    def _run(self, thr: float) -> ClearMot:
        last_match: dict[int, int] = {}
        tp = fp = fn = ids = 0
        dsum = 0.0
        gate = self.gate
        for fr in self.frames:
            n_keep, pairs = fr.matched(thr, gate)
            tp += len(pairs)
            fp += n_keep - len(pairs)
            fn += len(fr.gt_ids) - len(pairs)
            for gid, pid, d in pairs:
                dsum += d
                prev = last_match.get(gid)
                if prev is not None and prev != pid:
                    ids += 1
                last_match[gid] = pid
        n_gt = self.n_gt
        if n_gt == 0:
            return ClearMot(math.nan, math.nan, math.nan, ids, fp, fn, tp, 0)
        return ClearMot(
            mota=1.0 - (fp + fn + ids) / n_gt,
            motp=dsum / tp if tp else math.nan,
            recall=tp / n_gt,
            ids=ids, fp=fp, fn=fn, tp=tp, n_gt=n_gt,
        )


def compute_clearmot(gt: GTFrames, preds: Sequence[Tracklet], threshold: float = 0.0,
                     gate: float = DEFAULT_GATE) -> ClearMot:
    """CLEAR MOT counts using predictions with confidence >= ``threshold``."""
    kept = []
    for t in preds:
        frames = [f for f, c in t.conf.items() if c >= threshold]
        kept.append(Tracklet(t.pred_id, {f: t.boxes[f] for f in frames}, {f: t.conf[f] for f in frames}))
    return PairEvaluator(gt, kept, gate).at_rank(None)


@dataclass
class PairResult:
    amota: float
    amotp: float
    mota: float
    recall: float
    ids: int
    n_gt_boxes: int
    fp: int = 0
    fn: int = 0
    tp: int = 0
    motp: float = math.nan

    @property
    def empty_gt(self) -> bool:
        return self.n_gt_boxes == 0

    def to_dict(self) -> dict:
        return {k: (_round(v) if isinstance(v, float) else v) for k, v in asdict(self).items()}


def _round(x: float) -> Optional[float]:
    return None if math.isnan(x) else round(float(x), 6)


def motar(ids: int, fp: int, fn: int, n_gt: int, recall: float) -> float:
    """Recall-normalised MOTA, clipped below at zero."""
    if recall <= 0:
        return 0.0
    return max(0.0, 1.0 - (ids + fp + fn - (1.0 - recall) * n_gt) / (recall * n_gt))


def compute_amota_amotp(gt: GTFrames, preds: Sequence[Tracklet], n_recall: int = DEFAULT_RECALL_SAMPLES,
                        gate: float = DEFAULT_GATE) -> PairResult:
    if n_recall < 2:
        raise ValueError("n_recall must be >= 2")
    ev = PairEvaluator(gt, preds, gate)
    raw = ev.at_rank(None)
    P = ev.n_gt
    if P == 0:
        return PairResult(math.nan, math.nan, math.nan, math.nan, raw.ids, 0, fp=raw.fp)

    n_thr = len(ev.thresholds)
    k_max = n_recall - 1

    def reaches(rank: int, k: int) -> bool:
        # integer form of tp / P >= k / k_max
        return ev.at_rank(rank).tp * k_max >= k * P

    motars, motps = [], []
    for k in range(1, k_max + 1):
        if n_thr == 0 or not reaches(n_thr - 1, k):
            motars.append(0.0)
            continue
        lo, hi = 0, n_thr - 1  # smallest rank (highest threshold) reaching the target
        while lo < hi:
            mid = (lo + hi) // 2
            if reaches(mid, k):
                hi = mid
            else:
                lo = mid + 1
        m = ev.at_rank(lo)
        motars.append(motar(m.ids, m.fp, m.fn, P, m.recall))
        motps.append(m.motp)

    return PairResult(
        amota=float(sum(motars) / k_max),
        amotp=float(sum(motps) / len(motps)) if motps else gate,
        mota=raw.mota,
        recall=raw.recall,
        ids=raw.ids,
        n_gt_boxes=P,
        fp=raw.fp,
        fn=raw.fn,
        tp=raw.tp,
        motp=raw.motp,
    )


@dataclass
class BenchmarkReport:
    per_pair: list[tuple[tuple[str, str], PairResult]]
    mean: dict[str, float]
    extra_fp: int
    n_pairs: int
    n_empty: int
    totals: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "per_pair": [
                {"scene_id": s, "prompt_id": p, **r.to_dict()} for (s, p), r in self.per_pair
            ],
            "mean": {k: _round(v) for k, v in self.mean.items()},
            "extra_fp": self.extra_fp,
            "n_pairs": self.n_pairs,
            "n_empty_gt": self.n_empty,
            "totals": self.totals,
        }


def aggregate_benchmark(results: Iterable[tuple[tuple[str, str], PairResult]]) -> BenchmarkReport:
    """Unweighted mean over pairs with ground truth; empty-GT pairs only add FPs."""
    ordered = sorted(results, key=lambda kv: kv[0])
    valid = [r for _, r in ordered if not r.empty_gt]
    if not valid:
        raise ValueError("no video-prompt pair has ground-truth boxes")
    n = len(valid)
    mean = {
        "amota": sum(r.amota for r in valid) / n,
        "amotp": sum(r.amotp for r in valid) / n,
        "recall": sum(r.recall for r in valid) / n,
        "mota": sum(r.mota for r in valid) / n,
        "ids": sum(r.ids for r in valid) / n,
    }
    totals = {
        "ids": sum(r.ids for r in valid),
        "tp": sum(r.tp for r in valid),
        "fp": sum(r.fp for r in valid),
        "fn": sum(r.fn for r in valid),
        "gt_boxes": sum(r.n_gt_boxes for r in valid),
    }
    return BenchmarkReport(
        per_pair=ordered,
        mean=mean,
        extra_fp=sum(r.fp for r in (r for _, r in ordered) if r.empty_gt),
        n_pairs=n,
        n_empty=len(ordered) - n,
        totals=totals,
    )


def _row(label: str, amota, amotp, recall, mota, ids, label_width: int) -> str:
    def f(x, fmt):
        return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else format(x, fmt)
    return (f"{label:<{label_width}s} {f(amota, '.3f'):>7s} {f(amotp, '.3f'):>7s} "
            f"{f(recall * 100 if recall is not None and not math.isnan(recall) else math.nan, '.1f') + '%':>7s} "
            f"{f(mota, '.3f'):>7s} {ids:>7}")


def render_table(report: BenchmarkReport, per_pair: bool = False, label: str = "mean") -> str:
    """Plain-text table with the columns AMOTA AMOTP RECALL MOTA IDS."""
    width = max([len(label), 6] + ([len(f"{s} {p}") for (s, p), _ in report.per_pair] if per_pair else []))
    head = f"{'pair' if per_pair else 'method':<{width}s} " + " ".join(f"{c:>7s}" for c in TABLE_COLUMNS)
    lines = [head, "-" * len(head)]
    if per_pair:
        for (s, p), r in report.per_pair:
            if r.empty_gt:
                continue
            lines.append(_row(f"{s} {p}", r.amota, r.amotp, r.recall, r.mota, r.ids, width))
        lines.append("-" * len(head))
    m = report.mean
    lines.append(_row(label, m["amota"], m["amotp"], m["recall"], m["mota"], report.totals.get("ids", 0), width))
    return "\n".join(lines)


def render_sweep_table(rows: Sequence[tuple[float, BenchmarkReport, int]]) -> str:
    """Prompt-threshold sweep table: gamma | AMOTA | AMOTP | RECALL | referred boxes."""
    head = f"{'gamma_prompt':>12s} {'AMOTA':>7s} {'AMOTP':>7s} {'RECALL':>7s} {'BOXES':>8s}"
    lines = [head, "-" * len(head)]
    for gamma, rep, n_boxes in rows:
        m = rep.mean
        lines.append(f"{gamma:>12.1f} {m['amota']:>7.3f} {m['amotp']:>7.3f} {m['recall'] * 100:>6.1f}% {n_boxes:>8d}")
    return "\n".join(lines)
