import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from langtrack.trackeval import (PairResult, TABLE_COLUMNS, Tracklet, aggregate_benchmark, compute_amota_amotp,
                                 compute_clearmot, match_frame, render_sweep_table, render_table)

from scenario import box, swap_scenario


def test_match_frame_reference():
    gt = [(1, box(0)), (2, box(10))]
    pred = [(7, box(1)), (8, box(9.5))]
    m = match_frame(gt, pred)
    assert sorted(m.tp) == [(1, 7, 1.0), (2, 8, 0.5)]
    assert m.fp == [] and m.fn == []


def test_match_frame_identity_and_empty():
    gt = [(1, box(0)), (2, box(5)), (3, box(9))]
    assert [d for _, _, d in match_frame(gt, gt).tp] == [0.0, 0.0, 0.0]
    assert match_frame(gt, []).fn == [1, 2, 3]


def test_match_frame_gate_is_exclusive():
    assert match_frame([(1, box(0))], [(2, box(2.0))]).tp == []


def test_swap_counts_one_switch_per_track():
    gt, preds = swap_scenario()
    m = compute_clearmot(gt, preds)
    assert m.ids == 2
    assert m.tp == 20 and m.fp == 0 and m.fn == 0
    assert m.mota == pytest.approx(1 - 2 / 20)


def test_perfect_and_shifted():
    gt, _ = swap_scenario()
    perfect = [Tracklet(gid, {f: b for f, items in gt.items() for g, b in items if g == gid},
                        {f: 1.0 for f in gt}) for gid in (1, 2)]
    m = compute_clearmot(gt, perfect)
    assert (m.mota, m.ids, m.recall, m.motp) == (1.0, 0, 1.0, 0.0)
    shifted = [Tracklet(t.pred_id, {f: b.with_center(np.add(b.center, (0.6, 0.8, 0.0))) for f, b in t.boxes.items()},
                        t.conf) for t in perfect]
    r = compute_amota_amotp(gt, shifted)
    assert r.amotp == pytest.approx(1.0, abs=1e-9) and r.amota == 1.0
    assert compute_amota_amotp(gt, perfect).amotp == 0.0


def test_empty_submission():
    gt, _ = swap_scenario()
    assert compute_amota_amotp(gt, []).amota == 0.0


def test_half_recall_toy_pair():
    # 10 GT boxes, 5 recovered at one confidence: only recall targets up to 1/2
    # are reachable, each at the same threshold with FP = IDS = 0.
    gt = {f: [(1, box(0)), (2, box(10))] for f in range(5)}
    preds = [Tracklet(1, {f: box(0) for f in range(5)}, {f: 0.5 for f in range(5)})]
    n = 40
    targets = [k / (n - 1) for k in range(1, n)]
    P, tp = 10, 5
    rec = tp / P
    terms = [max(0.0, 1 - (0 + 0 + (P - tp) - (1 - rec) * P) / (rec * P)) if r <= rec else 0.0 for r in targets]
    assert compute_amota_amotp(gt, preds, n_recall=n).amota == pytest.approx(sum(terms) / len(terms))


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        Tracklet(1, {0: box(0)}, {0: 1.5})
    with pytest.raises(ValueError):
        compute_amota_amotp({0: [(1, box(0))]}, [], n_recall=1)


def result(amota, **kw):
    return PairResult(amota=amota, amotp=0.1, mota=amota, recall=0.9, ids=0, n_gt_boxes=kw.pop("n", 10), **kw)


def test_aggregate_mean_and_extra_fp():
    rep = aggregate_benchmark([(("s", "a"), result(0.2)), (("s", "b"), result(0.4))])
    assert rep.mean["amota"] == pytest.approx(0.3)
    empty = PairResult(math.nan, math.nan, math.nan, math.nan, 0, 0, fp=7)
    rep = aggregate_benchmark([(("s", "a"), result(0.2)), (("s", "z"), empty)])
    assert rep.mean["amota"] == 0.2 and rep.extra_fp == 7 and rep.n_empty == 1


def test_aggregate_all_empty():
    with pytest.raises(ValueError):
        aggregate_benchmark([(("s", "z"), PairResult(math.nan, math.nan, math.nan, math.nan, 0, 0))])


def test_table_columns():
    rep = aggregate_benchmark([(("s", "a"), result(0.2)), (("s", "b"), result(0.4))])
    text = render_table(rep, per_pair=True)
    header = text.splitlines()[0].split()
    assert header[1:] == list(TABLE_COLUMNS) == ["AMOTA", "AMOTP", "RECALL", "MOTA", "IDS"]
    rows = text.splitlines()
    assert rows[2].startswith("s a") and rows[3].startswith("s b") and rows[-1].startswith("mean")


def test_sweep_table():
    rep = aggregate_benchmark([(("s", "a"), result(0.2))])
    lines = render_sweep_table([(0.1, rep, 30), (0.2, rep, 20)]).splitlines()
    assert lines[0].split() == ["gamma_prompt", "AMOTA", "AMOTP", "RECALL", "BOXES"]
    assert lines[2].split()[0] == "0.1" and lines[3].split()[-1] == "20"


def noisy_submission(rng, gt, n_clutter):
    preds = []
    for gid in (1, 2):
        frames = [f for f in gt if rng.random() < 0.8]
        bx = {f: box(b.center[0] + rng.normal(0, 0.5), b.center[1]) for f in frames for g, b in gt[f] if g == gid}
        preds.append(Tracklet(gid, bx, {f: float(rng.random()) for f in bx}))
    for k in range(n_clutter):
        f = int(rng.integers(0, len(gt)))
        preds.append(Tracklet(1000 + k, {f: box(50.0 + k)}, {f: float(rng.random())}))
    return preds


@given(st.integers(0, 10_000))
def test_amota_bounds_and_fp_removal(seed):
    rng = np.random.default_rng(seed)
    gt, _ = swap_scenario()
    preds = noisy_submission(rng, gt, n_clutter=3)
    full = compute_amota_amotp(gt, preds).amota
    cleaned = compute_amota_amotp(gt, [t for t in preds if t.pred_id < 1000]).amota
    assert 0.0 <= full <= 1.0
    assert cleaned >= full


@given(st.integers(0, 10_000))
def test_monotone_confidence_map(seed):
    rng = np.random.default_rng(seed)
    gt, _ = swap_scenario()
    preds = noisy_submission(rng, gt, n_clutter=2)
    mapped = [Tracklet(t.pred_id, t.boxes, {f: c ** 3 for f, c in t.conf.items()}) for t in preds]
    assert compute_amota_amotp(gt, preds).amota == compute_amota_amotp(gt, mapped).amota
