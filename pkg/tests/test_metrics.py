import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphpillars.errors import AlignmentError
from graphpillars.metrics import (
    THRESHOLDS, average_precision, evaluate, evaluate_sets, format_table, match, merge_matches, orientation_error,
    scale_error, tp_metrics, write_report,
)
from graphpillars.scene import CLASSES, Detection, ObbLabel, Scene, save_detections, save_scenes

from oracles import pooled_records, reference_ap, reference_tp


def _det(cx, cy, score, name="car", yaw=0.0, length=4.0, width=2.0):
    return Detection(cx, cy, length, width, yaw, name, score)


def _lab(cx, cy, name="car", yaw=0.0, length=4.0, width=2.0):
    return ObbLabel(cx, cy, length, width, yaw, name)


def test_error_helpers():
    assert orientation_error(0.1, -0.1) == pytest.approx(0.2)
    assert orientation_error(math.pi - 0.05, -math.pi + 0.05) == pytest.approx(0.1)
    assert scale_error(_det(0, 0, 1, length=4, width=2), _lab(5, 5, length=4, width=2)) == 0.0
    assert scale_error(_det(0, 0, 1, length=2, width=2), _lab(0, 0, length=4, width=2)) == pytest.approx(0.5)


def test_match_examples():
    labels = [_lab(0, 0), _lab(10, 0)]
    res = match([_det(0.3, 0, 0.9), _det(0.2, 0, 0.8), _det(10, 0, 0.5, "truck_bus")], labels, 1.0)
    assert res.is_tp.tolist() == [True, False, False]
    assert res.center_error[0] == pytest.approx(0.3) and np.isnan(res.center_error[1])
    # greedy by score: the higher-scored detection claims the shared label
    res = match([_det(0.9, 0, 0.4), _det(0.1, 0, 0.6)], [_lab(0, 0)], 1.0)
    assert res.scores.tolist() == [0.6, 0.4] and res.is_tp.tolist() == [True, False]


def test_perfect_detections_give_unit_map_and_zero_errors():
    scenes = [Scene(i, np.zeros((0, 4)), (_lab(i, 0, "car", 0.3), _lab(-5, 3, "pedestrian", 1.0, 0.7, 0.6)))
              for i in range(3)]
    dets = {s.scene_id: [Detection(l.cx, l.cy, l.length, l.width, l.yaw, l.class_name, 0.9) for l in s.labels]
            for s in scenes}
    rep = evaluate_sets(dets, scenes)
    for name in ("car", "pedestrian"):
        e = rep["class"][name]
        assert e["map"] == 1.0 and all(v == 1.0 for v in e["ap"].values())
        assert e["aoe"] == 0.0 and e["ate"] == 0.0 and e["ase"] == 0.0
    assert {w["class"] for w in rep["warnings"]} == {"truck_bus", "bicycle"}


def test_no_detections_scores_zero():
    scenes = [Scene(0, np.zeros((0, 4)), (_lab(0, 0),))]
    e = evaluate_sets({0: []}, scenes)["class"]["car"]
    assert e["map"] == 0.0 and e["aoe"] == 1.0 and e["tp"] == 0


def test_ap_hand_value():
    # two labels, ranked TP, FP, TP: precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1
    res = match([_det(0, 0, 0.9), _det(20, 0, 0.8), _det(10, 0, 0.7)], [_lab(0, 0), _lab(10, 0)], 1.0)
    # recall 0.10..0.49 -> p = 1; 0.50 -> 1/2; 0.50+k/100 -> 1/2 + k/300
    expect = (40 * 0.9 + 0.4 + sum(0.4 + k / 300 for k in range(1, 51))) / 91 / 0.9
    assert average_precision(res) == pytest.approx(expect, abs=1e-12)


def test_tp_metrics_four_tp_hand_case():
    labels = [_lab(10.0 * k, 0) for k in range(4)]
    dets = [_det(10.0 * k + 0.1 * (k + 1), 0, 0.9 - 0.1 * k, yaw=0.1 * (k + 1)) for k in range(4)]
    m = tp_metrics(match(dets, labels, 2.0))
    # cumulative mean of 0.1, 0.2, 0.3, 0.4 at recalls 1/4..1 is 0.05 + 0.2 r; flat 0.1 below 1/4
    expect = (15 * 0.1 + sum(0.05 + 0.002 * i for i in range(25, 101))) / 91
    assert m["aoe"] == pytest.approx(expect, abs=1e-12)
    assert m["ate"] == pytest.approx(expect, abs=1e-12)
    assert m["ase"] == 0.0


def _random_world(rng, n_scenes):
    scenes, dets = [], {}
    for sid in range(n_scenes):
        labels, out = [], []
        for _ in range(rng.integers(0, 6)):
            name = CLASSES[rng.integers(0, 4)]
            lab = ObbLabel(*rng.uniform(-20, 20, 2), *sorted(rng.uniform(0.5, 5, 2), reverse=True),
                           rng.uniform(-math.pi, math.pi), name)
            labels.append(lab)
            for _ in range(rng.integers(0, 3)):
                jitter = rng.normal(0, 1.5, 2)
                out.append(Detection(lab.cx + jitter[0], lab.cy + jitter[1], lab.length * rng.uniform(0.7, 1.3),
                                     lab.width * rng.uniform(0.7, 1.3), rng.uniform(-math.pi, math.pi),
                                     name, float(rng.choice([0.5, rng.uniform(0.01, 1)]))))
        for _ in range(rng.integers(0, 3)):
            out.append(Detection(*rng.uniform(-20, 20, 2), 2.0, 1.0, 0.0, CLASSES[rng.integers(0, 4)],
                                 float(rng.uniform(0.01, 1))))
        scenes.append(Scene(sid, np.zeros((0, 4)), tuple(labels)))
        dets[sid] = out
    return scenes, dets


def _as_tuples(dets, labels, name):
    d = [(x.cx, x.cy, x.yaw, x.length, x.width, x.class_name, x.score) for x in dets if x.class_name == name]
    lab = [(x.cx, x.cy, x.yaw, x.length, x.width, x.class_name) for x in labels if x.class_name == name]
    return d, lab


@pytest.mark.parametrize("seed", range(3))
def test_metrics_match_brute_force_reference(seed):
    rng = np.random.default_rng(seed)
    scenes, dets = _random_world(rng, 60)
    rep = evaluate_sets(dets, scenes)
    for name in CLASSES:
        pairs = [_as_tuples(dets[s.scene_id], s.labels, name) for s in scenes]
        num_gt = sum(len(lab) for _, lab in pairs)
        if num_gt == 0:
            assert name not in rep["class"]
            continue
        e = rep["class"][name]
        for thr in THRESHOLDS:
            records = pooled_records([d for d, _ in pairs], [lab for _, lab in pairs], thr)
            assert abs(e["ap"][f"{thr:.1f}"] - reference_ap(records, num_gt)) <= 1e-9
        records = pooled_records([d for d, _ in pairs], [lab for _, lab in pairs], 2.0)
        aoe, ate, ase = reference_tp(records, num_gt)
        assert abs(e["aoe"] - aoe) <= 1e-9 and abs(e["ate"] - ate) <= 1e-9 and abs(e["ase"] - ase) <= 1e-9
        ref_map = np.mean([reference_ap(pooled_records([d for d, _ in pairs], [lab for _, lab in pairs], t),
                                        num_gt) for t in THRESHOLDS])
        assert abs(e["map"] - ref_map) <= 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ap_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    scenes, dets = _random_world(rng, 8)
    rep = evaluate_sets(dets, scenes)
    for e in rep["class"].values():
        aps = [e["ap"][f"{t:.1f}"] for t in THRESHOLDS]
        assert all(a <= b + 1e-12 for a, b in zip(aps, aps[1:]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_tp_metrics_ignore_unmatched_false_positives(seed):
    rng = np.random.default_rng(seed)
    scenes, dets = _random_world(rng, 6)
    base = evaluate_sets(dets, scenes)
    noisy = {k: v + [Detection(500.0 + i, 500.0, 2, 1, 0, c, float(rng.uniform(0.01, 1)))
                     for i, c in enumerate(CLASSES)] for k, v in dets.items()}
    rep = evaluate_sets(noisy, scenes)
    for name, e in base["class"].items():
        for key in ("aoe", "ate", "ase"):
            assert rep["class"][name][key] == e[key]
        assert all(rep["class"][name]["ap"][k] <= v for k, v in e["ap"].items())


def test_duplicates_become_false_positives():
    res = match([_det(0, 0, 0.9), _det(0.1, 0, 0.8), _det(0.2, 0, 0.7)], [_lab(0, 0)], 0.5)
    assert res.num_tp == 1 and res.num_fp == 2


def test_merge_is_score_sorted_and_stable():
    a = match([_det(0, 0, 0.5)], [_lab(0, 0)], 1.0)
    b = match([_det(0, 0, 0.5), _det(0, 0, 0.9)], [_lab(0, 0)], 1.0)
    m = merge_matches([a, b])
    assert m.scores.tolist() == [0.9, 0.5, 0.5] and m.num_gt == 2
    assert m.is_tp.tolist() == [True, True, False]


def test_alignment_error():
    scenes = [Scene(0, np.zeros((0, 4)), (_lab(0, 0),))]
    with pytest.raises(AlignmentError):
        evaluate_sets({1: []}, scenes)
    with pytest.raises(AlignmentError):
        evaluate_sets({0: [], 1: []}, scenes)


def test_evaluate_files_and_table(tmp_path):
    scenes = [Scene(0, np.zeros((0, 4)), (_lab(0, 0),)), Scene(1, np.zeros((0, 4)), (_lab(3, 3, "bicycle"),))]
    save_scenes(scenes, tmp_path / "s.jsonl")
    save_detections({0: [_det(0, 0, 0.8)], 1: []}, tmp_path / "d.jsonl", {"score_threshold": 0.3})
    rep = evaluate(tmp_path / "d.jsonl", tmp_path / "s.jsonl")
    assert rep["class"]["car"]["map"] == 1.0 and rep["class"]["bicycle"]["map"] == 0.0
    assert rep["config"]["score_threshold"] == 0.3
    write_report(rep, tmp_path / "r.json")
    table = format_table(rep)
    assert table.splitlines()[0].startswith("class") and "1.000" in table
