import xml.etree.ElementTree as ET
from dataclasses import replace

import numpy as np
import pytest

from manipaug.augmenter import Augmenter, FieldCache
from manipaug.datamodel import decompose_moving, transform_objects
from manipaug.reporting import check_augmentation, summarize
from manipaug.svg import render_example, render_path
from manipaug.transforms import TransformParams


@pytest.fixture(scope="module")
def batch(planar, planar_env, planar_data):
    return Augmenter(planar, planar_env).augment_batch(planar_data[0], 8, seed=3)


def test_checks_agree_with_augmenter(batch, planar_env):
    fields = FieldCache(planar_env)
    for a in batch.augmented:
        c = check_augmentation(batch.source, a.example, fields)
        assert c["accepted"] == a.accepted and c["label"]
        if a.accepted:
            assert c["occupancy"] and c["bbox"] and c["rigid"]
            assert c["abs_delta_min_sdf"] == pytest.approx(a.diagnostics["abs_delta_min_sdf"], abs=1e-12)


def test_non_rigid_payload_is_caught(planar_env, planar_data):
    ex = planar_data[0]
    moved, _ = decompose_moving(ex)
    T = TransformParams([0.001, 0.0, 0.0], ex.object_by_id(moved[0]).points[0, 0])
    good = transform_objects(ex, T, moved)
    c = check_augmentation(ex, good, FieldCache(planar_env))
    assert c["rigid"]
    if len(moved) > 1:
        # stretch one moved object away from the others
        obj = good.object_by_id(moved[1])
        bad = replace(good, objects=tuple(replace(o, points=o.points + 0.01) if o.id == obj.id else o
                                          for o in good.objects))
        assert not check_augmentation(ex, bad, FieldCache(planar_env))["rigid"]


def test_label_change_is_caught(planar_env, planar_data):
    ex = replace(planar_data[0], label=1)
    assert not check_augmentation(ex, replace(ex, label=0), FieldCache(planar_env))["label"]


def test_summary_rates(batch, planar_env, planar):
    fields = FieldCache(planar_env)
    checks = [check_augmentation(batch.source, a.example, fields) for a in batch.augmented]
    records = [a.diagnostics for a in batch.augmented]
    s = summarize(checks, records, [t.values for t in batch.transforms], planar.default_bounds(), 1)
    assert s["counts"]["augmentations"] == 8
    assert s["rates"]["acceptance"] == pytest.approx(batch.accepted / 8)
    assert 0 <= s["diversity"]["diversity"] <= 1
    assert set(s["reasons"]) <= {"state_invalid", "ik_invalid", "occupancy_mismatch", "outside_workspace",
                                 "projection_stalled", "no_moved_objects"}
    empty = summarize([], None, [], planar.default_bounds())
    assert empty["rates"]["acceptance"] is None and empty["diversity"] is None


def test_svg_is_well_formed_and_stable(batch, planar_env, rope_data, rope_env):
    augs = [a.example for a in batch.augmented if a.accepted]
    svg = render_example(batch.source, planar_env, augs, ["note <&>"])
    root = ET.fromstring(svg)
    classes = {el.get("class") for el in root.iter()}
    assert {"obstacle", "original"} <= classes
    assert ("augmented" in classes) == bool(augs)
    assert svg == render_example(batch.source, planar_env, augs, ["note <&>"])
    ET.fromstring(render_example(rope_data[0], rope_env))
    ET.fromstring(render_example(batch.source, None))
    path = render_path(np.array([[0.0, 0.0, 0.0], [0.05, 0.02, 0.1]]), [-0.1, -0.1], [0.1, 0.1], [0.1, 0.1, 0])
    assert len(ET.fromstring(path).findall("{http://www.w3.org/2000/svg}circle")) == 3
