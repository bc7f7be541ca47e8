import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from manipaug.augmenter import (DEFAULT_K, Augmenter, FieldCache, augment, augment_batch, diversity_kl, draw_rng,
                                kl_per_dimension)
from manipaug.datamodel import Example, ObjectTrack, dumps_example, examples_equal
from manipaug.geometry import EnvironmentField
from manipaug.objectives import ObjectiveConfig
from manipaug.solver import SolverConfig
from manipaug.transforms import TransformBounds
from manipaug.validlearn import init_model


class NoIK:
    """Scenario wrapper whose robot adapter always fails."""

    def __init__(self, inner):
        self.inner = inner
        self.name, self.d = inner.name, inner.d

    def default_bounds(self):
        return self.inner.default_bounds()

    def ik(self, T, example, objects, env):
        robot, actions, _ = self.inner.ik(T, example, objects, env)
        return robot, actions, False


def test_default_k():
    assert DEFAULT_K == 25


def test_draw_rng_is_order_independent():
    a = draw_rng(7, 3, 2).random(4)
    draw_rng(7, 0, 0).random(100)
    np.testing.assert_array_equal(a, draw_rng(7, 3, 2).random(4))
    assert not np.array_equal(a, draw_rng(7, 3, 1).random(4))


def test_accepted_augmentation_moves_objects_and_keeps_label(planar, planar_env, planar_data):
    aug = Augmenter(planar, planar_env)
    batch = aug.augment_batch(planar_data[0], 10, seed=1)
    assert batch.k == 10 and batch.accepted > 0
    for a in batch.augmented:
        assert a.label == planar_data[0].label
        if a.accepted:
            assert a.diagnostics["reasons"] == [] and a.diagnostics["mismatch"] == 0
            assert not examples_equal(a.example, planar_data[0])
        else:
            assert a.example is planar_data[0]


def test_batch_is_a_prefix_of_a_longer_batch(planar, planar_env, planar_data):
    aug = Augmenter(planar, planar_env)
    short = aug.augment_batch(planar_data[1], 3, seed=5, example_index=1)
    long = aug.augment_batch(planar_data[1], 6, seed=5, example_index=1)
    for a, b in zip(short.augmented, long.augmented):
        assert dumps_example(a.example) == dumps_example(b.example)
        assert a.transform == b.transform


def test_ik_failure_returns_source_byte_identical(planar, planar_env, planar_data):
    ex = planar_data[2]
    out = Augmenter(NoIK(planar), planar_env).augment(ex, np.random.default_rng(0))
    assert not out.accepted
    assert "ik_invalid" in out.diagnostics["reasons"]
    assert dumps_example(out.example) == dumps_example(ex)


def test_state_failure_returns_source_byte_identical(planar, planar_env, planar_data, monkeypatch):
    monkeypatch.setattr(EnvironmentField, "in_grid", lambda self, p: np.zeros(len(p), dtype=bool))
    ex = planar_data[2]
    out = Augmenter(planar, planar_env).augment(ex, np.random.default_rng(0))
    assert not out.accepted and "state_invalid" in out.diagnostics["reasons"]
    assert dumps_example(out.example) == dumps_example(ex)


def test_example_without_moved_objects_is_rejected(planar, planar_env, planar_data):
    ex = planar_data[0]
    frozen = Example(ex.scenario, ex.env, [ObjectTrack(o.id, np.repeat(o.points[:1], ex.n_steps, axis=0),
                                                       radius=o.radius) for o in ex.objects],
                     ex.robot, ex.actions, ex.label)
    out = Augmenter(planar, planar_env).augment(frozen, np.random.default_rng(0))
    assert out.diagnostics["reasons"] == ["no_moved_objects"] and out.example is frozen


def test_argument_checks(planar, rope, planar_env, planar_data, rope_data):
    with pytest.raises(ValueError):
        Augmenter(planar, planar_env).augment(rope_data[0], np.random.default_rng(0))
    with pytest.raises(ValueError):
        Augmenter(planar, planar_env, model=init_model(6, rope.default_bounds(), np.random.default_rng(0)))
    with pytest.raises(ValueError):
        Augmenter(planar, planar_env, bounds=rope.default_bounds())
    with pytest.raises(ValueError):
        Augmenter(planar, planar_env).augment_batch(planar_data[0], 0)
    # dropping the validity term discards the model
    model = init_model(6, rope.default_bounds(), np.random.default_rng(0))
    assert Augmenter(planar, planar_env, ObjectiveConfig(drop={"valid"}), model=model).model is None


def test_module_level_helpers(planar, planar_env, planar_data):
    a = augment(planar_data[0], planar_env, ObjectiveConfig(), SolverConfig(), None, planar,
                draw_rng(0, 0, 0))
    b = augment_batch(planar_data[0], planar_env, planar, k=1, seed=0)
    assert dumps_example(a.example) == dumps_example(b.augmented[0].example)


def test_field_cache_reuses_fields(planar_env, planar_data):
    cache = FieldCache(planar_env, size=2)
    ex = planar_data[0]
    ids = [o.id for o in ex.objects][1:]
    assert cache(ex, ids) is cache(ex, ids)
    assert cache(ex, []) is planar_env


def test_kl_is_zero_for_exact_uniform_counts():
    b = TransformBounds([0, 0, -1], [1, 1, 1])
    grid = (np.arange(1000) + 0.5) / 1000
    vals = np.stack([grid, grid, 2 * grid - 1], axis=1)
    np.testing.assert_allclose(kl_per_dimension(vals, b, smoothing=0.0), 0.0, atol=1e-12)
    kl, div = diversity_kl(vals, b)
    assert kl == pytest.approx(0.0, abs=1e-12) and div == pytest.approx(1.0)


def test_kl_of_a_point_mass_is_log_bins():
    b = TransformBounds([0, 0, 0], [1, 1, 1])
    kl = kl_per_dimension(np.full((50, 3), 0.5), b, bins=10, smoothing=0.0)
    np.testing.assert_allclose(kl, np.log(10))


def test_kl_argument_checks():
    b = TransformBounds([0, 0, 0], [1, 1, 1])
    with pytest.raises(ValueError):
        kl_per_dimension(np.zeros((0, 3)), b)
    with pytest.raises(ValueError):
        kl_per_dimension(np.zeros((2, 3)), b, bins=1)
    with pytest.raises(ValueError):
        diversity_kl([], b)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=200), st.floats(0, 2))
def test_kl_is_nonnegative_and_bounded(xs, smoothing):
    b = TransformBounds([0, 0, 0], [1, 1, 1])
    vals = np.stack([xs, xs, xs], axis=1)
    kl = kl_per_dimension(vals, b, smoothing=smoothing)
    assert np.all(kl >= -1e-12) and np.all(kl <= np.log(10) + 1e-12)
