"""Acceptance suite: one PASS/FAIL line per criterion.

Each test records its verdict (and the measured numbers) before asserting, so
the summary at the end of the run lists every criterion even when some fail.
"""

import json
import time

import numpy as np
import pytest
from scipy import stats

from manipaug import scenarios as sc
from manipaug.augmenter import DEFAULT_K, Augmenter, FieldCache, kl_per_dimension
from manipaug.cli import main, resolve_configs, run_augmentation
from manipaug.datamodel import decompose_moving, dumps_example, loads_example, save_dataset
from manipaug.geometry import EnvironmentField, save_environment
from manipaug.objectives import (DEFAULT_BETA, ObjectiveConfig, ProjectionObjective, bbox_loss, dmd_loss,
                                 occ_gradient_points)
from manipaug.reporting import check_augmentation
from manipaug.solver import SolverConfig
from manipaug.transforms import TransformParams, apply_to_points, sample_uniform
from manipaug.validlearn import (collect_validity_data, init_model, n_valid_for, save_model,
                                 train_validity_model)

from conftest import ACCEPTANCE

FIXTURE_SEED = 2024
FIXTURE_SIZE = 200
FD_STEP = 1e-5


def record(n, ok, detail, capsys):
    ACCEPTANCE[n] = (bool(ok), detail)
    with capsys.disabled():
        print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------------------
# shared fixtures


@pytest.fixture(scope="module")
def fixture_data(planar):
    """Contact-rich planar fixture: 9 discs, 3 obstacle primitives."""
    return planar.generate(FIXTURE_SIZE, np.random.default_rng(FIXTURE_SEED))


def _learn(scenario, seed, n_valid=None):
    """Same pipeline as ``manipaug learn-valid --seed``."""
    if scenario.name == "planar":
        scenario = sc.PlanarScenario(scenario.probe_world())
    bounds = scenario.default_bounds()
    rng = np.random.default_rng(seed)
    n_valid = n_valid or n_valid_for(scenario.d)
    data = collect_validity_data(scenario, scenario.probes(rng), bounds, n_valid, rng)
    return data, train_validity_model(data, bounds, rng=rng)


@pytest.fixture(scope="module")
def planar_model(planar):
    return _learn(planar, 0)[1]


_RUNS: dict = {}


def _run(cond, planar, planar_env, fixture_data, model):
    """Augment the fixture once per condition; cached across criteria."""
    if cond not in _RUNS:
        drop = () if cond == "full" else (cond,)
        objective, solver, bounds = resolve_configs({}, drop, planar)
        start = time.perf_counter()
        results = run_augmentation(fixture_data, planar_env, planar, objective, solver, bounds, model,
                                   DEFAULT_K, 0, 1)
        aug_time = time.perf_counter() - start
        fields = FieldCache(planar_env)
        checks = [check_augmentation(fixture_data[n // DEFAULT_K], loads_example(p), fields)
                  for n, (p, _) in enumerate(results)]
        _RUNS[cond] = {"results": results, "checks": checks, "records": [r for _, r in results],
                       "aug_time": aug_time, "time": time.perf_counter() - start}
    return _RUNS[cond]


def _accepted(run):
    return [c for c in run["checks"] if c["accepted"]]


# ---------------------------------------------------------------------------
# 1. gradient correctness


def _rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.linalg.norm(a), 1e-12))


def _fd(f, T):
    g = np.zeros(T.d)
    for j in range(T.d):
        e = np.zeros(T.d)
        e[j] = FD_STEP
        g[j] = (f(T.with_values(T.values + e, check=False)) - f(T.with_values(T.values - e, check=False))) \
            / (2 * FD_STEP)
    return g


def _perturbed(T, points):
    """Transformed points at T and at every +/- FD_STEP perturbation."""
    out = [apply_to_points(T, points)[0]]
    for j in range(T.d):
        for s in (1, -1):
            e = np.zeros(T.d)
            e[j] = s * FD_STEP
            out.append(apply_to_points(T.with_values(T.values + e, check=False), points)[0])
    return out


def _same_cells(env, stack):
    cells = [np.floor((p - env.origin) / env.resolution) for p in stack]
    return all(np.array_equal(cells[0], c) for c in cells[1:])


def _configs(planar, planar_env, planar_data, rope, rope_env, rope_data):
    """Alternate planar and rope examples with their fields and point offsets."""
    out = []
    for scenario, env, data in ((planar, planar_env, planar_data), (rope, rope_env, rope_data)):
        fields = FieldCache(env)
        for ex in data:
            moved, stationary = decompose_moving(ex)
            obj = ProjectionObjective.for_example(ex, fields(ex, stationary), ObjectiveConfig(), None, moved)
            out.append((scenario, obj))
    return out


def test_criterion_1_gradients(planar, planar_env, planar_data, rope, rope_env, rope_data, capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    configs = _configs(planar, planar_env, planar_data, rope, rope_env, rope_data)
    errs = {"bbox": [], "dmd": [], "valid": []}
    occ_ok, occ_n = 0, 0
    models = {3: init_model(3, planar.default_bounds(), rng), 6: init_model(6, rope.default_bounds(), rng)}
    for m in models.values():
        m.y_scale = 0.1
    tries = 0
    while min(len(v) for v in errs.values()) < 100 or occ_n < 100:
        tries += 1
        assert tries < 200_000, "could not find enough non-degenerate configurations"
        scenario, obj = configs[tries % len(configs)]
        env, pts = obj.env, obj.points
        T = sample_uniform(scenario.default_bounds(), rng, pts.mean(axis=0))
        stack = _perturbed(T, pts)
        aug = stack[0]

        if len(errs["bbox"]) < 100:
            # tight workspace so that some points sit outside; no coordinate near a face
            lo, hi = pts.mean(axis=0) - 0.05, pts.mean(axis=0) + 0.05
            dist = np.minimum(np.abs(aug - lo), np.abs(aug - hi))
            if dist.min() > 10 * FD_STEP and bbox_loss(aug, (lo, hi))[0] > 0:
                _, g = bbox_loss(aug, (lo, hi), T, pts)
                fd = _fd(lambda U: bbox_loss(apply_to_points(U, pts)[0], (lo, hi))[0], T)
                errs["bbox"].append(_rel_err(g, fd))

        if len(errs["dmd"]) < 100 and _same_cells(env, [s[obj.min_index:obj.min_index + 1] for s in stack]) \
                and env.in_grid(aug[obj.min_index:obj.min_index + 1]).all():
            value, g = dmd_loss(pts, aug, env, obj.offsets, T)
            if value > 1e-10:
                fd = _fd(lambda U: dmd_loss(pts, apply_to_points(U, pts)[0], env, obj.offsets)[0], T)
                errs["dmd"].append(_rel_err(g, fd))

        if len(errs["valid"]) < 100:
            m = models[T.d]
            value, g = m.evaluate_with_gradient(T.values)
            fd = _fd(lambda U: m.predict(U.values)[0], T)
            errs["valid"].append(_rel_err(g, fd))

        if occ_n < 100:
            clear = env.query(aug)[0] - obj.offsets
            mism = (obj.clear_orig <= 0) != (clear <= 0)
            others = np.abs(clear[~mism])
            # a single mismatched point, and every other point clear of the threshold
            if mism.sum() == 1 and (others.size == 0 or others.min() > 1e-3):
                ov = ObjectiveConfig().occ_overshoot
                _, g, before = occ_gradient_points(pts, aug, env, obj.offsets, T, ov)
                step = 1e-4 * g / np.linalg.norm(g)
                U = T.with_values(T.values - step, check=False)
                _, _, after = occ_gradient_points(pts, apply_to_points(U, pts)[0], env, obj.offsets, None, ov)
                occ_n += 1
                occ_ok += after < before
    elapsed = time.perf_counter() - start
    worst = {k: max(v) for k, v in errs.items()}
    ok = all(w <= 1e-3 for w in worst.values()) and occ_ok == occ_n and elapsed < 10
    record(1, ok, f"max rel err bbox={worst['bbox']:.1e} dmd={worst['dmd']:.1e} valid={worst['valid']:.1e} "
                  f"(100 configs each); occ descent {occ_ok}/{occ_n}; {elapsed:.1f}s < 10s", capsys)
    assert ok


# ---------------------------------------------------------------------------
# 2. occupancy preservation, 3. near-contact preservation


def test_criterion_2_occupancy(planar, planar_env, fixture_data, planar_model, capsys):
    full = _run("full", planar, planar_env, fixture_data, planar_model)
    no_occ = _run("occ", planar, planar_env, fixture_data, planar_model)
    acc = _accepted(full)
    preserved = float(np.mean([c["occupancy"] for c in acc]))
    raw_full = float(np.mean([r["mismatch"] > 0 for r in full["records"] if "mismatch" in r]))
    raw_drop = float(np.mean([r["mismatch"] > 0 for r in no_occ["records"] if "mismatch" in r]))
    elapsed = full["time"] + no_occ["time"]
    ratio = raw_drop / raw_full if raw_full > 0 else float("inf")
    ok = preserved >= 0.95 and raw_drop > 0 and raw_drop >= 5 * raw_full and elapsed < 300
    record(2, ok, f"occupancy preserved on {preserved:.3f} of {len(acc)} accepted (>=0.95); raw mismatch "
                  f"full={raw_full:.4f} drop-occ={raw_drop:.4f} ratio={ratio:.1f} (>=5); "
                  f"{elapsed:.0f}s < 300s for {2 * len(full['records'])} augmentations", capsys)
    assert ok


def test_criterion_3_near_contact(planar, planar_env, fixture_data, planar_model, capsys):
    full = _run("full", planar, planar_env, fixture_data, planar_model)
    no_dmd = _run("dmd", planar, planar_env, fixture_data, planar_model)
    acc = _accepted(full)
    within = float(np.mean([c["dmd"] for c in acc]))
    med_full = float(np.median([c["abs_delta_min_sdf"] for c in acc]))
    med_drop = float(np.median([c["abs_delta_min_sdf"] for c in _accepted(no_dmd)]))
    ok = within >= 0.90 and med_drop > med_full
    record(3, ok, f"|dSDF(p_min)| <= 2*res on {within:.3f} of accepted (>=0.90); median |dSDF| "
                  f"full={med_full:.5f} drop-dmd={med_drop:.5f} (must increase)", capsys)
    assert ok


# ---------------------------------------------------------------------------
# 4. diversity


def test_criterion_4_diversity(planar_model, capsys):
    start = time.perf_counter()
    world = sc.free_space_world()
    scenario = sc.PlanarScenario(world)
    env = world.environment()
    example = scenario.generate(1, np.random.default_rng(0))[0]
    bounds = scenario.default_bounds()
    batch = Augmenter(scenario, env, model=planar_model).augment_batch(example, 1000, seed=0)
    vals = np.array([a.transform.values for a in batch.augmented if a.accepted])
    ks = [stats.kstest(vals[:, j], "uniform", args=(bounds.lower[j], bounds.upper[j] - bounds.lower[j])).statistic
          for j in range(bounds.d)]
    kl = kl_per_dimension(vals, bounds, smoothing=0.0)
    # oracle: direct uniform draws at the same sample size
    direct = np.random.default_rng(1).uniform(bounds.lower, bounds.upper, size=vals.shape)
    ks_o = [stats.kstest(direct[:, j], "uniform", args=(bounds.lower[j], bounds.upper[j] - bounds.lower[j]))
            .statistic for j in range(bounds.d)]
    kl_o = kl_per_dimension(direct, bounds, smoothing=0.0)
    elapsed = time.perf_counter() - start
    ok = (len(vals) >= 950 and max(ks) <= 0.05 and max(kl) <= 0.05 and max(ks_o) <= 0.05 and max(kl_o) <= 0.05
          and elapsed < 60)
    record(4, ok, f"{len(vals)}/1000 accepted; KS per dim {np.round(ks, 4).tolist()} KL per dim "
                  f"{np.round(kl, 4).tolist()} (<=0.05); oracle KS max {max(ks_o):.4f} KL max {max(kl_o):.4f}; "
                  f"{elapsed:.1f}s < 60s", capsys)
    assert ok


# ---------------------------------------------------------------------------
# 5. fallback


class _FailingIK:
    def __init__(self, inner):
        self.inner, self.name, self.d = inner, inner.name, inner.d

    def default_bounds(self):
        return self.inner.default_bounds()

    def ik(self, T, example, objects, env):
        robot, actions, _ = self.inner.ik(T, example, objects, env)
        return robot, actions, False


def test_criterion_5_fallback(planar, planar_env, planar_data, rope, rope_env, rope_data, monkeypatch, capsys):
    checked, identical = 0, 0
    cases = [(planar, planar_env, ex) for ex in planar_data] + [(rope, rope_env, ex) for ex in rope_data]
    for scenario, env, ex in cases:
        for j in range(3):
            out = Augmenter(_FailingIK(scenario), env).augment(ex, np.random.default_rng(j))
            checked += 1
            identical += (not out.accepted) and dumps_example(out.example) == dumps_example(ex) \
                and "ik_invalid" in out.diagnostics["reasons"]
    with monkeypatch.context() as m:
        m.setattr(EnvironmentField, "in_grid", lambda self, p: np.zeros(len(p), dtype=bool))
        for scenario, env, ex in cases:
            for j in range(3):
                out = Augmenter(scenario, env).augment(ex, np.random.default_rng(j))
                checked += 1
                identical += (not out.accepted) and dumps_example(out.example) == dumps_example(ex) \
                    and "state_invalid" in out.diagnostics["reasons"]
    ok = identical == checked
    record(5, ok, f"{identical}/{checked} forced ik_valid/state_valid failures returned the source byte-identically",
           capsys)
    assert ok


# ---------------------------------------------------------------------------
# 6. defaults


def test_criterion_6_defaults(planar, rope, capsys):
    s = SolverConfig()
    got = {"N_p": s.N_p, "M_p": s.M_p, "delta_p": s.delta_p, "epsilon_p": s.epsilon_p,
           "beta": ObjectiveConfig().beta, "k": DEFAULT_K}
    want = {"N_p": 5, "M_p": 25, "delta_p": 0.001, "epsilon_p": 0.0003, "beta": (0.05, 1.0, 1.0, 0.1), "k": 25}
    # the configuration the CLI resolves when no config file is given
    for scenario in (planar, rope):
        objective, solver, _ = resolve_configs({}, (), scenario)
        assert objective.beta == DEFAULT_BETA and solver == s
    ok = got == want
    record(6, ok, f"defaults {got}", capsys)
    assert ok


# ---------------------------------------------------------------------------
# 7. sizing, 8. learned validity direction


_ROPE_MODELS: dict = {}


def _rope_run(rope, seed):
    if seed not in _ROPE_MODELS:
        _ROPE_MODELS[seed] = _learn(rope, seed)
    return _ROPE_MODELS[seed]


def test_criterion_7_sizing(planar, rope, capsys):
    planar_data, _ = _learn(planar, 0)
    rope_data, _ = _rope_run(rope, 0)
    sizes = (n_valid_for(6), n_valid_for(3))
    ok = sizes == (1000, 32) and len(rope_data) == 1000 and len(planar_data) == 32
    record(7, ok, f"n_valid d=6 -> {sizes[0]}, d=3 -> {sizes[1]}; collected rope={len(rope_data)} "
                  f"planar={len(planar_data)}", capsys)
    assert ok


def test_criterion_8_validity_direction(rope, capsys):
    sideways = np.array([0.0, 0.0, 0.0, np.pi / 2, 0.0, 0.0])
    wins, margins = 0, []
    for seed in range(10):
        _, model = _rope_run(rope, seed)
        s, i = model.predict(sideways)[0], model.predict(np.zeros(6))[0]
        wins += s > i
        margins.append(s - i)
    ok = wins >= 9
    record(8, ok, f"sideways arc scored above identity in {wins}/10 seeds (>=9); min margin {min(margins):.4f}",
           capsys)
    assert ok


# ---------------------------------------------------------------------------
# 9. rigidity and labels


def test_criterion_9_rigidity_and_labels(planar, planar_env, fixture_data, planar_model, rope, rope_env,
                                         capsys):
    checks = []
    for cond in ("full", "occ", "dmd"):
        checks += _run(cond, planar, planar_env, fixture_data, planar_model)["checks"]
    # the rope fixture, augmented with a learned rope model
    data = rope.generate(10, np.random.default_rng(5), env=rope_env)
    rope_model = _rope_run(rope, 0)[1]
    aug = Augmenter(rope, rope_env, model=rope_model)
    fields = FieldCache(rope_env)
    rope_acc = 0
    for i, ex in enumerate(data):
        for a in aug.augment_batch(ex, 10, seed=0, example_index=i).augmented:
            checks.append(check_augmentation(ex, a.example, fields))
            rope_acc += a.accepted
    # free-space fixture
    world = sc.free_space_world()
    fs = sc.PlanarScenario(world)
    fs_env = world.environment()
    ex = fs.generate(1, np.random.default_rng(0))[0]
    fs_fields = FieldCache(fs_env)
    for a in Augmenter(fs, fs_env).augment_batch(ex, 100, seed=0).augmented:
        checks.append(check_augmentation(ex, a.example, fs_fields))
    acc = [c for c in checks if c["accepted"]]
    rigid = sum(c["rigid"] for c in acc)
    labels = sum(c["label"] for c in checks)
    ok = rigid == len(acc) and labels == len(checks) and rope_acc > 0
    record(9, ok, f"rigid {rigid}/{len(acc)} accepted (rope accepted {rope_acc}); labels kept "
                  f"{labels}/{len(checks)} outputs", capsys)
    assert ok


# ---------------------------------------------------------------------------
# 10. determinism


def test_criterion_10_determinism(tmp_path, planar, planar_model, capsys):
    data = planar.generate(8, np.random.default_rng(9))
    save_dataset(data, tmp_path / "d.jsonl")
    save_environment(planar.environment(), tmp_path / "env.json")
    save_model(planar_model, tmp_path / "m.json")
    outs = []
    for name, jobs in (("a", 1), ("b", 1), ("c", 2), ("d", 3)):
        assert main(["augment", "--dataset", str(tmp_path / "d.jsonl"), "--env", str(tmp_path / "env.json"),
                     "--model", str(tmp_path / "m.json"), "--k", "5", "--seed", "7", "--jobs", str(jobs),
                     "--out", str(tmp_path / f"{name}.jsonl")]) == 0
        outs.append(((tmp_path / f"{name}.jsonl").read_bytes(), (tmp_path / f"{name}.report.json").read_bytes()))
    same = all(o == outs[0] for o in outs[1:])
    n = json.loads(outs[0][1])["counts"]
    ok = same and n["accepted"] > 0
    record(10, ok, f"--seed 7 with jobs 1,1,2,3: datasets and reports byte-identical={same} "
                   f"({n['accepted']}/{n['augmentations']} accepted)", capsys)
    assert ok


# ---------------------------------------------------------------------------
# 11. throughput (report-only)


def test_criterion_11_throughput(planar, planar_env, fixture_data, planar_model, capsys):
    full = _run("full", planar, planar_env, fixture_data, planar_model)
    n_acc = len(_accepted(full))
    rate = n_acc / full["aug_time"]
    record(11, rate >= 1.0, f"{rate:.1f} accepted/s on the planar fixture at {planar_env.extents[0]}x"
                            f"{planar_env.extents[1]} (>=1, report-only; {n_acc} accepted in "
                            f"{full['aug_time']:.0f}s, one process)", capsys)
