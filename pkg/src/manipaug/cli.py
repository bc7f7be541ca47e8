"""Command line entry point: ``manipaug <command> ...``.

Every command is deterministic under ``--seed``. Reports are JSON written
with sorted keys; wall-clock numbers go to stderr unless ``--timing`` asks for
them in the report, so reports of repeated runs compare byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import scenarios as sc
from .augmenter import DEFAULT_K, Augmenter, FieldCache, draw_rng, kl_per_dimension
from .datamodel import dumps_example, load_dataset, loads_example, save_dataset
from .geometry import load_environment, save_environment
from .objectives import DROPPABLE, ObjectiveConfig
from .reporting import check_augmentation, summarize
from .solver import SolverConfig
from .svg import render_example, render_path
from .transforms import TransformBounds
from .validlearn import (DEFAULT_EPOCHS, collect_validity_data, load_model, n_valid_for, save_model,
                         train_validity_model)

log = logging.getLogger("manipaug")

SWEEP_KS = (1, 5, 10, 15, 20, 25)
ABLATIONS = (("full", ()), ("no_occ", ("occ",)), ("no_dmd", ("dmd",)), ("no_valid", ("valid",)))


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# config


def _bounds_from(rec) -> TransformBounds:
    return TransformBounds(rec["lower"], rec["upper"])


def load_config(path) -> dict:
    """Read a JSON config: ``{"objective": {...}, "solver": {...}}`` or flat field names."""
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            rec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    if not isinstance(rec, dict):
        raise CliError(f"config {path} must be a JSON object")
    obj_names = {f.name for f in fields(ObjectiveConfig)}
    sol_names = {f.name for f in fields(SolverConfig)}
    out = {"objective": dict(rec.pop("objective", {})), "solver": dict(rec.pop("solver", {}))}
    for key, value in rec.items():
        if key in obj_names:
            out["objective"][key] = value
        elif key in sol_names:
            out["solver"][key] = value
        elif key == "k":
            out["k"] = int(value)
        else:
            raise CliError(f"config {path}: unknown setting {key!r}")
    for section, names in (("objective", obj_names), ("solver", sol_names)):
        unknown = set(out[section]) - names
        if unknown:
            raise CliError(f"config {path}: unknown {section} settings {sorted(unknown)}")
    return out


def resolve_configs(config: dict, drop, scenario) -> tuple:
    obj = dict(config.get("objective", {}))
    if "bounds" in obj:
        obj["bounds"] = _bounds_from(obj["bounds"])
    if "beta" in obj:
        obj["beta"] = tuple(obj["beta"])
    if "workspace" in obj and obj["workspace"] is not None:
        w = obj["workspace"]
        obj["workspace"] = (tuple(w["lower"]), tuple(w["upper"])) if isinstance(w, dict) else tuple(w)
    obj["drop"] = frozenset(obj.get("drop", ())) | frozenset(drop or ())
    try:
        objective = ObjectiveConfig(**obj)
        solver = SolverConfig(**config.get("solver", {}))
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad configuration: {exc}") from None
    bounds = objective.bounds or scenario.default_bounds()
    return objective, solver, bounds


def config_echo(objective: ObjectiveConfig, solver: SolverConfig, bounds: TransformBounds, **extra) -> dict:
    obj = {
        "beta": list(objective.beta),
        "contact_margin": objective.contact_margin,
        "occ_overshoot": objective.occ_overshoot,
        "drop": sorted(objective.drop),
        "workspace": None if objective.workspace is None else [list(w) for w in objective.workspace],
    }
    return {
        "objective": obj,
        "solver": asdict(solver),
        "bounds": {"lower": bounds.lower.tolist(), "upper": bounds.upper.tolist()},
        **extra,
    }


def _write_json(path, rec) -> None:
    text = json.dumps(rec, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_inputs(args):
    try:
        examples = load_dataset(args.dataset)
    except OSError as exc:
        raise CliError(f"cannot read dataset: {exc}") from None
    if not examples:
        raise CliError(f"dataset {args.dataset} is empty")
    try:
        env = load_environment(args.env)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read environment {args.env}: {exc}") from None
    name = args.scenario or examples[0].scenario
    scenario = sc.get_scenario(name)
    for i, ex in enumerate(examples):
        if ex.scenario != name:
            raise CliError(f"{args.dataset}: record {i + 1} is a {ex.scenario!r} example, expected {name!r}")
    if env.dim != examples[0].dim:
        raise CliError(f"environment is {env.dim}-D but the examples are {examples[0].dim}-D")
    return examples, env, scenario


def _load_model(path, scenario):
    if path is None:
        return None
    try:
        return load_model(path, scenario.d)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read validity model {path}: {exc}") from None


# ---------------------------------------------------------------------------
# parallel augmentation

_WORKER: dict = {}


def _init_worker(state):
    _WORKER.clear()
    _WORKER.update(state)
    _WORKER["augmenter"] = Augmenter(state["scenario"], state["env"], state["objective"], state["solver"],
                                     state["model"], state["bounds"])


def _augment_one(task):
    i, line = task
    aug = _WORKER["augmenter"]
    example = loads_example(line)
    out = []
    for j in range(_WORKER["k"]):
        res = aug.augment(example, draw_rng(_WORKER["seed"], i, j))
        rec = {"example": i, "draw": j, "accepted": res.accepted,
               "transform": res.transform.values.tolist(), "center": res.transform.center.tolist()}
        rec.update(res.diagnostics)
        out.append((dumps_example(res.example), rec))
    return out


def run_augmentation(examples, env, scenario, objective, solver, bounds, model, k, seed, jobs):
    """Augment every example k times; returns ``[(payload_json, record), ...]`` in input order."""
    state = {"scenario": scenario, "env": env, "objective": objective, "solver": solver, "model": model,
             "bounds": bounds, "k": k, "seed": seed}
    tasks = [(i, dumps_example(ex)) for i, ex in enumerate(examples)]
    if jobs <= 1:
        _init_worker(state)
        chunks = [_augment_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(state,)) as pool:
            chunks = list(pool.map(_augment_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return [item for chunk in chunks for item in chunk]


def _checks(examples, results, env, objective, k):
    fields_ = FieldCache(env)
    out = []
    for n, (payload, _) in enumerate(results):
        source = examples[n // k]
        out.append(check_augmentation(source, loads_example(payload), fields_, objective.contact_margin))
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.scenario == "planar":
        world = sc.free_space_world() if args.free_space else sc.PlanarWorld()
        scenario = sc.PlanarScenario(world)
        examples = scenario.generate(args.n, rng, **({"n_steps": args.steps} if args.steps else {}))
        env = world.environment()
    else:
        world = sc.RopeWorld(obstacles=()) if args.free_space else sc.RopeWorld()
        scenario = sc.RopeScenario(world)
        env = world.environment()
        examples = scenario.generate(args.n, rng, env=env, **({"n_steps": args.steps} if args.steps else {}))
    save_dataset(examples, args.out)
    if args.env:
        save_environment(env, args.env)
    log.info("wrote %d %s examples to %s", len(examples), args.scenario, args.out)
    return 0


def cmd_learn_valid(args) -> int:
    scenario = sc.get_scenario(args.scenario)
    if args.scenario == "planar":
        scenario = sc.PlanarScenario(scenario.probe_world())
    bounds = scenario.default_bounds()
    rng = np.random.default_rng(args.seed)
    n_valid = args.n_valid or n_valid_for(scenario.d)
    probes = scenario.probes(rng, args.probes)
    start = time.perf_counter()
    data = collect_validity_data(scenario, probes, bounds, n_valid, rng)
    model = train_validity_model(data, bounds, epochs=args.epochs, rng=rng)
    model.meta = {"scenario": args.scenario, "seed": args.seed, "n_valid": n_valid, "n_examples": len(data),
                  "probes": args.probes, "epochs": args.epochs}
    save_model(model, args.out)
    log.info("collected %d validity examples, final loss %.4g (%.1fs)", len(data), model.final_loss,
             time.perf_counter() - start)
    return 0


def _report_path(args):
    if args.report:
        return args.report
    out = Path(args.out)
    return out.with_name(out.stem + ".report.json")


def cmd_augment(args) -> int:
    examples, env, scenario = _load_inputs(args)
    config = load_config(args.config)
    objective, solver, bounds = resolve_configs(config, args.drop, scenario)
    k = args.k if args.k is not None else config.get("k", DEFAULT_K)
    if k < 1:
        raise CliError("--k must be >= 1")
    model = _load_model(args.model, scenario)
    start = time.perf_counter()
    results = run_augmentation(examples, env, scenario, objective, solver, bounds, model, k, args.seed, args.jobs)
    elapsed = time.perf_counter() - start
    with open(args.out, "w", encoding="utf-8") as fh:
        for payload, _ in results:
            fh.write(payload)
            fh.write("\n")
    records = [rec for _, rec in results]
    checks = _checks(examples, results, env, objective, k)
    report = {
        "command": "augment",
        "config": config_echo(objective, solver, bounds, scenario=scenario.name, k=k, seed=args.seed,
                              dataset=str(args.dataset), env=str(args.env),
                              model=None if args.model is None else str(args.model)),
        **summarize(checks, records, [r["transform"] for r in records], bounds, len(examples)),
    }
    n_acc = report["counts"]["accepted"]
    throughput = {"seconds": elapsed, "augmentations_per_second": len(results) / elapsed if elapsed else None,
                  "accepted_per_second": n_acc / elapsed if elapsed else None}
    if args.timing:
        report["throughput"] = throughput
    if not args.traces:
        for rec in records:
            rec.pop("path", None)
    report["augmentations"] = records
    _write_json(_report_path(args), report)
    print(f"{n_acc}/{len(results)} augmentations accepted in {elapsed:.1f}s "
          f"({throughput['accepted_per_second'] or 0.0:.2f} accepted/s)", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    examples, env, scenario = _load_inputs(args)
    try:
        augmented = load_dataset(args.augmented)
    except OSError as exc:
        raise CliError(f"cannot read augmented dataset: {exc}") from None
    if not augmented or len(augmented) % len(examples):
        raise CliError(f"{len(augmented)} augmented records do not split evenly over {len(examples)} examples")
    k = len(augmented) // len(examples)
    objective, solver, bounds = resolve_configs(load_config(args.config), (), scenario)
    fields_ = FieldCache(env)
    checks = [check_augmentation(examples[n // k], aug, fields_, objective.contact_margin)
              for n, aug in enumerate(augmented)]
    transforms = None
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            transforms = [r["transform"] for r in json.load(fh)["augmentations"]]
    report = {"command": "eval", "config": {"dataset": str(args.dataset), "augmented": str(args.augmented),
                                            "env": str(args.env), "k": k, "scenario": scenario.name},
              **summarize(checks, None, transforms, bounds, len(examples))}
    _write_json(args.out, report)
    return 0


def _per_example_kl(records, k, bounds, n_examples):
    """Mean over examples of the unsmoothed per-parameter KL of the first k accepted draws."""
    per = []
    for i in range(n_examples):
        vals = [r["transform"] for r in records[i] if r["draw"] < k and r["accepted"]]
        if vals:
            per.append(kl_per_dimension(np.array(vals), bounds, smoothing=0.0))
    return np.mean(per, axis=0) if per else None


def cmd_sweep_k(args) -> int:
    examples, env, scenario = _load_inputs(args)
    config = load_config(args.config)
    objective, solver, bounds = resolve_configs(config, args.drop, scenario)
    model = _load_model(args.model, scenario)
    ks = sorted(set(args.ks))
    if ks[0] < 1:
        raise CliError("k values must be >= 1")
    # draws are seeded per (seed, example, draw), so the first k draws of the
    # largest run are exactly the run with k augmentations
    results = run_augmentation(examples, env, scenario, objective, solver, bounds, model, ks[-1], args.seed,
                               args.jobs)
    checks = _checks(examples, results, env, objective, ks[-1])
    records = [rec for _, rec in results]
    by_example = [records[i * ks[-1]:(i + 1) * ks[-1]] for i in range(len(examples))]
    rows = []
    for k in ks:
        keep = [n for n, r in enumerate(records) if r["draw"] < k]
        sub_checks = [checks[n] for n in keep]
        sub_records = [records[n] for n in keep]
        summary = summarize(sub_checks, sub_records, [r["transform"] for r in sub_records], bounds, len(examples))
        kl = _per_example_kl(by_example, k, bounds, len(examples))
        rows.append({
            "k": k,
            "augmentations": summary["counts"]["augmentations"],
            "accepted": summary["counts"]["accepted"],
            "augmentations_per_example": summary["counts"]["augmentations"] / len(examples),
            "acceptance_rate": summary["rates"]["acceptance"],
            "kl_per_dim": None if kl is None else kl.tolist(),
            "kl": None if kl is None else float(kl.sum()),
            "pooled": summary["diversity"],
        })
    report = {"command": "sweep-k",
              "config": config_echo(objective, solver, bounds, scenario=scenario.name, seed=args.seed, ks=ks,
                                    dataset=str(args.dataset), env=str(args.env),
                                    model=None if args.model is None else str(args.model)),
              "rows": rows}
    _write_json(args.out, report)
    return 0


def cmd_ablate(args) -> int:
    examples, env, scenario = _load_inputs(args)
    config = load_config(args.config)
    model = _load_model(args.model, scenario)
    k = args.k if args.k is not None else config.get("k", DEFAULT_K)
    rows = []
    echo = None
    for name, drop in ABLATIONS:
        objective, solver, bounds = resolve_configs(config, drop, scenario)
        if echo is None:
            echo = config_echo(objective, solver, bounds, scenario=scenario.name, seed=args.seed, k=k,
                               dataset=str(args.dataset), env=str(args.env),
                               model=None if args.model is None else str(args.model))
        results = run_augmentation(examples, env, scenario, objective, solver, bounds, model, k, args.seed,
                                   args.jobs)
        records = [rec for _, rec in results]
        summary = summarize(_checks(examples, results, env, objective, k), records,
                            [r["transform"] for r in records], bounds, len(examples))
        rows.append({"condition": name, "drop": list(drop), **summary})
    echo["objective"]["drop"] = []
    _write_json(args.out, {"command": "ablate", "config": echo, "rows": rows})
    return 0


def cmd_render(args) -> int:
    try:
        examples = load_dataset(args.dataset)
        env = load_environment(args.env) if args.env else None
        augmented = load_dataset(args.augmented) if args.augmented else []
    except OSError as exc:
        raise CliError(str(exc)) from None
    for ex in examples:
        if ex.scenario not in sc.SCENARIO_TYPES:
            raise CliError(f"unknown scenario tag {ex.scenario!r}")
    k = len(augmented) // len(examples) if augmented else 0
    if augmented and len(augmented) % len(examples):
        raise CliError("augmented records do not split evenly over the source examples")
    records = []
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            records = json.load(fh).get("augmentations", [])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    limit = len(examples) if args.limit is None else min(args.limit, len(examples))
    for i in range(limit):
        ex = examples[i]
        src = dumps_example(ex)
        augs, notes = [], [f"example {i} ({ex.scenario})"]
        for j in range(k):
            aug = augmented[i * k + j]
            if dumps_example(aug) == src:
                continue
            augs.append(aug)
            if records:
                t = records[i * k + j]["transform"]
                notes.append(f"T{j} = [" + ", ".join(f"{v:+.3f}" for v in t) + "]")
        (out / f"example_{i:04d}.svg").write_text(render_example(ex, env, augs, notes[:12]), encoding="utf-8")
        for rec in records[i * k:(i + 1) * k]:
            if rec.get("path"):
                b = sc.get_scenario(ex.scenario).default_bounds()
                svg = render_path(rec["path"], b.lower, b.upper, rec.get("target"))
                (out / f"path_{i:04d}_{rec['draw']:02d}.svg").write_text(svg, encoding="utf-8")
    log.info("rendered %d examples to %s", limit, out)
    return 0


# ---------------------------------------------------------------------------
# parser


def _ks(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manipaug", description="Physics-aware augmentation of manipulation data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(q, dataset=True):
        if dataset:
            q.add_argument("--dataset", required=True, help="source examples (JSON lines)")
            q.add_argument("--env", required=True, help="environment JSON")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--scenario", choices=sorted(sc.SCENARIO_TYPES))

    def solver_opts(q):
        q.add_argument("--config", help="JSON overrides for objective/solver settings")
        q.add_argument("--model", help="validity model JSON (omit to disable the term)")
        q.add_argument("--jobs", type=int, default=1)

    q = sub.add_parser("gen-data", help="generate a seeded dataset and its environment")
    common(q, dataset=False)
    q.add_argument("--n", type=int, default=200)
    q.add_argument("--steps", type=int)
    q.add_argument("--free-space", action="store_true", help="no obstacles (a single disc for planar)")
    q.add_argument("--out", required=True)
    q.add_argument("--env", help="where to write the environment JSON")
    q.set_defaults(func=cmd_gen_data)

    q = sub.add_parser("learn-valid", help="collect probe data and fit the validity model")
    common(q, dataset=False)
    q.add_argument("--n-valid", type=int)
    q.add_argument("--probes", type=int, default=3)
    q.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_learn_valid)

    q = sub.add_parser("augment", help="augment every example k times")
    common(q)
    solver_opts(q)
    q.add_argument("--out", required=True, help="augmented examples (JSON lines)")
    q.add_argument("--report", help="report path (default: <out stem>.report.json)")
    q.add_argument("--k", type=int)
    q.add_argument("--drop", action="append", choices=DROPPABLE, default=[])
    q.add_argument("--timing", action="store_true", help="include wall-clock throughput in the report")
    q.add_argument("--traces", action="store_true", help="keep solve paths in the report")
    q.set_defaults(func=cmd_augment)

    q = sub.add_parser("eval", help="check invariants of an augmented dataset against its source")
    common(q)
    q.add_argument("--augmented", required=True)
    q.add_argument("--report", help="augment report, for transform diversity")
    q.add_argument("--config")
    q.add_argument("--out", help="report path (default: stdout)")
    q.set_defaults(func=cmd_eval)

    q = sub.add_parser("sweep-k", help="diversity and acceptance for several k")
    common(q)
    solver_opts(q)
    q.add_argument("--ks", type=_ks, default=list(SWEEP_KS))
    q.add_argument("--drop", action="append", choices=DROPPABLE, default=[])
    q.add_argument("--out")
    q.set_defaults(func=cmd_sweep_k)

    q = sub.add_parser("ablate", help="full method against each dropped objective term")
    common(q)
    solver_opts(q)
    q.add_argument("--k", type=int)
    q.add_argument("--out")
    q.set_defaults(func=cmd_ablate)

    q = sub.add_parser("render", help="SVG panels of original and augmented examples")
    q.add_argument("--dataset", required=True)
    q.add_argument("--env")
    q.add_argument("--augmented")
    q.add_argument("--report")
    q.add_argument("--limit", type=int)
    q.add_argument("--out", required=True, help="output directory")
    q.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (CliError, sc.SimulationError, ValueError) as exc:
        # DatasetError is a ValueError
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
