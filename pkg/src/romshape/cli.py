"""Command line driver for the dataset / train / estimate / control pipeline.

Each subcommand reads a JSON configuration (defaults overridable by a config
file and dotted --set assignments), fans independent work units out over a
process pool, and writes its outputs plus a manifest into the given
directory. Work units are whole (fitter, training set) groups and whole
trials, and every table pass through one sorted writer, so results are
byte-identical regardless of --jobs.

Exit codes: 0 on success, 2 when some work units failed but the run
produced usable output, 1 on fatal errors.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from types import SimpleNamespace

import numpy as np

from . import __version__, dataset, estimator, fom, metrics, mpc, reference, report, romfit, storage

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2

JOBS_ENV = "ROMSHAPE_JOBS"

METHOD_NAMES = {"lopinf": "LOpInf", "dmdc": "DMDc", "era": "ERA"}


class CliError(Exception):
    pass


def default_config():
    return {
        "fom": {
            "n_links": 400,
            "length": 1.117,
            "joint_stiffness": 2.0,
            "joint_damping": 0.15,
            "node_mass": 0.01,
            "actuation_gain": 2.5e-3,
            "substeps": 10,
            "dt": 0.01,
        },
        "dataset": {
            "a_low": dataset.A_LOW,
            "a_high": dataset.A_HIGH,
            "duration": 10.0,
            "steps": 1000,
        },
        "train": {
            "methods": ["lopinf", "dmdc", "era"],
            "r_values": [2, 4, 6, 8, 10, 12, 14, 16, 18, 20],
            "train_sets": [1, 2, 3],
        },
        "mpc": {
            "horizon": 20,
            "c_z": mpc.C_Z_DEFAULT,
            "c_u": mpc.C_U_DEFAULT,
            "c_du": mpc.C_DU_DEFAULT,
            "u_max": 1.0,
            "posterior": False,
        },
        "control": {
            "model": "lopinf_r18_t3",
            "steps": 1000,
            "window": 500,
        },
    }


def _deep_merge(base, override, path=""):
    for key, val in override.items():
        here = f"{path}{key}"
        if key not in base:
            raise CliError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise CliError(f"config key {here} must be a table")
            _deep_merge(base[key], val, here + ".")
        else:
            base[key] = val


def _apply_set(cfg, expr):
    if "=" not in expr:
        raise CliError(f"--set needs key=value, got {expr!r}")
    dotted, raw = expr.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise CliError(f"unknown config key: {dotted}")
        node = node[key]
    if keys[-1] not in node or isinstance(node[keys[-1]], dict):
        raise CliError(f"unknown config key: {dotted}")
    node[keys[-1]] = value


def load_config(args):
    cfg = default_config()
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                _deep_merge(cfg, json.load(fh))
        except OSError as err:
            raise CliError(f"cannot read config: {err}")
        except json.JSONDecodeError as err:
            raise CliError(f"config is not valid JSON: {err}")
    for expr in getattr(args, "set", None) or []:
        _apply_set(cfg, expr)
    return cfg


def fom_config(cfg):
    try:
        return fom.FomConfig(**cfg["fom"])
    except (TypeError, ValueError) as err:
        raise CliError(f"bad chain configuration: {err}")


def mpc_spec(cfg, p):
    section = cfg["mpc"]
    if section["posterior"]:
        weights = mpc.posterior_weights(p=p)
    else:
        weights = mpc.output_weights(c_z=float(section["c_z"]), p=p)
    try:
        return mpc.MpcSpec(
            horizon=int(section["horizon"]),
            Wy=weights,
            c_u=float(section["c_u"]),
            c_du=float(section["c_du"]),
            u_max=float(section["u_max"]),
        )
    except ValueError as err:
        raise CliError(f"bad controller configuration: {err}")


def resolve_jobs(args):
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 1:
            raise CliError("--jobs must be at least 1")
        return args.jobs
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"{JOBS_ENV} must be an integer, got {env!r}")
    return 1


def _run_units(units, worker, jobs):
    if jobs <= 1 or len(units) <= 1:
        return [worker(unit) for unit in units]
    with ProcessPoolExecutor(max_workers=min(jobs, len(units))) as pool:
        return list(pool.map(worker, units))


def _collect_errors(results, key="error"):
    errors = []
    for res in results:
        if res.get(key):
            errors.append(res[key])
            print(f"warning: {res[key]}", file=sys.stderr)
    return errors


# ---------------------------------------------------------------- dataset


def _gen_trial_worker(unit):
    out_dir, cfg_f, spec, cfg_hash = unit
    try:
        sset = dataset.run_trial(cfg_f, spec)
        dataset.save_trial(out_dir, sset, spec.trial_id, spec=spec, config_hash=cfg_hash)
        return {"trial_id": spec.trial_id, "error": None}
    except Exception as err:
        return {
            "trial_id": spec.trial_id,
            "error": f"trial {spec.trial_id}: {type(err).__name__}: {err}",
        }


def cmd_generate_dataset(args):
    cfg = load_config(args)
    cfg_hash = storage.json_hash(cfg)
    cfg_f = fom_config(cfg)
    section = cfg["dataset"]
    specs = [
        dataset.TrialSpec(
            trial_id=s.trial_id,
            amplitudes=s.amplitudes,
            frequency=s.frequency,
            phases=s.phases,
            duration=float(section["duration"]),
            steps=int(section["steps"]),
        )
        for s in dataset.trial_grid(float(section["a_low"]), float(section["a_high"]))
    ]
    os.makedirs(args.out, exist_ok=True)
    units = [(args.out, cfg_f, spec, cfg_hash) for spec in specs]
    results = _run_units(units, _gen_trial_worker, resolve_jobs(args))
    errors = _collect_errors(results)
    done = [r["trial_id"] for r in results if not r["error"]]
    stub = SimpleNamespace(
        dt=cfg_f.dt,
        x_neutral=fom.neutral_full_state(cfg_f),
        y_neutral=fom.neutral_output(cfg_f),
    )
    index = dataset.save_root(args.out, stub, done, config_hash=cfg_hash)
    storage.write_manifest(
        args.out, cfg_hash, __version__,
        extra={"trials": index["trials"], "root": index["root"]},
    )
    print(f"generated {len(done)} of {len(specs)} trials in {args.out}")
    return EXIT_PARTIAL if errors else EXIT_OK


# ------------------------------------------------------------------ train


def model_name(method, r, train_set):
    return f"{method.lower()}_r{r}_t{train_set}"


def _train_group_worker(unit):
    dataset_dir, out_dir, method, ts_id, r_values, cfg_hash = unit
    label = f"{method} on training set {ts_id}"
    try:
        trial_ids = dataset.TRAIN_SETS[ts_id]
        data = dataset.load(dataset_dir, list(trial_ids))
        if method == "LOpInf":
            roms, failed = romfit.lopinf_sweep(data, r_values)
        elif method == "DMDc":
            roms, failed = romfit.dmdc_sweep(data, r_values)
        elif method == "ERA":
            roms, failed = romfit.era_sweep(data, r_values)
        else:
            raise ValueError(f"unknown method {method}")
        entries = []
        failures = {}
        for r in r_values:
            name = model_name(method, r, ts_id)
            if r in failed:
                failures[name] = failed[r]
                continue
            romfit.save_model(roms[r], os.path.join(out_dir, name))
            entries.append(
                {
                    "name": name,
                    "method": method,
                    "r": int(r),
                    "train_set": int(ts_id),
                    "n_train_trials": len(trial_ids),
                    "trial_ids": [int(t) for t in trial_ids],
                }
            )
        return {"entries": entries, "failures": failures, "error": None}
    except Exception as err:
        return {
            "entries": [],
            "failures": {},
            "error": f"{label}: {type(err).__name__}: {err}",
        }


def cmd_train(args):
    cfg = load_config(args)
    cfg_hash = storage.json_hash(cfg)
    section = cfg["train"]
    methods = []
    for name in section["methods"]:
        if str(name).lower() not in METHOD_NAMES:
            raise CliError(f"unknown fitting method: {name}")
        methods.append(METHOD_NAMES[str(name).lower()])
    r_values = [int(r) for r in section["r_values"]]
    train_sets = [int(t) for t in section["train_sets"]]
    bad = [t for t in train_sets if t not in dataset.TRAIN_SETS]
    if bad:
        raise CliError(f"unknown training sets: {bad}")
    os.makedirs(args.out, exist_ok=True)
    units = []
    for method in methods:
        for ts_id in train_sets:
            if method == "ERA" and len(dataset.TRAIN_SETS[ts_id]) != 1:
                continue  # realization fitting is single-trial by contract
            units.append((args.dataset, args.out, method, ts_id, r_values, cfg_hash))
    results = _run_units(units, _train_group_worker, resolve_jobs(args))
    errors = _collect_errors(results)
    index = {}
    failures = {}
    for res in results:
        for entry in res["entries"]:
            index[entry["name"]] = entry
        failures.update(res["failures"])
    for name in sorted(failures):
        print(f"warning: fit failed for {name}: {failures[name]}", file=sys.stderr)
    storage.write_json(
        os.path.join(args.out, "models.json"), dict(sorted(index.items()))
    )
    storage.write_json(
        os.path.join(args.out, "failures.json"), dict(sorted(failures.items()))
    )
    storage.write_manifest(args.out, cfg_hash, __version__)
    print(f"trained {len(index)} models in {args.out} ({len(failures)} cells failed)")
    return EXIT_PARTIAL if (errors or failures) else EXIT_OK


# --------------------------------------------------------------- estimate


def _estimate_model_worker(unit):
    models_dir, entry, dataset_dir, test_ids, probes = unit
    base = {
        "method": entry["method"],
        "r": entry["r"],
        "n_train_trials": entry["n_train_trials"],
    }
    rows = []
    try:
        rom = romfit.load_model(os.path.join(models_dir, entry["name"]))
        gain = estimator.place_gain(rom, probes=probes)
        for tid in test_ids:
            U, Y, _ = dataset.load_trial_io(dataset_dir, tid)
            _, Yo = estimator.rollout_open(rom, np.zeros(rom.r_eff), U)
            _, Yc = estimator.rollout_closed(rom, gain, U, Y)
            rows.append(
                dict(base, trial_id=tid, loop="open", e_y=metrics.rel_estimation_error(Y, Yo))
            )
            rows.append(
                dict(base, trial_id=tid, loop="closed", e_y=metrics.rel_estimation_error(Y, Yc))
            )
        return {"rows": rows, "error": None}
    except Exception as err:
        rows = [
            dict(base, trial_id=tid, loop=loop, e_y=float("nan"))
            for tid in test_ids
            for loop in ("open", "closed")
        ]
        return {"rows": rows, "error": f"{entry['name']}: {type(err).__name__}: {err}"}


def cmd_estimate(args):
    cfg = load_config(args)
    cfg_hash = storage.json_hash(cfg)
    index_path = os.path.join(args.models, "models.json")
    if not os.path.exists(index_path):
        raise CliError(f"no models.json under {args.models}")
    index = storage.read_json(index_path)
    test_ids = list(dataset.estimation_test_trials())
    os.makedirs(args.out, exist_ok=True)
    probes = dataset.validation_probes(
        fom_config(cfg),
        a_low=float(cfg["dataset"]["a_low"]),
        a_high=float(cfg["dataset"]["a_high"]),
    )
    units = [
        (args.models, entry, args.dataset, test_ids, probes)
        for _, entry in sorted(index.items())
    ]
    results = _run_units(units, _estimate_model_worker, resolve_jobs(args))
    errors = _collect_errors(results)
    rows = [row for res in results for row in res["rows"]]
    report.write_estimation_csv(os.path.join(args.out, "estimation.csv"), rows)
    storage.write_manifest(args.out, cfg_hash, __version__)
    print(f"estimated {len(index)} models over {len(test_ids)} test trials")
    return EXIT_PARTIAL if errors else EXIT_OK


# ---------------------------------------------------------------- control


def _control_run_worker(unit):
    run_dir, cfg_f, rom, gain, spec, ref, steps, window_tail, row_base = unit
    try:
        rep = mpc.run_control_trial(cfg_f, rom, gain, spec, ref, steps)
        done = rep.Y.shape[1]
        rec = None
        if done:
            if window_tail is None:
                win = (0, done)
            else:
                win = (max(0, done - window_tail), done)
            notes = "" if rep.completed else f"partial: {rep.failure}"
            rec = metrics.tracking_record(
                rep.Y, rep.ref, mask=rep.mask, window=win, notes=notes
            )
        mpc.save_report(rep, run_dir, metrics=rec)
        row = dict(
            row_base,
            steps=done,
            completed=bool(rep.completed),
            e_r=rec.e_r if rec is not None else float("nan"),
        )
        err = None if rep.completed else f"{row_base['source']}: {rep.failure}"
        return {"row": row, "error": err}
    except Exception as err:
        return {
            "row": dict(row_base, steps=0, completed=False, e_r=float("nan")),
            "error": f"{row_base['source']}: {type(err).__name__}: {err}",
        }


def _safe_name(text):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in text)


def cmd_control(args):
    cfg = load_config(args)
    cfg_hash = storage.json_hash(cfg)
    cfg_f = fom_config(cfg)
    steps = int(args.steps) if args.steps is not None else int(cfg["control"]["steps"])
    tail = int(cfg["control"]["window"])
    name = args.model or cfg["control"]["model"]
    model_dir = os.path.join(args.models, name)
    if not os.path.isdir(model_dir):
        raise CliError(f"model {name} not found under {args.models}")
    rom = romfit.load_model(model_dir)
    probes = dataset.validation_probes(
        cfg_f,
        a_low=float(cfg["dataset"]["a_low"]),
        a_high=float(cfg["dataset"]["a_high"]),
    )
    try:
        gain = estimator.place_gain(rom, probes=probes)
    except RuntimeError as err:
        raise CliError(f"cannot build observer for {name}: {err}")
    spec = mpc_spec(cfg, rom.p)
    out_dir = os.path.join(args.out, args.preset)
    os.makedirs(out_dir, exist_ok=True)

    units = []
    if args.preset == "feasible-replay":
        for tid in dataset.CONTROL_TEST_TRIALS:
            _, Y, _ = dataset.load_trial_io(args.dataset, tid)
            ref = reference.replay(Y[:, :steps], source=f"replay_{tid}")
            units.append(
                (
                    os.path.join(out_dir, f"replay_{tid:02d}"),
                    cfg_f, rom, gain, spec, ref, steps, None,
                    {"preset": args.preset, "model": name, "source": ref.source},
                )
            )
    elif args.preset == "bioinspired":
        for gp in reference.gait_grid():
            ref = reference.traveling_wave(gp, cfg_f.length, cfg_f.dt, steps)
            units.append(
                (
                    os.path.join(out_dir, gp.label()),
                    cfg_f, rom, gain, spec, ref, steps, tail,
                    {"preset": args.preset, "model": name, "source": ref.source},
                )
            )
    elif args.preset == "import":
        if not args.ref:
            raise CliError("--ref CSV is required for the import preset")
        try:
            ref = reference.import_centerlines(
                args.ref, cfg_f.length, cfg_f.dt, steps,
                source=f"import_{_safe_name(os.path.basename(args.ref))}",
            )
        except (OSError, ValueError) as err:
            raise CliError(f"cannot import centerlines: {err}")
        units.append(
            (
                os.path.join(out_dir, ref.source),
                cfg_f, rom, gain, spec, ref, steps, tail,
                {"preset": args.preset, "model": name, "source": ref.source},
            )
        )
    else:
        raise CliError(f"unknown preset {args.preset}")

    results = _run_units(units, _control_run_worker, resolve_jobs(args))
    errors = _collect_errors(results)
    rows = [res["row"] for res in results]
    report.write_control_csv(os.path.join(out_dir, "control.csv"), rows)
    storage.write_manifest(out_dir, cfg_hash, __version__)
    done = sum(1 for row in rows if row["completed"])
    print(f"completed {done} of {len(rows)} tracking runs in {out_dir}")
    return EXIT_PARTIAL if errors else EXIT_OK


# ----------------------------------------------------------------- report


def cmd_report(args):
    cfg = load_config(args)
    cfg_f = fom_config(cfg)
    if not args.estimation and not args.control:
        raise CliError("nothing to report: give --estimation and/or --control")
    os.makedirs(args.out, exist_ok=True)
    summary = {}
    if args.estimation:
        if not os.path.exists(args.estimation):
            raise CliError(f"no such table: {args.estimation}")
        rows = report.read_csv_rows(args.estimation)
        med_rows = [
            {"method": m, "r": r, "n_train_trials": t, "loop": loop, "median_e_y": v}
            for loop in ("closed", "open")
            for (m, r, t), v in report.median_errors(rows, loop=loop).items()
        ]
        report.write_rows(
            os.path.join(args.out, "medians.csv"),
            ("method", "r", "n_train_trials", "loop", "median_e_y"),
            med_rows,
        )
        report.render_estimation_figure(rows, os.path.join(args.out, "estimation.png"))
        summary["best"] = {
            method: {"r": r, "n_train_trials": t, "median_e_y": v}
            for method, (r, t, v) in report.best_models(rows).items()
        }
    if args.control:
        runs = []
        u_max = float(cfg["mpc"]["u_max"])
        for cdir in args.control:
            if not os.path.isdir(cdir):
                raise CliError(f"no such directory: {cdir}")
            for run in sorted(os.listdir(cdir)):
                run_dir = os.path.join(cdir, run)
                if not os.path.isfile(os.path.join(run_dir, "metrics.json")):
                    continue
                doc = report.render_run_figures(run_dir, cfg_f.dt, u_max, cfg_f.length)
                entry = {"run": run_dir, "completed": doc["completed"], "source": doc["source"]}
                if doc.get("metrics"):
                    entry["e_r"] = doc["metrics"]["e_r"]
                runs.append(entry)
        summary["control_runs"] = runs
    storage.write_json(os.path.join(args.out, "summary.json"), summary)
    print(f"report written to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------- main


def build_parser():
    ap = argparse.ArgumentParser(
        prog="romshape",
        description="Reduced-order modeling and predictive shape control toolkit.",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="dotted config override, e.g. mpc.horizon=30",
        )
        p.add_argument(
            "--jobs",
            type=int,
            help=f"parallel worker processes (default: ${JOBS_ENV} or 1)",
        )

    g = sub.add_parser("generate-dataset", help="simulate the excitation trials")
    g.add_argument("--out", required=True)
    common(g)
    g.set_defaults(func=cmd_generate_dataset)

    t = sub.add_parser("train", help="fit the reduced models over the sweep grid")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="open/closed-loop output error per model")
    e.add_argument("--dataset", required=True)
    e.add_argument("--models", required=True)
    e.add_argument("--out", required=True)
    common(e)
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("control", help="closed-loop tracking on the full chain")
    c.add_argument("--dataset", required=True)
    c.add_argument("--models", required=True)
    c.add_argument("--out", required=True)
    c.add_argument(
        "--preset",
        required=True,
        choices=["feasible-replay", "bioinspired", "import"],
    )
    c.add_argument("--model", help="model name (default from config)")
    c.add_argument("--ref", help="centerline CSV for the import preset")
    c.add_argument("--steps", type=int, help="override the trial length")
    common(c)
    c.set_defaults(func=cmd_control)

    r = sub.add_parser("report", help="aggregate tables and render figures")
    r.add_argument("--estimation", help="estimation.csv from the estimate step")
    r.add_argument("--control", action="append", help="control output directory")
    r.add_argument("--out", required=True)
    common(r)
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FATAL
    except KeyboardInterrupt:
        return EXIT_FATAL
    except Exception:
        import traceback

        traceback.print_exc()
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
