"""Command-line entry points.

Subcommands:
  gen-data   write a synthetic clip corpus + session plan to a directory
  run        run one or more methods over a session stream, write metrics
  inspect    re-emit diagnostics from a finished run as CSV on stdout
  oracle     check the numerical kernels against brute-force references

Exit codes: 0 ok, 2 config or state error, 3 data or shape error,
4 numerical failure.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .bench import METHODS, run_continual
from .config import RunConfig, apply_setting, flatten, format_config, \
    load_config
from .data import DatasetSpec, SessionData, gen_synthetic, make_plan, \
    save_clips, split_sessions
from .errors import ConfigError, DataError, NumericalError, ShapeError, \
    StateError
from .persist import read_labels, read_tensor, write_labels, write_tensor


def _fmt(v) -> str:
    """CSV cell: full-precision floats, empty for missing."""
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return str(v)


def _write_lines(path: str, rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(",".join(_fmt(c) for c in row) + "\n")


def _matrix_rows(values, sizes) -> list[list]:
    t_max = len(sizes)
    rows = [["after_session"] + [f"s{i}" for i in range(1, t_max + 1)]]
    for t in range(1, t_max + 1):
        rows.append([t] + [float(values[t - 1][i - 1]) for i in range(1, t_max + 1)])
    return rows


def _shift_rows(shift) -> list[list]:
    rows = [["transition", "shift"]]
    for i, v in enumerate(shift, start=1):
        rows.append([f"{i}->{i + 1}", float(v)])
    return rows


def _result_report(res) -> dict:
    return {
        "method": res.method,
        "seed": res.seed,
        "avg_accuracy": res.avg_accuracy,
        "forgetting": res.forgetting,
        "bwt": res.bwt,
        "plasticity": res.plasticity,
        "shift": res.shift,
        "wall_time": res.wall_time,
        "t3": res.t3,
        "stages": res.stages,
        "matrix": [[None if np.isnan(v) else float(v) for v in row]
                   for row in res.matrix.values],
        "test_sizes": list(res.matrix.test_sizes),
        "fsa": None if res.fsa_report is None
        else json.loads(res.fsa_report.to_json()),
        "msa": [json.loads(r.to_json()) for r in res.msa_reports],
    }


def _dataset_digest(sessions: list[SessionData]) -> str:
    h = hashlib.sha256()
    for s in sessions:
        for arr in (s.train_x, s.train_y, s.test_x, s.test_y):
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- gen-data

def cmd_gen_data(args) -> int:
    spec = DatasetSpec(mode=args.mode, classes=args.classes,
                       clips_per_class=args.clips_per_class,
                       frames=args.frames, bins=args.bins,
                       train_fraction=args.train_fraction, noise=args.noise,
                       signature_energy=args.signature_energy,
                       twin_leak=args.twin_leak, seed=args.seed)
    spec.validate()
    plan = make_plan(spec.classes, args.sessions, spec.seed)
    clips = gen_synthetic(spec)
    os.makedirs(args.out, exist_ok=True)

    train = [c for c in clips if c.split == "train"]
    test = [c for c in clips if c.split == "test"]
    save_clips(os.path.join(args.out, "train"), train)
    save_clips(os.path.join(args.out, "test"), test)

    manifest = {
        "kind": "clip-corpus",
        "version": __version__,
        "spec": {f: getattr(spec, f) for f in (
            "mode", "classes", "clips_per_class", "frames", "bins",
            "train_fraction", "signature_energy", "twin_leak", "noise",
            "seed")},
        "sessions": [list(s) for s in plan.sessions],
        "counts": {"train": len(train), "test": len(test)},
        "files": ["train.pact", "train.labels", "test.pact", "test.labels"],
    }
    with open(os.path.join(args.out, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {len(train)} train / {len(test)} test clips "
          f"({spec.classes} classes, {plan.count} sessions) to {args.out}")
    return 0


def _load_corpus(path: str) -> tuple[list[SessionData], dict]:
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read corpus manifest {mpath}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"corpus manifest {mpath} is not JSON: {exc}") from None
    if manifest.get("kind") != "clip-corpus":
        raise DataError(f"{mpath} does not describe a clip corpus")
    spec = manifest["spec"]
    pools = {}
    for split in ("train", "test"):
        x = read_tensor(os.path.join(path, f"{split}.pact"))
        y = read_labels(os.path.join(path, f"{split}.labels"), x.shape[0])
        if x.ndim != 3 or x.shape[1:] != (spec["frames"], spec["bins"]):
            raise DataError(
                f"{split} clips have shape {x.shape}, manifest says "
                f"(n, {spec['frames']}, {spec['bins']})")
        pools[split] = (x, y)
    sessions = []
    for classes in manifest["sessions"]:
        picked = {}
        for split, (x, y) in pools.items():
            mask = np.isin(y, classes)
            picked[split] = (x[mask], y[mask])
        sessions.append(SessionData(
            classes=tuple(int(c) for c in classes),
            train_x=picked["train"][0], train_y=picked["train"][1],
            test_x=picked["test"][0], test_y=picked["test"][1]))
    return sessions, manifest


# --------------------------------------------------------------------- run

def _build_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        cfg = apply_setting(cfg, key.strip(), raw)
    flags = {"method": args.method, "seed": args.seed, "outdir": args.out,
             "sessions": args.sessions}
    for name, value in flags.items():
        if value is not None:
            cfg = apply_setting(cfg, f"run.{name}", str(value))
    return cfg


def _sessions_for(cfg: RunConfig, seed: int, corpus) -> list[SessionData]:
    if corpus is not None:
        return corpus[0]
    spec = cfg.effective_data(seed)
    plan = make_plan(spec.classes, cfg.sessions, spec.seed)
    return split_sessions(gen_synthetic(spec), plan)


def cmd_run(args) -> int:
    cfg = _build_config(args)
    cfg.validate()
    methods = [m.strip() for m in cfg.method.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
    if args.print_config:
        sys.stdout.write(format_config(cfg))
        return 0

    outdir = cfg.outdir
    os.makedirs(outdir, exist_ok=True)
    corpus = _load_corpus(args.dataset) if args.dataset else None
    seeds = [cfg.seed + i for i in range(args.seeds)]

    metrics_rows = [["method", "seed", "avg_accuracy", "forgetting", "bwt",
                     "plasticity"]]
    digests = {}
    for seed in seeds:
        sessions = _sessions_for(cfg, seed, corpus)
        digests[str(seed)] = _dataset_digest(sessions)
        pretrained = None
        for method in methods:
            ckpt = None
            if args.checkpoint:
                ckpt = os.path.join(outdir, f"checkpoint_{method}_{seed}.pacb")
            if pretrained is None:
                from .bench import prepare_backbone
                pretrained = prepare_backbone(cfg, seed)
            res = run_continual(method, sessions, cfg, pretrained, seed,
                                checkpoint_path=ckpt, resume=args.resume)
            metrics_rows.append([method, seed, res.avg_accuracy,
                                 res.forgetting, res.bwt, res.plasticity])
            stem = f"{method}_{seed}"
            _write_lines(os.path.join(outdir, f"matrix_{stem}.csv"),
                         _matrix_rows(res.matrix.values,
                                      res.matrix.test_sizes))
            _write_lines(os.path.join(outdir, f"shift_{stem}.csv"),
                         _shift_rows(res.shift))
            with open(os.path.join(outdir, f"report_{stem}.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(_result_report(res), fh, sort_keys=True, indent=2)
                fh.write("\n")
            if args.dump_features:
                pool_x = np.concatenate([s.test_x for s in sessions])
                pool_y = np.concatenate([s.test_y for s in sessions])
                from .backbone import features
                feats = features(res.final_weights, res.final_bank, pool_x)
                write_tensor(os.path.join(outdir, f"features_{stem}.pact"),
                             feats)
                write_labels(os.path.join(outdir, f"features_{stem}.labels"),
                             pool_y)
            forg = "" if res.forgetting is None else f" forget={res.forgetting:.4f}"
            print(f"[seed {seed}] {method}: avg_acc={res.avg_accuracy:.4f}"
                  f"{forg} ({res.wall_time:.1f}s)")

    _write_lines(os.path.join(outdir, "metrics.csv"), metrics_rows)
    manifest = {
        "kind": "run-manifest",
        "version": __version__,
        "config": flatten(cfg),
        "methods": methods,
        "seeds": seeds,
        "dataset": {"source": args.dataset or "synthetic",
                    "sha256": digests},
    }
    with open(os.path.join(outdir, "manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"metrics written to {os.path.join(outdir, 'metrics.csv')}")
    return 0


# ----------------------------------------------------------------- inspect

def _pick_report(rundir: str, method: str | None, seed: int | None) -> dict:
    try:
        names = sorted(os.listdir(rundir))
    except OSError as exc:
        raise DataError(f"cannot list run directory {rundir}: {exc}") from None
    reports = [n for n in names
               if n.startswith("report_") and n.endswith(".json")]
    if method is not None:
        reports = [n for n in reports if n[len("report_"):].rsplit("_", 1)[0]
                   == method]
    if seed is not None:
        reports = [n for n in reports
                   if n.rsplit("_", 1)[1] == f"{seed}.json"]
    if not reports:
        raise DataError(f"no matching run report in {rundir}")
    with open(os.path.join(rundir, reports[0]), encoding="utf-8") as fh:
        return json.load(fh)


def cmd_inspect(args) -> int:
    report = _pick_report(args.rundir, args.method, args.seed)
    if args.what == "cka":
        fsa = report.get("fsa")
        if not fsa:
            raise DataError(
                f"run {report['method']}/{report['seed']} kept the first "
                "session frozen; no layer-similarity profile")
        rows = [["layer", "cka"]]
        rows += [[i, float(v)] for i, v in enumerate(fsa["cka"], start=1)]
    elif args.what == "matrix":
        rows = _matrix_rows(report["matrix"],
                            report["test_sizes"])
        rows = [[("" if c is None else c) for c in row] for row in rows]
    elif args.what == "shift":
        rows = _shift_rows(report["shift"])
    elif args.what == "spectra":
        rows = [["session", "site", "m", "kept_energy", "index", "value"]]
        for msa in report["msa"]:
            for basis in msa["bases"]:
                total = sum(basis["eigenvalues"]) or 1.0
                for j, v in enumerate(basis["eigenvalues"]):
                    rows.append([msa["session"], basis["site"], basis["m"],
                                 float(basis["kept_energy"]),
                                 j, float(v / total)])
        if len(rows) == 1:
            raise DataError("run has no adaptation sessions; no spectra")
    else:  # argparse restricts choices; defensive
        raise ConfigError(f"unknown inspection {args.what!r}")
    text = "\n".join(",".join(_fmt(c) if not isinstance(c, str) else c
                              for c in row) for row in rows) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return 0


# ------------------------------------------------------------------ oracle

def cmd_oracle(args) -> int:
    from .oracles import run_all
    failures = 0
    for name, ok, detail in run_all():
        mark = "ok  " if ok else "FAIL"
        print(f"{mark} {name}: {detail}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} oracle check(s) failed")
        return 4
    print("all oracle checks passed")
    return 0


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pace",
        description="continual spectrogram classification: staged adapter "
                    "training over a recursive analytic head")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic clip corpus")
    g.add_argument("--mode", choices=("coarse", "fine"), default="fine")
    g.add_argument("--classes", type=int, default=16)
    g.add_argument("--clips-per-class", type=int, default=80)
    g.add_argument("--frames", type=int, default=64)
    g.add_argument("--bins", type=int, default=16)
    g.add_argument("--train-fraction", type=float, default=0.8)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--signature-energy", type=float, default=0.1)
    g.add_argument("--twin-leak", type=float, default=0.15)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sessions", type=int, default=8)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="run methods over a session stream")
    r.add_argument("--config", help="file of section.key = value lines")
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one setting (repeatable)")
    r.add_argument("--method", help="method name, or comma-separated list")
    r.add_argument("--seed", type=int, help="base seed")
    r.add_argument("--seeds", type=int, default=1,
                   help="run seeds base..base+n-1")
    r.add_argument("--sessions", type=int, help="sessions in the stream")
    r.add_argument("--out", help="output directory")
    r.add_argument("--dataset", help="corpus directory from gen-data "
                                     "(default: generate per config)")
    r.add_argument("--print-config", action="store_true",
                   help="print the effective config and exit")
    r.add_argument("--checkpoint", action="store_true",
                   help="save state after every session")
    r.add_argument("--resume", action="store_true",
                   help="continue from an existing checkpoint")
    r.add_argument("--dump-features", action="store_true",
                   help="save final-model features of the test pool")
    r.set_defaults(func=cmd_run)

    i = sub.add_parser("inspect", help="emit diagnostics from a run as CSV")
    i.add_argument("what", choices=("cka", "matrix", "spectra", "shift"))
    i.add_argument("rundir")
    i.add_argument("--method", help="pick a specific method's report")
    i.add_argument("--seed", type=int, help="pick a specific seed's report")
    i.add_argument("--out", help="also write the CSV to this file")
    i.set_defaults(func=cmd_inspect)

    o = sub.add_parser("oracle",
                       help="brute-force checks of the numerical kernels")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
