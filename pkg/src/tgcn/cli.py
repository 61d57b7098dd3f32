"""Command line: ``tgcn {generate,train,evaluate,explain,replay}``.

Every command writes its primary output to ``--out`` and a run manifest to
``<out>.manifest.json``.  Exit codes: 0 success, 2 usage error, 3 data
error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .data import (LEADS, MONTAGE_PAIRS, SyntheticSpec, builtin_topology, generate,
                   load_dataset, save_dataset)
from .errors import ConfigError, DivergenceError, FormatError, GraphError
from .explain import (gradient_attribution, render_overlay_data, sequence_dropout, single_lead_sets,
                      write_attribution_csv, write_dropout_json, write_overlay_csv)
from .graph import random_adjacency
from .metrics import metric_report
from .model import (NAMED_CONFIGS, build, format_config, load_model, named_config, parse_config,
                    save_model, with_signal_len)
from .training import TrainSpec, predict_logits, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
METRIC_KEYS = ("auroc", "aupr", "f1", "sens_at_97", "sens_at_99")



class DataError(Exception):
    """Input files missing or unusable (exit code 3)."""


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _files(paths) -> list[dict]:
    return [{"path": str(p), "sha256": _sha256(p)} for p in paths]


def write_manifest(out: Path, command: str, argv: Sequence[str], config: dict, seed,
                   inputs: Sequence, outputs: Sequence, started: float, extra: Optional[dict] = None) -> Path:
    doc = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "tool_version": __version__,
        "inputs": _files(inputs),
        "outputs": _files(outputs),
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }
    if extra:
        doc.update(extra)
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}")


def _load_dataset(path):
    if not Path(path).is_file():
        raise DataError(f"dataset {path} not found")
    return load_dataset(path)


def _load_models(paths):
    if not paths:
        raise DataError("at least one --model is required")
    missing = [p for p in paths if not Path(p).is_file()]
    if missing:
        raise DataError(f"model file(s) not found: {', '.join(missing)}")
    return [load_model(p) for p in paths]


# ------------------------------------------------------------------ generate


def cmd_generate(args, argv) -> int:
    started = time.perf_counter()
    lead_names = None
    if args.topology == "builtin" or args.edge_file:
        topo = builtin_topology(args.edge_file)
        if args.p not in (None, len(LEADS)):
            raise ConfigError(f"the builtin topology has {len(LEADS)} leads, got --p {args.p}")
        adjacency, lead_names, p = topo.adjacency, topo.leads, len(LEADS)
    else:
        p = args.p if args.p is not None else len(LEADS)
        adjacency = random_adjacency(p, np.random.default_rng([args.seed, 0x70]), args.density,
                                     directed=args.directed, connected=True)
    origins = None
    if args.origin:
        origins = tuple(lead_names.index(o) if lead_names and o in lead_names else int(o)
                        for o in args.origin)
        if any(not 0 <= o < p for o in origins):
            raise ConfigError(f"--origin out of range for p={p}")
    spec = SyntheticSpec(p=p, t_raw=args.t_raw, sample_rate=args.sample_rate,
                         noise_level=args.noise_level, noise_ar=args.noise_ar,
                         band=(args.band_low, args.band_high), amplitude=args.amplitude,
                         duration=args.duration, decay=args.decay, max_hops=args.max_hops,
                         origin_nodes=origins, positive_frac=args.positive_frac, seed=args.seed)
    if args.n < 0:
        raise ConfigError("--n must be non-negative")
    ds = generate(spec, args.n, adjacency, lead_names)
    save_dataset(ds, args.out)
    config = {"spec": spec.to_dict(), "n": args.n, "topology": args.topology,
              "edge_file": args.edge_file, "density": args.density, "directed": args.directed}
    inputs = [args.edge_file] if args.edge_file else []
    write_manifest(args.out, "generate", argv, config, args.seed, inputs, [args.out], started,
                   {"n_positive": int(ds.labels.sum()) if len(ds) else 0})
    print(f"wrote {len(ds)} samples ({int(ds.labels.sum()) if len(ds) else 0} positive) to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------- train


def resolve_config(args, signal_len: int):
    if args.config in NAMED_CONFIGS:
        kw = {}
        if args.channels:
            kw["channels"] = args.channels
        if args.head is not None:
            kw["head"] = args.head
        return named_config(args.config, rule=args.rule or "B", aggregate=args.aggregate or "max",
                            signal_len=signal_len, **kw)
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"--config must be one of {', '.join(NAMED_CONFIGS)} or a config file")
    cfg = parse_config(path.read_text())
    overrides = {}
    if args.rule:
        overrides["rule"] = args.rule
    if args.aggregate:
        overrides["aggregate"] = args.aggregate
    if overrides:
        cfg = replace(cfg, **overrides)
    if cfg.signal_len != signal_len:
        cfg = with_signal_len(cfg, signal_len)
    return cfg


def cmd_train(args, argv) -> int:
    started = time.perf_counter()
    ds = _load_dataset(args.dataset)
    if len(ds) == 0:
        raise DataError(f"dataset {args.dataset} is empty")
    eval_set = _load_dataset(args.eval_dataset) if args.eval_dataset else None
    cfg = resolve_config(args, ds.samples[0].x.shape[0])
    spec = TrainSpec(lr0=args.lr, momentum=args.momentum, decay_every=args.decay_every,
                     decay_factor=args.decay_factor, batch_size=args.batch_size,
                     max_steps=args.max_steps, seed=args.seed, keep_negatives=args.keep_negatives,
                     eval_every=args.eval_every)
    log_path = args.log or str(args.out) + ".log.csv"
    model = build(cfg, args.seed)
    result = train(model, ds, spec, eval_set=eval_set, log_path=log_path)
    save_model(result.best, args.out)
    config = {"model": format_config(cfg), "train": spec.to_dict(), "param_count": model.param_count()}
    inputs = [args.dataset] + ([args.eval_dataset] if args.eval_dataset else [])
    write_manifest(args.out, "train", argv, config, args.seed, inputs, [args.out, log_path], started,
                   {"best_step": result.best_step, "best_auroc": result.best_auroc})
    print(f"trained {spec.max_steps} steps; best step {result.best_step}; model -> {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ evaluate


def cmd_evaluate(args, argv) -> int:
    started = time.perf_counter()
    models = _load_models(args.model)
    ds = _load_dataset(args.dataset)
    if len(ds) == 0:
        raise DataError(f"dataset {args.dataset} is empty")
    for m in models:
        if m.config.signal_len != ds.samples[0].x.shape[0]:
            raise DataError(f"model expects {m.config.signal_len} samples per epoch, "
                            f"dataset has {ds.samples[0].x.shape[0]}")
    # an ensemble scores each sample by its mean logit
    logits = np.mean([predict_logits(m, ds) for m in models], axis=0)
    report = metric_report(logits, ds.labels)
    metrics = {k: report[k] for k in METRIC_KEYS}
    Path(args.out).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    write_manifest(args.out, "evaluate", argv, {"ensemble_size": len(models)}, None,
                   list(args.model) + [args.dataset], [args.out], started,
                   {"diagnostics": report["diagnostics"]})
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


# ------------------------------------------------------------------- explain


def _find_sample(ds, sample_id: int):
    for s in ds.samples:
        if s.sample_id == sample_id:
            return s
    raise DataError(f"no sample with id {sample_id} in the dataset")


def cmd_explain(args, argv) -> int:
    started = time.perf_counter()
    models = _load_models(args.model)
    ds = _load_dataset(args.dataset)
    sample = _find_sample(ds, args.sample)
    names = list(ds.lead_names) if ds.lead_names else [str(i) for i in range(sample.p)]
    outputs = [args.out]
    if args.mode == "gradient":
        attr = gradient_attribution(models, sample)
        write_attribution_csv(attr, args.out, names)
        if args.overlay:
            if tuple(names) != LEADS:
                raise DataError("montage overlays need the builtin 21-lead dataset")
            write_overlay_csv(render_overlay_data(attr, MONTAGE_PAIRS, names), args.overlay)
            outputs.append(args.overlay)
    else:
        if args.mode == "dropout-single":
            drops, labels, kind = single_lead_sets(sample.p), list(names), "dropout_single"
        else:
            if tuple(names) != LEADS:
                raise DataError("region mode needs a dataset on the builtin 21-lead topology")
            regions = builtin_topology().region_indices()
            drops, labels, kind = list(regions.values()), list(regions), "dropout_group"
        attr = sequence_dropout(models, sample, [[]] + drops, ["control"] + labels, kind)
        write_dropout_json(attr, args.out, names)
    write_manifest(args.out, "explain", argv, {"mode": args.mode, "sample": args.sample,
                                               "ensemble_size": len(models)},
                   None, list(args.model) + [args.dataset], outputs, started)
    print(f"wrote {args.mode} attribution for sample {args.sample} to {args.out}")
    return EXIT_OK


# -------------------------------------------------------------------- replay


def cmd_replay(args, argv) -> int:
    path = Path(args.manifest)
    if not path.is_file():
        raise DataError(f"manifest {path} not found")
    doc = json.loads(path.read_text())
    return main(doc["argv"])


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tgcn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"tgcn {__version__}")
    ap.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--p", type=int, default=None, help="node count (random topology)")
    g.add_argument("--topology", choices=("builtin", "random"), default="builtin")
    g.add_argument("--edge-file", help="replace the builtin 10-20 edge list")
    g.add_argument("--density", type=float, default=0.3, help="edge density of a random topology")
    g.add_argument("--directed", action="store_true")
    g.add_argument("--t-raw", type=int, default=19200)
    g.add_argument("--sample-rate", type=float, default=200.0)
    g.add_argument("--noise-level", type=float, default=1.0)
    g.add_argument("--noise-ar", type=float, default=0.9)
    g.add_argument("--band-low", type=float, default=12.0)
    g.add_argument("--band-high", type=float, default=18.0)
    g.add_argument("--amplitude", type=float, default=2.0)
    g.add_argument("--duration", type=float, default=20.0, help="motif length in seconds")
    g.add_argument("--decay", type=float, default=0.5)
    g.add_argument("--max-hops", type=int, default=2)
    g.add_argument("--origin", action="append", help="allowed motif origin (lead name or index)")
    g.add_argument("--positive-frac", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--eval-dataset", help="tuning set for best-checkpoint selection")
    t.add_argument("--config", default="II", help="I..V or a config file")
    t.add_argument("--rule", choices=("A", "B"))
    t.add_argument("--aggregate", choices=("max", "mean"))
    t.add_argument("--channels", type=_int_list, help="per-block channels of a named config")
    t.add_argument("--head", type=_int_list, help="hidden widths of the prediction head")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--max-steps", type=int, default=1000)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--decay-every", type=int, default=100)
    t.add_argument("--decay-factor", type=float, default=0.9)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--keep-negatives", type=float, default=0.1)
    t.add_argument("--eval-every", type=int, default=100)
    t.add_argument("--log", help="step log CSV (default <out>.log.csv)")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a dataset with one model or an ensemble")
    e.add_argument("--model", action="append", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("explain", help="attribute one sample's prediction to leads")
    x.add_argument("--model", action="append", required=True)
    x.add_argument("--dataset", required=True)
    x.add_argument("--sample", type=int, required=True, help="sample id")
    x.add_argument("--mode", choices=("gradient", "dropout-single", "dropout-region"), default="gradient")
    x.add_argument("--overlay", help="also write montage-pair overlay data (gradient mode)")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_explain)

    r = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    r.add_argument("manifest")
    r.set_defaults(func=cmd_replay)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except DivergenceError as exc:
        print(f"tgcn: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ConfigError as exc:
        print(f"tgcn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, GraphError, OSError) as exc:
        print(f"tgcn: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
