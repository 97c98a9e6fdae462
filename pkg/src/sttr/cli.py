"""Command-line entry point: ``sttr <command> ...``.

Exit codes: 0 success, 1 verification failure, 2 configuration or user
error, 3 artifact (checkpoint / dataset file) mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RUN_CONFIG_SCHEMA, RunConfig, load_run_config
from .data import (ARCHETYPES, read_dataset, read_sample, stack_samples, generate_synthetic,
                   topology_for, train_test_split, write_dataset)
from .errors import CheckpointError, ConfigError, FormatError, STTRError, TopologyError
from .networks import NetworkConfig, build_stream, count_parameters, extract_attention_maps
from . import report
from .training import evaluate, train

EXIT_OK, EXIT_VERIFY, EXIT_USER, EXIT_ARTIFACT = 0, 1, 2, 3

log = logging.getLogger("sttr")


class UserError(Exception):
    """Bad flags, paths or configuration (exit 2)."""


# ---------------------------------------------------------------------------
# helpers


def _load_config(path) -> RunConfig:
    return load_run_config(path)


def _datasets(rc: RunConfig):
    """(train samples, test samples, manifest) following the config's data section."""
    manifest_path = rc.path("manifest")
    manifest, samples = read_dataset(manifest_path)
    if rc.path("test_manifest") is not None:
        _, test = read_dataset(rc.path("test_manifest"))
        train_set = samples
    else:
        n_test = rc.data.get("test_per_class", 0)
        train_set, test = train_test_split(samples, n_test, rc.data.get("split_seed", 0))
    return train_set, test, manifest


def _network_for(rc: RunConfig, manifest) -> NetworkConfig:
    net = rc.network
    if "num_classes" not in rc.raw.get("network", {}):
        net.num_classes = len(manifest.classes)
    if "topology" not in rc.raw.get("network", {}):
        net.topology = manifest.topology
    return net


def _frames(rc: RunConfig, manifest) -> int:
    return rc.network.T or rc.data.get("T") or manifest.T_target


def _checkpoint_path(directory: Path, index: int, kind: str) -> Path:
    return directory / f"stream{index}_{kind}.ckpt"


def _build_models(rc: RunConfig, manifest):
    net = _network_for(rc, manifest)
    return [build_stream(net, kind) for kind in rc.streams]


def _print_accuracy(result: dict, streams) -> None:
    for i, kind in enumerate(streams):
        r = result[f"stream{i}"]
        print(f"stream{i} {kind}: top1={r['top1']:.4f} top5={r['top5']:.4f}")
    if "fused" in result:
        r = result["fused"]
        print(f"fused: top1={r['top1']:.4f} top5={r['top5']:.4f}")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    classes = [c.strip() for c in args.classes.split(",")] if args.classes else list(ARCHETYPES)
    unknown = [c for c in classes if c not in ARCHETYPES]
    if unknown:
        raise UserError(f"unknown classes {unknown}; choose from {list(ARCHETYPES)}")
    samples = generate_synthetic(args.seed, classes, args.n, args.V, args.T, args.noise)
    try:
        path = write_dataset(args.out, samples, classes, "ntu25", args.T)
    except OSError as exc:
        raise UserError(f"cannot write dataset to {args.out}: {exc.strerror or exc}") from None
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    rc = _load_config(args.config)
    train_set, test_set, manifest = _datasets(rc)
    topo = topology_for(manifest)
    T_target = _frames(rc, manifest)
    X, y = stack_samples(train_set, T_target, topo, bones=rc.bones)
    out = Path(args.out_checkpoint)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UserError(f"cannot create {out}: {exc.strerror}") from None
    models = _build_models(rc, manifest)
    for i, (kind, model) in enumerate(zip(rc.streams, models)):
        if not args.init_only:
            history = train(model, X, y, rc.train)
            report.write_history_csv(out / f"stream{i}_{kind}_history.csv", history)
            last = history[-1]
            print(f"stream{i} {kind}: {len(history)} epochs, final loss {last.loss:.4f}, train top1 {last.top1:.4f}")
        save_checkpoint(model, _checkpoint_path(out, i, kind))
        print(_checkpoint_path(out, i, kind))
    (out / "run_config.json").write_text(json.dumps(rc.raw, indent=2))
    if test_set:
        Xt, yt = stack_samples(test_set, T_target, topo, bones=rc.bones)
        _print_accuracy(evaluate(models, Xt, yt), rc.streams)
    return EXIT_OK


def _load_models(rc: RunConfig, manifest, directory) -> list:
    directory = Path(directory)
    models = _build_models(rc, manifest)
    for i, (kind, model) in enumerate(zip(rc.streams, models)):
        path = _checkpoint_path(directory, i, kind)
        if not path.exists():
            raise CheckpointError(f"missing checkpoint {path}")
        load_checkpoint(model, path)
    return models


def cmd_eval(args) -> int:
    rc = _load_config(args.config)
    train_set, test_set, manifest = _datasets(rc)
    models = _load_models(rc, manifest, args.checkpoint)
    samples = test_set or train_set
    X, y = stack_samples(samples, _frames(rc, manifest), topology_for(manifest), bones=rc.bones)
    _print_accuracy(evaluate(models, X, y), rc.streams)
    return EXIT_OK


def cmd_params(args) -> int:
    if args.config:
        rc = _load_config(args.config)
        net, kinds = rc.network, rc.streams
    else:
        net, kinds = NetworkConfig(), [args.kind]
    for kind in kinds:
        rep = count_parameters(build_stream(net, kind))
        print(f"# {kind}")
        for name, n in rep.breakdown:
            print(f"{name},{n}")
        print(f"total,{rep.total}")
    print("# comparison")
    print("kind,parameters,x1e5")
    for kind, n in report.comparison_table(net):
        print(f"{kind},{n},{n / 1e5:.2f}")
    if args.sweep_csv:
        channels = [int(c) for c in args.sweep.split(",")]
        rows = report.channel_sweep(channels, V=net.V, kernel_size=net.kernel_size, heads=net.heads)
        report.write_rows_csv(args.sweep_csv, rows)
        print(args.sweep_csv)
        if args.figures:
            png = Path(args.sweep_csv).with_suffix(".png")
            report.plot_sweep_png(png, rows)
            print(png)
    return EXIT_OK


def cmd_export_attention(args) -> int:
    rc = _load_config(args.config)
    if not rc.capture:
        raise UserError("attention capture is disabled in the run config (set \"capture\": true)")
    train_set, test_set, manifest = _datasets(rc)
    models = _load_models(rc, manifest, args.checkpoint)
    if args.stream is not None:
        if args.stream not in rc.streams:
            raise UserError(f"stream {args.stream!r} is not in the config streams {rc.streams}")
        chosen = [rc.streams.index(args.stream)]
    else:
        chosen = [i for i, m in enumerate(models) if m.attention_layers()]
    if not chosen:
        raise UserError("none of the configured streams has attention layers")
    topo = topology_for(manifest)
    if Path(args.sample).suffix == ".skel":
        sample = read_sample(args.sample)
    else:
        pool = test_set or train_set
        try:
            sample = pool[int(args.sample)]
        except (ValueError, IndexError):
            raise UserError(f"--sample must be a .skel path or an index below {len(pool)}") from None
    X, _ = stack_samples([sample], _frames(rc, manifest), topo, bones=rc.bones)
    out = Path(args.out_dir)
    for i in chosen:
        model = models[i]
        model.capture = True
        maps, relevance = extract_attention_maps(model, X[0])
        target = out / f"stream{i}_{rc.streams[i]}" if len(chosen) > 1 else out
        for p in report.export_attention(maps, relevance, target, figures=args.figures):
            print(p)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_suite
    results = run_suite(args.module, eps=args.eps)
    print("op,group,max_rel_error,status")
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name},{r.group},{r.error:.3e},{status}" + (f" ({r.message})" if r.message else ""))
    failed = [r.name for r in results if not r.passed]
    print(f"checked {len(results)} operations, tolerance {TOLERANCE:g}")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_VERIFY
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(RUN_CONFIG_SCHEMA, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sttr", description="Skeleton spatial-temporal transformer lab")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a seeded synthetic skeleton dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--classes", default=None, help=f"comma-separated subset of {','.join(ARCHETYPES)}")
    g.add_argument("--n", type=int, default=50, help="samples per class")
    g.add_argument("--V", type=int, default=25)
    g.add_argument("--T", type=int, default=32)
    g.add_argument("--noise", type=float, default=0.05)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train every configured stream and write checkpoints")
    t.add_argument("--config", required=True)
    t.add_argument("--out-checkpoint", required=True, help="output directory")
    t.add_argument("--init-only", action="store_true", help="save freshly initialized weights without training")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1/top-5 of every stream and of the fused scores")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True, help="directory written by train")
    e.set_defaults(func=cmd_eval)

    pa = sub.add_parser("params", help="parameter counts per layer and across stream kinds")
    pa.add_argument("--config", default=None)
    pa.add_argument("--kind", default="ST-GCN", help="stream kind when no config is given")
    pa.add_argument("--sweep", default="64,128,256,512", help="channel widths for --sweep-csv")
    pa.add_argument("--sweep-csv", default=None, help="write core-module counts per width to this CSV")
    pa.add_argument("--no-figures", dest="figures", action="store_false")
    pa.set_defaults(func=cmd_params)

    x = sub.add_parser("export-attention", help="write attention maps as CSV/PGM/PNG")
    x.add_argument("--config", required=True)
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--sample", default="0", help="test-set index or .skel file")
    x.add_argument("--out-dir", required=True)
    x.add_argument("--stream", default=None, help="stream kind (default: every stream with attention)")
    x.add_argument("--no-figures", dest="figures", action="store_false")
    x.set_defaults(func=cmd_export_attention)

    gc = sub.add_parser("gradcheck", help="run the 64-bit finite-difference suite")
    gc.add_argument("--module", choices=["all", "tensor", "layers", "network"], default="all")
    gc.add_argument("--eps", type=float, default=1e-5)
    gc.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("schema", help="print the run-config JSON schema")
    s.set_defaults(func=cmd_schema)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USER if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CheckpointError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (UserError, ConfigError, TopologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: not found", file=sys.stderr)
        return EXIT_USER
    except STTRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
