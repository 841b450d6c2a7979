"""Command-line entry point for the separation toolkit.

Subcommands cover the whole pipeline: prepare-data, similarity-report,
train, sweep, evaluate, stream-sim, length-sweep. Every run resolves its
configuration from three layers (built-in defaults, then an optional JSON
config file, then explicit command-line values), writes the resolved
snapshot to <out-dir>/resolved_config.json, and on failure writes a
machine-readable <out-dir>/error.json. Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import load_manifest, prepare_corpus_dir
from .embeddings import get_backend
from .errors import CallsepError
from .model import ConvTasNet, SeparatorConfig, load_checkpoint
from .trainer import TrainConfig, evaluate, sweep, train


def _parse_floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _parse_ints(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _layer_config(defaults: dict, config_path: str | None, cli_values: dict) -> dict:
    """defaults < config file < explicitly given command-line values."""
    resolved = json.loads(json.dumps(defaults))  # deep copy via round-trip
    if config_path:
        loaded = json.loads(Path(config_path).read_text())
        for section, values in loaded.items():
            if isinstance(values, dict) and isinstance(resolved.get(section), dict):
                resolved[section].update(values)
            else:
                resolved[section] = values
    for dotted, value in cli_values.items():
        if value is None:
            continue
        node = resolved
        *heads, leaf = dotted.split(".")
        for head in heads:
            node = node.setdefault(head, {})
        node[leaf] = value
    return resolved


def _write_snapshot(out_dir: Path, subcommand: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {"subcommand": subcommand, "config": resolved}
    (out_dir / "resolved_config.json").write_text(json.dumps(snapshot, indent=2))


def _model_from_resolved(resolved: dict) -> SeparatorConfig:
    preset = resolved.get("model", {}).get("preset", "toy")
    base = SeparatorConfig.full() if preset == "full" else SeparatorConfig.toy()
    overrides = {
        k: v for k, v in resolved.get("model", {}).items() if k != "preset"
    }
    if overrides:
        merged = base.to_dict()
        merged.update(overrides)
        base = SeparatorConfig.from_dict(merged)
    return base


def _train_config_from_resolved(resolved: dict) -> TrainConfig:
    section = dict(resolved.get("train", {}))
    similarity = section.pop("similarity", None)
    cfg = TrainConfig(**section)
    if similarity is not None:
        from .embeddings import SimilarityConfig

        cfg.loss = "enhanced"
        cfg.similarity = SimilarityConfig(**similarity)
    return cfg


def _load_model(checkpoint_path) -> ConvTasNet:
    from .model import load_into

    cfg, _, _ = load_checkpoint(checkpoint_path)
    model = ConvTasNet(cfg)
    load_into(model, checkpoint_path)
    model.eval()
    return model


# --------------------------------------------------------------------------
# Subcommand implementations (each returns an exit code)
# --------------------------------------------------------------------------

def _cmd_prepare_data(args) -> int:
    out_dir = Path(args.out_dir)
    defaults = {
        "fractions": [0.7, 0.2, 0.1],
        "seed": 42,
        "segment_seconds": 30.0,
        "sample_rate": 8000,
        "synthesize": 0,
        "synth_duration_s": 60.0,
    }
    resolved = _layer_config(
        defaults,
        args.config,
        {
            "fractions": _parse_floats(args.fractions) if args.fractions else None,
            "seed": args.seed,
            "segment_seconds": args.segment_seconds,
            "sample_rate": args.sample_rate,
            "synthesize": args.synthesize,
            "synth_duration_s": args.synth_duration_s,
        },
    )
    _write_snapshot(out_dir, "prepare-data", resolved)
    corpus_dir = args.corpus_dir
    if resolved["synthesize"]:
        from .synth import synth_corpus

        corpus_dir = out_dir / "raw"
        synth_corpus(
            corpus_dir,
            n_calls=int(resolved["synthesize"]),
            duration_s=float(resolved["synth_duration_s"]),
            sample_rate=int(resolved["sample_rate"]),
            seed=int(resolved["seed"]),
        )
    if corpus_dir is None:
        raise CallsepError("prepare-data needs --corpus-dir or --synthesize N")
    manifest_path = prepare_corpus_dir(
        corpus_dir,
        out_dir / "corpus",
        fractions=tuple(resolved["fractions"]),
        seed=int(resolved["seed"]),
        segment_seconds=float(resolved["segment_seconds"]),
        sample_rate=int(resolved["sample_rate"]),
    )
    print(f"manifest: {manifest_path}")
    return 0


def _cmd_similarity_report(args) -> int:
    import csv

    out_dir = Path(args.out_dir)
    defaults = {"backend": "stub:seed=0", "split": "test"}
    resolved = _layer_config(
        defaults, args.config, {"backend": args.backend, "split": args.split}
    )
    _write_snapshot(out_dir, "similarity-report", resolved)
    from .embeddings import similarity_report

    manifest = load_manifest(args.manifest)
    backend = get_backend(resolved["backend"])
    rows = similarity_report(manifest.split(resolved["split"]), backend)
    csv_path = out_dir / "similarity.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["sample_id", "css", "backend", "layer"])
        writer.writeheader()
        writer.writerows(rows)
    from .plots import plot_similarity_histogram

    plot_similarity_histogram(rows, out_dir / "similarity_hist.png")
    values = [row["css"] for row in rows]
    mean = sum(values) / len(values) if values else float("nan")
    print(f"samples: {len(rows)}  mean css: {mean:.4f}")
    print(f"report: {csv_path}")
    return 0


_TRAIN_DEFAULTS = {
    "model": {"preset": "toy"},
    "train": {
        "max_epochs": 50,
        "patience": 30,
        "learning_rate": 1e-3,
        "batch_size": 4,
        "seed": 0,
    },
}


def _cmd_train(args) -> int:
    out_dir = Path(args.out_dir)
    resolved = _layer_config(
        _TRAIN_DEFAULTS,
        args.config,
        {
            "model.preset": args.preset,
            "train.max_epochs": args.max_epochs,
            "train.seed": args.seed,
            "train.init": "transfer" if args.init_checkpoint else None,
            "train.init_checkpoint": args.init_checkpoint,
        },
    )
    _write_snapshot(out_dir, "train", resolved)
    manifest = load_manifest(args.manifest)
    model_cfg = _model_from_resolved(resolved)
    train_cfg = _train_config_from_resolved(resolved)
    model, record = train(manifest, model_cfg, train_cfg, out_dir=out_dir)
    from .plots import plot_training_curves

    plot_training_curves(record, out_dir / "training_curves.png")
    print(
        f"best epoch {record.best_epoch}: validation SI-SDR "
        f"{record.best_validation_si_sdr:.3f} dB (stopped at {record.stopped_epoch})"
    )
    print(f"checkpoint: {out_dir / 'best.ckpt'}")
    return 0


def _cmd_sweep(args) -> int:
    out_dir = Path(args.out_dir)
    defaults = json.loads(json.dumps(_TRAIN_DEFAULTS))
    defaults["sweep"] = {
        "weights": [5.0, 10.0, 20.0],
        "layers": [1, 2, 3, 4, 12],
        "backend_template": "stub:seed=0,layer={layer}",
    }
    resolved = _layer_config(
        defaults,
        args.config,
        {
            "model.preset": args.preset,
            "train.max_epochs": args.max_epochs,
            "train.seed": args.seed,
            "sweep.weights": _parse_floats(args.weights) if args.weights else None,
            "sweep.layers": _parse_ints(args.layers) if args.layers else None,
            "sweep.backend_template": args.backend_template,
        },
    )
    _write_snapshot(out_dir, "sweep", resolved)
    manifest = load_manifest(args.manifest)
    model_cfg = _model_from_resolved(resolved)
    base_cfg = _train_config_from_resolved(resolved)
    cells = sweep(
        manifest,
        model_cfg,
        base_cfg,
        resolved["sweep"]["weights"],
        resolved["sweep"]["layers"],
        out_dir,
        backend_template=resolved["sweep"]["backend_template"],
    )
    from .plots import plot_sweep_heatmap

    plot_sweep_heatmap(cells, out_dir / "sweep_heatmap.png")
    best = next((c for c in cells if c.get("best_si_sdr") is not None), None)
    if best is not None:
        print(
            f"best cell: weight {best['weight_sl']:g}, layer {best['layer']} -> "
            f"{best['best_si_sdr']:.3f} dB"
        )
    print(f"results: {out_dir / 'results.csv'}")
    return 0


def _cmd_evaluate(args) -> int:
    out_dir = Path(args.out_dir)
    defaults = {"split": "test"}
    resolved = _layer_config(defaults, args.config, {"split": args.split})
    _write_snapshot(out_dir, "evaluate", resolved)
    manifest = load_manifest(args.manifest)
    model = _load_model(args.checkpoint)
    summary = evaluate(
        manifest.split(resolved["split"]), model, out_csv=out_dir / "metrics.csv"
    )
    print(
        f"{resolved['split']}: mean SI-SDR {summary.mean_si_sdr:.3f} dB, "
        f"mean SI-SDRi {summary.mean_si_sdri:.3f} dB over {len(summary.rows)} samples"
    )
    print(f"metrics: {out_dir / 'metrics.csv'}")
    return 0


def _cmd_stream_sim(args) -> int:
    out_dir = Path(args.out_dir)
    defaults = {
        "split": "test",
        "segment_len_s": 2.0,
        "threshold": 1.0,
        "backend": "stub:seed=0",
        "rescale": True,
    }
    resolved = _layer_config(
        defaults,
        args.config,
        {
            "split": args.split,
            "segment_len_s": args.segment_len,
            "threshold": args.threshold,
            "backend": args.backend,
            "rescale": False if args.no_rescale else None,
        },
    )
    _write_snapshot(out_dir, "stream-sim", resolved)
    from .streaming import run_stream

    manifest = load_manifest(args.manifest)
    entries = manifest.split(resolved["split"])
    if not entries:
        raise CallsepError(f"split {resolved['split']!r} is empty")
    if args.sample_id:
        matches = [e for e in entries if e.sample_id == args.sample_id]
        if not matches:
            raise CallsepError(f"sample {args.sample_id!r} not found in split")
        entry = matches[0]
    else:
        entry = entries[0]
    triple = entry.load()
    model = _load_model(args.checkpoint)
    backend = get_backend(resolved["backend"])
    result = run_stream(
        triple.mixture,
        (triple.source1, triple.source2),
        model,
        backend,
        float(resolved["segment_len_s"]),
        threshold=float(resolved["threshold"]),
        rescale=bool(resolved["rescale"]),
    )
    report_path = out_dir / "sync_report.json"
    report_path.write_text(json.dumps(result.report.to_dict(), indent=2))
    from .plots import plot_segment_distances

    plot_segment_distances(result.report, out_dir / "segment_distances.png")
    print(
        f"sample {triple.sample_id}: sync error {result.report.render_pct()}% "
        f"({result.report.n_misplaced}/{result.report.n_full} segments), "
        f"real-time ok: {result.real_time_ok}"
    )
    print(f"report: {report_path}")
    return 0


def _cmd_length_sweep(args) -> int:
    out_dir = Path(args.out_dir)
    defaults = {
        "split": "test",
        "lengths": [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 25, 30],
        "n_samples": 40,
        "threshold": 1.0,
        "backend": "stub:seed=0",
        "rescale": True,
    }
    resolved = _layer_config(
        defaults,
        args.config,
        {
            "split": args.split,
            "lengths": _parse_floats(args.lengths) if args.lengths else None,
            "n_samples": args.n_samples,
            "threshold": args.threshold,
            "backend": args.backend,
            "rescale": False if args.no_rescale else None,
        },
    )
    _write_snapshot(out_dir, "length-sweep", resolved)
    from .plots import plot_length_sweep
    from .streaming import length_sweep

    manifest = load_manifest(args.manifest)
    entries = manifest.split(resolved["split"])
    if not entries:
        raise CallsepError(f"split {resolved['split']!r} is empty")
    entries = entries[: int(resolved["n_samples"])]
    model = _load_model(args.checkpoint)
    backend = get_backend(resolved["backend"])
    rows = length_sweep(
        entries,
        resolved["lengths"],
        model,
        backend,
        threshold=float(resolved["threshold"]),
        out_csv=out_dir / "length_sweep.csv",
        reports_dir=out_dir / "reports",
        rescale=bool(resolved["rescale"]),
    )
    plot_length_sweep(rows, out_dir / "length_sweep.png")
    for row in rows:
        print(
            f"  {row['segment_len_s']:5.1f} s -> {row['mean_error_pct']:6.2f}% "
            f"({row['n_samples']} samples)"
        )
    print(f"table: {out_dir / 'length_sweep.csv'}")
    return 0


# --------------------------------------------------------------------------
# Parser wiring
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="callsep",
        description="Two-speaker call separation: data prep, training, "
        "evaluation, and streaming simulation.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--out-dir", required=True, help="output directory")
        p.add_argument("--config", help="JSON config file (layered under CLI flags)")

    p = sub.add_parser("prepare-data", help="build the triple corpus from stereo calls")
    common(p)
    p.add_argument("--corpus-dir", help="directory of stereo .wav/.mp3 call recordings")
    p.add_argument("--synthesize", type=int, help="generate N synthetic calls instead")
    p.add_argument("--synth-duration-s", type=float, help="duration of synthetic calls")
    p.add_argument("--fractions", help="train,validation,test e.g. 0.7,0.2,0.1")
    p.add_argument("--seed", type=int)
    p.add_argument("--segment-seconds", type=float)
    p.add_argument("--sample-rate", type=int)
    p.set_defaults(func=_cmd_prepare_data)

    p = sub.add_parser("similarity-report", help="inter-source embedding similarity CSV")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["train", "validation", "test"])
    p.add_argument("--backend", help='e.g. "stub:seed=0" or "transformer:layer=3"')
    p.set_defaults(func=_cmd_similarity_report)

    p = sub.add_parser("train", help="train the separator")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", choices=["toy", "full"])
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-checkpoint", help="transfer-learn from this checkpoint")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sweep", help="similarity-weight x embedding-layer grid")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--preset", choices=["toy", "full"])
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--weights", help="comma list, e.g. 5,10,20")
    p.add_argument("--layers", help="comma list, e.g. 1,2,3,4,12")
    p.add_argument("--backend-template", help='e.g. "transformer:layer={layer}"')
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("evaluate", help="per-sample SI-SDR metrics CSV")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "validation", "test"])
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("stream-sim", help="streaming deployment simulation on one sample")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "validation", "test"])
    p.add_argument("--sample-id")
    p.add_argument("--segment-len", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--backend")
    p.add_argument(
        "--no-rescale", action="store_true",
        help="deliver raw estimates without the mixture-consistency gain",
    )
    p.set_defaults(func=_cmd_stream_sim)

    p = sub.add_parser("length-sweep", help="sync error vs streaming segment length")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "validation", "test"])
    p.add_argument("--lengths", help="comma list of seconds")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--backend")
    p.add_argument(
        "--no-rescale", action="store_true",
        help="deliver raw estimates without the mixture-consistency gain",
    )
    p.set_defaults(func=_cmd_length_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CallsepError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        if args.out_dir:
            out_dir = Path(args.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(json.dumps(payload, indent=2))
        return 1
    except Exception as exc:  # runtime failure, still machine-readable
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        if getattr(args, "out_dir", None):
            out_dir = Path(args.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(json.dumps(payload, indent=2))
        return 1


if __name__ == "__main__":
    sys.exit(main())
