"""
cli.py
Command-line entry point for the whole pipeline

    python cli.py gen-data --n 20000
    python cli.py train --dataset runs/data/train.jsonl --val runs/data/val.jsonl
    python cli.py decode --checkpoint runs/checkpoint.fddr --strategy ss
    python cli.py bench --checkpoint runs/checkpoint.fddr --dataset runs/data/val.jsonl
    python cli.py scale --checkpoint runs/checkpoint.fddr --n 4 --sweep 1,2,4,8
    python cli.py check --only structural,beta_means --json
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from decoders import make_decoder
from eval_bench import run_benchmark
from export_formats import ReportExporter, to_json
from rollout_scaling import scaling_sweep
from sasd_training import train
from self_check import CHECKS, CheckContext, run_checks
from synth_driving_data import emit_dataset, load_records, record_for_index
from tools import console
from tools.checkpoint_io import init_model, load_model
from tools.errors import CheckFailed, ConfigError, ScaffoldDriveError
from tools.run_config import RunConfig, load_run_config, parse_overrides
from tools.schema_scaffold import DrivingRecord, ScaffoldLayout, load_reference_layout, render_text


# ==================== SHARED HELPERS ====================

def _csv_list(value: Optional[str]) -> Optional[str]:
    return ",".join(v.strip() for v in value.split(",") if v.strip()) if value else None


def command_overrides(args: argparse.Namespace) -> Dict[str, str]:
    """Per-command flags as `section.field` overrides (highest precedence)"""
    mapping = {
        "seed": "seed",
        "out_dir": "out_dir",
        "n_records": "data.n_records",
        "val_fraction": "data.val_fraction",
        "steps": "train.steps",
        "strategy": "decode.strategy",
        "tau": "decode.tau",
        "block_size": "decode.block_size",
        "strategies": "bench.strategies",
        "max_samples": "bench.max_samples",
        "workers": "bench.max_workers",
        "n": "rollout.n",
        "temperature": "rollout.temperature",
        "sweep": "rollout.sweep",
    }
    out = parse_overrides(args.set or [])
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = str(value)
    if getattr(args, "tau", None) is not None:
        out["bench.tau"] = str(args.tau)
    if getattr(args, "block_size", None) is not None:
        for section in ("train", "bench", "rollout"):
            out[f"{section}.block_size"] = str(args.block_size)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, command_overrides(args))


def get_model(checkpoint: Optional[str], config: RunConfig, layout: ScaffoldLayout):
    """(model, trained) from a checkpoint, or a fresh init when none is given"""
    if checkpoint:
        console.info(f"Loading checkpoint {checkpoint}")
        return load_model(checkpoint, layout), True
    console.warn("No checkpoint given, using freshly initialised parameters")
    return init_model(config.model, layout), False


def get_records(dataset: Optional[str], config: RunConfig, count: int) -> List[DrivingRecord]:
    """
    Records from a JSONL file, or held-out synthetic records (indices past
    the configured training set) when no file is given
    """
    if dataset:
        path = Path(dataset)
        if not path.exists():
            raise ConfigError(f"dataset not found: {path}")
        return load_records(path)[:count]
    start = config.data.n_records
    return [record_for_index(config.data.seed, start + i, config.data) for i in range(count)]


# ==================== COMMANDS ====================

def cmd_gen_data(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    out_dir = Path(config.out_dir) / "data"
    emit_dataset(config.data.n_records, config.data.seed, out_dir, config.data.val_fraction, config.data)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    layout = load_reference_layout()
    if args.dataset:
        dataset = get_records(args.dataset, config, sys.maxsize)
    else:
        console.info(f"No dataset given, generating {config.data.n_records} records in memory")
        dataset = [record_for_index(config.data.seed, i, config.data) for i in range(config.data.n_records)]
    val_records = get_records(args.val, config, config.train.val_batch)
    model_config = config.model.model_copy(update={"vocab_size": len(layout.vocab)})

    console.banner("TRAINING")
    result = train(config.train, dataset, layout, model_config, val_records, out_dir=config.out_dir)
    if result.curve:
        last = result.curve[-1]
        console.ok(f"Done: joint loss {last['joint_loss']:.4f}, val exact match {last['val_metric']:.3f}")
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    layout = load_reference_layout()
    model, _ = get_model(args.checkpoint, config, layout)

    if args.prompt_file:
        prompt = Path(args.prompt_file).read_text(encoding="utf-8").strip()
    elif args.prompt:
        prompt = args.prompt
    else:
        prompt = get_records(None, config, 1)[0].prompt
    prompt_ids = layout.vocab.encode_prompt(prompt)

    decoder = make_decoder(model, layout, config.decode)
    result = decoder.decode(prompt_ids)
    trace = result.trace
    console.ok(f"{decoder.name}: {trace.total_passes} passes, {trace.tok_per_step:.2f} tok/step, "
               f"valid={result.structural_valid}")
    print(render_text(result.tokens, layout))

    payload = {
        "prompt": prompt,
        "strategy": config.decode.strategy,
        "tokens": result.tokens,
        "structural_valid": result.structural_valid,
        "parse_error": result.parse_error,
        "output": result.parsed.to_dict() if result.parsed else None,
        "trace": trace.to_dict(),
    }
    trace_out = args.trace_out or Path(config.out_dir) / "decode_trace.json"
    ReportExporter().export_json(payload, trace_out)
    return 0 if result.structural_valid else 1


def cmd_bench(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    layout = load_reference_layout()
    model, _ = get_model(args.checkpoint, config, layout)
    records = get_records(args.dataset, config, config.bench.max_samples)

    console.banner("DECODING BENCHMARK")
    report = run_benchmark(model, layout, records, config.bench, out_dir=Path(config.out_dir) / "bench")
    exporter = ReportExporter()
    print(exporter.format_text_table(report.aggregates(), title="Decoding benchmark"))
    for key, count in report.equivalence.items():
        (console.ok if count == 0 else console.warn)(f"{key}: {count} mismatches")
    return 0


def cmd_scale(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    layout = load_reference_layout()
    model, _ = get_model(args.checkpoint, config, layout)
    rollout = config.rollout
    if args.n is not None and args.sweep is None:
        rollout = rollout.model_copy(update={"sweep": [rollout.n]})
    records = get_records(args.dataset, config, rollout.max_samples)

    console.banner("TEST-TIME SCALING")
    rows, summary = scaling_sweep(model, layout, records, rollout)
    exporter = ReportExporter()
    out = Path(args.out) if args.out else Path(config.out_dir) / "scale_report.csv"
    exporter.export_rows_csv(rows, out)
    exporter.export_rows_csv(summary, out.with_name(out.stem + "_summary.csv"))
    print(exporter.format_text_table(
        {f"N={row['n']}": row for row in summary},
        columns=("samples", "ade_3s_mean", "ade_3s_stderr", "ade_5s_mean", "ade_5s_stderr", "failures"),
        title="ADE by rollout count"))
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    if args.json:
        console.set_quiet(True)
    config = resolve_config(args)
    layout = load_reference_layout()
    model, trained = get_model(args.checkpoint, config, layout)
    needed = max(config.check.structural_samples, config.check.equivalence_samples,
                 config.check.scaling_samples, config.check.trainability_samples)
    records = get_records(args.dataset, config, needed)
    ctx = CheckContext(layout=layout, model=model, records=records, config=config.check,
                       trained=trained, block_size=config.decode.block_size, rollout=config.rollout)

    names = _csv_list(args.only)
    try:
        verdict = run_checks(ctx, names.split(",") if names else None)
        status = 0
    except CheckFailed as e:
        verdict = e.verdict or {"passed": False, "failed": e.check_name}
        verdict["first_failure"] = e.check_name
        console.fail(str(e))
        status = 1
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if args.json:
        print(to_json(verdict))
    else:
        out = Path(config.out_dir) / "check_verdict.json"
        ReportExporter().export_json(verdict, out)
    return status


# ==================== PARSER ====================

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(description="Scaffold-aware structured decoding for driving outputs",
                                     formatter_class=fmt)
    parser.add_argument("--config", default=None, help="dotenv-style config file (section.field=value)")
    parser.add_argument("--seed", type=int, default=None, help="global seed (section seeds default to it)")
    parser.add_argument("--out-dir", default=None, help="output directory (config default: runs)")
    parser.add_argument("--set", action="append", default=None, metavar="KEY=VALUE",
                        help="override any config key, e.g. train.steps=500 (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress status lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write train/val JSONL datasets", formatter_class=fmt)
    p.add_argument("--n", dest="n_records", type=int, default=None, help="number of records (config default: 20000)")
    p.add_argument("--val-fraction", type=float, default=None, help="share of records for val (config default: 0.1)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a checkpoint with the joint objective", formatter_class=fmt)
    p.add_argument("--dataset", default=None, help="train JSONL (default: generate in memory)")
    p.add_argument("--val", default=None, help="val JSONL (default: held-out synthetic records)")
    p.add_argument("--steps", type=int, default=None, help="optimizer steps (config default: 3000)")
    p.add_argument("--block-size", type=int, default=None, help="block size d (config default: 32)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode one prompt", formatter_class=fmt)
    p.add_argument("--strategy", default=None, help="ar, sd, selfspec or ss (config default: ss)")
    p.add_argument("--checkpoint", default=None, help="checkpoint file (default: fresh init)")
    p.add_argument("--prompt", default=None, help="prompt string")
    p.add_argument("--prompt-file", default=None, help="file holding the prompt string")
    p.add_argument("--tau", type=float, default=None, help="Section Diffusion threshold (config default: 0.9)")
    p.add_argument("--block-size", type=int, default=None, help="block size d (config default: 32)")
    p.add_argument("--trace-out", default=None, help="trace JSON path (default: <out-dir>/decode_trace.json)")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("bench", help="benchmark decoding strategies", formatter_class=fmt)
    p.add_argument("--checkpoint", default=None, help="checkpoint file (default: fresh init)")
    p.add_argument("--dataset", default=None, help="val JSONL (default: held-out synthetic records)")
    p.add_argument("--strategies", type=_csv_list, default=None, help="comma list (config default: ar,sd,selfspec,ss)")
    p.add_argument("--max-samples", type=int, default=None, help="sample cap (config default: 500)")
    p.add_argument("--workers", type=int, default=None, help="parallel sample workers (config default: 1)")
    p.add_argument("--block-size", type=int, default=None, help="block size d (config default: 32)")
    p.add_argument("--tau", type=float, default=None, help="Section Diffusion threshold (config default: 0.9)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("scale", help="shared-prefix rollout averaging sweep", formatter_class=fmt)
    p.add_argument("--checkpoint", default=None, help="checkpoint file (default: fresh init)")
    p.add_argument("--dataset", default=None, help="val JSONL (default: held-out synthetic records)")
    p.add_argument("--n", type=int, default=None, help="rollouts when no sweep is given (config default: 4)")
    p.add_argument("--temperature", type=float, default=None, help="trajectory temperature (config default: 0.7)")
    p.add_argument("--sweep", type=_csv_list, default=None, help="comma list of N, e.g. 1,2,4,8")
    p.add_argument("--out", default=None, help="per-sample CSV (default: <out-dir>/scale_report.csv)")
    p.add_argument("--block-size", type=int, default=None, help="block size d (config default: 32)")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("check", help="run the invariant self-checks", formatter_class=fmt)
    p.add_argument("--only", default=None, help=f"comma list from: {','.join(CHECKS)}")
    p.add_argument("--json", action="store_true", help="print the JSON verdict to stdout")
    p.add_argument("--checkpoint", default=None, help="checkpoint file (default: fresh init)")
    p.add_argument("--dataset", default=None, help="val JSONL (default: held-out synthetic records)")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.quiet:
        console.set_quiet(True)
    try:
        return args.func(args)
    except ConfigError as e:
        console.fail(f"Configuration error: {e}")
        return 2
    except ScaffoldDriveError as e:
        console.fail(f"{type(e).__name__}: {e}")
        return 1
    except (OSError, ValueError) as e:
        console.fail(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
