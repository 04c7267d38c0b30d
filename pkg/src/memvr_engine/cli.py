"""``memvr`` command line.

    memvr init-weights --out memvr_weights.bin --seed 42
    memvr init-image   --weights memvr_weights.bin --out memvr_image.bin --seed 7
    memvr gen          --weights memvr_weights.bin --strategy memvr-dynamic --prompt-ids 1,2,3,4
    memvr bench        --weights memvr_weights.bin --strategies greedy,memvr-dynamic
    memvr sweep        --weights memvr_weights.bin --gammas 0.5:1:0.25 --alphas 0,0.2
    memvr sweep        --weights memvr_weights.bin --alphas 0.2 --static-layers 1-11
    memvr inspect      --trace trace.csv --ascii

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from rich.console import Console
from rich.table import Table

from . import __version__
from ._io import PathLike, load_weights, save_visual, save_weights
from ._params import build_policy, parse_candidates, parse_float_grid, parse_id_list, parse_strategy_list
from .bench import bench_table
from .config import ModelConfig, Settings, load_settings
from .decoding import RetraceSource, Strategy
from .engine import MemVREngine
from .exceptions import MVConfigError, MVException, MVIOError, MVTraceError
from .model import synthesize_visual_context, synthesize_weights
from .sweep import METRICS, layer_rows_to_csv, layer_table, render_sweep_grid, sweep_to_csv
from .trace import (
    UncertaintyTrace,
    export_trace_csv,
    export_trace_json,
    load_trace,
    render_ascii_heatmap,
    trace_stats,
)

logger = logging.getLogger(__name__)

DEFAULT_WEIGHTS = "memvr_weights.bin"
DEFAULT_IMAGE = "memvr_image.bin"
DEFAULT_PROMPT = "1,2,3,4"
DEFAULT_SWEEP_ALPHAS = "0,0.1,0.2,0.35"

_EXIT_CODES: dict[type[MVException], int] = {
    MVConfigError: 2,
}


def _exit_code_for(error: MVException) -> int:
    for cls in type(error).__mro__:
        if cls in _EXIT_CODES:
            return _EXIT_CODES[cls]
    return 1


# ── parser ────────────────────────────────────────────────────────────────────

def _add_model_args(p: argparse.ArgumentParser, settings: Settings) -> None:
    p.add_argument("--weights", default=settings.weights_path or DEFAULT_WEIGHTS,
                   help=f"weight file (default: $MEMVR_WEIGHTS or {DEFAULT_WEIGHTS})")
    image = p.add_mutually_exclusive_group()
    image.add_argument("--image-seed", type=int, default=None,
                       help=f"synthesize the visual context from this seed (default: {settings.image_seed})")
    image.add_argument("--image-file", default=None, help="load the visual context from a file")
    p.add_argument("--prompt-ids", default=DEFAULT_PROMPT,
                   help=f"comma/space separated text token ids (default: {DEFAULT_PROMPT})")


def _add_decode_args(p: argparse.ArgumentParser) -> None:
    # None means "not given"; build_policy rejects flags the strategy does not read.
    p.add_argument("--strategy", default="greedy", help="greedy | sample | memvr-static | memvr-dynamic | "
                                                        "memvr-dynamic-alpha | contrastive (default: greedy)")
    p.add_argument("--gamma", type=float, default=None, help="entropy threshold (default: 0.75)")
    p.add_argument("--alpha", type=float, default=None, help="injection ratio (default: 0.2)")
    p.add_argument("--layer", type=int, default=None, help="injection layer for memvr-static")
    p.add_argument("--candidates", default=None, help="LO-HI or bucket:I/N (default: all of 1..L-1)")
    p.add_argument("--temperature", type=float, default=None, help="sampling temperature (default: 1.0)")
    p.add_argument("--sample-seed", type=int, default=None, help="sampler / distortion seed (default: 0)")
    p.add_argument("--cd-beta", type=float, default=None, help="contrast weight (default: 1.0)")
    p.add_argument("--cd-noise-sigma", type=float, default=None, help="distortion noise std (default: 0.1)")
    p.add_argument("--retrace-source", default=None,
                   help="image | text | text-image, what memvr strategies re-inject (default: image)")
    p.add_argument("--visual-scale", type=float, default=None, help="visual feature multiplier (default: 1.0)")
    p.add_argument("--text-scale", type=float, default=None, help="text feature multiplier (default: 1.0)")
    p.add_argument("--max-new", type=int, default=32, help="tokens to generate (default: 32)")
    p.add_argument("--eos-id", type=int, default=None, help="end-of-sequence id, -1 disables (default: 0)")


def build_parser(settings: Optional[Settings] = None) -> argparse.ArgumentParser:
    settings = settings or Settings()
    defaults = ModelConfig()
    parser = argparse.ArgumentParser(prog="memvr", description="Toy MemVR inference engine", allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug (stderr)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-weights", help="synthesize a weight file", allow_abbrev=False)
    p.add_argument("--out", default=DEFAULT_WEIGHTS, help=f"output path (default: {DEFAULT_WEIGHTS})")
    p.add_argument("--seed", type=int, default=settings.weight_seed,
                   help=f"weight seed (default: {settings.weight_seed})")
    p.add_argument("--layers", type=int, default=defaults.num_layers)
    p.add_argument("--dim", type=int, default=defaults.hidden_dim)
    p.add_argument("--ffn-dim", type=int, default=defaults.ffn_dim)
    p.add_argument("--vocab", type=int, default=defaults.vocab_size)
    p.add_argument("--heads", type=int, default=defaults.num_heads)
    p.add_argument("--visual-tokens", type=int, default=defaults.num_visual_tokens)
    p.add_argument("--max-seq", type=int, default=defaults.max_seq_len)

    p = sub.add_parser("init-image", help="synthesize a visual context file", allow_abbrev=False)
    p.add_argument("--weights", default=settings.weights_path or DEFAULT_WEIGHTS,
                   help="weight file whose shape the context must match")
    p.add_argument("--out", default=DEFAULT_IMAGE, help=f"output path (default: {DEFAULT_IMAGE})")
    p.add_argument("--seed", type=int, default=settings.image_seed,
                   help=f"visual-context seed (default: {settings.image_seed})")

    p = sub.add_parser("gen", help="generate tokens", allow_abbrev=False)
    _add_model_args(p, settings)
    _add_decode_args(p)
    p.add_argument("--trace-out", default=None, help="write the uncertainty trace here")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="trace format (default: csv)")

    p = sub.add_parser("bench", help="compare strategy latency", allow_abbrev=False)
    _add_model_args(p, settings)
    p.add_argument("--tokens", type=int, default=80, help="tokens per run (default: 80)")
    p.add_argument("--repeats", type=int, default=5, help="timed runs per strategy, >= 3 (default: 5)")
    p.add_argument("--strategies", default="greedy,sample,memvr-dynamic,contrastive",
                   help="comma separated strategy list; greedy is always measured")
    p.add_argument("--json-out", default=None, help="also write the report as JSON")

    p = sub.add_parser("sweep", help="gamma x alpha sweep", allow_abbrev=False)
    _add_model_args(p, settings)
    p.add_argument("--gammas", default="0.5,0.75,0.9,1.0", help="values or start:stop:step")
    p.add_argument("--alphas", default=None,
                   help=f"values or start:stop:step, fixed-alpha strategies only (default: {DEFAULT_SWEEP_ALPHAS})")
    p.add_argument("--metric", choices=METRICS, default="divergence", help="column shown as a grid")
    p.add_argument("--strategy", choices=("memvr-dynamic", "memvr-dynamic-alpha"), default="memvr-dynamic")
    p.add_argument("--candidates", default=None, help="LO-HI or bucket:I/N")
    p.add_argument("--retrace-source", default="image", help="image | text | text-image (default: image)")
    p.add_argument("--static-layers", default=None,
                   help="LO-HI: also run memvr-static at each of these layers for every alpha")
    p.add_argument("--max-new", type=int, default=32, help="tokens per generation (default: 32)")
    p.add_argument("--out", default=None, help="CSV output path (default: stdout)")

    p = sub.add_parser("inspect", help="view a saved trace", allow_abbrev=False)
    p.add_argument("--trace", required=True, help="CSV or .json trace")
    view = p.add_mutually_exclusive_group(required=True)
    view.add_argument("--ascii", action="store_true", help="layer x step heatmap")
    view.add_argument("--stats", action="store_true", help="per-layer statistics")
    p.add_argument("--baseline", default=None, help="with --stats: trace to compare against")
    return parser


# ── commands ──────────────────────────────────────────────────────────────────

def _engine(args: argparse.Namespace, settings: Settings) -> MemVREngine:
    image_seed = args.image_seed
    if args.image_file is None and image_seed is None:
        image_seed = settings.image_seed
    return MemVREngine.from_files(args.weights, image_seed=image_seed, image_file=args.image_file)


def cmd_init_weights(args: argparse.Namespace, settings: Settings, console: Console) -> int:
    config = ModelConfig(
        num_layers=args.layers,
        hidden_dim=args.dim,
        ffn_dim=args.ffn_dim,
        vocab_size=args.vocab,
        num_heads=args.heads,
        num_visual_tokens=args.visual_tokens,
        max_seq_len=args.max_seq,
    )
    checksum = save_weights(synthesize_weights(config, args.seed), args.out)
    summary = " ".join(f"{k}={v}" for k, v in config.to_dict().items())
    print(f"wrote {args.out} (seed {args.seed})")
    print(summary)
    print(f"sha256 {checksum}")
    return 0


def cmd_init_image(args: argparse.Namespace, settings: Settings, console: Console) -> int:
    config = load_weights(args.weights).config
    save_visual(synthesize_visual_context(config, args.seed), args.out)
    print(f"wrote {args.out} (seed {args.seed}, d={config.hidden_dim}, N_v={config.num_visual_tokens})")
    return 0


def cmd_gen(args: argparse.Namespace, settings: Settings, console: Console) -> int:
    prompt_ids = parse_id_list(args.prompt_ids)
    engine = _engine(args, settings)
    candidates = None if args.candidates is None else parse_candidates(args.candidates, engine.config)
    policy = build_policy(
        args.strategy,
        gamma=args.gamma,
        alpha=args.alpha,
        static_layer=args.layer,
        candidate_layers=candidates,
        temperature=args.temperature,
        sample_seed=args.sample_seed,
        cd_beta=args.cd_beta,
        cd_noise_sigma=args.cd_noise_sigma,
        retrace_source=args.retrace_source,
        visual_scale=args.visual_scale,
        text_scale=args.text_scale,
        max_new_tokens=args.max_new,
    )
    if args.eos_id is not None:
        policy = policy.with_(eos_id=None if args.eos_id < 0 else args.eos_id)
    result = engine.generate(prompt_ids, policy, record_uncertainty=args.trace_out is not None)
    if args.trace_out is not None:
        export = export_trace_json if args.format == "json" else export_trace_csv
        export(result.trace, args.trace_out)
    print(" ".join(str(t) for t in result.tokens))
    return 0


def _write_json(path: PathLike, data: dict) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2)
            fh.write("\n")
    except OSError as e:
        raise MVIOError(f"cannot write {path}: {e.strerror or e}", path=path) from e


def cmd_bench(args: argparse.Namespace, settings: Settings, console: Console) -> int:
    strategies = parse_strategy_list(args.strategies)
    if not strategies:
        raise MVConfigError("at least one strategy is required", field="strategies")
    prompt_ids = parse_id_list(args.prompt_ids)
    engine = _engine(args, settings)
    report = engine.benchmark(prompt_ids, strategies, tokens_per_run=args.tokens, repeats=args.repeats)
    console.print(bench_table(report))
    if args.json_out is not None:
        _write_json(args.json_out, report.to_dict())
    return 0


def _write_text(path: Optional[PathLike], text: str) -> None:
    if path is None:
        print()
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as e:
        raise MVIOError(f"cannot write {path}: {e.strerror or e}", path=path) from e


def cmd_sweep(args: argparse.Namespace, settings: Settings, console: Console) -> int:
    gammas = parse_float_grid(args.gammas, "gammas")
    strategy = Strategy.parse(args.strategy)
    retrace_source = RetraceSource.parse(args.retrace_source)
    if strategy is Strategy.MEMVR_DYNAMIC_ALPHA:
        if args.alphas is not None:
            raise MVConfigError("memvr-dynamic-alpha derives alpha from u; drop --alphas", field="alphas")
        if args.static_layers is not None:
            raise MVConfigError("--static-layers compares against memvr-dynamic only", field="static_layers")
        alphas: list[float] = []
    else:
        alphas = parse_float_grid(args.alphas or DEFAULT_SWEEP_ALPHAS, "alphas")
    prompt_ids = parse_id_list(args.prompt_ids)
    engine = _engine(args, settings)
    candidates = None if args.candidates is None else parse_candidates(args.candidates, engine.config)

    if args.static_layers is not None:
        lo, hi = parse_candidates(args.static_layers, engine.config)
        layer_rows = engine.compare_static_layers(
            prompt_ids,
            list(range(lo, hi + 1)),
            alphas,
            gammas,
            max_new_tokens=args.max_new,
            candidate_layers=candidates,
            retrace_source=retrace_source,
        )
        console.print(layer_table(layer_rows))
        _write_text(args.out, layer_rows_to_csv(layer_rows))
        return 0

    rows = engine.sweep(
        prompt_ids,
        gammas,
        alphas,
        strategy=strategy,
        max_new_tokens=args.max_new,
        candidate_layers=candidates,
        retrace_source=retrace_source,
    )
    print(render_sweep_grid(rows, args.metric))
    _write_text(args.out, sweep_to_csv(rows))
    return 0


def _stats_table(trace: UncertaintyTrace, baseline: Optional[UncertaintyTrace]) -> Table:
    stats = trace_stats(trace)
    table = Table(title=f"{stats.steps} steps")
    for column in ("layer", "mean u", "max u"):
        table.add_column(column, justify="right")
    base = None
    if baseline is not None:
        if baseline.width != trace.width:
            raise MVTraceError(f"baseline has {baseline.width} layers, trace has {trace.width}")
        base = trace_stats(baseline)
        table.add_column("baseline mean u", justify="right")
        table.add_column("delta", justify="right")
    for i in range(trace.width):
        cells = [str(i + 1), f"{stats.layer_mean[i]:.4f}", f"{stats.layer_max[i]:.4f}"]
        if base is not None:
            cells += [f"{base.layer_mean[i]:.4f}", f"{stats.layer_mean[i] - base.layer_mean[i]:+.4f}"]
        table.add_row(*cells)
    return table


def cmd_inspect(args: argparse.Namespace, settings: Settings, console: Console) -> int:
    if args.baseline is not None and not args.stats:
        raise MVConfigError("--baseline only applies with --stats", field="baseline")
    trace = load_trace(args.trace)
    if len(trace) == 0:
        print("empty trace")
        return 0
    if args.ascii:
        print(render_ascii_heatmap(trace))
        return 0
    baseline = None if args.baseline is None else load_trace(args.baseline)
    console.print(_stats_table(trace, baseline))
    stats = trace_stats(trace)
    layers = " ".join(f"{layer}:{count}" for layer, count in stats.trigger_layers.items()) or "-"
    print(f"triggered {stats.triggered_steps}/{stats.steps} steps (rate {stats.trigger_rate:.3f})")
    print(f"trigger layers {layers}")
    return 0


_COMMANDS = {
    "init-weights": cmd_init_weights,
    "init-image": cmd_init_image,
    "gen": cmd_gen,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "inspect": cmd_inspect,
}


def _configure_logging(verbose: int, settings: Settings) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = getattr(logging, settings.log_level, logging.WARNING)
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        settings = load_settings()
        parser = build_parser(settings)
        args = parser.parse_args(argv)
    except MVConfigError as e:
        print(f"memvr: error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    _configure_logging(args.verbose, settings)
    console = Console(width=120)
    try:
        return _COMMANDS[args.command](args, settings, console)
    except MVException as e:
        code = _exit_code_for(e)
        logger.debug("command %s failed", args.command, exc_info=True)
        print(f"memvr: error: {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
