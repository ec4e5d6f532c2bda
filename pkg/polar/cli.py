"""
Command line: construct | latency | simulate | schedule | scaling-check.

Exit codes: 0 ok, 2 usage error, 3 resource budget exceeded.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from polar.channel import BmsChannel, Family, channel_from_capacity
from polar.codec import Variant
from polar.config import Settings, load_configuration
from polar.construction import PolarCode, TableCache, select_frozen
from polar.errors import CandidateError, ResourceBudgetError, WindowError
from polar.latency import (build_pruned_tree, check_scaling_candidate, default_window,
                           fit_slope, format_schedule, latency_sweeps, parse_n_range,
                           save_report, schedule)
from polar.sim import TrialConfig, run_trials, save_result

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RESOURCE = 3


def banner(title: str):
    print("=" * 80)
    print(title)
    print("=" * 80)


def _floats(text: str) -> List[float]:
    return [float(part) for part in str(text).split(',') if part.strip()]


def _variants(text) -> List[Variant]:
    items = text if isinstance(text, (list, tuple)) else str(text).split(',')
    return [Variant.parse(item.strip()) for item in items if str(item).strip()]


def _add_channel_args(parser: argparse.ArgumentParser, required: bool = True):
    parser.add_argument('--family', choices=[f.value for f in Family], required=required)
    source = parser.add_mutually_exclusive_group(required=required)
    source.add_argument('--capacity', type=float, help="capacity I(W) in (0, 1)")
    source.add_argument('--param', type=float, help="erasure prob., crossover prob. or noise std")


def _resolve_channel(parser, family, cap: Optional[float], param: Optional[float]) -> BmsChannel:
    try:
        if cap is not None:
            return channel_from_capacity(family, cap)
        return BmsChannel(Family.parse(family), param)
    except ValueError as e:
        parser.error(str(e))


def _cache(settings: Settings, disabled: bool = False) -> TableCache:
    return TableCache(settings.cache_path, enabled=settings.cache_tables and not disabled)


def _build_code(settings: Settings, channel: BmsChannel, n: int, p_e: float,
                resolution: int, method: str = 'auto', no_cache: bool = False) -> PolarCode:
    table = _cache(settings, no_cache).load_or_build(
        channel, n, resolution, method,
        ga_threshold_n=settings.ga_threshold_n, de_max_n=settings.de_max_n,
        budget_bytes=settings.memory_budget_bytes)
    return select_frozen(table, p_e)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_construct(args, settings: Settings, parser) -> int:
    channel = _resolve_channel(parser, args.family, args.capacity, args.param)
    if not 0.0 < args.pe < 1.0:
        parser.error(f"--pe must lie in (0, 1), got {args.pe}")
    resolution = args.resolution or settings.resolution
    code = _build_code(settings, channel, args.n, args.pe, resolution, args.method, args.no_cache)

    banner(f"CONSTRUCTION - {channel}, n={args.n}, p_e={args.pe:g}")
    print(f"Méthode: {code.method}  |  rate: {code.rate:.6f} ({code.info_count}/{code.size})")
    print(f"Somme des Z sur les positions d'information: {code.union_bound:.6e}")

    output = Path(args.output) if args.output else (
        settings.reports_path / 'construct' / f"{channel.family.value}_n{args.n}_pe{args.pe:g}.json")
    output.parent.mkdir(parents=True, exist_ok=True)
    with open(output, 'w', encoding='utf-8') as f:
        json.dump(code.to_dict(), f, indent=2)
    print(f"[OK] Code sauvegardé: {output}")
    return EXIT_OK


def _sweep_jobs(args, settings: Settings, parser):
    """(channel, p_es, n_values, variants, resolution, label) tuples for the request."""
    if args.preset:
        preset = settings.presets.get(args.preset)
        if preset is None:
            parser.error(f"Unknown preset {args.preset!r} (known: {', '.join(sorted(settings.presets))})")
        missing = {'family', 'pe'} - set(preset)
        if missing:
            parser.error(f"Preset {args.preset!r} lacks {', '.join(sorted(missing))}")
        if ('capacity' in preset) == ('param' in preset):
            parser.error(f"Preset {args.preset!r} needs exactly one of capacity or param")
        key, tag = ('capacity', 'I') if 'capacity' in preset else ('param', 'p')
        values = preset[key] if isinstance(preset[key], list) else [preset[key]]
        family = preset['family']
        p_es = preset['pe'] if isinstance(preset['pe'], list) else [preset['pe']]
        try:
            values = [float(v) for v in values]
            p_es = [float(p) for p in p_es]
            n_values = parse_n_range(str(preset.get('n', '0..14')))
            variants = _variants(preset.get('variants', ['sc', 'ssc']))
        except (TypeError, ValueError) as e:
            parser.error(f"Preset {args.preset!r}: {e}")
        resolution = int(preset.get('resolution', settings.resolution))
        jobs = []
        for value in values:
            cap, param = (value, None) if key == 'capacity' else (None, value)
            jobs.append((_resolve_channel(parser, family, cap, param), p_es, n_values, variants,
                         resolution, f"{args.preset}_{tag}{value:g}"))
        return jobs

    if not args.family or (args.capacity is None and args.param is None) or not args.pe or not args.n:
        parser.error("latency needs --preset, or --family, --capacity/--param, --pe and --n")
    channel = _resolve_channel(parser, args.family, args.capacity, args.param)
    try:
        p_es = _floats(args.pe)
        n_values = parse_n_range(args.n)
        variants = _variants(args.variants)
    except ValueError as e:
        parser.error(str(e))
    label = f"{channel.family.value}_I{args.capacity:g}" if args.capacity is not None \
        else f"{channel.family.value}_p{channel.param:g}"
    return [(channel, p_es, n_values, variants, args.resolution or settings.resolution, label)]


def cmd_latency(args, settings: Settings, parser) -> int:
    jobs = _sweep_jobs(args, settings, parser)
    window = None
    if args.window:
        bounds = parse_n_range(args.window)
        window = (bounds[0], bounds[-1])

    written = 0
    for channel, p_es, n_values, variants, resolution, label in jobs:
        reports = latency_sweeps(channel, p_es, n_values, variants, resolution=resolution,
                                 ga_threshold_n=settings.ga_threshold_n, de_max_n=settings.de_max_n,
                                 budget_bytes=settings.memory_budget_bytes,
                                 threads=args.threads or settings.latency_threads)
        for report in reports:
            banner(f"LATENCE - {channel}, I(W)={report.channel_capacity:.6f}, p_e={report.p_e:g}")
            frame = report.to_frame()
            print(frame[['n', 'rate', 'latency_sc', 'latency_ssc', 'latency_fastssc']].to_string(index=False))
            if report.truncated:
                print(f"[WARN] Balayage tronqué après n={report.truncated_after} (budget mémoire)")

            n_max = int(report.rows['n'].max())
            fit_window = window or default_window(channel.family, n_max, settings.bec_window,
                                                  settings.default_window_start)
            for variant in variants:
                try:
                    slope, intercept = fit_slope(report, variant, fit_window)
                    print(f"  pente {variant.value:8s} sur [{fit_window[0]}, {fit_window[1]}]: {slope:.4f}")
                except WindowError as e:
                    logger.info("No slope for %s: %s", variant.value, e)

            if args.output and len(jobs) == 1 and len(reports) == 1:
                csv_path = Path(args.output)
            else:
                csv_path = settings.reports_path / 'latency' / f"{label}_pe{report.p_e:g}.csv"
            csv_path, json_path = save_report(report, csv_path)
            print(f"[OK] Rapport sauvegardé: {csv_path}")
            print(f"[OK] Métadonnées sauvegardées: {json_path}")
            written += 1
    logger.info("%d latency report(s) written", written)
    return EXIT_OK


def cmd_simulate(args, settings: Settings, parser) -> int:
    channel = _resolve_channel(parser, args.family, args.capacity, args.param)
    if not 0.0 < args.pe < 1.0:
        parser.error(f"--pe must lie in (0, 1), got {args.pe}")
    try:
        variants = _variants(args.variants)
    except ValueError as e:
        parser.error(str(e))
    code = _build_code(settings, channel, args.n, args.pe, args.resolution or settings.resolution)
    config = TrialConfig(code=code, channel=channel,
                         trials=args.trials or settings.trials,
                         seed=settings.seed if args.seed is None else args.seed,
                         variants=tuple(variants), f_rule=settings.f_left,
                         saturation=settings.saturation,
                         threads=args.threads or settings.sim_threads,
                         chunk_size=settings.chunk_size)
    result = run_trials(config)

    banner(f"SIMULATION - {channel}, n={args.n}, p_e={args.pe:g}, rate={code.rate:.4f}")
    print(result.to_frame().to_string(index=False))
    for pair, count in result.agreements.items():
        print(f"  accord {pair}: {count}/{result.trials}")

    output = Path(args.output) if args.output else (
        settings.reports_path / 'simulate' / f"{channel.family.value}_n{args.n}_seed{config.seed}.json")
    save_result(result, output)
    print(f"[OK] Résultats sauvegardés: {output}")
    return EXIT_OK


def cmd_schedule(args, settings: Settings, parser) -> int:
    if args.frozen is not None:
        try:
            positions = [int(p) for p in args.frozen.split(',') if p.strip()]
            code = PolarCode.from_frozen_positions(args.n, positions)
        except ValueError as e:
            parser.error(str(e))
    elif args.family:
        if args.pe is None or (args.capacity is None and args.param is None):
            parser.error("schedule with --family also needs --capacity/--param and --pe")
        channel = _resolve_channel(parser, args.family, args.capacity, args.param)
        code = _build_code(settings, channel, args.n, args.pe, settings.resolution)
    else:
        code = PolarCode.from_frozen_positions(args.n, [])
    tree = build_pruned_tree(code, args.variant)
    print(format_schedule(schedule(tree), compact=args.compact))
    return EXIT_OK


def cmd_scaling_check(args, settings: Settings, parser) -> int:
    try:
        samples = pd.read_csv(args.samples)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, FileNotFoundError, UnicodeDecodeError) as e:
        parser.error(f"Cannot read samples file {args.samples}: {e}")
    if not {'x', 'h'} <= set(samples.columns) or samples.empty:
        parser.error(f"{args.samples}: expected non-empty columns x,h")
    try:
        x = pd.to_numeric(samples['x']).to_numpy(dtype=float)
        h = pd.to_numeric(samples['h']).to_numpy(dtype=float)
        result = check_scaling_candidate(x, h, args.family, args.y_points or settings.y_points,
                                         x_points=args.x_points or settings.x_points)
    except (CandidateError, ValueError) as e:
        parser.error(str(e))
    print(result)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='polar', description="Polar code construction and decoding latency")
    parser.add_argument('--config', help="configuration YAML (default: config/config.yaml)")
    parser.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('construct', help="build a code and write its frozen set as JSON")
    _add_channel_args(p)
    p.add_argument('--pe', type=float, required=True)
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--resolution', type=int)
    p.add_argument('--method', choices=['auto', 'bec', 'de', 'ga'], default='auto')
    p.add_argument('--output')
    p.add_argument('--no-cache', action='store_true')
    p.set_defaults(handler=cmd_construct)

    p = sub.add_parser('latency', help="sweep n and write latency CSV/JSON")
    _add_channel_args(p, required=False)
    p.add_argument('--preset')
    p.add_argument('--pe', help="one value or a comma list")
    p.add_argument('--n', help="range such as 0..14")
    p.add_argument('--variants', default='sc,ssc')
    p.add_argument('--window', help="slope window such as 20..27")
    p.add_argument('--resolution', type=int)
    p.add_argument('--threads', type=int)
    p.add_argument('--output')
    p.set_defaults(handler=cmd_latency)

    p = sub.add_parser('simulate', help="Monte-Carlo frame error rate")
    _add_channel_args(p)
    p.add_argument('--pe', type=float, required=True)
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--trials', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--variants', default='sc,ssc,fastssc')
    p.add_argument('--resolution', type=int)
    p.add_argument('--threads', type=int)
    p.add_argument('--output')
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser('schedule', help="print the decoding schedule of a code")
    _add_channel_args(p, required=False)
    p.add_argument('--n', type=int, required=True)
    p.add_argument('--pe', type=float)
    p.add_argument('--frozen', help="1-indexed frozen positions, e.g. 1,2,3,5")
    p.add_argument('--variant', choices=[v.value for v in Variant], default='ssc')
    p.add_argument('--compact', action='store_true')
    p.set_defaults(handler=cmd_schedule)

    p = sub.add_parser('scaling-check', help="test a scaling-exponent candidate h")
    p.add_argument('--samples', required=True, help="CSV with columns x,h")
    p.add_argument('--family', choices=['general', 'bec'], default='bec')
    p.add_argument('--x-points', type=int)
    p.add_argument('--y-points', type=int)
    p.set_defaults(handler=cmd_scaling_check)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = load_configuration(args.config)

    logging.basicConfig(level=getattr(logging, args.log_level or settings.log_level.upper(), logging.INFO),
                        format='%(asctime)s - %(levelname)s - %(message)s')
    if getattr(args, 'n', None) is not None and isinstance(args.n, int) and args.n < 0:
        parser.error(f"--n must be >= 0, got {args.n}")

    try:
        return args.handler(args, settings, parser)
    except ResourceBudgetError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_RESOURCE
