"""Command-line entry point: ``lgeend simulate|diarize|score|bench``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .backend import OracleBackend
from .features import FeatureSequence, load_features, wav_to_features
from .pipeline import PipelineConfig, bench_sweep, diarize, write_bench_csv
from .scoring import Annotation, compute_der, emit_rttm, format_der_table, parse_rttm
from .simulate import SimConfig, generate_scenario, load_scenario, save_scenario

log = logging.getLogger("lgeend")

# CLI flag -> PipelineConfig field
_FLAG_FIELDS = {
    "backend": "backend",
    "window_frames": "window_T",
    "threshold": "threshold",
    "median": "median_len",
    "s_local": "s_local",
    "min_nonoverlap": "min_nonoverlap",
    "frame_select": "frame_select",
    "batch_size": "batch_size",
    "speakers": "speakers",
    "seed": "seed",
}


def _load_input(path: Path) -> tuple[FeatureSequence, str, Optional[object]]:
    """Features, recording id and (for scenario directories) the scenario."""
    if path.is_dir():
        sc = load_scenario(path)
        return sc.features, sc.reference.recording_id, sc
    if path.suffix.lower() == ".wav":
        return wav_to_features(path), path.stem, None
    return load_features(path), path.stem, None


def _config_from_args(args) -> PipelineConfig:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    cfg = PipelineConfig.from_dict(base)
    return cfg.updated(**{field: getattr(args, flag) for flag, field in _FLAG_FIELDS.items()})


def cmd_simulate(args) -> int:
    cfg = SimConfig(n_speakers=args.speakers, duration_s=args.duration, beta_s=args.beta, seed=args.seed)
    out = save_scenario(generate_scenario(cfg), args.out)
    print(out)
    return 0


def cmd_diarize(args) -> int:
    cfg = _config_from_args(args)
    feats, rec_id, _ = _load_input(Path(args.input))
    backend = cfg.make_backend(feats.dim)
    if not isinstance(backend, OracleBackend):
        feats = feats.without_identities()
    hyp, diag = diarize(feats, cfg, backend, rec_id)
    text = emit_rttm(hyp)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("windows=%d chunks=%d local_speakers=%d clusters=%d time=%.2fs",
             diag.n_windows, diag.n_chunks, diag.s_global, diag.n_clusters, diag.timings["total"])
    return 0


def cmd_score(args) -> int:
    refs = {a.recording_id: a for a in parse_rttm(Path(args.ref).read_text())}
    hyps = {a.recording_id: a for a in parse_rttm(Path(args.hyp).read_text())}
    rows = []
    for rec, ref in refs.items():
        hyp = hyps.get(rec, Annotation(rec))
        rows.append((rec, compute_der(ref, hyp, args.collar, not args.no_overlap)))
    print(format_der_table(rows))
    report = {rec: json.loads(rep.to_json()) for rec, rep in rows}
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2) + "\n")
    return 0


def cmd_bench(args) -> int:
    grid = json.loads(Path(args.grid).read_text())
    if isinstance(grid, dict):
        base, rows = grid.get("base", {}), grid.get("rows", [{}])
    else:
        base, rows = {}, grid
    configs = [PipelineConfig.from_dict({**base, **row}) for row in rows]
    dirs = sorted(p for p in Path(args.scenarios).iterdir() if (p / "scenario.json").exists())
    scenarios = [load_scenario(d) for d in dirs]
    result = bench_sweep(configs, scenarios, args.collar)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_bench_csv(result, fh)
    else:
        sys.stdout.write(write_bench_csv(result))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgeend", description="Local-global EEND speaker diarization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic scenario directory")
    p.add_argument("--speakers", type=int, default=2)
    p.add_argument("--duration", type=float, default=300.0)
    p.add_argument("--beta", type=float, default=None, help="mean pause in seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("diarize", help="diarize features, a WAV file or a scenario directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--config", help="JSON file mirroring PipelineConfig")
    p.add_argument("--backend", help="oracle | transformer:PATH | transformer:random:SEED")
    p.add_argument("--window-frames", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--median", type=int)
    p.add_argument("--s-local", type=int)
    p.add_argument("--min-nonoverlap", type=int)
    p.add_argument("--frame-select", help="all | first:N | sub:F | random:N")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--speakers", help="auto | auto:K | oracle:M")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="RTTM path (stdout if omitted)")
    p.set_defaults(func=cmd_diarize)

    p = sub.add_parser("score", help="DER of a hypothesis RTTM against a reference RTTM")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--collar", type=float, default=0.25)
    p.add_argument("--no-overlap", action="store_true", help="exclude overlapped reference regions")
    p.add_argument("--json", help="also write per-recording reports as JSON")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("bench", help="RTF/DER sweep over a directory of scenarios")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--grid", required=True, help="JSON list of config overrides, or {base, rows}")
    p.add_argument("--collar", type=float, default=0.25)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"lgeend: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
