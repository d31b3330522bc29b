#!/usr/bin/env python3
"""
W2SC — whisper to normal speech conversion.
Extract features, train the converter, convert and evaluate.

Usage:
    w2sc synth-corpus OUT_DIR --n 8 --seed 0                 # paired WAV twins
    w2sc extract IN_DIR OUT_DIR                              # WAV -> .mel + norm_stats.json
    w2sc train FEATURE_DIR CKPT_DIR --steps 300              # checkpoints + loss_log.csv
    w2sc train FEATURE_DIR CKPT_DIR --resume CKPT_DIR/ckpt_000150.w2sc
    w2sc convert CKPT IN_WAV OUT_WAV                         # whisper WAV -> normal WAV
    w2sc evaluate CONVERTED_DIR REFERENCE_DIR report.csv     # F0 RMSE + MCD per utterance
    w2sc evaluate CONVERTED_DIR REFERENCE_DIR report.csv --f0-dir contours   # plus per-frame F0

Every command takes --config PATH (flat "section.key = value" lines).
Exit codes: 0 ok, 1 rejected input or config, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError
from tqdm import tqdm

from audio.features import MEL_SUFFIX, corpus_norm_stats, save_norm_stats, write_mel
from audio.signal_engine import (
    MelSpectrogram,
    NormStats,
    Waveform,
    build_filterbank,
    griffin_lim,
    invert_mel,
    load_wav,
    log_mel,
    mel_spectrogram,
    write_wav,
)
from evaluation.metrics import evaluate_pair
from training.checkpoint import checkpoint_name, load_checkpoint, load_sidecar, save_checkpoint
from training.conversion import convert_utterance
from training.corpus import DOMAINS, load_corpus
from training.trainer import StepReport, TrainState, init_train_state, run_training
from w2sc.config import RunConfig, load_config
from w2sc.synth import write_synth_corpus
from w2sc_utils import atomic_write_text, log

LOSS_LOG = "loss_log.csv"
LOSS_COLUMNS = ["step", "L_D", "L_G_adv", "L_GS", "L_S", "L_id"]
REPORT_COLUMNS = ["id", "rmse_f0_original", "rmse_f0_processed", "rmse_f0_normalized",
                  "mcd_db", "voiced_frame_fraction"]
CONFIG_ECHO = "config.txt"
OUTPUT_PEAK = 0.9
IO_WORKERS = 4


def _config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = args.seed
    return load_config(args.config, overrides)


def _wav_files(directory: Path) -> List[Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"Directory not found: {directory}")
    return sorted(directory.glob("*.wav"))


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    atomic_write_text(frame.to_csv(index=False), path)


# ---------------------------------------------------------------------------
# extract
# ---------------------------------------------------------------------------

def _extract_dir(src: Path, dst: Path, cfg: RunConfig) -> int:
    files = _wav_files(src)
    if not files:
        raise ValueError(f"no input files in {src}")
    fb = build_filterbank(cfg.signal)
    sig = cfg.signal

    def analyse(path: Path):
        try:
            return log_mel(load_wav(path, sig.sample_rate), fb, sig.n_fft, sig.hop, sig.log_floor)
        except (ValueError, OSError) as e:
            return e

    with ThreadPoolExecutor(max_workers=IO_WORKERS) as pool:
        results = list(tqdm(pool.map(analyse, files), total=len(files), desc="extract", unit="wav"))

    good = []
    for path, result in zip(files, results):
        if isinstance(result, Exception):
            log("extract", f"SKIPPED {path.name}: {result}")
        else:
            good.append((path.stem, result))
    if not good:
        raise ValueError(f"no readable WAV files in {src} ({len(files)} failed)")

    stats = corpus_norm_stats(logm for _, logm in good)
    for name, logm in good:
        write_mel(MelSpectrogram(stats.normalize(logm).astype(np.float32), stats, name), dst / f"{name}{MEL_SUFFIX}")
    save_norm_stats(stats, dst)
    log("extract", f"{src} -> {dst}: {len(good)} of {len(files)} files, log-mel range [{stats.lo:.3f}, {stats.hi:.3f}]")
    return len(good)


def cmd_extract(in_dir: Path, out_dir: Path, cfg: RunConfig) -> int:
    """One ``.mel`` per readable WAV plus ``norm_stats.json``; paired layouts keep per-domain stats."""
    if all((in_dir / d).is_dir() for d in DOMAINS):
        return sum(_extract_dir(in_dir / d, out_dir / d, cfg) for d in DOMAINS)
    return _extract_dir(in_dir, out_dir, cfg)


# ---------------------------------------------------------------------------
# synth-corpus
# ---------------------------------------------------------------------------

def cmd_synth_corpus(out_dir: Path, n_utterances: int, seed: int, cfg: RunConfig) -> int:
    return len(write_synth_corpus(out_dir, n_utterances, seed, cfg.signal.sample_rate))


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _loss_rows(reports: Sequence[StepReport]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in reports], columns=LOSS_COLUMNS)


def cmd_train(feature_dir: Path, checkpoint_dir: Path, cfg: RunConfig,
              resume: Optional[Path] = None, steps: Optional[int] = None) -> TrainState:
    corpus = load_corpus(feature_dir, cfg.train.holdout)
    if resume is not None:
        state = load_checkpoint(resume, cfg.train, cfg.losses, cfg.networks)
        log("train", f"resumed from {resume} at step {state.step}")
    else:
        state = init_train_state(cfg.train, cfg.losses, cfg.networks)
    if corpus.held_out:
        log("train", f"holding out {len(corpus.held_out)} utterances: {', '.join(corpus.held_out)}")

    echo = cfg.to_lines()
    norm_stats = {"whisper": corpus.whisper_stats.to_dict(), "normal": corpus.normal_stats.to_dict()}
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(echo, checkpoint_dir / CONFIG_ECHO)
    saved = []

    def checkpoint(s: TrainState) -> None:
        path = save_checkpoint(s, checkpoint_dir / checkpoint_name(s.step), echo, norm_stats)
        saved.append(s.step)
        log("train", f"checkpoint {path.name}")

    log_path = checkpoint_dir / LOSS_LOG
    previous = pd.DataFrame(columns=LOSS_COLUMNS)
    if resume is not None and log_path.is_file():
        previous = pd.read_csv(log_path)
        previous = previous[previous["step"] <= state.step]

    reports: List[StepReport] = []
    try:
        reports = run_training(state, corpus, steps, on_checkpoint=checkpoint)
    finally:
        rows = _loss_rows(reports)
        frames = [f for f in (previous, rows) if not f.empty]
        _write_csv(pd.concat(frames, ignore_index=True) if frames else rows, log_path)
    if state.step not in saved:
        checkpoint(state)
    d_rows = sum(r.l_d is not None for r in reports)
    print(f"trained to step {state.step}: {len(reports)} generator steps, {d_rows} discriminator updates")
    return state


# ---------------------------------------------------------------------------
# convert
# ---------------------------------------------------------------------------

def _sidecar_stats(ckpt: Path, domain: str) -> NormStats:
    stats = load_sidecar(ckpt).get("norm_stats", {})
    if domain not in stats:
        raise ValueError(f"checkpoint sidecar for {ckpt.name} lacks {domain} normalization stats")
    return NormStats.from_dict(stats[domain])


def cmd_convert(ckpt: Path, in_wav: Path, out_wav: Path, cfg: RunConfig) -> None:
    """wav -> mel -> G -> denormalize -> mel inversion -> Griffin-Lim -> wav."""
    sig = cfg.signal
    state = load_checkpoint(ckpt, cfg.train, cfg.losses, cfg.networks)
    whisper_stats = _sidecar_stats(ckpt, "whisper")
    normal_stats = _sidecar_stats(ckpt, "normal")

    fb = build_filterbank(sig)
    source = load_wav(in_wav, sig.sample_rate)
    mel = mel_spectrogram(source, fb, sig, whisper_stats, in_wav.stem)
    converted = convert_utterance(state.g, mel, normal_stats)
    magnitude = invert_mel(converted.log_domain(), fb)
    wave = griffin_lim(magnitude, sig.griffin_lim_iters, sig.n_fft, sig.hop, sig.sample_rate)

    samples = wave.samples
    peak = float(np.abs(samples).max()) if samples.size else 0.0
    if peak > 0:
        samples = samples * (OUTPUT_PEAK / peak)
    write_wav(Waveform(samples, sig.sample_rate), out_wav)
    log("convert", f"{in_wav.name} -> {out_wav} ({mel.n_frames} frames, step {state.step})")


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(converted_dir: Path, reference_dir: Path, report: Path, cfg: RunConfig,
                 f0_dir: Optional[Path] = None) -> pd.DataFrame:
    converted = {p.stem: p for p in _wav_files(converted_dir)}
    reference = {p.stem: p for p in _wav_files(reference_dir)}
    unmatched = sorted(set(converted) ^ set(reference))
    if unmatched:
        raise ValueError(f"unmatched file names: {', '.join(n + '.wav' for n in unmatched)}")
    if not converted:
        raise ValueError(f"no input files in {converted_dir}")

    sig = cfg.signal
    fb = build_filterbank(sig)
    names = sorted(converted)

    def score(name: str):
        return evaluate_pair(name, load_wav(converted[name], sig.sample_rate),
                             load_wav(reference[name], sig.sample_rate), fb, sig, cfg.eval)

    with ThreadPoolExecutor(max_workers=IO_WORKERS) as pool:
        scored = list(tqdm(pool.map(score, names), total=len(names), desc="evaluate", unit="utt"))

    if f0_dir is not None:
        for m in scored:
            _write_csv(m.contour, f0_dir / f"{m.id}.csv")
        log("eval", f"{len(scored)} F0 contours -> {f0_dir}")
    table = pd.DataFrame([m.row() for m in scored], columns=REPORT_COLUMNS)
    summary = {"id": "mean", **table[REPORT_COLUMNS[1:]].mean(skipna=True).to_dict()}
    table = pd.concat([table, pd.DataFrame([summary], columns=REPORT_COLUMNS)], ignore_index=True)
    _write_csv(table, report)
    atomic_write_text(cfg.to_lines(), report.with_name(report.name + ".config"))
    log("eval", f"{len(names)} utterances -> {report}")
    return table


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="w2sc", description="Whisper to normal speech conversion.",
                                     epilog="Exit codes: 0 ok, 1 rejected input or config, 2 runtime abort.")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="flat key = value config file")
        return p

    p = command("extract", "WAV directory -> feature files")
    p.add_argument("in_dir", type=Path)
    p.add_argument("out_dir", type=Path)

    p = command("synth-corpus", "write a paired synthetic WAV corpus")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--n", type=int, required=True, help="number of utterance pairs")
    p.add_argument("--seed", type=int, default=0)

    p = command("train", "train on extracted features")
    p.add_argument("feature_dir", type=Path)
    p.add_argument("checkpoint_dir", type=Path)
    p.add_argument("--seed", type=int, default=None, help="overrides train.seed")
    p.add_argument("--steps", type=int, default=None, help="generator steps to run (default: up to the budget)")
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")

    p = command("convert", "convert one whisper WAV")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("in_wav", type=Path)
    p.add_argument("out_wav", type=Path)

    p = command("evaluate", "score converted WAVs against references")
    p.add_argument("converted_dir", type=Path)
    p.add_argument("reference_dir", type=Path)
    p.add_argument("report", type=Path)
    p.add_argument("--f0-dir", type=Path, default=None,
                   help="also write <name>.csv per utterance: time, f0_converted, f0_reference along the DTW path")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth-corpus":
            cfg = load_config(args.config)
            count = cmd_synth_corpus(args.out_dir, args.n, args.seed, cfg)
            print(f"wrote {count} utterance pairs to {args.out_dir}")
            return 0
        cfg = _config(args)
        if args.command == "extract":
            count = cmd_extract(args.in_dir, args.out_dir, cfg)
            print(f"extracted {count} files to {args.out_dir}")
        elif args.command == "train":
            if args.steps is not None and args.steps < 0:
                raise ValueError(f"--steps must be >= 0, got {args.steps}")
            cmd_train(args.feature_dir, args.checkpoint_dir, cfg, args.resume, args.steps)
        elif args.command == "convert":
            cmd_convert(args.checkpoint, args.in_wav, args.out_wav, cfg)
            print(f"wrote {args.out_wav}")
        elif args.command == "evaluate":
            table = cmd_evaluate(args.converted_dir, args.reference_dir, args.report, cfg, args.f0_dir)
            print(f"evaluated {len(table) - 1} utterances, report {args.report}")
    except (ValueError, ValidationError, FileNotFoundError) as e:
        print(f"REJECTED: {e}", file=sys.stderr)
        return 1
    except RuntimeError as e:
        print(f"REJECTED: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
