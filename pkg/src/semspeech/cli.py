"""Command-line entry points: prepare, train-stage1, train-stage2, eval-s2t,
eval-s2s, sweep-plot and make-toy-corpus.

Exit codes: 0 on success, 2 on a configuration error, 3 on any other failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, load_config
from .data import load_features, load_utterance, save_features, split_ids
from .dsp import read_manifest, write_wav
from .errors import ConfigError, InputError, SemSpeechError
from .metrics import efficiency_report
from .model import build_transceiver, load_transceiver, save_transceiver
from .nn.checkpoint import atomic_write_bytes
from .pipeline import parallel_map, reconstruct, summarize, transmit_utterances
from .plotting import plot_results
from .reconstructor import spectrum_to_audio
from .tokenizer import Lexicon, Vocabulary, build_vocab
from .training import (TrainLog, calibrate_reconstructor, teacher_forced_accuracy, train_corrector_lm,
                       train_reconstructor, train_stage1, train_stage2, tts_examples)

log = logging.getLogger("semspeech")

CACHE_ENV = "SEMSPEECH_CACHE_DIR"
RESULT_COLUMNS = ("snr_db", "channel", "wer", "similarity", "mcd", "symbols_per_sentence")
S2S_EXTRA = ("mcd_without_info", "side_payload_bytes", "lm_weight")
SUBSETS = ("test", "train", "planted")


# prepared artifacts ---------------------------------------------------------------

def cache_dir(cfg: ExperimentConfig) -> Path:
    return Path(os.environ[CACHE_ENV]) if os.environ.get(CACHE_ENV) else cfg.out / "cache"


def _write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _read_lm_text(cfg: ExperimentConfig) -> list[str]:
    p = cfg.path("lm_text")
    if p is None:
        return []
    if not p.exists():
        raise InputError(f"LM text not found: {p}")
    return [line for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_vocab(cfg: ExperimentConfig) -> Vocabulary:
    p = cfg.out / "vocab.txt"
    if not p.exists():
        raise InputError(f"{p} missing; run prepare first")
    return Vocabulary.load(p)


def load_lexicon(cfg: ExperimentConfig) -> Lexicon:
    p = cfg.out / "lexicon.txt"
    if not p.exists():
        raise InputError(f"{p} missing; run prepare first")
    return Lexicon.load(p, use_fallback=cfg.lexicon_fallback)


def load_subset(cfg: ExperimentConfig, subset: str):
    split = json.loads((cfg.out / "split.json").read_text(encoding="utf-8")) if (cfg.out / "split.json").exists() else None
    if split is None:
        raise InputError(f"{cfg.out / 'split.json'} missing; run prepare first")
    if subset == "planted":
        p = cache_dir(cfg) / "planted.npz"
        if not p.exists():
            raise ConfigError("no planted manifest was prepared")
        return load_features(p)
    utts = {u.utterance_id: u for u in load_features(cache_dir(cfg) / "features.npz")}
    return [utts[i] for i in split[subset]]


def _load_entries(manifest: Path, root: Path, skip_missing: bool):
    entries = read_manifest(manifest)
    if not entries:
        raise ConfigError(f"{manifest}: empty manifest")
    missing = [e for e in entries if not (root / e.wav_path).exists()]
    if missing:
        listing = "\n".join(f"  {e.utterance_id}: {root / e.wav_path}" for e in missing)
        if not skip_missing:
            raise InputError(f"{len(missing)} WAV file(s) missing:\n{listing}")
        log.warning("skipping %d missing WAV file(s):\n%s", len(missing), listing)
        entries = [e for e in entries if e not in missing]
        if not entries:
            raise ConfigError(f"{manifest}: no utterances left after skipping missing WAVs")
    return entries


def cmd_prepare(cfg: ExperimentConfig, skip_missing: bool = False) -> dict:
    """Vocabulary, lexicon, cached features and the train/test split."""
    if cfg.manifest is None:
        raise ConfigError("prepare needs a manifest")
    entries = _load_entries(Path(cfg.manifest), cfg.wav_dir, skip_missing)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    lm_text = _read_lm_text(cfg)

    if cfg.vocab is not None:
        vocab = Vocabulary.load(cfg.vocab)
    else:
        vocab = build_vocab([e.transcript for e in entries] + lm_text, cfg.vocab_budget)
    vocab.save(out / "vocab.txt")

    # lexicon stub: every subword of the vocabulary with the pronunciation the
    # pipeline will use, fallback guesses included
    base = Lexicon.load(cfg.lexicon, use_fallback=cfg.lexicon_fallback) if cfg.lexicon else Lexicon({}, True)
    stub = dict(base.entries)
    for piece in vocab.entries:
        if piece in stub:
            continue
        try:
            stub[piece] = base.lookup(piece)[0]
        except SemSpeechError:
            pass
    Lexicon(stub, cfg.lexicon_fallback).save(out / "lexicon.txt")

    utts = [load_utterance(e, cfg.wav_dir, vocab) for e in entries]
    train, test = split_ids([u.utterance_id for u in utts], cfg.train_ratio)
    cache = cache_dir(cfg)
    checksum = save_features(cache / "features.npz", utts)
    split = {"train": train, "test": test, "features_sha256": checksum}
    if cfg.planted_manifest is not None:
        planted_entries = _load_entries(Path(cfg.planted_manifest), Path(cfg.planted_manifest).parent, skip_missing)
        split["planted_sha256"] = save_features(cache / "planted.npz",
                                                [load_utterance(e, Path(cfg.planted_manifest).parent, vocab)
                                                 for e in planted_entries])
    _write_text(out / "split.json", json.dumps(split, indent=2, sort_keys=True) + "\n")
    cfg.dump(out / "config.json")
    log.info("prepared %d train / %d test utterances, vocabulary %d", len(train), len(test), vocab.size)
    return split


# training ------------------------------------------------------------------------

def cmd_train_stage1(cfg: ExperimentConfig) -> Path:
    vocab, lexicon = load_vocab(cfg), load_lexicon(cfg)
    train, test = load_subset(cfg, "train"), load_subset(cfg, "test")
    tcfg = cfg.training_config()
    model = build_transceiver(cfg.model_dims(), vocab, lexicon.phoneme_set(), cfg.seed)
    model.encoder.features.calibrate([u.spectrum for u in train])
    history = train_stage1(model, train, tcfg, vocab, cfg.out / "checkpoints", TrainLog(cfg.out / "logs" / "stage1.jsonl"))
    summary = {"epoch_loss": history, "teacher_forced_accuracy": {
        "train": teacher_forced_accuracy(model, train), "test": teacher_forced_accuracy(model, test)}}
    path = cfg.out / "stage1.ssck"
    save_transceiver(path, model, vocab, {"stage": 1})
    _write_text(cfg.out / "stage1_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    cfg.dump(cfg.out / "config.json")
    return path


def cmd_train_stage2(cfg: ExperimentConfig, checkpoint=None) -> Path:
    """Channel codec and semantic decoder, then the corrector LM (when LM text
    is configured) and the speech reconstructor."""
    vocab, lexicon = load_vocab(cfg), load_lexicon(cfg)
    train = load_subset(cfg, "train")
    tcfg = cfg.training_config()
    model, _ = load_transceiver(checkpoint or cfg.out / "stage1.ssck", vocab)
    ckpts = cfg.out / "checkpoints"
    stage2 = train_stage2(model, train, tcfg, vocab, ckpts, TrainLog(cfg.out / "logs" / "stage2.jsonl"))
    summary = {"stage2": stage2}
    lm_text = _read_lm_text(cfg)
    if lm_text:
        summary["lm_epoch_loss"] = train_corrector_lm(model, lm_text, vocab, tcfg, TrainLog(cfg.out / "logs" / "lm.jsonl"))
    examples = tts_examples(model, train, vocab, lexicon)
    calibrate_reconstructor(model, examples)
    summary["reconstructor_epoch_mse"] = train_reconstructor(
        model, examples, tcfg, log=TrainLog(cfg.out / "logs" / "reconstructor.jsonl"))
    path = cfg.out / "stage2.ssck"
    save_transceiver(path, model, vocab, {"stage": 2})
    _write_text(cfg.out / "stage2_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    cfg.dump(cfg.out / "config.json")
    return path


# evaluation ----------------------------------------------------------------------

def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return "inf" if x == math.inf else repr(round(x, 10))
    return str(x)


def _write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def _nanmean(values) -> float | None:
    """Mean of the defined values; None when there are none (e.g. every
    utterance decoded to nothing)."""
    finite = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.mean(finite)) if finite else None


def _suffix(subset: str, tag: str = "") -> str:
    return ("" if subset == "test" else f"_{subset}") + (f"_{tag}" if tag else "")


def _eval_model(cfg: ExperimentConfig, checkpoint):
    vocab = load_vocab(cfg)
    model, _ = load_transceiver(checkpoint or cfg.out / "stage2.ssck", vocab)
    model.eval()
    return model, vocab


def cmd_eval_s2t(cfg: ExperimentConfig, checkpoint=None, subset: str = "test", jobs: int = 1, tag: str = "") -> Path:
    model, vocab = _eval_model(cfg, checkpoint)
    utts = load_subset(cfg, subset)
    rows, lines = [], ["snr_db\tchannel\tutterance_id\twer\treference\thypothesis"]
    for channel in cfg.channels:
        for snr in cfg.snr_db:
            txs = transmit_utterances(model, utts, vocab, channel, snr, cfg.seed, cfg.beam, cfg.lm_weight,
                                      batch_size=cfg.eval_batch, jobs=jobs)
            s = summarize(txs)
            rows.append({"snr_db": snr, "channel": channel, "wer": s["wer"], "similarity": s["similarity"],
                         "mcd": None, "symbols_per_sentence": s["symbols_per_sentence"], "lm_weight": cfg.lm_weight})
            lines += [f"{_fmt(snr)}\t{channel}\t{t.utterance_id}\t{_fmt(t.wer)}\t{t.reference}\t{t.hypothesis}" for t in txs]
    sfx = _suffix(subset, tag)
    path = cfg.out / f"results_s2t{sfx}.csv"
    _write_csv(path, RESULT_COLUMNS + ("lm_weight",), rows)
    _write_text(cfg.out / f"transcripts_s2t{sfx}.tsv", "\n".join(lines) + "\n")
    cfg.dump(cfg.out / "config.json")
    return path


def cmd_eval_s2s(cfg: ExperimentConfig, checkpoint=None, subset: str = "test", jobs: int = 1,
                 write_audio: bool = True, griffin_lim_iterations: int = 32, tag: str = "") -> Path:
    model, vocab = _eval_model(cfg, checkpoint)
    lexicon = load_lexicon(cfg)
    utts = load_subset(cfg, subset)
    by_id = {u.utterance_id: u for u in utts}
    rows, per_utt, efficiency = [], [], {}
    per_utt_cols = ("snr_db", "channel", "utterance_id", "wer", "original_frames", "frames_with_info",
                    "frames_without_info", "duration_sum", "mcd_with_info", "mcd_without_info", "symbols",
                    "side_payload_bytes")
    for channel in cfg.channels:
        for snr in cfg.snr_db:
            txs = transmit_utterances(model, utts, vocab, channel, snr, cfg.seed, cfg.beam, cfg.lm_weight,
                                      lexicon=lexicon, batch_size=cfg.eval_batch, jobs=jobs)
            recs = parallel_map(lambda tx: reconstruct(model, by_id[tx.utterance_id], tx, vocab, lexicon,
                                                       cfg.mcd_variant), txs, jobs)
            s = summarize(txs)
            rep = efficiency_report([len(t.kept_tokens) for t in txs], [r.payload_bytes for r in recs])
            efficiency[f"{channel}@{_fmt(snr)}"] = rep.as_dict()
            rows.append({"snr_db": snr, "channel": channel, "wer": s["wer"], "similarity": s["similarity"],
                         "mcd": _nanmean([r.mcd_with_info for r in recs]),
                         "symbols_per_sentence": s["symbols_per_sentence"],
                         "mcd_without_info": _nanmean([r.mcd_without_info for r in recs]),
                         "side_payload_bytes": rep.as_dict()["side_payload_bytes_mean"], "lm_weight": cfg.lm_weight})
            for tx, r in zip(txs, recs):
                per_utt.append({"snr_db": snr, "channel": channel, "utterance_id": tx.utterance_id, "wer": tx.wer,
                                "original_frames": r.original_frames, "frames_with_info": r.frames_with_info,
                                "frames_without_info": r.frames_without_info, "duration_sum": r.duration_sum,
                                "mcd_with_info": r.mcd_with_info, "mcd_without_info": r.mcd_without_info,
                                "symbols": tx.symbols, "side_payload_bytes": r.payload_bytes})
            if write_audio:
                wav_dir = cfg.out / f"wav_s2s{_suffix(subset, tag)}" / f"{channel}_{_fmt(snr)}dB"

                def render(r):
                    spk = by_id[r.utterance_id].speaker_id
                    for kind, spec in (("with_info", r.spectrum_with_info), ("without_info", r.spectrum_without_info)):
                        clip = spectrum_to_audio(spec, griffin_lim_iterations, seed=cfg.seed, speaker_id=spk)
                        peak = float(np.max(np.abs(clip.samples))) if len(clip.samples) else 0.0
                        if peak > 1.0:
                            clip.samples = clip.samples / peak
                        write_wav(wav_dir / f"{r.utterance_id}_{kind}.wav", clip)

                parallel_map(render, recs, jobs)
    sfx = _suffix(subset, tag)
    path = cfg.out / f"results_s2s{sfx}.csv"
    _write_csv(path, RESULT_COLUMNS + S2S_EXTRA, rows)
    _write_csv(cfg.out / f"utterances_s2s{sfx}.csv", per_utt_cols, per_utt)
    _write_text(cfg.out / f"efficiency_s2s{sfx}.json", json.dumps(efficiency, indent=2, sort_keys=True) + "\n")
    cfg.dump(cfg.out / "config.json")
    return path


def cmd_sweep_plot(results_csv, out_dir=None) -> list[Path]:
    p = Path(results_csv)
    return plot_results(p, out_dir or p.parent / "plots")


# toy corpus ----------------------------------------------------------------------

TOY_TRAINING = {"batch_size": 1, "lambda_ctc": 0.3, "stage1_epochs": 30, "stage2_epochs": 10,
                "lm_epochs": 10, "reconstructor_epochs": 200}


def cmd_make_toy_corpus(out_dir, n_utterances: int = 200, seed: int = 0) -> Path:
    """Write the synthetic corpus and a ready-to-run config next to it."""
    from .toy import write_toy_corpus

    out = Path(out_dir)
    paths = write_toy_corpus(out, n_utterances=n_utterances, seed=seed)
    doc = {"manifest": paths["manifest"].name, "planted_manifest": paths["planted"].name,
           "lexicon": paths["lexicon"].name, "lm_text": paths["lm_text"].name, "output_dir": "run",
           "model_size": "toy", "lexicon_fallback": False, "snr_db": [0.0, 5.0, 10.0, 15.0],
           "channels": ["awgn"], "seed": seed, "training": dict(TOY_TRAINING)}
    cfg_path = out / "toy_config.json"
    _write_text(cfg_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return cfg_path


# entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semspeech", description="Semantic speech transmission experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value; dotted keys reach nested sections")
        return p

    p = with_config(sub.add_parser("prepare", help="build vocabulary, lexicon stub, features and split"))
    p.add_argument("--skip-missing", action="store_true", help="drop manifest rows whose WAV is missing")
    with_config(sub.add_parser("train-stage1", help="joint CTC + cross-entropy training"))
    p = with_config(sub.add_parser("train-stage2", help="channel codec, corrector LM and reconstructor"))
    p.add_argument("--checkpoint", help="stage-1 checkpoint (default: <output_dir>/stage1.ssck)")
    for name, help_text in (("eval-s2t", "speech-to-text sweep over SNR"), ("eval-s2s", "speech-to-speech sweep")):
        p = with_config(sub.add_parser(name, help=help_text))
        p.add_argument("--checkpoint", help="trained checkpoint (default: <output_dir>/stage2.ssck)")
        p.add_argument("--subset", choices=SUBSETS, default="test")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for per-utterance work")
        p.add_argument("--tag", default="", help="suffix for result file names, to keep several runs apart")
        if name == "eval-s2s":
            p.add_argument("--no-audio", action="store_true", help="skip writing WAV files")
    p = sub.add_parser("sweep-plot", help="render metric-vs-SNR plots from a results CSV")
    p.add_argument("results_csv")
    p.add_argument("--out", help="image directory (default: plots/ next to the CSV)")
    p = sub.add_parser("make-toy-corpus", help="write the synthetic corpus and its config")
    p.add_argument("out_dir")
    p.add_argument("--utterances", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(1)  # fixed thread count keeps float reductions reproducible
    try:
        if args.command == "sweep-plot":
            for path in cmd_sweep_plot(args.results_csv, args.out):
                print(path)
            return 0
        if args.command == "make-toy-corpus":
            print(cmd_make_toy_corpus(args.out_dir, args.utterances, args.seed))
            return 0
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, args.overrides)
        if args.command == "prepare":
            cmd_prepare(cfg, args.skip_missing)
        elif args.command == "train-stage1":
            print(cmd_train_stage1(cfg))
        elif args.command == "train-stage2":
            print(cmd_train_stage2(cfg, args.checkpoint))
        elif args.command == "eval-s2t":
            print(cmd_eval_s2t(cfg, args.checkpoint, args.subset, args.jobs, tag=args.tag))
        elif args.command == "eval-s2s":
            print(cmd_eval_s2s(cfg, args.checkpoint, args.subset, args.jobs, not args.no_audio, tag=args.tag))
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (SemSpeechError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
