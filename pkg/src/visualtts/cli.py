"""Command-line entry point: ``visualtts <subcommand> ...``.

Exit codes: 0 success, 1 validation/usage error, 2 numeric or runtime error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import load_pair, read_manifest
from .errors import ValidationError, VisualTTSError
from .metrics import default_max_offset, frame_disturbance, sync_proxy_score
from .model import load_checkpoint
from .tensorfile import read_tensor, write_tensor
from .text import char_tokenize
from .toy import make_toy_dataset
from .training import GRAD_CHECK_COMPONENTS, TrainConfig, grad_check, train
from .vocoder import mel_to_waveform, write_wav

logger = logging.getLogger("visualtts")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
REPORT_KEYS = ("utt_id", "fd", "distance_like", "confidence_like", "best_offset")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    parser = _Parser(prog="visualtts", description="Lip-synchronized TTS at desk scale.")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("make-toy-data", help="write a synthetic audio-visual corpus")
    p.add_argument("--seed", type=int, required=True, help="corpus seed")
    p.add_argument("--n-utts", type=int, required=True, help="number of utterances")
    p.add_argument("--n-speakers", type=int, required=True, help="number of speakers")
    p.add_argument("--out", type=Path, required=True, help="output directory (manifest.jsonl is written here)")

    p = sub.add_parser("train", help="teacher-forced training")
    p.add_argument("--config", type=Path, required=True, help="JSON file with training options")
    p.add_argument("--manifest", type=Path, required=True, help="training manifest (JSON lines)")
    p.add_argument("--out", type=Path, required=True, help="output directory for logs and checkpoints")

    p = sub.add_parser("synth", help="synthesize mels, alignments and waveforms")
    p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint directory")
    p.add_argument("--manifest", type=Path, required=True, help="manifest of utterances to synthesize")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--griffin-lim-iters", type=int, default=60, help="Griffin-Lim iterations (default 60)")
    p.add_argument("--no-wav", action="store_true", help="skip waveform generation")

    p = sub.add_parser("eval", help="frame disturbance and sync-proxy metrics")
    p.add_argument("--manifest", type=Path, required=True, help="manifest with reference mels and lips")
    p.add_argument("--synth-dir", type=Path, required=True, help="directory holding <utt_id>.mel.vtts files")
    p.add_argument("--report", type=Path, required=True, help="output JSON-lines report")
    p.add_argument("--max-offset", type=int, default=15, help="largest sync offset in video frames (default 15)")

    p = sub.add_parser("grad-check", help="finite-difference gradient check")
    p.add_argument("--component", choices=(*GRAD_CHECK_COMPONENTS, "all"), required=True, help="component to check")
    p.add_argument("--epsilon", type=float, default=1e-4, help="central-difference step (default 1e-4)")
    return parser


def _echo(args):
    resolved = {k: str(v) if isinstance(v, Path) else v for k, v in sorted(vars(args).items())}
    print(json.dumps(resolved, sort_keys=True), file=sys.stderr)


def cmd_make_toy_data(args):
    try:
        manifest = make_toy_dataset(args.seed, args.n_utts, args.n_speakers, args.out)
    except OSError as exc:
        raise ValidationError(f"cannot write to {args.out}: {exc}") from exc
    print(manifest)
    return EXIT_OK


def cmd_train(args):
    try:
        options = json.loads(args.config.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
    config = TrainConfig.from_dict(options)
    print(json.dumps({"train_config": vars(config)}, sort_keys=True), file=sys.stderr)
    print(train(config, args.manifest, args.out))
    return EXIT_OK


def cmd_synth(args):
    model, _ = load_checkpoint(args.checkpoint)
    args.out.mkdir(parents=True, exist_ok=True)
    root = args.manifest.parent
    for rec in read_manifest(args.manifest):
        lips, _ = load_pair(rec, root, check_ratio=False)
        syn = model.synthesize(char_tokenize(rec.text), rec.speaker_id, lips=lips if model.uses_visual else None)
        write_tensor(syn.mel, args.out / f"{rec.utt_id}.mel.vtts")
        write_tensor(syn.tva_weights, args.out / f"{rec.utt_id}.tva.vtts")
        write_tensor(syn.decoder_alignments, args.out / f"{rec.utt_id}.align.vtts")
        if not args.no_wav:
            write_wav(mel_to_waveform(syn.mel, args.griffin_lim_iters), args.out / f"{rec.utt_id}.wav")
        logger.info("%s: %d mel frames", rec.utt_id, syn.mel.shape[0])
    return EXIT_OK


def _evaluate_one(rec, root, synth_dir, max_offset):
    lips, ref = load_pair(rec, root)
    if ref is None:
        raise ValidationError(f"{rec.utt_id}: no reference mel")
    synth = read_tensor(synth_dir / f"{rec.utt_id}.mel.vtts")
    sync = sync_proxy_score(synth, lips, default_max_offset(len(lips), max_offset))
    return {
        "utt_id": rec.utt_id,
        "fd": frame_disturbance(synth, ref),
        "distance_like": sync.distance_like,
        "confidence_like": sync.confidence_like,
        "best_offset": sync.best_offset_frames,
    }


def cmd_eval(args):
    root = args.manifest.parent
    rows, worst = [], EXIT_OK
    for rec in read_manifest(args.manifest):
        try:
            rows.append(_evaluate_one(rec, root, args.synth_dir, args.max_offset))
        except (ValidationError, OSError) as exc:
            worst = max(worst, EXIT_VALIDATION)
            rows.append({"utt_id": rec.utt_id, "error": str(exc)})
        except (VisualTTSError, ArithmeticError, RuntimeError) as exc:
            worst = max(worst, EXIT_RUNTIME)
            rows.append({"utt_id": rec.utt_id, "error": str(exc)})
    ok = [r for r in rows if "error" not in r]
    summary = {"utt_id": "__summary__"}
    for key in REPORT_KEYS[1:]:
        summary[key] = float(np.mean([r[key] for r in ok])) if ok else None
    summary["n_ok"] = len(ok)
    summary["n_failed"] = len(rows) - len(ok)
    with args.report.open("w", encoding="utf-8") as fh:
        for row in [*rows, summary]:
            fh.write(json.dumps(row) + "\n")
    print(json.dumps(summary))
    return worst


def cmd_grad_check(args):
    components = GRAD_CHECK_COMPONENTS if args.component == "all" else (args.component,)
    worst = 0.0
    for comp in components:
        err = grad_check(comp, epsilon=args.epsilon)
        worst = max(worst, err)
        print(f"{comp}\t{err:.3e}")
    return EXIT_OK if worst < 1e-3 else EXIT_RUNTIME


COMMANDS = {
    "make-toy-data": cmd_make_toy_data,
    "train": cmd_train,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
}


def run(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        _echo(args)
        return COMMANDS[args.subcommand](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (VisualTTSError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
