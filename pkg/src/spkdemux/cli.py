"""Command-line entry point: one binary, subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Configuration resolves preset -> --config file -> individual flags, and
``--dump-config`` writes the fully resolved configuration so the same
run can be reproduced from that file alone.
"""

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, NumericError
from .presets import get_preset


@dataclass
class CommandResult:
    exit_code: int
    summary: str
    report_path: str = None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _deep_merge(base, override):
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_merge(base[key], value)
        else:
            base[key] = value
    return base


def _resolve_config(args):
    cfg = get_preset(getattr(args, "preset", "desk"))
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {path} is not valid JSON: {exc}") from None
        _deep_merge(cfg, file_cfg)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "dump_config", None):
        Path(args.dump_config).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return cfg


def _model_config(cfg):
    from .model import ModelConfig

    return ModelConfig(**cfg["model"]).validate()


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    from .synth import SynthConfig, generate_corpus, save_corpus, split

    cfg = _resolve_config(args)
    s = dict(cfg["synth"])
    ratios = s.pop("ratios")
    holdout = s.pop("holdout_speakers")
    s["speakers_per_mix"] = tuple(s["speakers_per_mix"])
    synth_cfg = SynthConfig(**s).validate()
    corpus = generate_corpus(synth_cfg, cfg["seed"])
    parts = split(corpus, tuple(ratios), cfg["seed"], holdout_speakers=holdout)
    out = Path(args.out)
    manifest = None
    for name, part in (("train", parts.train), ("dev", parts.dev), ("test", parts.test)):
        manifest = save_corpus(part, out / name)
    summary = (
        f"generated {len(corpus)} sequences "
        f"(train {len(parts.train)} / dev {len(parts.dev)} / test {len(parts.test)}, "
        f"dropped {parts.dropped}), mean overlap {corpus.mean_overlap:.3f}"
    )
    return CommandResult(0, summary, str(manifest))


def cmd_pretrain_spk(args):
    from .synth import load_corpus
    from .train import pretrain_speaker_encoder

    cfg = _resolve_config(args)
    corpus = load_corpus(args.corpus)
    encoder, history = pretrain_speaker_encoder(
        corpus,
        embed_dim=cfg["model"]["embed_dim"],
        epochs=args.epochs if args.epochs is not None else cfg["pretrain"]["epochs"],
        lr=cfg["pretrain"]["lr"],
        seed=cfg["seed"],
    )
    encoder.save(args.out)
    summary = (
        f"pretrained speaker encoder on {len(corpus)} sequences; "
        f"classification loss {history['epoch_loss'][0]:.4f} -> {history['epoch_loss'][-1]:.4f}; "
        f"frozen checkpoint at {args.out}"
    )
    return CommandResult(0, summary, str(args.out))


def cmd_train(args):
    from .losses import LossWeights
    from .report import render_training_curves
    from .train import TrainConfig, train

    cfg = _resolve_config(args)
    t = cfg["train"]
    config = TrainConfig(
        model=_model_config(cfg),
        weights=LossWeights(**cfg["loss_weights"]),
        train_dir=args.train,
        dev_dir=args.dev,
        out_dir=args.out,
        batch_size=t["batch_size"],
        grad_accum=t["grad_accum"],
        peak_lr=t["peak_lr"],
        warmup_epochs=t["warmup_epochs"],
        total_epochs=args.epochs if args.epochs is not None else t["total_epochs"],
        eval_every_epochs=t["eval_every_epochs"],
        seed=cfg["seed"],
        adapt_from=args.adapt_from,
        spk_encoder=args.spk_encoder,
        existence_gating=t["existence_gating"],
        target_train_der=t.get("target_train_der"),
        binarize_threshold=t["binarize_threshold"],
        median_window=t["median_window"],
    )
    result = train(config)
    fig_dir = Path(args.out) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    render_training_curves(result.records, fig_dir / "loss_curves.png")
    dev = f"{100 * result.best_dev_der:.2f}%" if result.best_dev_der is not None else "n/a"
    summary = (
        f"trained {result.steps} steps; best dev DER {dev}; "
        f"checkpoints: best={result.best_ckpt} last={result.last_ckpt}"
    )
    return CommandResult(0, summary, result.log_path)


def cmd_infer(args):
    from .metrics import rttm_write
    from .model import DiarizationModel
    from .synth import load_corpus
    from .train import infer

    model = DiarizationModel.load(args.checkpoint)
    corpus = load_corpus(args.features)
    seglists = []
    n_speech = 0
    for sample in corpus.samples:
        _, segments = infer(
            model,
            sample.mixture,
            frame_dur=corpus.frame_dur,
            recording_id=sample.sample_id,
            threshold=args.threshold,
            median_window=args.median_window,
        )
        seglists.append(segments)
        n_speech += len(segments.segments)
    rttm_write(seglists, args.out_rttm)
    summary = f"inferred {len(seglists)} recordings, {n_speech} segments -> {args.out_rttm}"
    return CommandResult(0, summary, str(args.out_rttm))


def cmd_score(args):
    from .metrics import der_from_segments, rttm_read
    from .report import format_der_table, render_der_figure, write_der_tsv

    ref = rttm_read(args.ref)
    hyp = rttm_read(args.hyp)
    report = der_from_segments(ref, hyp, frame_dur=args.frame_dur)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tsv = write_der_tsv(report, out / "der_report.tsv")
    render_der_figure(report, out / "der_report.png")
    return CommandResult(0, format_der_table(report), str(tsv))


def cmd_gradcheck(args):
    from .gradcheck import run_component

    reports = run_component(args.component, seed=args.seed or 0, eps=args.eps, tol=args.tol)
    lines = [r.summary() for r in reports]
    report_path = None
    if args.out:
        payload = [
            {
                "name": r.name,
                "max_rel_err": r.max_rel_err,
                "n_elements": r.n_elements,
                "passed": r.passed,
                "eps": r.eps,
                "tol": r.tol,
            }
            for r in reports
        ]
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        report_path = str(args.out)
    ok = all(r.passed for r in reports)
    return CommandResult(0 if ok else 3, "\n".join(lines), report_path)


# ---------------------------------------------------------------------------
# parser wiring


def build_parser():
    parser = _Parser(prog="spkdemux", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--seed", type=int, default=None, help="override every random seed")
        if config:
            p.add_argument("--config", help="JSON config file merged over the preset")
            p.add_argument("--preset", choices=("desk", "paper"), default="desk")
            p.add_argument("--dump-config", help="write the fully resolved config to this path")

    p = sub.add_parser("synth", help="generate and split a synthetic corpus")
    common(p)
    p.add_argument("--out", required=True, help="output directory (train/dev/test subdirs)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain-spk", help="pretrain and freeze the speaker encoder")
    common(p)
    p.add_argument("--corpus", required=True, help="training corpus directory")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_pretrain_spk)

    p = sub.add_parser("train", help="train or adapt the diarization model")
    common(p)
    p.add_argument("--train", required=True, help="training corpus directory")
    p.add_argument("--dev", default=None, help="dev corpus directory for checkpoint selection")
    p.add_argument("--out", required=True, help="run directory for logs and checkpoints")
    p.add_argument("--epochs", type=int, default=None, help="override total epochs")
    p.add_argument("--adapt-from", default=None, help="checkpoint to grow from")
    p.add_argument("--spk-encoder", default=None, help="frozen speaker encoder checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run inference over a features directory")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True, help="corpus directory with mixture features")
    p.add_argument("--out-rttm", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--median-window", type=int, default=1)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("score", help="score a hypothesis RTTM against a reference")
    common(p, config=False)
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--frame-dur", type=float, default=0.01)
    p.add_argument("--out", default="score_out", help="directory for the TSV report and figure")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gradcheck", help="finite-difference check a named op set or loss")
    common(p, config=False)
    p.add_argument("component", help="ops | losses | loss_diar | ... | all | negative-control")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", default=None, help="optional JSON report path")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    print(result.summary)
    if result.report_path:
        print(f"report: {result.report_path}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
