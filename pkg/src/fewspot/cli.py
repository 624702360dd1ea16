"""Command-line surface: prepare, train, enroll, infer, eval, synth.

Every subcommand accepts --config/--seed/--out; --seed overrides the
config's seed and --out redirects that command's output directory.
Errors map to exit codes: 2 validation, 3 numeric, 4 I/O or format.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import audio, classifiers, config as config_mod, data, evaluation, synthetic
from .encoder import Encoder, EncoderConfig, load_checkpoint
from .errors import FewspotError, ValidationError
from .features import FeatureExtractor
from .training import generator_from_checkpoint, normalize_from_checkpoint, train


def _load_app_config(args) -> config_mod.AppConfig:
    cfg = config_mod.parse(args.config) if args.config else config_mod.AppConfig()
    if args.seed is not None:
        cfg = config_mod.AppConfig(
            frontend=cfg.frontend,
            encoder=cfg.encoder,
            loss=cfg.loss,
            schedule=cfg.schedule,
            episode=cfg.episode,
            seed=args.seed,
            augment=cfg.augment,
            evaluation=cfg.evaluation,
            paths=cfg.paths,
        )
    return cfg


def _out_dir(args, default) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _augment_policy(cfg: config_mod.AppConfig):
    if not cfg.augment.noise_dir:
        return None
    noise_root = Path(cfg.augment.noise_dir)
    paths = sorted(noise_root.rglob("*.wav"))
    if not paths:
        raise ValidationError(f"no WAV files under noise_dir {noise_root}")
    return audio.AugmentationPolicy(
        apply_probability=cfg.augment.probability,
        snr_low_db=cfg.augment.snr_low_db,
        snr_high_db=cfg.augment.snr_high_db,
        noise_pool=audio.load_noise_pool(paths),
    )


def _encoder_from_container(cfg_dict, tensors) -> Encoder:
    enc = Encoder(EncoderConfig.from_dict(cfg_dict["encoder"]), cfg_dict.get("seed", 0))
    enc.load_state_tensors(tensors, "enc.")
    return enc


def cmd_prepare(args, cfg) -> int:
    out = _out_dir(args, args.data_root)
    positive = args.positive.split(",") if args.positive else data.GSC_POSITIVE
    filler = args.filler.split(",") if args.filler else data.GSC_FILLER
    summary = data.prepare(args.data_root, out, positive=positive, filler=filler)
    counts = summary["counts"]
    for cls in sorted(counts):
        print(f"{cls}\t{counts[cls]}")
    print(f"prepared {len(counts)} classes -> {out}")
    return 0


def cmd_synth(args, cfg) -> int:
    out = _out_dir(args, "synthetic_corpus")
    info = synthetic.generate_corpus(out, seed=cfg.seed)
    print(
        f"synthetic corpus at {info['root']}: "
        f"{info['train_clips']} train / {info['enroll_clips']} enroll / "
        f"{info['test_clips']} test clips"
    )
    return 0


def cmd_train(args, cfg) -> int:
    root = Path(cfg.paths.data_root)
    dataset = data.Dataset.from_manifest(root, root / cfg.paths.train_manifest)
    extractor = FeatureExtractor(cfg.frontend)
    out = _out_dir(args, cfg.paths.checkpoint_dir)
    result = train(
        cfg.encoder,
        cfg.seed,
        cfg.loss,
        cfg.schedule,
        cfg.episode,
        dataset,
        extractor,
        _augment_policy(cfg),
        out_dir=out,
        resume=args.resume,
        progress=lambda epoch, mean: print(f"epoch {epoch}: mean loss {mean:.6g}"),
    )
    print(f"final checkpoint: {result.final_checkpoint}")
    return 0


def _embed_dir(encoder, extractor, clip_dir: Path, shots: int | None):
    paths = sorted(clip_dir.glob("*.wav"))
    if shots is not None:
        if len(paths) < shots:
            raise ValidationError(
                f"{clip_dir}: {len(paths)} clips, need at least {shots}"
            )
        paths = paths[:shots]
    if not paths:
        raise ValidationError(f"{clip_dir}: no WAV files")
    feats = np.stack([extractor(audio.load_clip(p)) for p in paths])
    return encoder.embed(feats)


def cmd_enroll(args, cfg) -> int:
    encoder, ckpt_cfg, tensors = load_checkpoint(args.checkpoint)
    extractor = FeatureExtractor(cfg.frontend)
    kind = args.classifier or cfg.evaluation.classifier
    shots_root = Path(args.shots_dir)
    keyword_dirs = sorted(p for p in shots_root.iterdir() if p.is_dir())
    if not keyword_dirs:
        raise ValidationError(f"{shots_root}: no keyword subdirectories")
    shots = args.shots
    groups = [_embed_dir(encoder, extractor, d, shots) for d in keyword_dirs]

    filler_embeddings = None
    if kind == "open_ncm":
        if not args.filler_dir:
            raise ValidationError("open_ncm enrollment needs --filler-dir")
        filler_root = Path(args.filler_dir)
        clips = sorted(filler_root.rglob("*.wav"))
        if not clips:
            raise ValidationError(f"{filler_root}: no WAV files")
        feats = np.stack([extractor(audio.load_clip(p)) for p in clips])
        filler_embeddings = encoder.embed(feats)

    generator = generator_from_checkpoint(encoder, ckpt_cfg, tensors)
    if kind == "dproto" and generator is None:
        raise ValidationError(
            "dproto enrollment needs a checkpoint trained with the dproto loss"
        )
    enrollment = classifiers.enroll(
        groups,
        kind,
        normalize=normalize_from_checkpoint(ckpt_cfg),
        filler_embeddings=filler_embeddings,
        generator=generator,
        keywords=[d.name for d in keyword_dirs],
    )
    out = _out_dir(args, ".") / "enrollment.pkws"
    # Embed the encoder so inference needs only this one file.
    classifiers.save_enrollment(
        out,
        enrollment,
        extra_config={"encoder": encoder.cfg.to_dict(), "seed": encoder.seed},
        extra_tensors=encoder.state_tensors("enc."),
    )
    if enrollment.low_shot_warning:
        print("warning: fewer enrollment clips than the tail size; "
              "Weibull fits use all available distances", file=sys.stderr)
    print(f"enrolled {enrollment.num_classes} keywords -> {out}")
    return 0


def cmd_infer(args, cfg) -> int:
    enrollment, enr_cfg, tensors = classifiers.load_enrollment(args.enrollment)
    if "encoder" not in enr_cfg:
        raise ValidationError(f"{args.enrollment}: no embedded encoder")
    encoder = _encoder_from_container(enr_cfg, tensors)
    if encoder.cfg.embedding_dim != enrollment.embedding_dim:
        raise ValidationError(
            f"encoder embedding dim {encoder.cfg.embedding_dim} does not match "
            f"enrollment dim {enrollment.embedding_dim}"
        )
    extractor = FeatureExtractor(cfg.frontend)
    feats = extractor(audio.load_clip(args.clip))
    emb = encoder.embed(feats[None])[0]
    probs = classifiers.score(enrollment, emb)
    label = classifiers.decide(probs, args.gamma)
    names = ["unknown"] + (
        enrollment.keywords or [f"class_{i}" for i in range(1, len(probs))]
    )
    print(names[label])
    for name, p in zip(names, probs):
        print(f"{name}\t{p:.6f}")
    return 0


def cmd_eval(args, cfg) -> int:
    encoder, ckpt_cfg, tensors = load_checkpoint(args.checkpoint)
    extractor = FeatureExtractor(cfg.frontend)
    root = Path(cfg.paths.data_root)
    enroll_path = root / cfg.paths.enroll_manifest
    if not enroll_path.exists():
        # Prepared corpora have no separate enrollment manifest; the
        # train split supplies the shots and filler clips.
        enroll_path = root / cfg.paths.train_manifest
    enroll_ds = data.Dataset.from_manifest(root, enroll_path)
    test_ds = data.Dataset.from_manifest(root, root / cfg.paths.test_manifest)
    protocol = evaluation.EvalProtocol(
        tuple(data.read_class_list(root / cfg.paths.positive_list)),
        tuple(data.read_class_list(root / cfg.paths.negative_list)),
        tuple(data.read_class_list(root / cfg.paths.filler_list)),
        shots=cfg.evaluation.shots,
        repetitions=cfg.evaluation.repetitions,
        far_target=cfg.evaluation.far_target,
    )
    kind = args.classifier or cfg.evaluation.classifier
    report = evaluation.run_eval(
        encoder,
        extractor,
        kind,
        protocol,
        enroll_ds,
        test_ds,
        cfg.seed,
        generator=generator_from_checkpoint(encoder, ckpt_cfg, tensors),
        normalize=normalize_from_checkpoint(ckpt_cfg),
    )
    out = _out_dir(args, cfg.paths.report_dir)
    evaluation.write_records(out / "eval_records.csv", report)
    evaluation.write_text_report(out / "eval_report.txt", report)
    for key, value in sorted(report.summary().items()):
        print(f"{key}\t{value:.6g}")
    print(f"reports -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; defaults fill gaps")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory for this command")

    parser = argparse.ArgumentParser(
        prog="fewspot", description="few-shot open-set keyword spotting toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="scan a corpus into manifests")
    p.add_argument("data_root")
    p.add_argument("--positive", help="comma-separated target classes")
    p.add_argument("--filler", help="comma-separated filler classes")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic corpus")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="run episodic training")
    p.add_argument("--resume", action="store_true", help="continue from epoch checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enroll", parents=[common], help="build classifier state from shots")
    p.add_argument("checkpoint")
    p.add_argument("shots_dir", help="one subdirectory of WAV clips per keyword")
    p.add_argument("--classifier", choices=classifiers.KINDS)
    p.add_argument("--shots", type=int, help="clips per keyword (default: all)")
    p.add_argument("--filler-dir", help="WAV pool for the open_ncm unknown prototype")
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("infer", parents=[common], help="classify one clip")
    p.add_argument("enrollment")
    p.add_argument("clip")
    p.add_argument("--gamma", type=float, default=0.0, help="acceptance threshold")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="run the open-set protocol")
    p.add_argument("checkpoint")
    p.add_argument("--classifier", choices=classifiers.KINDS)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_app_config(args)
        return args.func(args, cfg)
    except FewspotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
