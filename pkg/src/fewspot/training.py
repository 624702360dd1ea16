"""Episodic training loop: schedule, logging, checkpoints, resume.

Checkpoints are written after every epoch and carry the optimizer
moments and batch-norm running statistics, so a resumed run replays
the exact remaining loss trace of a straight-through run (episode RNG
streams are keyed by (seed, epoch, episode), never by wall clock).
"""

from __future__ import annotations

import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .encoder import Encoder, EncoderConfig, load_checkpoint, save_checkpoint
from .episodes import EpisodeConfig, build_episode
from .errors import NumericError, ValidationError
from .generator import DummyPrototypeGenerator
from .nn.optim import Adam
from .seeding import EPISODE_STREAM, INIT_STREAM, rng_for

LOSS_KINDS = ("pn", "ap", "tl", "dproto")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "pn"
    ap_margin: float = losses.AP_MARGIN
    tl_margin: float = losses.TL_MARGIN
    dproto_unknown: int = 16

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"unknown loss kind {self.kind!r}")


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 40
    episodes_per_epoch: int = 400
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_after_epoch: int = 20


def lr_for_epoch(schedule: TrainSchedule, epoch: int) -> float:
    """Epochs are 1-based; the decay applies from epoch decay_after+1 on."""
    if epoch > schedule.lr_decay_after_epoch:
        return schedule.lr * schedule.lr_decay_factor
    return schedule.lr


@dataclass
class TrainResult:
    encoder: Encoder
    generator: DummyPrototypeGenerator | None
    ap_scalars: tuple | None
    loss_trace: list = field(default_factory=list)
    final_checkpoint: Path | None = None
    log_path: Path | None = None


def _epoch_ckpt(out_dir: Path, epoch: int) -> Path:
    return out_dir / f"epoch_{epoch:03d}.pkws"


def _latest_epoch(out_dir: Path) -> int:
    best = 0
    for p in out_dir.glob("epoch_*.pkws"):
        try:
            best = max(best, int(p.stem.split("_")[1]))
        except (IndexError, ValueError):
            continue
    return best


class _TrainState:
    """Everything the loop owns: model, extras, optimizer."""

    def __init__(self, encoder_cfg: EncoderConfig, seed: int, loss_cfg: LossConfig,
                 schedule: TrainSchedule, episode_cfg: EpisodeConfig):
        self.encoder = Encoder(encoder_cfg, seed)
        self.seed = seed
        self.loss_cfg = loss_cfg
        self.schedule = schedule
        self.episode_cfg = episode_cfg
        dtype = encoder_cfg.np_dtype
        self.generator = None
        self.ap_w = self.ap_b = None
        params = self.encoder.parameters()
        if loss_cfg.kind == "ap":
            self.ap_w, self.ap_b = losses.make_ap_scalars(dtype)
            params += [self.ap_w, self.ap_b]
        elif loss_cfg.kind == "dproto":
            self.generator = DummyPrototypeGenerator(
                self.encoder.embedding_dim, rng_for(seed, INIT_STREAM, 1), dtype
            )
            params += self.generator.parameters()
        self.optimizer = Adam(params, lr=schedule.lr)

    # -- persistence ---------------------------------------------------
    def extra_tensors(self) -> dict:
        out = dict(self.optimizer.state_tensors())
        if self.ap_w is not None:
            out["ap.w"] = self.ap_w.data
            out["ap.b"] = self.ap_b.data
        if self.generator is not None:
            out.update(self.generator.state_tensors("gen."))
        return out

    def save(self, path, epoch: int) -> None:
        save_checkpoint(
            self.encoder,
            path,
            extra_config={
                "train": {
                    "epoch": epoch,
                    "loss": asdict(self.loss_cfg),
                    "schedule": asdict(self.schedule),
                    "episode": asdict(self.episode_cfg),
                    "normalize_flag": self.loss_cfg.kind == "ap",
                }
            },
            extra_tensors=self.extra_tensors(),
        )

    def load_extras(self, tensors) -> None:
        self.optimizer.load_state_tensors(tensors)
        if self.ap_w is not None:
            self.ap_w.data = np.asarray(tensors["ap.w"], dtype=self.ap_w.data.dtype)
            self.ap_b.data = np.asarray(tensors["ap.b"], dtype=self.ap_b.data.dtype)
        if self.generator is not None:
            self.generator.load_state_tensors(tensors, "gen.")

    # -- one optimization step ----------------------------------------
    def episode_loss(self, batch, rng) -> float:
        kind = self.loss_cfg.kind
        feats = batch.features
        n_cls, per = feats.shape[0], feats.shape[1]
        flat = feats.reshape(n_cls * per, feats.shape[2], feats.shape[3])

        if kind == "tl":
            emb = self.encoder.forward(flat, training=True)
            labels = np.repeat(np.arange(n_cls), per)
            loss = losses.tl_loss(emb, labels, rng, self.loss_cfg.tl_margin)
        elif kind == "dproto":
            loss = self._dproto_loss(batch, rng)
        else:
            s = batch.support
            emb = self.encoder.forward(flat, training=True)
            offsets = np.arange(n_cls)[:, None] * per
            sup_idx = (offsets + np.arange(s)[None, :]).ravel()
            qry_idx = (offsets + np.arange(s, per)[None, :]).ravel()
            sup_labels = np.repeat(np.arange(n_cls), s)
            qry_labels = np.repeat(np.arange(n_cls), per - s)
            protos = losses.compute_prototypes(emb[sup_idx], sup_labels, n_cls)
            if kind == "pn":
                loss = losses.pn_loss(emb[qry_idx], qry_labels, protos)
            else:
                loss = losses.ap_loss(
                    emb[qry_idx], qry_labels, protos,
                    self.ap_w, self.ap_b, self.loss_cfg.ap_margin,
                )

        value = loss.item()
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        if self.ap_w is not None:
            self.ap_w.data = np.maximum(self.ap_w.data, losses.AP_MIN_W)
        return value

    def _dproto_loss(self, batch, rng):
        """Relabel part of the episode as unknown and train jointly.

        Prototypes come from the known classes' support; queries of
        unknown classes carry label 0 and must land on the closest
        generated dummy prototype.
        """
        n_cls, per = batch.features.shape[0], batch.features.shape[1]
        s = batch.support
        n_unknown = self.loss_cfg.dproto_unknown
        if not 0 < n_unknown < n_cls - 1:
            raise ValidationError("dproto_unknown must leave >= 2 known classes")
        unknown = set(rng.choice(n_cls, size=n_unknown, replace=False).tolist())
        known = [i for i in range(n_cls) if i not in unknown]
        rank = {cls: r for r, cls in enumerate(known)}

        sup_feats = batch.features[known, :s].reshape(
            len(known) * s, *batch.features.shape[2:]
        )
        qry_feats = batch.features[:, s:].reshape(
            n_cls * (per - s), *batch.features.shape[2:]
        )
        emb = self.encoder.forward(
            np.concatenate([sup_feats, qry_feats]), training=True
        )
        n_sup = len(known) * s
        sup_labels = np.repeat(np.arange(len(known)), s)
        qry_labels = np.repeat(
            [0 if i in unknown else 1 + rank[i] for i in range(n_cls)], per - s
        )
        protos = losses.compute_prototypes(emb[np.arange(n_sup)], sup_labels, len(known))
        dummies = self.generator(protos)
        return losses.dproto_loss(
            emb[np.arange(n_sup, n_sup + len(qry_labels))], qry_labels, protos, dummies
        )


def train(
    encoder_cfg: EncoderConfig,
    seed: int,
    loss_cfg: LossConfig,
    schedule: TrainSchedule,
    episode_cfg: EpisodeConfig,
    dataset,
    extractor,
    policy=None,
    *,
    out_dir,
    resume: bool = False,
    progress=None,
) -> TrainResult:
    """Run the episodic schedule; returns the trained state.

    With resume=True and epoch checkpoints present in out_dir, training
    continues after the newest one and appends to the existing log.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.csv"

    state = _TrainState(encoder_cfg, seed, loss_cfg, schedule, episode_cfg)
    start_epoch = 1
    if resume:
        last = _latest_epoch(out_dir)
        if last > 0:
            encoder, config, tensors = load_checkpoint(_epoch_ckpt(out_dir, last))
            if config["encoder"] != encoder_cfg.to_dict():
                raise ValidationError("resume checkpoint has a different encoder config")
            state.encoder = encoder
            params = encoder.parameters()
            if state.ap_w is not None:
                params += [state.ap_w, state.ap_b]
            if state.generator is not None:
                params += state.generator.parameters()
            state.optimizer = Adam(params, lr=schedule.lr)
            state.load_extras(tensors)
            start_epoch = last + 1

    # pn and ap share the support/query episode shape
    episode_kind = {"pn": "pn", "ap": "pn", "dproto": "dproto", "tl": "tl"}[loss_cfg.kind]

    trace = []
    last_ckpt = _epoch_ckpt(out_dir, start_epoch - 1) if start_epoch > 1 else None
    log_mode = "a" if (resume and start_epoch > 1) else "w"
    with open(log_path, log_mode) as log:
        for epoch in range(start_epoch, schedule.epochs + 1):
            state.optimizer.lr = lr_for_epoch(schedule, epoch)
            for episode in range(1, schedule.episodes_per_epoch + 1):
                rng = rng_for(seed, EPISODE_STREAM, epoch, episode)
                batch = build_episode(
                    dataset, episode_kind, episode_cfg, rng, extractor, policy
                )
                value = state.episode_loss(batch, rng)
                if not np.isfinite(value):
                    where = f"last good checkpoint: {last_ckpt}" if last_ckpt else "no checkpoint yet"
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} episode {episode}; {where}"
                    )
                trace.append(value)
                log.write(f"{epoch},{episode},{value:.8g},{state.optimizer.lr:g}\n")
            log.flush()
            last_ckpt = _epoch_ckpt(out_dir, epoch)
            state.save(last_ckpt, epoch)
            if progress is not None:
                recent = trace[-schedule.episodes_per_epoch :]
                progress(epoch, float(np.mean(recent)))

    final = out_dir / "final.pkws"
    if last_ckpt is None:
        state.save(final, 0)
    else:
        shutil.copyfile(last_ckpt, final)
    return TrainResult(
        encoder=state.encoder,
        generator=state.generator,
        ap_scalars=(state.ap_w, state.ap_b) if state.ap_w is not None else None,
        loss_trace=trace,
        final_checkpoint=final,
        log_path=log_path,
    )


def generator_from_checkpoint(encoder, config, tensors):
    """Rebuild the trained dummy-prototype generator, or None if absent."""
    train_cfg = config.get("train", {})
    if train_cfg.get("loss", {}).get("kind") != "dproto":
        return None
    gen = DummyPrototypeGenerator(
        encoder.cfg.embedding_dim,
        rng_for(config.get("seed", 0), INIT_STREAM, 1),
        dtype=encoder.cfg.np_dtype,
    )
    gen.load_state_tensors(tensors, "gen.")
    return gen


def normalize_from_checkpoint(config) -> bool:
    """Whether scoring should L2-normalize (set for cosine-trained encoders)."""
    return bool(config.get("train", {}).get("normalize_flag", False))
