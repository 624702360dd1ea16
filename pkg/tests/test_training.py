"""Episodic training loop: schedule, logging, resume, failure paths."""

import numpy as np
import pytest

from fewspot import training
from fewspot.data import Dataset
from fewspot.encoder import EncoderConfig
from fewspot.episodes import EpisodeConfig
from fewspot.errors import NumericError, ValidationError
from fewspot.features import FeatureExtractor
from fewspot.synthetic import SyntheticSpec, generate_corpus
from fewspot.training import (
    LossConfig,
    TrainSchedule,
    generator_from_checkpoint,
    lr_for_epoch,
    normalize_from_checkpoint,
    train,
)

MINI = SyntheticSpec(num_classes=9, clips_per_class=6, num_filler=2)
ENC = EncoderConfig("s", "norm", channels=8, num_ds_blocks=2, dtype="float32")
EPISODE = EpisodeConfig(num_classes=4, support=2, query=2, tl_classes=4, tl_samples=4)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini_corpus")
    generate_corpus(root, seed=0, spec=MINI)
    return root


@pytest.fixture(scope="module")
def train_ds(corpus):
    return Dataset.from_manifest(corpus, corpus / "train.tsv")


def tiny_train(ds, out_dir, *, kind="pn", seed=0, epochs=2, episodes=3, resume=False):
    return train(
        ENC,
        seed,
        LossConfig(kind=kind),
        TrainSchedule(epochs=epochs, episodes_per_epoch=episodes, lr_decay_after_epoch=1),
        EPISODE,
        ds,
        FeatureExtractor(),
        out_dir=out_dir,
        resume=resume,
    )


# -- schedule --------------------------------------------------------


def test_lr_decays_once_after_cutoff():
    sched = TrainSchedule()
    assert lr_for_epoch(sched, 1) == 1e-3
    assert lr_for_epoch(sched, 20) == 1e-3
    assert lr_for_epoch(sched, 21) == pytest.approx(1e-4)
    assert lr_for_epoch(sched, 40) == pytest.approx(1e-4)


def test_loss_config_rejects_unknown_kind():
    with pytest.raises(ValidationError, match="loss kind"):
        LossConfig(kind="contrastive")


# -- loop mechanics --------------------------------------------------


def test_tiny_run_artifacts(tmp_path, train_ds):
    res = tiny_train(train_ds, tmp_path / "run")
    assert len(res.loss_trace) == 6
    assert all(np.isfinite(v) for v in res.loss_trace)
    for name in ("epoch_001.pkws", "epoch_002.pkws", "final.pkws", "train_log.csv"):
        assert (tmp_path / "run" / name).exists()
    final = (tmp_path / "run" / "final.pkws").read_bytes()
    assert final == (tmp_path / "run" / "epoch_002.pkws").read_bytes()


def test_log_lines_carry_epoch_episode_loss_lr(tmp_path, train_ds):
    res = tiny_train(train_ds, tmp_path / "run")
    lines = res.log_path.read_text().splitlines()
    assert len(lines) == 6
    first = lines[0].split(",")
    assert first[0] == "1" and first[1] == "1"
    assert float(first[2]) == pytest.approx(res.loss_trace[0], rel=1e-6)
    assert float(first[3]) == pytest.approx(1e-3)
    # decay kicks in from epoch 2 with lr_decay_after_epoch=1
    assert float(lines[-1].split(",")[3]) == pytest.approx(1e-4)


def test_same_seed_same_trace(tmp_path, train_ds):
    a = tiny_train(train_ds, tmp_path / "a")
    b = tiny_train(train_ds, tmp_path / "b")
    assert a.loss_trace == b.loss_trace
    c = tiny_train(train_ds, tmp_path / "c", seed=1)
    assert a.loss_trace != c.loss_trace


def test_progress_callback_reports_epoch_means(tmp_path, train_ds):
    seen = []
    train(
        ENC,
        0,
        LossConfig(),
        TrainSchedule(epochs=2, episodes_per_epoch=3),
        EPISODE,
        train_ds,
        FeatureExtractor(),
        out_dir=tmp_path / "run",
        progress=lambda epoch, mean: seen.append((epoch, mean)),
    )
    assert [e for e, _ in seen] == [1, 2]
    log = (tmp_path / "run" / "train_log.csv").read_text().splitlines()
    epoch1 = [float(l.split(",")[2]) for l in log[:3]]
    assert seen[0][1] == pytest.approx(np.mean(epoch1), rel=1e-6)


# -- resume ----------------------------------------------------------


def test_resume_matches_straight_run(tmp_path, train_ds):
    straight = tiny_train(train_ds, tmp_path / "s", epochs=3)
    tiny_train(train_ds, tmp_path / "r", epochs=2)
    resumed = tiny_train(train_ds, tmp_path / "r", epochs=3, resume=True)
    # the resumed trace covers epoch 3 only and matches the tail
    assert resumed.loss_trace == straight.loss_trace[6:]
    assert (tmp_path / "s" / "final.pkws").read_bytes() == (
        tmp_path / "r" / "final.pkws"
    ).read_bytes()
    log = (tmp_path / "r" / "train_log.csv").read_text().splitlines()
    assert len(log) == 9
    assert log == (tmp_path / "s" / "train_log.csv").read_text().splitlines()


def test_resume_without_checkpoints_starts_fresh(tmp_path, train_ds):
    res = tiny_train(train_ds, tmp_path / "r", resume=True)
    assert len(res.loss_trace) == 6


def test_resume_rejects_changed_encoder(tmp_path, train_ds):
    tiny_train(train_ds, tmp_path / "r", epochs=1)
    other = EncoderConfig("s", "norm", channels=16, num_ds_blocks=2, dtype="float32")
    with pytest.raises(ValidationError, match="encoder config"):
        train(
            other,
            0,
            LossConfig(),
            TrainSchedule(epochs=2, episodes_per_epoch=3),
            EPISODE,
            train_ds,
            FeatureExtractor(),
            out_dir=tmp_path / "r",
            resume=True,
        )


# -- loss variants ---------------------------------------------------


@pytest.mark.parametrize("kind", ["ap", "tl", "dproto"])
def test_other_losses_run_and_checkpoint(tmp_path, train_ds, kind):
    # dproto_unknown=1 keeps >= 2 known classes in the 4-way episode
    res = train(
        ENC,
        0,
        LossConfig(kind=kind, dproto_unknown=1),
        TrainSchedule(epochs=1, episodes_per_epoch=2),
        EPISODE,
        train_ds,
        FeatureExtractor(),
        out_dir=tmp_path / kind,
    )
    assert len(res.loss_trace) == 2 and all(np.isfinite(v) for v in res.loss_trace)
    if kind == "ap":
        w, b = res.ap_scalars
        assert w.data > 0
    if kind == "dproto":
        assert res.generator is not None


def test_checkpoint_helpers_reflect_loss_kind(tmp_path, train_ds):
    from fewspot.encoder import load_checkpoint

    res = train(
        ENC,
        0,
        LossConfig(kind="dproto", dproto_unknown=1),
        TrainSchedule(epochs=1, episodes_per_epoch=2),
        EPISODE,
        train_ds,
        FeatureExtractor(),
        out_dir=tmp_path / "d",
    )
    enc, config, tensors = load_checkpoint(res.final_checkpoint)
    gen = generator_from_checkpoint(enc, config, tensors)
    assert gen is not None
    for k, v in gen.state_tensors().items():
        np.testing.assert_array_equal(v, res.generator.state_tensors()[k])
    assert normalize_from_checkpoint(config) is False

    res_pn = tiny_train(train_ds, tmp_path / "p", epochs=1, episodes=1)
    _, config_pn, tensors_pn = load_checkpoint(res_pn.final_checkpoint)
    assert generator_from_checkpoint(enc, config_pn, tensors_pn) is None

    res_ap = tiny_train(train_ds, tmp_path / "a", kind="ap", epochs=1, episodes=1)
    _, config_ap, _ = load_checkpoint(res_ap.final_checkpoint)
    assert normalize_from_checkpoint(config_ap) is True


# -- numeric failure -------------------------------------------------


def test_nonfinite_loss_names_last_checkpoint(tmp_path, train_ds, monkeypatch):
    calls = {"n": 0}
    orig = training._TrainState.episode_loss

    def flaky(self, batch, rng):
        calls["n"] += 1
        if calls["n"] > 3:
            return float("nan")
        return orig(self, batch, rng)

    monkeypatch.setattr(training._TrainState, "episode_loss", flaky)
    with pytest.raises(NumericError, match="epoch_001.pkws"):
        tiny_train(train_ds, tmp_path / "r")


def test_nonfinite_loss_before_any_checkpoint(tmp_path, train_ds, monkeypatch):
    monkeypatch.setattr(
        training._TrainState, "episode_loss", lambda self, b, r: float("nan")
    )
    with pytest.raises(NumericError, match="no checkpoint yet"):
        tiny_train(train_ds, tmp_path / "r")
