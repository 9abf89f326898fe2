import json
import zipfile

import numpy as np
import pytest

from ndpr.data import Conversation, TagSet, Utterance
from ndpr.synthgen import SynthConfig, generate
from ndpr.training import (CheckpointError, TrainConfig, TrainingError, load_checkpoint,
                           save_checkpoint, train)

SMALL = TrainConfig(hidden_dim=4, embedding_dim=5, epochs=2, seed=3)


@pytest.fixture(scope="module")
def corpus():
    return generate(SynthConfig(seed=0, n_conversations=6))


@pytest.fixture(scope="module")
def ckpt(corpus):
    return train(SMALL, corpus)


def test_defaults():
    c = TrainConfig()
    assert (c.lr, c.epochs, c.dropout, c.hidden_dim, c.embedding_dim) == (3e-4, 8, 0.2, 150, 300)
    assert c.batch_size == 1 and c.clip_norm is None and c.dev_fraction == 0.167
    assert c.model_config(10, 17).classifier_hidden == 300


@pytest.mark.parametrize("bad", [dict(hidden_dim=0), dict(dropout=1.0), dict(lr=0.0),
                                 dict(attention="both"), dict(epochs=0)])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"lr": 0.1, "momentum": 0.9})
    assert TrainConfig.from_dict(SMALL.to_dict()) == SMALL


def test_history_and_selection(ckpt):
    assert [h["epoch"] for h in ckpt.history] == [1, 2]
    assert all(np.isfinite(h["loss"]) for h in ckpt.history)
    best = max(h["dev_f"] for h in ckpt.history)
    assert ckpt.dev_f == best
    assert ckpt.epoch == min(h["epoch"] for h in ckpt.history if h["dev_f"] == best)


def test_none_attention_is_baseline(corpus):
    c = train(SMALL.replace(attention="none", epochs=1), corpus)
    assert not any(k.startswith("attn.") for k in c.state)
    assert c.state["clf.W1"].shape[1] == 2 * SMALL.hidden_dim


def test_identical_loss_curves(corpus):
    a, b = train(SMALL, corpus), train(SMALL, corpus)
    assert a.history == b.history
    assert all(np.array_equal(a.state[k], b.state[k]) for k in a.state)


def test_batched_training_runs(corpus):
    c = train(SMALL.replace(batch_size=4, clip_norm=1.0), corpus)
    assert len(c.history) == 2


def test_empty_training_set():
    with pytest.raises(TrainingError):
        train(SMALL, [])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(corpus):
    with pytest.raises(TrainingError, match="epoch 1"):
        train(SMALL.replace(init_scale=1e200), corpus)


def test_explicit_dev_and_tiny_corpus():
    conv = Conversation("c", (Utterance(("a", "b"), ("None", "他")),))
    c = train(SMALL.replace(epochs=1), [conv])
    assert c.epoch == 1


# --- checkpoints --------------------------------------------------------------------


def test_round_trip_predictions(ckpt, corpus, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    assert loaded.train_config == ckpt.train_config and loaded.vocab == ckpt.vocab
    ex = ckpt.examples(corpus)
    rng = np.random.default_rng(0)
    sample = [ex[i] for i in rng.integers(len(ex), size=100)]
    a = ckpt.build_model().predict_batch(sample)
    b = loaded.build_model().predict_batch(sample)
    assert a == b
    for k in ckpt.state:
        assert np.array_equal(ckpt.state[k], loaded.state[k])


def test_checkpoint_bytes_are_deterministic(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "a")
    save_checkpoint(ckpt, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_wrong_tagset(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "m")
    with pytest.raises(CheckpointError, match="tag set"):
        load_checkpoint(tmp_path / "m", expected_tagset=TagSet.concrete())


def test_truncated_file(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "m")
    data = (tmp_path / "m").read_bytes()
    (tmp_path / "t").write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError, match="corrupt"):
        load_checkpoint(tmp_path / "t")


def _rewrite_meta(src, dst, edit):
    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for info in zin.infolist():
            payload = zin.read(info)
            if info.filename == "meta.json":
                meta = json.loads(payload)
                edit(meta)
                payload = json.dumps(meta).encode()
            zout.writestr(info, payload)


def test_version_mismatch(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "m")
    _rewrite_meta(tmp_path / "m", tmp_path / "v", lambda m: m.update(version=99))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v")


def test_tampered_tagset_hash(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "m")
    _rewrite_meta(tmp_path / "m", tmp_path / "h", lambda m: m["tagset"].append("extra"))
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(tmp_path / "h")


def test_not_a_checkpoint(tmp_path):
    (tmp_path / "x").write_text("hello")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x")
