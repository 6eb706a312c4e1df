"""Trainer: config parsing, optimizer contracts, checkpoint archive, loop."""

import copy
import csv
import os

import numpy as np
import pytest

from tulip.core.tape import Tensor
from tulip.errors import CheckpointError, ConfigError, TulipError
from tulip.scenes import generate_dataset, SceneDataset
from tulip.train import (
    AdamW,
    METRICS_HEADER,
    TrainConfig,
    TrainState,
    TulipModel,
    canonical_keys,
    clip_global_norm,
    decay_excluded,
    load_archive,
    load_checkpoint,
    parse_config_text,
    run_training,
    save_archive,
    save_checkpoint,
    train_step,
    warmup_lr,
)

TINY = dict(
    seed=5, batch_size=2, steps=4, n_global=2, n_local=1, global_size=48,
    local_size=24, vision_patch=12, vision_width=16, vision_depth=1,
    vision_heads=2, embed_dim=16, text_context=20, text_width=16,
    text_depth=1, text_heads=2, maskdec_width=16, maskdec_depth=1,
    maskdec_heads=2, textdec_width=16, textdec_depth=1, textdec_heads=2,
    mask_ratio=0.5, warmup_steps=0)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    generate_dataset(str(d), n_scenes=24, size=48, seed=9)
    return SceneDataset(str(d))


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_config_round_trip_through_text():
    cfg = TrainConfig(**TINY)
    again = parse_config_text(cfg.to_text())
    assert again == cfg


def test_config_unknown_key_errors():
    with pytest.raises(ConfigError):
        parse_config_text("nonsense_key = 3\n")


def test_config_comments_and_blank_lines():
    cfg = parse_config_text("# a comment\n\nseed = 12  # trailing\nlr = 2e-3\n")
    assert cfg.seed == 12 and cfg.lr == 2e-3


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lambda_r=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError):
        TrainConfig(recap_fraction=1.5)
    with pytest.raises(ConfigError):
        TrainConfig(ema_schedule="linear")
    # batch of 1 is fine when every contrastive term is disabled
    TrainConfig(batch_size=1, w_it=0, w_ii=0, w_tt=0)


def test_canonical_keys_cover_dataclass():
    keys = canonical_keys()
    assert "lr" in keys and "geco" in keys and len(keys) == len(set(keys))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def test_clip_global_norm_exact_at_boundary():
    grads = {"a": np.full(25, 2.0)}  # norm 10
    clipped, norm = clip_global_norm(grads, 2.0)
    assert norm == pytest.approx(10.0)
    post = np.sqrt(sum(float(np.sum(g * g)) for g in clipped.values()))
    assert post == pytest.approx(2.0, abs=1e-12)


def test_clip_no_op_below_threshold():
    grads = {"a": np.ones(4) * 0.5}
    clipped, norm = clip_global_norm(grads, 2.0)
    assert clipped["a"] is grads["a"]


def test_decay_exclusion_rule():
    assert decay_excluded("loss.log_t") and decay_excluded("loss.b")
    assert decay_excluded("vision.block0.attnnorm.gain")
    assert decay_excluded("text.outnorm.bias")
    assert not decay_excluded("vision.patch.w")
    assert not decay_excluded("vision.patch.b")


def test_zero_gradient_step_decay_semantics():
    lr, wd = 1e-2, 1e-3
    decayed = Tensor(np.full(4, 2.0), requires_grad=True)
    excluded = Tensor(np.full(4, 2.0), requires_grad=True)
    opt = AdamW({"w": decayed, "norm.gain": excluded}, lr=lr, weight_decay=wd,
                excluded=lambda n: n == "norm.gain")
    before_ex = excluded.data.copy()
    opt.step({"w": np.zeros(4), "norm.gain": np.zeros(4)})
    np.testing.assert_array_equal(excluded.data, before_ex)
    np.testing.assert_allclose(decayed.data, 2.0 * (1 - lr * wd), rtol=1e-12)


def test_adam_matches_independent_oracle():
    rng = np.random.default_rng(0)
    p0 = rng.standard_normal(8)
    params = {"p": Tensor(p0.copy(), requires_grad=True)}
    opt = AdamW(params, lr=1e-3, weight_decay=1e-4,
                excluded=lambda n: False)
    # independent reference implementation
    m = np.zeros(8)
    v = np.zeros(8)
    ref = p0.copy()
    for t in range(1, 11):
        g = rng.standard_normal(8)
        opt.step({"p": g.copy()})
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9 ** t)
        vhat = v / (1 - 0.999 ** t)
        ref = ref * (1 - 1e-3 * 1e-4) - 1e-3 * mhat / (np.sqrt(vhat) + 1e-8)
    assert np.abs(params["p"].data - ref).max() < 1e-10


def test_warmup_lr():
    assert warmup_lr(1.0, 0, 10) == pytest.approx(0.1)
    assert warmup_lr(1.0, 9, 10) == pytest.approx(1.0)
    assert warmup_lr(1.0, 50, 10) == 1.0


# ---------------------------------------------------------------------------
# checkpoint archive
# ---------------------------------------------------------------------------

def _tensors():
    rng = np.random.default_rng(3)
    return {
        "a.w": rng.standard_normal((3, 4)).astype(np.float32),
        "b": rng.standard_normal(7),
        "meta.step": np.asarray(11, dtype=np.int64),
        "blob": np.frombuffer(b"hello", dtype=np.uint8).copy(),
    }


def test_archive_round_trip(tmp_path):
    path = tmp_path / "x.ckpt"
    tensors = _tensors()
    save_archive(path, tensors)
    back = load_archive(path)
    assert set(back) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])
        assert back[k].dtype == tensors[k].dtype


def test_archive_resave_is_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_archive(p1, _tensors())
    save_archive(p2, load_archive(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_archive_empty_round_trips(tmp_path):
    p = tmp_path / "empty.ckpt"
    save_archive(p, {})
    assert load_archive(p) == {}


def test_archive_magic_and_crc_errors(tmp_path):
    p = tmp_path / "x.ckpt"
    save_archive(p, _tensors())
    blob = bytearray(p.read_bytes())
    truncated = tmp_path / "t.ckpt"
    truncated.write_bytes(bytes(blob[:-9]))
    with pytest.raises(CheckpointError):
        load_archive(truncated)
    blob[0] ^= 0xFF
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_archive(bad)
    blob2 = bytearray(p.read_bytes())
    blob2[-20] ^= 0x01  # flip a payload byte: CRC must catch it
    bad2 = tmp_path / "bad2.ckpt"
    bad2.write_bytes(bytes(blob2))
    with pytest.raises(CheckpointError):
        load_archive(bad2)


def test_archive_payloads_are_64_byte_aligned(tmp_path):
    p = tmp_path / "x.ckpt"
    save_archive(p, _tensors())
    import struct
    blob = p.read_bytes()
    pos = 8 + 8
    for _ in range(4):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4 + nlen
        code, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2 + 8 * rank
        (off,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        assert off % 64 == 0


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def test_metrics_recombination(tiny_data):
    cfg = TrainConfig(**TINY)
    state = TrainState(cfg, tiny_data)
    row, _ = train_step(state)
    recombined = cfg.lambda_c * (cfg.w_it * row.loss_it +
                                 cfg.w_ii * row.loss_ii +
                                 cfg.w_tt * row.loss_tt) + \
        cfg.lambda_r * (cfg.lambda_i * row.loss_img +
                        cfg.lambda_t * row.loss_txt)
    assert row.loss_total == pytest.approx(recombined, abs=2e-6)


def test_gradient_clip_contract(tiny_data):
    cfg = TrainConfig(**TINY)
    state = TrainState(cfg, tiny_data)
    row, _ = train_step(state)
    assert row.grad_norm > 0


def test_full_run_determinism(tiny_data, tmp_path):
    cfg = TrainConfig(**TINY)
    run_training(cfg, tiny_data, str(tmp_path / "r1"), log=None)
    run_training(cfg, tiny_data, str(tmp_path / "r2"), log=None)
    m1 = (tmp_path / "r1" / "metrics.csv").read_bytes()
    m2 = (tmp_path / "r2" / "metrics.csv").read_bytes()
    assert m1 == m2
    c1 = (tmp_path / "r1" / "checkpoint.ckpt").read_bytes()
    c2 = (tmp_path / "r2" / "checkpoint.ckpt").read_bytes()
    assert c1 == c2


def test_resume_equivalence(tiny_data, tmp_path):
    cfg = TrainConfig(**dict(TINY, steps=6))
    full = run_training(cfg, tiny_data, str(tmp_path / "full"), log=None)

    cfg_half = TrainConfig(**dict(TINY, steps=3))
    run_training(cfg_half, tiny_data, str(tmp_path / "half"), log=None)
    # resume from step 3 and run to 6; the half checkpoint carries its
    # config, so retarget the step budget via a fresh save
    state = load_checkpoint(str(tmp_path / "half" / "checkpoint.ckpt"),
                            tiny_data)
    state.cfg = cfg
    save_checkpoint(state, str(tmp_path / "half" / "retarget.ckpt"))
    run_training(cfg, tiny_data, str(tmp_path / "resumed"),
                 resume=str(tmp_path / "half" / "retarget.ckpt"), log=None)

    with open(tmp_path / "full" / "metrics.csv") as f:
        full_rows = list(csv.reader(f))[1:]
    with open(tmp_path / "resumed" / "metrics.csv") as f:
        resumed_rows = list(csv.reader(f))
    assert resumed_rows == full_rows[3:]
    full_ck = (tmp_path / "full" / "checkpoint.ckpt").read_bytes()
    res_ck = (tmp_path / "resumed" / "checkpoint.ckpt").read_bytes()
    assert full_ck == res_ck


def test_checkpoint_restores_model_bitwise(tiny_data, tmp_path):
    cfg = TrainConfig(**TINY)
    state = TrainState(cfg, tiny_data)
    train_step(state)
    path = str(tmp_path / "s.ckpt")
    save_checkpoint(state, path)
    restored = load_checkpoint(path, tiny_data)
    assert restored.step == state.step
    for k, v in state.model.param_arrays().items():
        np.testing.assert_array_equal(restored.model.param_arrays()[k], v)
    for k, v in state.teacher.params.items():
        np.testing.assert_array_equal(restored.teacher.params[k], v)


def test_non_finite_loss_aborts_with_component_name(tiny_data):
    cfg = TrainConfig(**TINY)
    state = TrainState(cfg, tiny_data)
    state.model.scalars.log_t.data = np.asarray(np.inf, dtype=np.float32)
    with pytest.raises(TulipError) as exc:
        train_step(state)
    assert "loss" in str(exc.value)


def test_plain_contrastive_rung_matches_reference_pairwise_loss(tiny_data):
    """Degenerate config: augments off, generated views off, no locals, no
    reconstruction: the image-text component equals an independently
    computed plain pairwise loss on the same embeddings."""
    import math
    from tulip.train import evals
    cfg = TrainConfig(**dict(
        TINY, w_ii=0.0, w_tt=0.0, lambda_r=0.0, geco=False, n_local=0,
        global_scale_min=1.0, global_scale_max=1.0, aug_flip=False,
        aug_jitter=0.0, aug_blur=False, recap_fraction=0.0,
        it_image_source="student"))
    state = TrainState(cfg, tiny_data)
    state.pipeline.policy = state.pipeline.policy.__class__(
        crop=False, flip=False, jitter=False, blur=False)
    row, _ = train_step(state)

    # reference: encode the same two samples directly, no augmentation
    _, batch_idx = state_for_reference = state.batch_for_step(0)
    imgs = np.stack([tiny_data.image_f32(i) for i in batch_idx])
    words = [tiny_data.records[i].words for i in batch_idx]
    # the step above mutated parameters; rebuild a fresh state to compare
    state2 = TrainState(cfg, tiny_data)
    state2.pipeline.policy = state2.pipeline.policy.__class__(
        crop=False, flip=False, jitter=False, blur=False)
    img_emb = evals.encode_images(state2.model, imgs)
    txt_emb = evals.encode_texts(state2.model, words)
    t = state2.model.scalars.t
    b = float(state2.model.scalars.b.data)
    n = len(batch_idx)
    ref = 0.0
    for i in range(n):
        for j in range(n):
            s = float(img_emb[i] @ txt_emb[j])
            z = 1 if i == j else -1
            ref += math.log(1 + math.exp(z * (-t * s + b)))
    ref /= n
    assert row.loss_it == pytest.approx(ref, abs=1e-10)
