"""The gradient verification suite behind the grad-check command.

Four sections, all in float64:
  1. every primitive against central differences on random inputs,
  2. the pairwise sigmoid loss under arbitrary {+1,-1,0} weight matrices,
  3. both reconstruction losses,
  4. the full training objective on a 2-sample batch (sampled coordinates
     across every parameter tensor).
"""

import numpy as np

from ..core import ops
from ..core.gradcheck import finite_difference_check, finite_difference_spot_check
from ..core.tape import Tensor
from ..losses import LossScalars, PairWeightMatrix, siglip_pairwise_loss
from ..scenes import SceneDataset, caption, render, sample_scene
from ..util import rng_from
from .config import TrainConfig
from .loop import TrainState, train_step


def check_primitives(n_inputs=100, step=1e-5, tol=1e-5, seed=0):
    """Max relative FD error per primitive over n_inputs random draws."""
    rng = np.random.default_rng(seed)

    def w(shape):
        return Tensor(rng.standard_normal(shape))

    cases = {
        "matmul": lambda: ( (lambda a, b: ops.tsum(ops.mul(ops.matmul(a, b), w((2, 2))))),
                            [rng.standard_normal((2, 3)), rng.standard_normal((3, 2))]),
        "add": lambda: ((lambda a, b: ops.tsum(ops.mul(ops.add(a, b), w((2, 3))))),
                        [rng.standard_normal((2, 3)), rng.standard_normal(3)]),
        "sub": lambda: ((lambda a, b: ops.tsum(ops.mul(ops.sub(a, b), w((2, 3))))),
                        [rng.standard_normal((2, 3)), rng.standard_normal(3)]),
        "mul": lambda: ((lambda a, b: ops.tsum(ops.mul(ops.mul(a, b), w((2, 3))))),
                        [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))]),
        "smul": lambda: ((lambda a: ops.tsum(ops.mul(ops.smul(a, -1.7), w(4)))),
                         [rng.standard_normal(4)]),
        "exp": lambda: ((lambda a: ops.tsum(ops.mul(ops.exp(a), w(4)))),
                        [rng.standard_normal(4)]),
        "log": lambda: ((lambda a: ops.tsum(ops.mul(ops.log(a), w(4)))),
                        [rng.random(4) + 0.5]),
        "sigmoid": lambda: ((lambda a: ops.tsum(ops.mul(ops.sigmoid(a), w(4)))),
                            [rng.standard_normal(4)]),
        "gelu": lambda: ((lambda a: ops.tsum(ops.mul(ops.gelu(a), w(4)))),
                         [rng.standard_normal(4)]),
        "softmax": lambda: ((lambda a: ops.tsum(ops.mul(ops.softmax(a, 1), w((2, 4))))),
                            [rng.standard_normal((2, 4))]),
        "layernorm": lambda: ((lambda a: ops.tsum(ops.mul(ops.layernorm(a), w((2, 4))))),
                              [rng.standard_normal((2, 4))]),
        "sum": lambda: ((lambda a: ops.tsum(ops.mul(ops.tsum(a, axis=0), w(3)))),
                        [rng.standard_normal((2, 3))]),
        "mean": lambda: ((lambda a: ops.tsum(ops.mul(ops.tmean(a, axis=1), w(2)))),
                         [rng.standard_normal((2, 3))]),
        "reshape": lambda: ((lambda a: ops.tsum(ops.mul(ops.reshape(a, (6,)), w(6)))),
                            [rng.standard_normal((2, 3))]),
        "transpose": lambda: ((lambda a: ops.tsum(ops.mul(ops.transpose(a, (1, 0)), w((3, 2))))),
                              [rng.standard_normal((2, 3))]),
        "concat": lambda: ((lambda a, b: ops.tsum(ops.mul(ops.concat([a, b], 0), w((3, 2))))),
                           [rng.standard_normal((2, 2)), rng.standard_normal((1, 2))]),
        "gather_rows": lambda: ((lambda a: ops.tsum(ops.mul(
            ops.gather_rows(a, np.array([0, 2, 0])), w((3, 2))))),
            [rng.standard_normal((3, 2))]),
        "masked_fill": lambda: ((lambda a, m=rng.random((3, 3)) < 0.4:
                                 ops.tsum(ops.mul(ops.masked_fill(a, m, 0.3), w((3, 3))))),
                                [rng.standard_normal((3, 3))]),
    }
    results = {}
    for name, case in cases.items():
        worst = 0.0
        for _ in range(n_inputs):
            f, inputs = case()
            report = finite_difference_check(f, inputs, step=step, tolerance=tol)
            worst = max(worst, report.max_rel_err)
        results[name] = worst
    return results


def check_pairwise_loss(n_matrices=20, b=4, d=6, step=1e-5, tol=1e-5, seed=1):
    """FD on the loss wrt raw X, Y, log-temperature and bias, for random
    sign matrices including fully masked rows/columns."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_matrices):
        z = PairWeightMatrix(rng.integers(-1, 2, size=(b, b)))

        def f(xr, yr, lt, bb):
            sc = LossScalars(log_t=lt, b=bb)
            return siglip_pairwise_loss(ops.l2_normalize(xr),
                                        ops.l2_normalize(yr), sc, z)

        report = finite_difference_check(
            f, [rng.standard_normal((b, d)), rng.standard_normal((b, d)),
                np.array(np.log(rng.uniform(1, 8))), np.array(rng.uniform(-8, 0))],
            step=step, tolerance=tol)
        worst = max(worst, report.max_rel_err)
    return worst


def _tiny_config(**overrides):
    base = dict(
        seed=5, batch_size=2, steps=4, lr=1e-3, warmup_steps=0,
        n_global=2, n_local=2, global_size=16, local_size=8,
        vision_patch=4, vision_width=8, vision_depth=1, vision_heads=2,
        embed_dim=8, text_context=18, text_width=8, text_depth=1,
        text_heads=2, maskdec_width=8, maskdec_depth=1, maskdec_heads=2,
        textdec_width=8, textdec_depth=1, textdec_heads=2,
        mask_ratio=0.5, geco=True, precision="float64")
    base.update(overrides)
    return TrainConfig(**base)


def check_reconstruction_losses(step=1e-5, tol=1e-5):
    """FD of both reconstruction losses wrt the bottleneck embedding and a
    sampled subset of decoder parameters."""
    from ..models import (CausalTextDecoder, MaskedDecoderConfig,
                          MaskedPatchDecoder, TextDecoderConfig)
    cfg = _tiny_config()
    rng = np.random.default_rng(3)
    imgs = rng.random((2, 16, 16, 3))
    feats = rng.standard_normal((2, 16, cfg.vision_width))
    maskdec = MaskedPatchDecoder(
        MaskedDecoderConfig(mask_ratio=0.5, width=8, depth=1, heads=2),
        n_patches=16, enc_width=cfg.vision_width, embed_dim=8,
        patch_dim=4 * 4 * 3, seed=2, dtype=np.float64)
    emb0 = rng.standard_normal((2, 8))
    emb0 /= np.linalg.norm(emb0, axis=1, keepdims=True)

    def f_img(emb, head_w):
        maskdec.p["head.w"] = head_w
        _, loss = maskdec.forward(Tensor(feats), emb, imgs, mask_seed=11)
        return loss

    r1 = finite_difference_check(
        f_img, [emb0, np.asarray(maskdec.p["head.w"].data)],
        step=step, tolerance=tol)

    textdec = CausalTextDecoder(
        TextDecoderConfig(width=8, depth=1, heads=2), vocab_size=13,
        context_length=10, embed_dim=8, seed=2, dtype=np.float64)
    textdec.p["head.w"] = Tensor(rng.standard_normal((8, 13)) * 0.3,
                                 requires_grad=True)
    ids = np.array([[4, 6, 2, 0], [5, 5, 2, 0]])

    def f_txt(emb, head_w):
        textdec.p["head.w"] = head_w
        _, loss = textdec.forward(emb, ids, pad_id=0)
        return loss

    r2 = finite_difference_check(
        f_txt, [emb0, np.asarray(textdec.p["head.w"].data)],
        step=step, tolerance=tol)
    return {"image_recons": r1.max_rel_err, "text_recons": r2.max_rel_err}


def check_full_objective(step=1e-3, tol=1e-5, coords_per_tensor=4):
    """FD of the total objective on a 2-sample batch across every
    parameter tensor (sampled coordinates)."""
    cfg = _tiny_config()
    dataset = _TinyDataset(cfg)
    state = TrainState(cfg, dataset)
    params = state.params
    names = sorted(params)

    from ..core.tape import Tape
    from ..losses import reconstruction_total, tulip_total
    from ..views import assemble_contrastive_batch
    from ..scenes import VOCAB

    originals = {n: params[n] for n in names}

    def objective(*tensors):
        for name, t in zip(names, tensors):
            state.model.set_param(name, t)
        # teacher snapshot stays fixed: it is a constant at gradient time
        epoch, batch_idx = state.batch_for_step(0)
        images = [dataset.image_f32(i) for i in batch_idx]
        words = [state.words_for(int(i), epoch) for i in batch_idx]
        view_sets = state.pipeline.build_batch(
            images, words, [int(i) for i in batch_idx], epoch, 0)
        batch = assemble_contrastive_batch(view_sets, state.model,
                                           state.teacher_enc, cfg)
        l_it = siglip_pairwise_loss(batch.it_term.x, batch.it_term.y,
                                    state.model.scalars, batch.it_term.z)
        l_ii = l_tt = None
        for term in batch.ii_terms:
            t = siglip_pairwise_loss(term.x, term.y, state.model.scalars, term.z)
            l_ii = t if l_ii is None else ops.add(l_ii, t)
        for term in batch.tt_terms:
            t = siglip_pairwise_loss(term.x, term.y, state.model.scalars, term.z)
            l_tt = t if l_tt is None else ops.add(l_tt, t)
        _, l_img = state.model.maskdec.forward(
            batch.patch_feats, batch.img_emb, batch.g0_pixels, mask_seed=21)
        _, l_txt = state.model.textdec.forward(
            batch.img_emb, batch.token_targets, VOCAB.pad_id)
        l_cont = ops.add(ops.add(l_it, l_ii), l_tt)
        l_rec = reconstruction_total(l_img, l_txt, cfg.lambda_i, cfg.lambda_t)
        return tulip_total(l_cont, l_rec, cfg.lambda_c, cfg.lambda_r)

    arrays = [np.array(params[n].data, dtype=np.float64) for n in names]
    report = finite_difference_spot_check(
        objective, arrays, step=step, tolerance=tol,
        coords_per_input=coords_per_tensor, seed=7)
    for name in names:
        state.model.set_param(name, originals[name])
    return report.max_rel_err


class _TinyDataset:
    """Two rendered scenes, enough to drive a full training step."""

    def __init__(self, cfg):
        from ..scenes.data import Record
        self.size = 32
        scenes = [sample_scene((cfg.seed, "tiny", i)) for i in range(4)]
        self.records = [
            Record(path="", words=caption(s, (cfg.seed, i)), scene=s,
                   split="train")
            for i, s in enumerate(scenes)]
        self.images = np.stack([
            (render(s, self.size, (cfg.seed, "r", i)) * 255).astype(np.uint8)
            for i, s in enumerate(scenes)])

    def indices(self, split):
        return np.arange(len(self.records)) if split == "train" \
            else np.arange(0)

    def image_f32(self, idx):
        return self.images[idx].astype(np.float32) / np.float32(255.0)


def run_grad_check(n_per_primitive=100, log=print):
    """Full verification; returns (worst_error, sections dict)."""
    sections = {}
    prim = check_primitives(n_inputs=n_per_primitive)
    sections["primitives"] = prim
    for name, err in sorted(prim.items()):
        log(f"  primitive {name:<12} max_rel_err={err:.3e}")
    loss_err = check_pairwise_loss()
    sections["pairwise_loss"] = loss_err
    log(f"  pairwise loss (arbitrary sign matrices) max_rel_err={loss_err:.3e}")
    rec = check_reconstruction_losses()
    sections["reconstruction"] = rec
    log(f"  image reconstruction loss max_rel_err={rec['image_recons']:.3e}")
    log(f"  text reconstruction loss  max_rel_err={rec['text_recons']:.3e}")
    full = check_full_objective()
    sections["full_objective"] = full
    log(f"  full objective (2-sample batch) max_rel_err={full:.3e}")
    worst = max(max(prim.values()), loss_err, rec["image_recons"],
                rec["text_recons"], full)
    return worst, sections
