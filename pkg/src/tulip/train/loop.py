"""Single-pass multi-loss optimization loop with per-step metrics.

One step computes the three contrastive terms and both reconstruction
losses in a single backward pass. The reconstruction bottleneck alternates
by step parity: even steps feed both decoders the image embedding, odd
steps the text embedding. After the optimizer update the EMA teacher
absorbs the student vision encoder.

All data-pipeline randomness derives from hash(seed, purpose, ids), so a
resumed run regenerates the exact same batches; the only stateful RNG
(mask selection) is captured in the checkpoint.
"""

import csv
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from ..core import ops
from ..core.tape import Tape, Tensor
from ..errors import TulipError
from ..losses import blockwise_siglip_loss, reconstruction_total, \
    siglip_pairwise_loss, tulip_total
from ..scenes import VOCAB, SceneDataset, caption
from ..util import rng_from, stable_seed
from ..views import SyntheticSceneProvider, ViewPipeline, \
    assemble_contrastive_batch, bind_teacher, ema_momentum, ema_update
from ..views.teacher import TeacherState
from .checkpoint import load_archive, save_archive
from .config import TrainConfig, parse_config_text
from .model import TulipModel, decay_excluded
from .optim import AdamW, clip_global_norm, warmup_lr

METRICS_HEADER = ["step", "loss_it", "loss_ii", "loss_tt", "loss_img",
                  "loss_txt", "loss_total", "t", "b", "grad_norm"]
TIMING_HEADER = ["step", "wall_clock"]


@dataclass
class MetricsRow:
    step: int
    loss_it: float
    loss_ii: float
    loss_tt: float
    loss_img: float
    loss_txt: float
    loss_total: float
    t: float
    b: float
    grad_norm: float
    wall_clock: float

    def as_list(self):
        """Deterministic CSV fields; wall_clock is logged separately."""
        return [self.step,
                f"{self.loss_it:.10g}", f"{self.loss_ii:.10g}",
                f"{self.loss_tt:.10g}", f"{self.loss_img:.10g}",
                f"{self.loss_txt:.10g}", f"{self.loss_total:.10g}",
                f"{self.t:.10g}", f"{self.b:.10g}",
                f"{self.grad_norm:.10g}"]


class TrainState:
    def __init__(self, cfg, dataset):
        self.cfg = cfg
        self.dataset = dataset
        self.model = TulipModel(cfg)
        self.params = self.model.named_params()
        self.names_by_tensor = {id(t): k for k, t in self.params.items()}
        self.opt = AdamW(self.params, lr=cfg.lr,
                         weight_decay=cfg.weight_decay,
                         excluded=decay_excluded)
        vision_params = self.model.vision.named_params("vision")
        self.teacher = TeacherState.from_student(vision_params)
        from ..models import VisionEncoder
        self.teacher_enc = VisionEncoder(self.model.vision.cfg, seed=cfg.seed,
                                         dtype=cfg.dtype)
        bind_teacher(self.teacher_enc, self.teacher)
        provider = SyntheticSceneProvider(dataset.size) if cfg.geco else None
        self.pipeline = ViewPipeline(cfg, provider)
        self.rng = np.random.default_rng(stable_seed(cfg.seed, "train-rng"))
        self.step = 0
        self.train_idx = dataset.indices("train")
        if self.train_idx.size == 0:
            raise TulipError("dataset has no train split")

    # ---- batching ------------------------------------------------------

    def steps_per_epoch(self):
        return max(1, self.train_idx.size // self.cfg.batch_size)

    def batch_for_step(self, step):
        spe = self.steps_per_epoch()
        epoch = step // spe
        perm = rng_from(self.cfg.seed, "order", epoch).permutation(
            self.train_idx.size)
        start = (step % spe) * self.cfg.batch_size
        sel = perm[(start + np.arange(self.cfg.batch_size))
                   % self.train_idx.size]
        return epoch, self.train_idx[sel]

    def words_for(self, rec_idx, epoch):
        """Caption with re-templated replacement at recap_fraction."""
        rec = self.dataset.records[rec_idx]
        cfg = self.cfg
        if cfg.recap_fraction > 0 and rng_from(
                cfg.seed, "recap", rec_idx, epoch).random() < cfg.recap_fraction:
            return caption(rec.scene, (cfg.seed, "recap-t", rec_idx, epoch))
        return rec.words


def _loss(term, scalars, chunk):
    if chunk:
        return blockwise_siglip_loss(term.x, term.y, scalars, term.z,
                                     min(chunk, term.x.shape[0]))
    return siglip_pairwise_loss(term.x, term.y, scalars, term.z)


def _sum_terms(terms, scalars, chunk, dtype):
    """Mean over the per-slot pairwise losses: keeps the term at the scale
    of a single loss regardless of how many view slots a config emits."""
    if not terms:
        return Tensor(np.asarray(0.0, dtype=dtype))
    total = _loss(terms[0], scalars, chunk)
    for term in terms[1:]:
        total = ops.add(total, _loss(term, scalars, chunk))
    return ops.smul(total, 1.0 / len(terms))


def train_step(state):
    """One optimization step; returns (MetricsRow, audit dict)."""
    cfg = state.cfg
    model = state.model
    step = state.step
    t0 = time.perf_counter()
    epoch, batch_idx = state.batch_for_step(step)

    images = [state.dataset.image_f32(i) for i in batch_idx]
    words = [state.words_for(int(i), epoch) for i in batch_idx]
    view_sets = state.pipeline.build_batch(
        images, words, [int(i) for i in batch_idx], epoch, step)

    mask_seed = int(state.rng.integers(2 ** 62))
    dtype = cfg.dtype
    zero = np.asarray(0.0, dtype=dtype)

    with Tape() as tape:
        batch = assemble_contrastive_batch(view_sets, model,
                                           state.teacher_enc, cfg)
        l_it = (_loss(batch.it_term, model.scalars, cfg.chunk)
                if cfg.w_it > 0 else Tensor(zero))
        l_ii = (_sum_terms(batch.ii_terms, model.scalars, cfg.chunk, dtype)
                if cfg.w_ii > 0 else Tensor(zero))
        l_tt = (_sum_terms(batch.tt_terms, model.scalars, cfg.chunk, dtype)
                if cfg.w_tt > 0 else Tensor(zero))
        l_cont = ops.add(ops.add(ops.smul(l_it, cfg.w_it),
                                 ops.smul(l_ii, cfg.w_ii)),
                         ops.smul(l_tt, cfg.w_tt))
        if cfg.lambda_r > 0:
            bottleneck = batch.img_emb if step % 2 == 0 else batch.txt_emb
            _, l_img = model.maskdec.forward(batch.patch_feats, bottleneck,
                                             batch.g0_pixels, mask_seed)
            _, l_txt = model.textdec.forward(bottleneck, batch.token_targets,
                                             VOCAB.pad_id)
        else:
            l_img = Tensor(zero)
            l_txt = Tensor(zero)
        l_rec = reconstruction_total(l_img, l_txt, cfg.lambda_i, cfg.lambda_t)
        total = tulip_total(l_cont, l_rec, cfg.lambda_c, cfg.lambda_r)

    comps = {"loss_it": l_it, "loss_ii": l_ii, "loss_tt": l_tt,
             "loss_img": l_img, "loss_txt": l_txt, "loss_total": total}
    for name, tensor in comps.items():
        if not np.isfinite(tensor.data).all():
            raise TulipError(f"non-finite {name} at step {step}")

    grads_by_tensor = tape.backward(total)
    grads = {}
    for tensor, g in grads_by_tensor.items():
        name = state.names_by_tensor.get(id(tensor))
        if name is not None:
            grads[name] = g
    grads, pre_norm = clip_global_norm(grads, cfg.grad_clip_norm)

    lr_now = warmup_lr(cfg.lr, step, cfg.warmup_steps)
    state.opt.step(grads, lr=lr_now)

    m = ema_momentum(step, cfg.steps, cfg.ema_schedule,
                     cfg.ema_m_start, cfg.ema_m_end, cfg.ema_m_const)
    state.teacher = ema_update(state.teacher,
                               model.vision.named_params("vision"), m)
    bind_teacher(state.teacher_enc, state.teacher)

    state.step = step + 1
    row = MetricsRow(
        step=step,
        loss_it=float(l_it.data), loss_ii=float(l_ii.data),
        loss_tt=float(l_tt.data), loss_img=float(l_img.data),
        loss_txt=float(l_txt.data), loss_total=float(total.data),
        t=model.scalars.t, b=float(model.scalars.b.data),
        grad_norm=pre_norm, wall_clock=time.perf_counter() - t0)
    return row, batch.audit


# ---------------------------------------------------------------------------
# checkpointing of full training state
# ---------------------------------------------------------------------------

def save_checkpoint(state, path):
    tensors = dict(state.model.param_arrays())
    tensors.update({f"teacher.{k}": v for k, v in state.teacher.params.items()})
    tensors.update(state.opt.state_arrays())
    tensors["meta.step"] = np.asarray(state.step, dtype=np.int64)
    rng_state = json.dumps(state.rng.bit_generator.state).encode()
    tensors["meta.rng"] = np.frombuffer(rng_state, dtype=np.uint8).copy()
    cfg_text = state.cfg.to_text().encode()
    tensors["meta.config"] = np.frombuffer(cfg_text, dtype=np.uint8).copy()
    save_archive(path, tensors)


def load_checkpoint(path, dataset=None):
    """Rebuild a TrainState (or a model-only state when dataset is None)."""
    arrays = load_archive(path)
    cfg = parse_config_text(bytes(arrays["meta.config"]).decode())
    if dataset is None:
        dataset = _EmptyDataset(cfg.global_size)
    state = TrainState(cfg, dataset)
    model_arrays = {k: v for k, v in arrays.items()
                    if not k.startswith(("teacher.", "opt.", "meta."))}
    state.model.load_arrays(model_arrays)
    state.teacher = TeacherState(params={
        k[len("teacher."):]: np.ascontiguousarray(v)
        for k, v in arrays.items() if k.startswith("teacher.")})
    bind_teacher(state.teacher_enc, state.teacher)
    state.step = int(arrays["meta.step"])
    state.opt.load_state_arrays(arrays, state.step)
    state.rng.bit_generator.state = json.loads(bytes(arrays["meta.rng"]).decode())
    return state


class _EmptyDataset:
    """Placeholder when a checkpoint is loaded for evaluation only."""

    def __init__(self, size):
        self.size = size
        self.records = []
        self.images = np.zeros((0, size, size, 3), dtype=np.uint8)

    def indices(self, split):
        return np.arange(1) if split == "train" else np.arange(0)

    def image_f32(self, idx):
        raise TulipError("evaluation-only checkpoint state has no data")


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

def run_training(cfg, dataset, out_dir, resume=None, log=print):
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    timing_path = os.path.join(out_dir, "timings.csv")
    if resume:
        state = load_checkpoint(resume, dataset)
        mode = "a"
    else:
        state = TrainState(cfg, dataset)
        mode = "w"
    with open(metrics_path, mode, newline="") as f, \
            open(timing_path, mode, newline="") as tf:
        writer = csv.writer(f)
        twriter = csv.writer(tf)
        if mode == "w":
            writer.writerow(METRICS_HEADER)
            twriter.writerow(TIMING_HEADER)
        while state.step < cfg.steps:
            row, _audit = train_step(state)
            writer.writerow(row.as_list())
            twriter.writerow([row.step, f"{row.wall_clock:.6f}"])
            if cfg.checkpoint_every and (row.step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(state, os.path.join(out_dir, "checkpoint.ckpt"))
            if log and (row.step % 100 == 0 or row.step == cfg.steps - 1):
                log(f"step {row.step}: total={row.loss_total:.4f} "
                    f"it={row.loss_it:.4f} ii={row.loss_ii:.4f} "
                    f"tt={row.loss_tt:.4f} img={row.loss_img:.4f} "
                    f"txt={row.loss_txt:.4f}")
    save_checkpoint(state, os.path.join(out_dir, "checkpoint.ckpt"))
    return state
