"""Embedding routing: view sets -> loss inputs and pair-weight matrices.

Routing rules (the hand-derivable contract the tests enumerate):

- The teacher embeds global-resolution views only: the per-sample column
  embedding is the renormalized mean of its teacher-embedded global
  views, and (when generated negatives exist) the teacher also embeds the
  negative image for the image-text rows. No gradient touches it.
- Image-text pairs the per-sample image embedding (teacher by default,
  student in the plain-contrastive ablation) against student text
  embeddings, expanded with (negative image, negative caption) entries
  for samples that have both, under the cross-modal XOR sign rule.
- Image-image is a sum of square per-slot terms: every student image view
  slot (each global, each local, the generated negative) scores against
  the per-sample teacher columns under the same-modality sign rule, with
  the negative slot's diagonal flipped to -1.
- Text-text pairs student original-caption embeddings against each
  augmented text slot (paraphrase slot, negative-caption slot) with tied
  weights and no teacher.

Image-image and text-text run through their projection heads; image-text
uses the raw embeddings. Teacher-side columns are projected with the
current head weights outside the tape (stop-gradient).
"""

from dataclasses import dataclass, field

import numpy as np

from ..core import ops
from ..core.tape import Tensor
from ..errors import TulipError
from ..losses import BatchProvenance, build_pair_weights_cross_modal, \
    build_pair_weights_same_modality
from ..scenes import VOCAB


@dataclass
class LossTerm:
    name: str
    x: Tensor
    y: Tensor
    z: object  # PairWeightMatrix


@dataclass
class AssembledBatch:
    it_term: LossTerm
    ii_terms: list
    tt_terms: list
    img_emb: Tensor          # student embedding of each sample's first global
    txt_emb: Tensor          # student embedding of each original caption
    patch_feats: Tensor      # (B, L, width) features of the first global
    g0_pixels: np.ndarray    # (B, S, S, 3) pixels behind patch_feats
    token_targets: np.ndarray  # (B, ctx-1) decoder targets
    audit: dict = field(default_factory=dict)


def _slice_rows(t, start, stop):
    return ops.gather_rows(t, np.arange(start, stop))


def _slice_mid(t, start, stop):
    """Rows of a (N, L, D) tensor."""
    n, l, d = t.shape
    flat = ops.reshape(t, (n, l * d))
    return ops.reshape(_slice_rows(flat, start, stop), (stop - start, l, d))


def proj_head(params, name, x):
    """Linear head + renormalization (student side, differentiable)."""
    out = ops.add(ops.matmul(x, params[f"{name}.w"]), params[f"{name}.b"])
    return ops.l2_normalize(out)


def proj_head_np(params, name, x):
    """Same head applied outside the tape (teacher side, stop-gradient)."""
    out = x @ params[f"{name}.w"].data + params[f"{name}.b"].data
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def _teacher_forward(teacher_enc, arr, global_size):
    if arr.shape[1] != global_size:
        raise TulipError(
            f"teacher got a {arr.shape[1]}px view; it only sees "
            f"{global_size}px global views")
    emb, _ = teacher_enc.forward(Tensor(arr))
    return np.asarray(emb.data)


def assemble_contrastive_batch(view_sets, model, teacher_enc, cfg):
    """Embed every view and build the loss inputs. See module docstring."""
    if not view_sets:
        raise TulipError("empty batch")
    b = len(view_sets)
    n_global = len(view_sets[0].global_views)
    n_local = len(view_sets[0].local_views)
    sources = np.array([vs.source for vs in view_sets])
    dtype = model.vision.dtype

    neg_img_rows = [i for i, vs in enumerate(view_sets)
                    if vs.negative_image is not None]
    neg_txt_rows = [i for i, vs in enumerate(view_sets)
                    if "neg" in vs.text_views]
    it_rows = [i for i in neg_img_rows if i in set(neg_txt_rows)]

    # ---- student image forwards, one batched pass per resolution
    global_stack = [vs.global_views[k] for k in range(n_global)
                    for vs in view_sets]
    global_stack += [view_sets[i].negative_image for i in neg_img_rows]
    gstack = np.ascontiguousarray(np.stack(global_stack), dtype=dtype)
    emb_g, feats_g = model.vision.forward(Tensor(gstack))

    slot_embs = {f"global{k}": _slice_rows(emb_g, k * b, (k + 1) * b)
                 for k in range(n_global)}
    if neg_img_rows:
        slot_embs["neg"] = _slice_rows(emb_g, n_global * b,
                                       n_global * b + len(neg_img_rows))
    if n_local:
        lstack = np.ascontiguousarray(np.stack(
            [vs.local_views[k] for k in range(n_local) for vs in view_sets]),
            dtype=dtype)
        emb_l, _ = model.vision.forward(Tensor(lstack))
        for k in range(n_local):
            slot_embs[f"local{k}"] = _slice_rows(emb_l, k * b, (k + 1) * b)

    patch_feats = _slice_mid(feats_g, 0, b)
    g0_pixels = gstack[:b]

    # ---- student text forwards, one batched pass
    ctx = model.text.cfg.context_length
    orig_ids = np.stack([VOCAB.encode(vs.text_views["orig"], ctx)
                         for vs in view_sets])
    aug_ids = np.stack([VOCAB.encode(vs.text_views["aug"], ctx)
                        for vs in view_sets])
    txt_stack = [orig_ids, aug_ids]
    if neg_txt_rows:
        txt_stack.append(np.stack([
            VOCAB.encode(view_sets[i].text_views["neg"], ctx)
            for i in neg_txt_rows]))
    emb_t = model.text.forward(np.concatenate(txt_stack, axis=0))
    txt_emb = _slice_rows(emb_t, 0, b)
    aug_emb = _slice_rows(emb_t, b, 2 * b)
    neg_txt_emb = (_slice_rows(emb_t, 2 * b, 2 * b + len(neg_txt_rows))
                   if neg_txt_rows else None)

    # ---- teacher embeddings (global views only, no gradients)
    t_glob = _teacher_forward(teacher_enc, gstack[:n_global * b], cfg.global_size)
    t_mean = t_glob.reshape(n_global, b, -1).mean(axis=0)
    t_mean /= np.linalg.norm(t_mean, axis=1, keepdims=True)
    t_neg = None
    if neg_img_rows:
        t_neg = _teacher_forward(teacher_enc, gstack[n_global * b:],
                                 cfg.global_size)

    # ---- image-text term (expanded with paired negatives)
    it_img_sources = sources.tolist()
    it_txt_sources = sources.tolist()
    it_img_neg = [False] * b
    it_txt_neg = [False] * b
    if cfg.it_image_source == "student":
        x_parts = [slot_embs["global0"]]
    else:
        x_parts = [Tensor(t_mean.astype(dtype))]
    y_parts = [txt_emb]
    if it_rows:
        order_img = {i: k for k, i in enumerate(neg_img_rows)}
        order_txt = {i: k for k, i in enumerate(neg_txt_rows)}
        img_sel = [order_img[i] for i in it_rows]
        txt_sel = [order_txt[i] for i in it_rows]
        if cfg.it_image_source == "student":
            x_parts.append(ops.gather_rows(slot_embs["neg"], np.array(img_sel)))
        else:
            x_parts.append(Tensor(t_neg[img_sel].astype(dtype)))
        y_parts.append(ops.gather_rows(neg_txt_emb, np.array(txt_sel)))
        it_img_sources += sources[it_rows].tolist()
        it_txt_sources += sources[it_rows].tolist()
        it_img_neg += [True] * len(it_rows)
        it_txt_neg += [True] * len(it_rows)
    it_x = ops.concat(x_parts, axis=0) if len(x_parts) > 1 else x_parts[0]
    it_y = ops.concat(y_parts, axis=0) if len(y_parts) > 1 else y_parts[0]
    it_z = build_pair_weights_cross_modal(
        BatchProvenance("image", it_img_neg, it_img_sources),
        BatchProvenance("text", it_txt_neg, it_txt_sources),
        cross_sample_negatives=cfg.cross_sample_negatives)
    it_term = LossTerm("it", it_x, it_y, it_z)

    # ---- image-image terms, one square term per student view slot
    t_cols = Tensor(proj_head_np(model.heads, "ii_head", t_mean).astype(dtype))
    orig_prov = BatchProvenance("image", [False] * b, sources)
    ii_terms = []
    for name in ([f"global{k}" for k in range(n_global)]
                 + [f"local{k}" for k in range(n_local)]):
        y = proj_head(model.heads, "ii_head", slot_embs[name])
        z = build_pair_weights_same_modality(
            orig_prov, BatchProvenance("image", [False] * b, sources))
        ii_terms.append(LossTerm(f"ii.{name}", t_cols, y, z))
    if neg_img_rows:
        sub_sources = sources[neg_img_rows]
        x_sub = Tensor(proj_head_np(model.heads, "ii_head",
                                    t_mean[neg_img_rows]).astype(dtype))
        y = proj_head(model.heads, "ii_head", slot_embs["neg"])
        z = build_pair_weights_same_modality(
            BatchProvenance("image", [False] * len(neg_img_rows), sub_sources),
            BatchProvenance("image", [True] * len(neg_img_rows), sub_sources))
        ii_terms.append(LossTerm("ii.neg", x_sub, y, z))

    # ---- text-text terms (tied weights, no teacher)
    tt_x = proj_head(model.heads, "tt_head", txt_emb)
    tt_terms = [LossTerm(
        "tt.aug", tt_x, proj_head(model.heads, "tt_head", aug_emb),
        build_pair_weights_same_modality(
            BatchProvenance("text", [False] * b, sources),
            BatchProvenance("text", [False] * b, sources)))]
    if neg_txt_rows:
        sub_sources = sources[neg_txt_rows]
        x_sub = ops.gather_rows(tt_x, np.array(neg_txt_rows))
        y = proj_head(model.heads, "tt_head", neg_txt_emb)
        z = build_pair_weights_same_modality(
            BatchProvenance("text", [False] * len(neg_txt_rows), sub_sources),
            BatchProvenance("text", [True] * len(neg_txt_rows), sub_sources))
        tt_terms.append(LossTerm("tt.neg", x_sub, y, z))

    audit = {
        "neg_image_samples": [int(sources[i]) for i in neg_img_rows],
        "neg_text_samples": [int(sources[i]) for i in neg_txt_rows],
        "edits": {int(vs.source): vs.geco_edits for vs in view_sets
                  if vs.geco_edits},
        "slots": sorted(slot_embs),
    }
    return AssembledBatch(
        it_term=it_term, ii_terms=ii_terms, tt_terms=tt_terms,
        img_emb=slot_embs["global0"], txt_emb=txt_emb,
        patch_feats=patch_feats, g0_pixels=g0_pixels,
        token_targets=orig_ids[:, 1:], audit=audit)
