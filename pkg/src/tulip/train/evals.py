"""Evaluation suites: retrieval, zero-shot, group matching, linear probe."""

import itertools

import numpy as np
from scipy.optimize import minimize

from ..core.tape import Tensor
from ..errors import EvalError
from ..scenes import VOCAB, caption, random_edit, render, semantic_edit
from ..scenes.grammar import CELLS, COLORS, COUNTS, SHADES, SHAPES, make_single
from ..util import rng_from


def encode_images(model, images, batch=256):
    """images: (N, S, S, 3) float32 -> (N, E) unit-norm array, no gradients."""
    out = []
    for i in range(0, len(images), batch):
        chunk = np.ascontiguousarray(images[i:i + batch], dtype=model.vision.dtype)
        emb, _ = model.vision.forward(Tensor(chunk))
        out.append(np.asarray(emb.data))
    return np.concatenate(out, axis=0)


def encode_texts(model, word_lists, batch=256):
    ctx = model.text.cfg.context_length
    ids = np.stack([VOCAB.encode(w, ctx) for w in word_lists])
    out = []
    for i in range(0, len(ids), batch):
        out.append(np.asarray(model.text.forward(ids[i:i + batch]).data))
    return np.concatenate(out, axis=0)


def similarity(img_emb, txt_emb, scalars):
    """t * x.y - b, the trained pairwise logit."""
    return scalars.t * (img_emb @ txt_emb.T) - float(scalars.b.data)


def _rank_of_true(scores, true_idx):
    """Rank (0-based) of the true candidate; ties break toward lower index."""
    s_true = scores[true_idx]
    better = int((scores > s_true).sum())
    tied_lower = int(((scores == s_true) & (np.arange(scores.size) < true_idx)).sum())
    return better + tied_lower


def evaluate_retrieval(model, dataset, split="test", ks=(1, 5)):
    """Text->image and image->text recall@k over a held-out split."""
    idx = dataset.indices(split)
    if idx.size == 0:
        raise EvalError(f"empty split {split!r}")
    images = np.stack([dataset.image_f32(i) for i in idx])
    words = [dataset.records[i].words for i in idx]
    img_emb = encode_images(model, images)
    txt_emb = encode_texts(model, words)
    sims = similarity(img_emb, txt_emb, model.scalars)
    n = idx.size
    out = {}
    t2i_ranks = np.array([_rank_of_true(sims[:, j], j) for j in range(n)])
    i2t_ranks = np.array([_rank_of_true(sims[i, :], i) for i in range(n)])
    for k in ks:
        out[f"text_to_image_r{k}"] = float((t2i_ranks < k).mean())
        out[f"image_to_text_r{k}"] = float((i2t_ranks < k).mean())
    out["n_queries"] = int(n)
    return out


def zero_shot_classes():
    """Attribute bundles: one class per (shape, color)."""
    return list(itertools.product(SHAPES, COLORS))


def class_prompts(shape, color, max_prompts=32):
    """Template captions covering the class across counts/cells/shades."""
    prompts = []
    for count in COUNTS:
        for cell in CELLS:
            for shade in SHADES:
                scene = make_single(shape, color, count, cell, shade)
                prompts.append(caption(scene, (shape, color, count, cell, shade)))
    return prompts[:max_prompts]


def evaluate_zero_shot(model, dataset, split="test"):
    """Classify single-group images by nearest class-prompt embedding."""
    classes = zero_shot_classes()
    idx = [i for i in dataset.indices(split)
           if dataset.records[i].scene.relation is None]
    if not idx:
        raise EvalError("no single-group samples in the split")
    labels = np.array([classes.index(
        (dataset.records[i].scene.groups[0].shape,
         dataset.records[i].scene.groups[0].color)) for i in idx])
    images = np.stack([dataset.image_f32(i) for i in idx])
    img_emb = encode_images(model, images)
    class_embs = []
    for shape, color in classes:
        prompts = class_prompts(shape, color)
        if not prompts:
            raise EvalError(f"class {(shape, color)} has no prompts")
        emb = encode_texts(model, prompts).mean(axis=0)
        class_embs.append(emb / np.linalg.norm(emb))
    sims = similarity(img_emb, np.stack(class_embs), model.scalars)
    pred = sims.argmax(axis=1)
    return {"accuracy": float((pred == labels).mean()),
            "n_classes": len(classes), "n_samples": len(idx)}


def build_group_quadruples(scenes, seed, render_size):
    """(image0, image1, caption0, caption1) built from each scene and a
    single-field edit of it."""
    quads = []
    for k, scene in enumerate(scenes):
        op = random_edit(scene, rng_from(seed, "group-edit", k))
        edited = semantic_edit(scene, op)
        quads.append((
            render(scene, render_size, (seed, "g0", k)),
            render(edited, render_size, (seed, "g1", k)),
            caption(scene, (seed, "c0", k)),
            caption(edited, (seed, "c1", k)),
        ))
    return quads


def evaluate_group_score(model, quadruples):
    """Both-ways matching over (2 images x 2 captions) quadruples."""
    if not quadruples:
        raise EvalError("empty quadruple set")
    text_hits = img_hits = group_hits = 0
    i0s, i1s, c0s, c1s = [], [], [], []
    for q in quadruples:
        if len(q) != 4:
            raise EvalError("malformed quadruple")
        i0, i1, c0, c1 = q
        if np.asarray(i0).shape != np.asarray(i1).shape:
            raise EvalError("malformed quadruple: image shape mismatch")
        i0s.append(i0)
        i1s.append(i1)
        c0s.append(c0)
        c1s.append(c1)
    e_i0 = encode_images(model, np.stack(i0s))
    e_i1 = encode_images(model, np.stack(i1s))
    e_c0 = encode_texts(model, c0s)
    e_c1 = encode_texts(model, c1s)
    t = model.scalars.t
    b = float(model.scalars.b.data)

    def s(a, bb):
        return t * np.sum(a * bb, axis=1) - b

    s00, s01 = s(e_i0, e_c0), s(e_i0, e_c1)
    s10, s11 = s(e_i1, e_c0), s(e_i1, e_c1)
    text_ok = (s00 > s01) & (s11 > s10)
    img_ok = (s00 > s10) & (s11 > s01)
    group_ok = text_ok & img_ok
    n = len(quadruples)
    return {"text_score": float(text_ok.mean()),
            "image_score": float(img_ok.mean()),
            "group_score": float(group_ok.mean()),
            "n_quadruples": n}


def evaluate_linear_probe(model, dataset, train_split="train",
                          test_split="test", max_iter=2000, gtol=1e-5):
    """Multinomial logistic regression on frozen image embeddings."""
    classes = zero_shot_classes()

    def split_data(split):
        idx = [i for i in dataset.indices(split)
               if dataset.records[i].scene.relation is None]
        if not idx:
            raise EvalError(f"no single-group samples in {split!r}")
        y = np.array([classes.index(
            (dataset.records[i].scene.groups[0].shape,
             dataset.records[i].scene.groups[0].color)) for i in idx])
        x = encode_images(model, np.stack([dataset.image_f32(i) for i in idx]))
        return x.astype(np.float64), y

    x_tr, y_tr = split_data(train_split)
    x_te, y_te = split_data(test_split)
    if np.unique(y_tr).size < 2:
        raise EvalError("linear probe needs at least 2 classes in train")
    n, d = x_tr.shape
    c = len(classes)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y_tr] = 1.0

    def nll_grad(wflat):
        w = wflat.reshape(d + 1, c)
        logits = x_tr @ w[:d] + w[d]
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        loss = -np.log(p[np.arange(n), y_tr] + 1e-300).mean()
        gl = (p - onehot) / n
        gw = np.vstack([x_tr.T @ gl, gl.sum(axis=0)])
        return loss, gw.reshape(-1)

    res = minimize(nll_grad, np.zeros((d + 1) * c), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": gtol})
    w = res.x.reshape(d + 1, c)
    pred = (x_te @ w[:d] + w[d]).argmax(axis=1)
    return {"accuracy": float((pred == y_te).mean()),
            "n_train": int(n), "n_test": int(len(y_te)),
            "converged": bool(res.success)}
