"""Loss oracle equivalence, sign-rule enumeration oracles, and invariants."""

import itertools
import math

import numpy as np
import pytest

from tulip.core import Tape, Tensor, l2_normalize
from tulip.errors import ShapeError, TulipError
from tulip.losses import (
    BatchProvenance,
    LossScalars,
    PairWeightMatrix,
    blockwise_siglip_loss,
    build_pair_weights_cross_modal,
    build_pair_weights_same_modality,
    contrastive_total,
    reconstruction_total,
    siglip_pairwise_loss,
    tulip_total,
)

RNG = np.random.default_rng(7)


def unit_rows(b, d, rng=RNG):
    x = rng.standard_normal((b, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def scalars(t=1.0, b=0.0):
    return LossScalars.create(init_t=t, init_b=b, dtype=np.float64)


def brute_force_loss(x, y, z, t, b):
    """Independent double-loop evaluation in pure Python floats."""
    bsz = x.shape[0]
    total = 0.0
    for i in range(bsz):
        for j in range(bsz):
            if z[i, j] == 0:
                continue
            s = float(np.dot(x[i], y[j]))
            a = z[i, j] * (-t * s + b)
            total += -math.log(1.0 / (1.0 + math.exp(a)))
    return total / bsz


# ---------------------------------------------------------------------------
# pairwise loss vs brute force
# ---------------------------------------------------------------------------

def test_single_pair_at_zero_similarity_is_log2():
    x = np.zeros((1, 4))
    x[0, 0] = 1.0
    y = np.zeros((1, 4))
    y[0, 1] = 1.0
    loss = siglip_pairwise_loss(Tensor(x), Tensor(y), scalars(1.0, 0.0),
                                PairWeightMatrix(np.array([[1]])))
    assert float(loss.data) == pytest.approx(math.log(2.0), rel=1e-12)


def test_loss_matches_brute_force_random_batches():
    for trial in range(50):
        rng = np.random.default_rng(trial)
        b = int(rng.integers(1, 33))
        d = int(rng.integers(2, 17))
        x = unit_rows(b, d, rng)
        y = unit_rows(b, d, rng)
        z = rng.integers(-1, 2, size=(b, b)).astype(np.int8)
        t = float(rng.uniform(0.5, 12.0))
        bias = float(rng.uniform(-12.0, 2.0))
        got = float(siglip_pairwise_loss(
            Tensor(x), Tensor(y), scalars(t, bias), PairWeightMatrix(z)).data)
        want = brute_force_loss(x, y, z, t, bias)
        assert abs(got - want) < 1e-12


def test_all_zero_weights_give_exact_zero_loss_and_grads():
    x = Tensor(unit_rows(4, 8), requires_grad=True)
    y = Tensor(unit_rows(4, 8), requires_grad=True)
    sc = scalars()
    with Tape() as tape:
        loss = siglip_pairwise_loss(x, y, sc, PairWeightMatrix(np.zeros((4, 4))))
    g = tape.backward(loss)
    assert float(loss.data) == 0.0
    assert not g[x].any() and not g[y].any()
    assert float(g[sc.log_t]) == 0.0 and float(g[sc.b]) == 0.0


def test_loss_shape_and_norm_errors():
    sc = scalars()
    with pytest.raises(ShapeError):
        siglip_pairwise_loss(Tensor(unit_rows(3, 4)), Tensor(unit_rows(2, 4)),
                             sc, PairWeightMatrix.standard(3))
    with pytest.raises(ShapeError):
        siglip_pairwise_loss(Tensor(unit_rows(3, 4)), Tensor(unit_rows(3, 4)),
                             sc, PairWeightMatrix.standard(2))
    bad = unit_rows(3, 4) * 1.01
    with pytest.raises(TulipError):
        siglip_pairwise_loss(Tensor(bad), Tensor(unit_rows(3, 4)), sc,
                             PairWeightMatrix.standard(3))


def test_sign_symmetry_per_pair():
    # negating z turns the pair term -log(sigmoid(-a)) into -log(sigmoid(a))
    for trial in range(20):
        rng = np.random.default_rng(100 + trial)
        x = unit_rows(1, 6, rng)
        y = unit_rows(1, 6, rng)
        t = float(rng.uniform(0.5, 10.0))
        bias = float(rng.uniform(-10.0, 2.0))
        a = -t * float((x @ y.T)[0, 0]) + bias
        lp = float(siglip_pairwise_loss(Tensor(x), Tensor(y), scalars(t, bias),
                                        PairWeightMatrix(np.array([[1]]))).data)
        ln = float(siglip_pairwise_loss(Tensor(x), Tensor(y), scalars(t, bias),
                                        PairWeightMatrix(np.array([[-1]]))).data)
        assert abs(lp - (-math.log(1 / (1 + math.exp(a))))) < 1e-12
        assert abs(ln - (-math.log(1 / (1 + math.exp(-a))))) < 1e-12


def test_permutation_equivariance():
    b, d = 12, 8
    x = unit_rows(b, d)
    y = unit_rows(b, d)
    z = RNG.integers(-1, 2, size=(b, b)).astype(np.int8)
    base = float(siglip_pairwise_loss(Tensor(x), Tensor(y), scalars(4.0, -3.0),
                                      PairWeightMatrix(z)).data)
    perm = RNG.permutation(b)
    permuted = float(siglip_pairwise_loss(
        Tensor(x[perm]), Tensor(y[perm]), scalars(4.0, -3.0),
        PairWeightMatrix(z[np.ix_(perm, perm)])).data)
    assert abs(base - permuted) < 1e-12


def test_zero_weight_pairs_are_exact_noops():
    # silence every pair that touches row i: perturbing x_i must change nothing
    b, d, i = 5, 6, 2
    x = unit_rows(b, d)
    y = unit_rows(b, d)
    z = RNG.integers(-1, 2, size=(b, b)).astype(np.int8)
    z[i, :] = 0

    def run(xa):
        xt = Tensor(xa, requires_grad=True)
        yt = Tensor(y, requires_grad=True)
        sc = scalars(3.0, -2.0)
        with Tape() as tape:
            loss = siglip_pairwise_loss(xt, yt, sc, PairWeightMatrix(z))
        g = tape.backward(loss)
        return float(loss.data), g[yt].copy()

    l0, gy0 = run(x)
    x2 = x.copy()
    v = RNG.standard_normal(d)
    x2[i] = v / np.linalg.norm(v)
    l1, gy1 = run(x2)
    assert l0 == l1
    assert np.array_equal(gy0, gy1)


def test_loss_gradients_match_finite_differences():
    from tulip.core import finite_difference_check
    b, d = 4, 5
    z = PairWeightMatrix(RNG.integers(-1, 2, size=(b, b)))

    def f(xr, yr, lt, bb):
        x = l2_normalize(xr)
        y = l2_normalize(yr)
        sc = LossScalars(log_t=lt, b=bb)
        return siglip_pairwise_loss(x, y, sc, z)

    report = finite_difference_check(
        f, [RNG.standard_normal((b, d)), RNG.standard_normal((b, d)),
            np.array(np.log(3.0)), np.array(-2.0)],
        step=1e-5, tolerance=1e-5)
    assert report.passed, str(report)


# ---------------------------------------------------------------------------
# blockwise evaluation
# ---------------------------------------------------------------------------

def test_blockwise_single_block_matches_exactly():
    b = 8
    x, y = unit_rows(b, 6), unit_rows(b, 6)
    z = PairWeightMatrix.standard(b)
    sc = scalars(5.0, -4.0)
    full = float(siglip_pairwise_loss(Tensor(x), Tensor(y), sc, z).data)
    blk = float(blockwise_siglip_loss(Tensor(x), Tensor(y), sc, z, chunk=b).data)
    assert blk == pytest.approx(full, abs=1e-15)


@pytest.mark.parametrize("chunk", [1, 7, 16, 64])
def test_blockwise_matches_unblocked_values_and_grads(chunk):
    b, d = 64, 12
    x = unit_rows(b, d)
    y = unit_rows(b, d)
    z = PairWeightMatrix(RNG.integers(-1, 2, size=(b, b)))

    def grads(fn):
        xt = Tensor(x, requires_grad=True)
        yt = Tensor(y, requires_grad=True)
        sc = scalars(6.0, -5.0)
        with Tape() as tape:
            loss = fn(xt, yt, sc)
        g = tape.backward(loss)
        return float(loss.data), g[xt], g[yt], float(g[sc.log_t]), float(g[sc.b])

    l0, gx0, gy0, gt0, gb0 = grads(lambda a, b_, s: siglip_pairwise_loss(a, b_, s, z))
    l1, gx1, gy1, gt1, gb1 = grads(
        lambda a, b_, s: blockwise_siglip_loss(a, b_, s, z, chunk=chunk))
    assert abs(l0 - l1) < 1e-10
    assert np.abs(gx0 - gx1).max() < 1e-10
    assert np.abs(gy0 - gy1).max() < 1e-10
    assert abs(gt0 - gt1) < 1e-10 and abs(gb0 - gb1) < 1e-10


def test_blockwise_rejects_bad_chunk():
    x = Tensor(unit_rows(4, 4))
    with pytest.raises(TulipError):
        blockwise_siglip_loss(x, x, scalars(), PairWeightMatrix.standard(4), chunk=0)


# ---------------------------------------------------------------------------
# pair-weight builders vs independent rule enumeration
# ---------------------------------------------------------------------------

def prov(modality, negatives, sources=None):
    n = len(negatives)
    if sources is None:
        sources = list(range(n))
    return BatchProvenance(modality, np.array(negatives, dtype=bool),
                           np.array(sources))


def test_same_modality_example_b2():
    z = build_pair_weights_same_modality(
        prov("image", [False, False]), prov("image", [False, True]))
    np.testing.assert_array_equal(z.z, [[1, -1], [-1, -1]])


def test_same_modality_no_negatives_is_standard():
    z = build_pair_weights_same_modality(
        prov("image", [False] * 4), prov("image", [False] * 4))
    np.testing.assert_array_equal(z.z, PairWeightMatrix.standard(4).z)


def test_same_modality_exhaustive_vs_enumeration_oracle():
    for b in range(1, 7):
        for bits in itertools.product([False, True], repeat=b):
            got = build_pair_weights_same_modality(
                prov("text", [False] * b), prov("text", list(bits))).z
            # independent index-by-index rule application
            want = np.empty((b, b), dtype=np.int8)
            for i in range(b):
                for j in range(b):
                    if i != j:
                        want[i, j] = -1
                    elif bits[j]:
                        want[i, j] = -1
                    else:
                        want[i, j] = 1
            np.testing.assert_array_equal(got, want)


def test_same_modality_errors():
    with pytest.raises(ShapeError):
        build_pair_weights_same_modality(prov("image", [False]),
                                         prov("image", [False, False]))
    with pytest.raises(TulipError):
        build_pair_weights_same_modality(prov("image", [True]),
                                         prov("image", [False]))


def test_cross_modal_single_sample_quadrant_rules():
    # one sample contributing (orig img, neg img) x (orig txt, neg txt)
    z = build_pair_weights_cross_modal(
        prov("image", [False, True], [0, 0]),
        prov("text", [False, True], [0, 0]))
    np.testing.assert_array_equal(z.z, [[1, -1], [-1, 0]])


def test_cross_modal_b1_no_negatives():
    z = build_pair_weights_cross_modal(prov("image", [False], [0]),
                                       prov("text", [False], [0]))
    np.testing.assert_array_equal(z.z, [[1]])


def _cross_modal_oracle(img_neg, img_src, txt_neg, txt_src, mode):
    n, m = len(img_neg), len(txt_neg)
    want = np.empty((n, m), dtype=np.int8)
    for i in range(n):
        for j in range(m):
            if img_src[i] == txt_src[j]:
                if img_neg[i] and txt_neg[j]:
                    want[i, j] = 0
                elif img_neg[i] != txt_neg[j]:
                    want[i, j] = -1
                else:
                    want[i, j] = 1
            else:
                if img_neg[i] or txt_neg[j]:
                    want[i, j] = 0 if mode == "mask" else -1
                else:
                    want[i, j] = -1
    return want


@pytest.mark.parametrize("mode", ["mask", "negative"])
def test_cross_modal_exhaustive_vs_enumeration_oracle(mode):
    # up to 4 source samples; each sample contributes an original on both
    # sides plus, per flag combination, a negative image and/or negative text
    for n_samples in range(1, 5):
        for flags in itertools.product(range(4), repeat=n_samples):
            img_neg, img_src, txt_neg, txt_src = [], [], [], []
            for s, f in enumerate(flags):
                img_neg.append(False)
                img_src.append(s)
                txt_neg.append(False)
                txt_src.append(s)
                if f & 1:
                    img_neg.append(True)
                    img_src.append(s)
                if f & 2:
                    txt_neg.append(True)
                    txt_src.append(s)
            got = build_pair_weights_cross_modal(
                prov("image", img_neg, img_src), prov("text", txt_neg, txt_src),
                cross_sample_negatives=mode).z
            want = _cross_modal_oracle(img_neg, img_src, txt_neg, txt_src, mode)
            np.testing.assert_array_equal(got, want)


def test_cross_modal_unmatched_sources_error():
    with pytest.raises(TulipError):
        build_pair_weights_cross_modal(prov("image", [False], [0]),
                                       prov("text", [False], [1]))


def test_builders_never_attract_negative_views():
    for trial in range(200):
        rng = np.random.default_rng(trial)
        b = int(rng.integers(1, 7))
        y_neg = rng.random(b) < 0.5
        z1 = build_pair_weights_same_modality(
            prov("image", [False] * b), prov("image", y_neg.tolist())).z
        assert not np.any((z1 == 1) & y_neg[None, :])
        img_neg = rng.random(b) < 0.5
        txt_neg = rng.random(b) < 0.5
        src = list(range(b))
        z2 = build_pair_weights_cross_modal(
            prov("image", img_neg.tolist(), src),
            prov("text", txt_neg.tolist(), src)).z
        involved = img_neg[:, None] | txt_neg[None, :]
        assert not np.any((z2 == 1) & involved)
        both = img_neg[:, None] & txt_neg[None, :]
        assert not np.any((z2 != 0) & both & (np.arange(b)[:, None] == np.arange(b)[None, :]))


# ---------------------------------------------------------------------------
# combiners
# ---------------------------------------------------------------------------

def t64(v):
    return Tensor(np.array(v, dtype=np.float64))


def test_contrastive_total_is_plain_sum():
    assert float(contrastive_total(t64(0.7), t64(0.7), t64(0.7)).data) == pytest.approx(2.1)
    assert float(contrastive_total(t64(0.0), t64(0.0), t64(0.0)).data) == 0.0


def test_reconstruction_total():
    assert float(reconstruction_total(t64(1.0), t64(2.0), 1.0, 0.0).data) == 1.0
    assert float(reconstruction_total(t64(0.5), t64(0.5), 1.0, 1.0).data) == 1.0
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b, li, lt = rng.random(4)
        got = float(reconstruction_total(t64(a), t64(b), li, lt).data)
        assert got == pytest.approx(li * a + lt * b, rel=1e-12)
    with pytest.raises(TulipError):
        reconstruction_total(t64(1.0), t64(1.0), -0.1, 1.0)


def test_tulip_total():
    assert float(tulip_total(t64(2.1), t64(1.0), 1.0, 0.1).data) == pytest.approx(2.2)
    assert float(tulip_total(t64(2.1), t64(9.9), 1.0, 0.0).data) == pytest.approx(2.1)
