"""Contrastive and supervised losses, the fusion classifier and evaluation metrics."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialectfuse.errors import DataError, NumericalFault, ShapeError
from dialectfuse.losses import ContrastiveHead, FusionClassifier, bce_loss, ce_loss, classify, contrastive_loss, cosine_matrix, pair_terms, pairwise_term
from dialectfuse.metrics import EvalReport, accuracy, confusion_counts, evaluate, evaluate_grouped, macro_f1, micro_f1, per_class_f1, predict
from dialectfuse.numerics import Rng, check_gradients, parameter
from dialectfuse.numerics.gradcheck import REL_TOL

PAIR_TERM_B2 = float((2 * -mpmath.log(mpmath.mpf(1) / (1 + mpmath.e ** -1)) + 2 * -mpmath.log(1 - 1 / (1 + mpmath.e ** -1))) / 4)


class TestContrastive:
    def test_identical_vectors_pair_term(self):
        v = np.array([[0.3, -1.2, 2.0]] * 2)
        term = pairwise_term(v, v, ContrastiveHead()).data
        assert abs(float(term) - 0.813261687) < 1e-9
        assert abs(float(term) - PAIR_TERM_B2) < 1e-14

    def test_identical_vectors_total(self):
        v = np.array([[0.3, -1.2, 2.0]] * 2)
        total = float(contrastive_loss(v, v, v, ContrastiveHead()).data)
        assert abs(total - 2.439785062) < 1e-9
        assert abs(total - 3 * PAIR_TERM_B2) < 1e-14

    def test_aligned_diagonal_large_scale(self):
        x = np.eye(4)
        assert float(pairwise_term(x, x, ContrastiveHead(scale=200.0, bias=-100.0)).data) < 1e-40

    def test_symmetry_exact(self):
        rng = Rng(0)
        fa, fv, ft = (rng.normal((5, 6)) for _ in range(3))
        head = ContrastiveHead(scale=2.5, bias=-0.3)
        base = contrastive_loss(fa, fv, ft, head).data
        for perm in [(fv, fa, ft), (ft, fv, fa), (fa, ft, fv), (fv, ft, fa)]:
            assert contrastive_loss(*perm, head).data == base

    def test_scale_invariance(self):
        rng = Rng(1)
        fa, fv, ft = (rng.normal((4, 5)) for _ in range(3))
        head = ContrastiveHead()
        base = float(contrastive_loss(fa, fv, ft, head).data)
        fa2 = fa.copy()
        fa2[2] *= 7.3
        assert abs(float(contrastive_loss(fa2, fv, ft, head).data) - base) <= 1e-12

    def test_zero_norm_fault(self):
        x = np.ones((2, 3))
        y = x.copy()
        y[1] = 0.0
        with pytest.raises(NumericalFault):
            contrastive_loss(x, y, x, ContrastiveHead())

    def test_needs_batch_two(self):
        with pytest.raises(ShapeError):
            pairwise_term(np.ones((1, 3)), np.ones((1, 3)), ContrastiveHead())

    def test_needs_two_modalities(self):
        with pytest.raises(ShapeError):
            contrastive_loss(np.ones((2, 3)), None, None, ContrastiveHead())
        two = contrastive_loss(Rng(0).normal((3, 4)), None, Rng(1).normal((3, 4)), ContrastiveHead())
        assert np.isfinite(two.data)

    def test_matches_direct_sum(self):
        rng = Rng(2)
        x, y = rng.normal((4, 3)), rng.normal((4, 3))
        s, b = 1.7, 0.2
        total = 0.0
        for i in range(4):
            for j in range(4):
                c = float(np.dot(x[i], y[j]) / (np.linalg.norm(x[i]) * np.linalg.norm(y[j])))
                p = 1.0 / (1.0 + math.exp(-(s * c + b)))
                total += -math.log(p) if i == j else -math.log(1.0 - p)
        got = float(pairwise_term(x, y, ContrastiveHead(scale=s, bias=b)).data)
        assert abs(got - total / 16) < 1e-12

    def test_cosine_transpose_exact(self):
        rng = Rng(3)
        x, y = rng.normal((3, 5)), rng.normal((4, 5))
        np.testing.assert_array_equal(cosine_matrix(x, y).data, cosine_matrix(y, x).data.T)

    @pytest.mark.parametrize("variant", ["pairwise", "row-softmax"])
    def test_gradcheck(self, variant):
        rng = Rng(4)
        fa, fv, ft = (parameter(rng.normal((3, 4))) for _ in range(3))
        head = ContrastiveHead(variant, scale=1.3, bias=0.1)
        params = dict(head.parameters(), fa=fa, fv=fv, ft=ft)
        errs = check_gradients(lambda: contrastive_loss(fa, fv, ft, head), params)
        assert max(errs.values()) <= REL_TOL

    def test_row_softmax_direct(self):
        rng = Rng(5)
        x, y = rng.normal((3, 4)), rng.normal((3, 4))
        xn = x / np.linalg.norm(x, axis=1, keepdims=True)
        yn = y / np.linalg.norm(y, axis=1, keepdims=True)
        z = xn @ yn.T
        rows = -np.mean(np.diag(z) - np.log(np.exp(z).sum(axis=1)))
        cols = -np.mean(np.diag(z) - np.log(np.exp(z).sum(axis=0)))
        got = float(pairwise_term(x, y, ContrastiveHead("row-softmax")).data)
        assert abs(got - 0.5 * (rows + cols)) < 1e-12

    def test_pair_terms_sum_to_total(self):
        rng = Rng(6)
        feats = {m: rng.normal((3, 4)) for m in ("audio", "vision", "text")}
        head = ContrastiveHead()
        terms = pair_terms(feats, head)
        assert set(terms) == {"audio-vision", "audio-text", "vision-text"}
        total = float(contrastive_loss(feats["audio"], feats["vision"], feats["text"], head).data)
        assert abs(sum(float(t.data) for t in terms.values()) - total) < 1e-12

    def test_scale_is_positive(self):
        head = ContrastiveHead()
        head.log_scale.data = np.array([-50.0])
        assert head.scale.data[0] > 0


class TestClassifier:
    def test_uniform_single_label(self):
        clf = FusionClassifier(3, 5, "single-label", Rng(0))
        clf.fc.w.data = np.zeros_like(clf.fc.w.data)
        f = Rng(1).normal((2, 3))
        np.testing.assert_allclose(classify(f, f, f, clf).data, 0.2, rtol=1e-15)

    def test_half_multi_label(self):
        clf = FusionClassifier(3, 12, "multi-label", Rng(0))
        clf.fc.w.data = np.zeros_like(clf.fc.w.data)
        f = Rng(1).normal((2, 3))
        np.testing.assert_array_equal(classify(f, f, f, clf).data, 0.5)

    def test_concatenation_order(self):
        clf = FusionClassifier(2, 2, "single-label", Rng(0))
        ft, fa, fv = np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]]), np.array([[5.0, 6.0]])
        z = clf.logits(ft, fa, fv).data
        np.testing.assert_allclose(z, np.array([[1, 2, 3, 4, 5, 6.0]]) @ clf.fc.w.data + clf.fc.b.data, rtol=1e-14)

    def test_shape_mismatch(self):
        clf = FusionClassifier(3, 5, "single-label", Rng(0))
        with pytest.raises(ShapeError):
            clf(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((2, 3)))

    @pytest.mark.parametrize("task", ["single-label", "multi-label"])
    def test_gradcheck(self, task):
        clf = FusionClassifier(3, 4, task, Rng(0))
        rng = Rng(1)
        fs = [parameter(rng.normal((2, 3))) for _ in range(3)]
        w = Rng(2).normal((2, 4))
        params = dict(clf.parameters(), ft=fs[0], fa=fs[1], fv=fs[2])
        errs = check_gradients(lambda: (clf(*fs) * w).sum(), params)
        assert max(errs.values()) <= REL_TOL


class TestSupervisedLosses:
    def test_ce_uniform(self):
        loss = float(ce_loss(np.full((3, 5), 0.2), [0, 3, 4]).data)
        assert abs(loss - float(mpmath.log(5))) < 1e-15

    def test_ce_perfect(self):
        probs = np.eye(4)[[1, 2]]
        assert float(ce_loss(probs, [1, 2]).data) == 0.0

    def test_ce_direct_sum(self):
        rng = Rng(0)
        z = rng.normal((6, 4))
        probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        labels = rng.integers(0, 4, (6,))
        direct = -sum(math.log(probs[i, labels[i]]) for i in range(6)) / 6
        assert abs(float(ce_loss(probs, labels).data) - direct) < 1e-12

    def test_ce_errors(self):
        with pytest.raises(DataError):
            ce_loss(np.full((2, 5), 0.2), [0, 5])
        with pytest.raises(ShapeError):
            ce_loss(np.full((2, 5), 0.2), [0])

    def test_ce_clamped(self):
        assert np.isfinite(float(ce_loss(np.array([[0.0, 1.0]]), [0]).data))

    def test_bce_half(self):
        rng = Rng(1)
        targets = (rng.uniform((4, 12)) < 0.5).astype(float)
        loss = float(bce_loss(np.full((4, 12), 0.5), targets).data)
        assert abs(loss - float(mpmath.log(2))) < 1e-15

    def test_bce_perfect(self):
        y = np.array([[1.0, 0.0, 1.0]])
        assert float(bce_loss(y, y).data) < 1e-11

    def test_bce_direct_sum(self):
        rng = Rng(2)
        probs = rng.uniform((3, 4), 0.05, 0.95)
        y = (rng.uniform((3, 4)) < 0.5).astype(float)
        direct = 0.0
        for i in range(3):
            for j in range(4):
                direct -= y[i, j] * math.log(probs[i, j]) + (1 - y[i, j]) * math.log(1 - probs[i, j])
        assert abs(float(bce_loss(probs, y).data) - direct / 12) < 1e-12

    def test_bce_errors(self):
        with pytest.raises(DataError):
            bce_loss(np.full((1, 2), 0.5), [[0.5, 1.0]])
        with pytest.raises(ShapeError):
            bce_loss(np.full((1, 2), 0.5), [[0.0, 1.0, 1.0]])

    def test_loss_gradcheck(self):
        rng = Rng(3)
        p = parameter(rng.uniform((3, 4), 0.1, 0.9))
        y = (rng.uniform((3, 4)) < 0.5).astype(float)
        assert max(check_gradients(lambda: bce_loss(p, y), {"p": p}).values()) <= REL_TOL
        assert max(check_gradients(lambda: ce_loss(p, [0, 3, 1]), {"p": p}).values()) <= REL_TOL


def brute_force_counts(pred, gold, m):
    """Per-class confusion counts by explicit enumeration."""
    tp, fp, fn = [0] * m, [0] * m, [0] * m
    for p_row, g_row in zip(pred, gold):
        p_set = {int(p_row)} if np.ndim(p_row) == 0 else {j for j in range(m) if p_row[j]}
        g_set = {int(g_row)} if np.ndim(g_row) == 0 else {j for j in range(m) if g_row[j]}
        for c in range(m):
            if c in p_set and c in g_set:
                tp[c] += 1
            elif c in p_set:
                fp[c] += 1
            elif c in g_set:
                fn[c] += 1
    return tp, fp, fn


def f1_of(tp, fp, fn):
    return 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


class TestMetrics:
    def test_all_correct(self):
        gold = np.array([0, 1, 2, 1])
        assert accuracy(gold, gold) == micro_f1(gold, gold, 3) == macro_f1(gold, gold, 3) == 1.0

    def test_two_class_multi_label(self):
        gold = np.array([[1, 0], [0, 1]])
        pred = np.array([[1, 1], [0, 1]])
        tp, fp, fn = confusion_counts(pred, gold)
        assert (tp.sum(), fp.sum(), fn.sum()) == (2, 1, 0)
        assert micro_f1(pred, gold) == pytest.approx(0.8, abs=1e-15)
        np.testing.assert_allclose(per_class_f1(pred, gold), [1.0, 2 / 3], rtol=1e-15)
        assert macro_f1(pred, gold) == pytest.approx(5 / 6, abs=1e-15)
        assert accuracy(pred, gold) == 0.5

    def test_tie_takes_lowest_index(self):
        probs = np.array([[0.4, 0.4, 0.2], [0.1, 0.45, 0.45]])
        np.testing.assert_array_equal(predict(probs, "single-label"), [0, 1])
        assert accuracy(predict(probs, "single-label"), np.array([0, 2])) == 0.5

    def test_threshold(self):
        np.testing.assert_array_equal(predict(np.array([[0.5, 0.49, 0.9]]), "multi-label"), [[1, 0, 1]])

    def test_empty_set(self):
        with pytest.raises(DataError):
            accuracy(np.array([]), np.array([]))
        with pytest.raises(DataError):
            micro_f1(np.zeros((0, 3)), np.zeros((0, 3)), 3)

    def test_absent_class_scores_zero(self):
        assert macro_f1(np.array([0, 0]), np.array([0, 0]), 3) == pytest.approx(1 / 3)

    def test_brute_force_oracle(self):
        rng = Rng(10)
        for trial in range(200):
            b = int(rng.integers(1, 21))
            m = int(rng.integers(2, 13))
            if trial % 2:
                gold, pred = rng.integers(0, m, (b,)), rng.integers(0, m, (b,))
            else:
                gold = (rng.uniform((b, m)) < 0.3).astype(int)
                pred = (rng.uniform((b, m)) < 0.3).astype(int)
            tp, fp, fn = brute_force_counts(pred, gold, m)
            rep = evaluate(pred, gold, m)
            assert (rep.tp, rep.fp, rep.fn) == (tp, fp, fn)
            assert rep.micro_f1 == pytest.approx(f1_of(sum(tp), sum(fp), sum(fn)), abs=1e-15)
            per = [f1_of(*c) for c in zip(tp, fp, fn)]
            assert rep.per_class_f1 == pytest.approx(per, abs=1e-15)
            assert rep.macro_f1 == pytest.approx(sum(per) / m, abs=1e-15)
            if gold.ndim == 1:
                exact = sum(int(p == g) for p, g in zip(pred, gold)) / b
            else:
                exact = sum(int(list(p) == list(g)) for p, g in zip(pred, gold)) / b
            assert rep.accuracy == exact
            assert rep.consistent()

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=20))
    def test_single_label_micro_equals_accuracy(self, pairs):
        pred, gold = np.array([p for p, _ in pairs]), np.array([g for _, g in pairs])
        assert micro_f1(pred, gold, 5) == pytest.approx(accuracy(pred, gold), abs=1e-15)

    def test_single_group_is_overall(self):
        pred, gold = np.array([0, 1, 1, 2]), np.array([0, 1, 2, 2])
        rep = evaluate_grouped(pred, gold, ["north"] * 4, 3)
        assert rep.group_accuracy == {"north": rep.accuracy}

    def test_two_groups(self):
        pred = np.array([0, 1, 1, 2, 0, 0])
        gold = np.array([0, 1, 2, 2, 1, 0])
        groups = ["n", "s", "n", "s", "s", "n"]
        rep = evaluate_grouped(pred, gold, groups, 3)
        assert rep.group_accuracy == {"n": 2 / 3, "s": 2 / 3}
        assert "w" not in rep.group_accuracy

    def test_group_misalignment(self):
        with pytest.raises(ShapeError):
            evaluate_grouped(np.array([0, 1]), np.array([0, 1]), ["n"])

    def test_report_rejects_out_of_range(self):
        with pytest.raises(DataError):
            EvalReport(1.2, 0.5, 0.5, [0.5], 3, [1], [0], [0])
