"""Answer head: attention fusion, loss, soft targets, and the metric."""

import math

import numpy as np
import pytest

import treevqa.autodiff as ad
from straightline import forward_stages
from treevqa.answer_head import (AnswerHeadParams, AnswerSpace, SoftTarget,
                                 fuse_and_predict, soft_bce_loss,
                                 soft_target_from_counts, vqa_score)
from util import (finite_difference, make_scene, max_rel_error,
                  relational_tree, tiny_model)


def head_params(rng, d_out, d_q, n_ans, d_f=None, d_j=None):
    d_f = d_f or d_out
    d_j = d_j or d_out
    mk = lambda shape: ad.constant(rng.normal(0.0, 0.4, size=shape))
    return AnswerHeadParams(W13=mk((1, d_f)), W14=mk((d_f, d_out)),
                            W15=mk((d_f, d_q)), W16=mk((n_ans, d_j)),
                            W17=mk((d_j, d_out + d_q)))


class TestFuseAndPredict:
    def test_single_entity_beta_one(self):
        rng = np.random.default_rng(0)
        space = AnswerSpace(("a", "b"))
        params = head_params(rng, d_out=4, d_q=3, n_ans=2)
        pred = fuse_and_predict(ad.constant(rng.normal(size=(1, 4))),
                                ad.constant(rng.normal(size=3)), params, space)
        np.testing.assert_allclose(pred.beta, [1.0])

    def test_identical_entities_symmetric(self):
        rng = np.random.default_rng(1)
        space = AnswerSpace(("a", "b"))
        params = head_params(rng, d_out=4, d_q=3, n_ans=2)
        v = rng.normal(size=4)
        pred = fuse_and_predict(ad.constant(np.stack([v, v])),
                                ad.constant(rng.normal(size=3)), params, space)
        np.testing.assert_allclose(pred.beta, [0.5, 0.5], atol=1e-12)

    def test_two_entities_three_answers_match_direct_evaluation(self):
        rng = np.random.default_rng(2)
        space = AnswerSpace(("x", "y", "z"))
        params = head_params(rng, d_out=4, d_q=3, n_ans=3)
        vs = [rng.normal(size=4) for _ in range(2)]
        q = rng.normal(size=3)
        pred = fuse_and_predict(ad.constant(np.stack(vs)), ad.constant(q),
                                params, space)
        W13, W14, W15 = (params.W13.value.array, params.W14.value.array,
                         params.W15.value.array)
        W16, W17 = params.W16.value.array, params.W17.value.array
        logits = np.array([(W13 @ np.tanh(W14 @ v + W15 @ q))[0] for v in vs])
        e = np.exp(logits - logits.max())
        beta = e / e.sum()
        joint = np.concatenate([beta[0] * vs[0] + beta[1] * vs[1], q])
        expected_logits = W16 @ np.maximum(W17 @ joint, 0.0)
        ee = np.exp(expected_logits - expected_logits.max())
        np.testing.assert_allclose(pred.beta, beta, atol=1e-12)
        np.testing.assert_allclose(pred.p, ee / ee.sum(), atol=1e-12)

    def test_beta_and_p_normalize(self):
        rng = np.random.default_rng(3)
        space = AnswerSpace(("a", "b", "c"))
        params = head_params(rng, d_out=4, d_q=3, n_ans=3)
        for _ in range(50):
            vs = ad.constant(rng.normal(size=(int(rng.integers(1, 5)), 4)))
            pred = fuse_and_predict(vs, ad.constant(rng.normal(size=3)),
                                    params, space)
            assert abs(pred.beta.sum() - 1.0) <= 1e-9
            assert abs(pred.p.sum() - 1.0) <= 1e-9

    def test_uniform_attention_ablation(self):
        rng = np.random.default_rng(4)
        space = AnswerSpace(("a", "b"))
        params = head_params(rng, d_out=4, d_q=3, n_ans=2)
        vs = ad.constant(rng.normal(size=(4, 4)))
        pred = fuse_and_predict(vs, ad.constant(rng.normal(size=3)), params,
                                space, uniform_attention=True)
        np.testing.assert_allclose(pred.beta, np.full(4, 0.25))

    def test_argmax_same_under_softmax_and_sigmoid(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            logits = rng.normal(size=6)
            soft = np.exp(logits - logits.max())
            soft /= soft.sum()
            sig = 1.0 / (1.0 + np.exp(-logits))
            assert np.argmax(soft) == np.argmax(sig)

    def test_matches_straightline_oracle(self):
        model = tiny_model(seed=21)
        tree = relational_tree()
        scene = make_scene(np.random.default_rng(3), 4, model.config.d_v)
        stages = forward_stages(model, tree, scene)
        result = model.forward(tree, scene)
        np.testing.assert_allclose(result.prediction.beta, stages["beta"],
                                   atol=1e-12)
        np.testing.assert_allclose(result.prediction.p, stages["p"], atol=1e-12)


class TestSoftBceLoss:
    def test_perfect_prediction_near_zero(self):
        p_hat = ad.constant([1.0 - 1e-7, 1e-7])
        loss = soft_bce_loss(p_hat, SoftTarget(np.array([1.0, 0.0])))
        assert 0.0 <= float(loss.value.array) < 1e-6

    def test_all_zero_targets_at_half_gives_ln2(self):
        loss = soft_bce_loss(ad.constant([0.5, 0.5]),
                             SoftTarget(np.array([0.0, 0.0])))
        assert abs(float(loss.value.array) - math.log(2)) <= 1e-9

    def test_count_mapping(self):
        space = AnswerSpace(("a", "b", "c"))
        target = soft_target_from_counts({"a": 2, "b": 5}, space)
        assert target.y[space.index("a")] == 2.0 / 3.0
        assert target.y[space.index("b")] == 1.0
        assert target.y[space.index("c")] == 0.0

    def test_loss_nonnegative_and_positive_when_imperfect(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            p = rng.uniform(0.05, 0.95, size=4)
            y = rng.uniform(0, 1, size=4).round(1)
            loss = float(soft_bce_loss(ad.constant(p),
                                       SoftTarget(y)).value.array)
            assert loss >= 0.0
            if np.abs(p - y).max() > 0.05:
                assert loss > 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ad.DimensionError):
            soft_bce_loss(ad.constant([0.5, 0.5, 0.5]),
                          SoftTarget(np.array([0.0, 1.0])))

    def test_gradient_wrt_w17_matches_finite_differences(self):
        model = tiny_model(seed=23)
        tree = relational_tree()
        scene = make_scene(np.random.default_rng(5), 3, model.config.d_v)
        counts = {"a": 4, "c": 2}
        w17 = model.store["head.W17"]
        model.store.zero_grad()
        result = model.forward(tree, scene)
        ad.backward(model.loss(result, counts))
        analytic = w17.gradient.copy()

        def f():
            res = model.forward(tree, scene)
            return float(model.loss(res, counts).value.array)

        numeric = finite_difference(f, w17.value.array)
        assert max_rel_error(analytic, numeric) < 1e-5


class TestVqaScore:
    def test_three_or_more_annotators(self):
        assert vqa_score("cat", {"cat": 3}) == 1.0
        assert vqa_score("cat", {"cat": 7}) == 1.0

    def test_single_annotator(self):
        assert vqa_score("cat", {"cat": 1}) == 1.0 / 3.0

    def test_absent_answer(self):
        assert vqa_score("cat", {"dog": 5}) == 0.0

    def test_exact_formula_all_counts(self):
        for count in range(11):
            assert vqa_score("a", {"a": count}) == min(count / 3.0, 1.0)


class TestAnswerSpace:
    def test_needs_two_unique_labels(self):
        with pytest.raises(ValueError):
            AnswerSpace(("only",))
        with pytest.raises(ValueError):
            AnswerSpace(("a", "a"))
