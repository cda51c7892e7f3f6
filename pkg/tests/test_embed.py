import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from m2cmab.core import ActionSpec, TaskContext
from m2cmab.embed import AttentionBundle, MissingEmbedding, cls_attentive_pool, context_embedding, joint_feature


def test_pool_hand_example():
    bundle = AttentionBundle(np.array([[2.0, 2.0], [9.0, 9.0]]), np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(cls_attentive_pool(bundle), [1.0, 1.0], atol=1e-12)


def test_zero_attention_gives_zero():
    bundle = AttentionBundle(np.arange(6.0).reshape(3, 2), np.zeros((2, 3)))
    np.testing.assert_array_equal(cls_attentive_pool(bundle), [0.0, 0.0])


def test_identical_heads_match_single_head():
    hs = np.random.default_rng(0).normal(size=(4, 3))
    alpha = np.array([0.1, 0.5, 0.2, 0.2])
    one = cls_attentive_pool(AttentionBundle(hs, alpha[None, :]))
    two = cls_attentive_pool(AttentionBundle(hs, np.stack([alpha, alpha])))
    np.testing.assert_allclose(one, two, atol=1e-12)


def test_attention_length_mismatch():
    with pytest.raises(ValueError, match="dimension-mismatch"):
        AttentionBundle(np.ones((3, 2)), np.ones((1, 2)))


def test_normalized_attention_flag():
    hs = np.array([[2.0], [4.0]])
    bundle = AttentionBundle(hs, np.array([[3.0, 1.0]]))
    # rows rescaled to (0.75, 0.25), then the 1/L factor
    np.testing.assert_allclose(cls_attentive_pool(bundle, normalize_attention=True), [(1.5 + 1.0) / 2])


@settings(max_examples=40, deadline=None)
@given(arrays(float, (3, 4), elements=st.floats(-10, 10)), arrays(float, (3, 4), elements=st.floats(-10, 10)),
       arrays(float, (2, 3), elements=st.floats(0, 1)), st.floats(-3, 3), st.floats(-3, 3))
def test_pool_linear_in_hidden_states(x, y, att, a, b):
    pool = lambda h: cls_attentive_pool(AttentionBundle(h, att))
    np.testing.assert_allclose(pool(a * x + b * y), a * pool(x) + b * pool(y), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(float, (5, 2), elements=st.floats(-5, 5)), arrays(float, (3, 5), elements=st.floats(0, 1)),
       st.permutations(range(3)))
def test_head_permutation_invariance(hs, att, perm):
    np.testing.assert_allclose(cls_attentive_pool(AttentionBundle(hs, att)),
                               cls_attentive_pool(AttentionBundle(hs, att[list(perm)])), atol=1e-12)


def test_joint_feature_concatenates_action_first():
    ctx = TaskContext(0, pooled_embedding=[2.0, 3.0])
    np.testing.assert_array_equal(joint_feature(ctx, ActionSpec(0, "a", [1.0])), [1.0, 2.0, 3.0])


def test_joint_feature_distinct_actions_differ_in_action_part():
    ctx = TaskContext(0, pooled_embedding=[0.3, 0.7, 0.1])
    f0 = joint_feature(ctx, ActionSpec(0, "a", [1.0, 0.0]))
    f1 = joint_feature(ctx, ActionSpec(1, "b", [0.0, 1.0]))
    assert np.any(f0[:2] != f1[:2])
    np.testing.assert_array_equal(f0[2:], f1[2:])


def test_joint_feature_zero_context():
    ctx = TaskContext(0, pooled_embedding=[0.0, 0.0])
    np.testing.assert_array_equal(joint_feature(ctx, ActionSpec(0, "a", [4.0, 5.0])), [4.0, 5.0, 0.0, 0.0])


def test_modalities_pooled_when_no_embedding():
    ctx = TaskContext(0, modality_features={"text": [[2.0, 2.0]], "vision": [[9.0, 9.0]]},
                      attention=[[0.0, 1.0]])
    # tags are stacked in sorted order: text then vision
    np.testing.assert_allclose(context_embedding(ctx), [4.5, 4.5])


def test_missing_embedding():
    ctx = TaskContext(0, pooled_embedding=[1.0])
    object.__setattr__(ctx, "pooled_embedding", None)
    with pytest.raises(MissingEmbedding):
        context_embedding(ctx)
