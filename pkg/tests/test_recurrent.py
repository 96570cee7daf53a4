"""Recurrent decode path: state updates, readout, merging, and mode equivalence."""

import numpy as np
import pytest
from helpers import lm_config, random_tokens, seq2seq_config, tiny_linear_lm, tiny_lm

from t2r import attention as A
from t2r import recurrent as R
from t2r.errors import ConfigError, ContractError
from t2r.model import Model, lm_forward, swap_attention
from t2r.tensor import Tensor


# --- state update -------------------------------------------------------------


def test_state_update_single_term():
    st = R.RecurrentState.zeros(1, 1, 3, 2)
    phi = np.array([1.0, 2.0, 0.5])
    v = np.array([3.0, -1.0])
    R.state_update(st, phi, v)
    assert np.allclose(st.s[0, 0], np.outer(phi, v))
    assert np.allclose(st.z[0, 0], phi)
    assert st.step == 1


def test_state_update_zero_feature_only_counts():
    st = R.RecurrentState.zeros(1, 2, 3, 2)
    R.state_update(st, np.ones((2, 3)), np.ones((2, 2)))
    s0, z0 = st.s.copy(), st.z.copy()
    R.state_update(st, np.zeros((2, 3)), np.ones((2, 2)))
    assert np.array_equal(st.s, s0)
    assert np.array_equal(st.z, z0)
    assert st.step == 2


def test_sequential_updates_equal_batch_sums():
    rng = np.random.default_rng(0)
    r, n, k, d = 2, 9, 4, 3
    phis = rng.uniform(0, 1, (r, n, k))
    vals = rng.standard_normal((r, n, d))
    st = R.RecurrentState.zeros(1, r, k, d)
    for i in range(n):
        R.state_update(st, phis[:, i], vals[:, i])
    s_batch = np.einsum("rnk,rnd->rkd", phis, vals)
    z_batch = phis.sum(axis=1)
    assert np.abs(st.s[0] - s_batch).max() <= 1e-12
    assert np.abs(st.z[0] - z_batch).max() <= 1e-12


def test_z_monotone_for_nonnegative_features():
    rng = np.random.default_rng(1)
    st = R.RecurrentState.zeros(1, 1, 5, 2)
    prev = st.z.copy()
    for _ in range(20):
        R.state_update(st, np.abs(rng.standard_normal(5)), rng.standard_normal(2))
        assert np.all(st.z >= prev)
        prev = st.z.copy()


# --- readout -------------------------------------------------------------------


def test_readout_single_update_returns_value():
    st = R.RecurrentState.zeros(1, 1, 3, 2)
    phi = np.array([0.5, 1.0, 0.2])
    v = np.array([2.0, -3.0])
    R.state_update(st, phi, v)
    out = R.readout(st, np.array([1.0, 1.0, 1.0]))
    assert np.allclose(out, v, atol=1e-12)


def test_readout_zero_query_guarded():
    st = R.RecurrentState.zeros(1, 1, 3, 2)
    R.state_update(st, np.ones(3), np.ones(2))
    assert np.array_equal(R.readout(st, np.zeros(3)), np.zeros(2))


def test_readout_empty_context_rejected():
    st = R.RecurrentState.zeros(1, 1, 3, 2)
    with pytest.raises(ContractError):
        R.readout(st, np.ones(3))


def test_readout_matches_parallel_positionwise():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        r, n, k, d = 2, 7, 3, 4
        phi_q = np.abs(rng.standard_normal((r, n, k))) + 0.05
        phi_k = np.abs(rng.standard_normal((r, n, k))) + 0.05
        vals = rng.standard_normal((r, n, d))
        out, _ = A.linear_attention_parallel(Tensor(phi_q), Tensor(phi_k), Tensor(vals), causal=True)
        par = out.data.reshape(n, r, d)
        st = R.RecurrentState.zeros(1, r, k, d)
        for i in range(n):
            R.state_update(st, phi_k[:, i], vals[:, i])
            rec = R.readout(st, phi_q[:, i])
            assert np.abs(rec - par[i]).max() <= 1e-10


# --- cross state -----------------------------------------------------------------


def test_cross_state_single_position():
    phi = np.abs(np.random.default_rng(2).standard_normal((1, 1, 1, 3)))
    v = np.random.default_rng(3).standard_normal((1, 1, 1, 2))
    st = R.precompute_cross_state(phi, v)
    assert np.allclose(st.s[0, 0], np.outer(phi[0, 0, 0], v[0, 0, 0]))
    assert st.step == 1


def test_cross_state_equals_fold():
    rng = np.random.default_rng(4)
    phi = np.abs(rng.standard_normal((1, 2, 6, 3)))
    v = rng.standard_normal((1, 2, 6, 4))
    st = R.precompute_cross_state(phi, v)
    fold = R.RecurrentState.zeros(1, 2, 3, 4)
    for j in range(6):
        R.state_update(fold, phi[0, :, j], v[0, :, j])
    assert np.abs(st.s - fold.s).max() <= 1e-12
    assert np.abs(st.z - fold.z).max() <= 1e-12


def test_cross_state_rejects_empty_source():
    with pytest.raises(ContractError):
        R.precompute_cross_state(np.zeros((1, 1, 0, 3)), np.zeros((1, 1, 0, 2)))


def test_cross_state_object_stable_across_decode():
    model = Model.init(seq2seq_config(max_positions=128), seed=5)
    ckpt = swap_attention(model.to_checkpoint(), "mlp", sites=("causal", "cross"), k_causal=3, k_cross=2)
    student = Model.from_checkpoint(ckpt)
    from t2r.model import encode
    from t2r import tensor as T

    with T.suspend_tape():
        memory, _ = encode(student, np.array([[1, 2, 3]]))
    session = R.DecodeSession(student, 1, 100, memory=memory.data)
    states = [layer["state"] for layer in session.cross]
    steps = [st.step for st in states]
    for t in range(100):
        session.step(np.array([t % student.config.vocab]))
    assert [layer["state"] for layer in session.cross] == states
    assert [st.step for st in states] == steps


# --- weight merging -----------------------------------------------------------------


def test_merge_identity_feature_map():
    rng = np.random.default_rng(6)
    w = A.init_attention_weights(rng, heads=2, head_dim=3)
    w.b_q.data[:] = rng.standard_normal((2, 3))
    spec = A.FeatureMapSpec(
        "mlp", 3, 3, 2,
        {"feat_w": Tensor(np.stack([np.eye(3)] * 2)), "feat_b": Tensor(np.zeros((2, 3)))},
    )
    merged = R.merge_feature_map(w, spec)
    assert np.array_equal(merged.w_q, w.w_q.data)
    assert np.array_equal(merged.b_q, w.b_q.data)
    assert np.array_equal(merged.w_k, w.w_k.data)


def test_merge_zero_input_gives_relu_of_bias():
    rng = np.random.default_rng(7)
    w = A.init_attention_weights(rng, heads=1, head_dim=2)
    w.b_q.data[:] = 0.0
    spec = A.FeatureMapSpec.mlp_relu(rng, heads=1, feature_size=4, head_dim=2)
    spec.params["feat_b"].data[:] = rng.standard_normal((1, 4))
    merged = R.merge_feature_map(w, spec)
    out = np.maximum(merged.w_q[0] @ np.zeros(2 * 1) + merged.b_q[0], 0.0)
    assert np.allclose(out, np.maximum(spec.params["feat_b"].data[0], 0.0))


def test_merge_matches_composed_path_100_inputs():
    rng = np.random.default_rng(8)
    r, d, k = 2, 3, 5
    h = r * d
    w = A.init_attention_weights(rng, heads=r, head_dim=d)
    w.b_q.data[:] = rng.standard_normal((r, d))
    w.b_k.data[:] = rng.standard_normal((r, d))
    spec = A.FeatureMapSpec.mlp_relu(rng, heads=r, feature_size=k, head_dim=d)
    spec.params["feat_b"].data[:] = rng.standard_normal((r, k))
    merged = R.merge_feature_map(w, spec)
    for _ in range(100):
        x = rng.standard_normal(h)
        for head in range(r):
            q = w.w_q.data[head] @ x + w.b_q.data[head]
            composed = np.maximum(spec.params["feat_w"].data[head] @ q + spec.params["feat_b"].data[head], 0.0)
            direct = np.maximum(merged.w_q[head] @ x + merged.b_q[head], 0.0)
            assert np.abs(composed - direct).max() <= 1e-12
            kk = w.w_k.data[head] @ x + w.b_k.data[head]
            composedk = np.maximum(spec.params["feat_w"].data[head] @ kk + spec.params["feat_b"].data[head], 0.0)
            directk = np.maximum(merged.w_k[head] @ x + merged.b_k[head], 0.0)
            assert np.abs(composedk - directk).max() <= 1e-12


def test_merge_rejects_non_mlp():
    rng = np.random.default_rng(9)
    w = A.init_attention_weights(rng, heads=1, head_dim=4)
    with pytest.raises(ConfigError):
        R.merge_feature_map(w, A.FeatureMapSpec.elu(1, 4))


# --- footprint -----------------------------------------------------------------------


def test_state_footprint_paper_config():
    cfg = lm_config(n_layers=1, heads=8, head_dim=128, ffn_dim=4, vocab=8,
                    max_positions=2, kinds=("linear",), k_causal=32)
    assert R.state_footprint(cfg) == 33024


def test_state_footprint_linear_in_k():
    base = lm_config(kinds=("linear", "linear"), k_causal=8)
    double = lm_config(kinds=("linear", "linear"), k_causal=16)
    assert R.state_footprint(double) == 2 * R.state_footprint(base)


def test_state_footprint_matches_live_decode_counts():
    model = tiny_linear_lm(seed=10, k=4, max_positions=600)
    _, stats = R.generate(model, np.array([1, 2]), 512, mode="recurrent", collect_stats=True)
    counts = stats.per_batch_elements()
    assert len(set(counts)) == 1  # constant at every step
    assert counts[0] == R.state_footprint(model.config)


# --- generate -------------------------------------------------------------------------


def test_generate_rejects_nonpositive_steps():
    model = tiny_linear_lm(seed=11)
    with pytest.raises(ContractError):
        R.generate(model, np.array([1]), 0)


def test_generate_rejects_empty_prompt():
    model = tiny_linear_lm(seed=11)
    with pytest.raises(ContractError):
        R.generate(model, np.zeros(0, dtype=np.int64), 4)


def test_generate_rejects_unknown_mode():
    model = tiny_linear_lm(seed=11)
    with pytest.raises(ConfigError):
        R.generate(model, np.array([1]), 2, mode="beam")


@pytest.mark.parametrize("feature_kind", ["mlp", "elu", "rfa"])
def test_recurrent_equals_parallel_256_steps(feature_kind):
    model = tiny_linear_lm(seed=12, feature_kind=feature_kind, k=4, max_positions=300)
    prompt = np.array([1, 2, 3])
    rec = R.generate(model, prompt, 256, mode="recurrent")
    par = R.generate(model, prompt, 256, mode="parallel")
    assert np.array_equal(rec, par)


def test_recurrent_equals_parallel_softmax_teacher():
    model = tiny_lm(seed=13, max_positions=80)
    prompt = np.array([5, 1])
    rec = R.generate(model, prompt, 64, mode="recurrent")
    par = R.generate(model, prompt, 64, mode="parallel")
    assert np.array_equal(rec, par)


def test_recurrent_equals_parallel_hybrid():
    teacher = tiny_lm(n_layers=4, seed=14, max_positions=80)
    ckpt = swap_attention(teacher.to_checkpoint(), "mlp", k_causal=4, keep_every_nth_from_top=2, seed=2)
    model = Model.from_checkpoint(ckpt)
    prompt = np.array([2, 7, 7])
    rec = R.generate(model, prompt, 48, mode="recurrent")
    par = R.generate(model, prompt, 48, mode="parallel")
    assert np.array_equal(rec, par)


@pytest.mark.parametrize("feature_kind", ["mlp", "elu", "rfa"])
def test_stepwise_logits_match_parallel_forward(feature_kind):
    for seed in range(5):
        model = tiny_linear_lm(seed=20 + seed, feature_kind=feature_kind, k=4)
        rng = np.random.default_rng(seed)
        tokens = random_tokens(rng, 12, model.config.vocab)
        par = lm_forward(model, tokens).data
        rec = R.stepwise_logits(model, tokens)
        assert np.abs(par - rec).max() <= 1e-10


def test_stepwise_logits_match_softmax_and_hybrid():
    rng = np.random.default_rng(30)
    teacher = tiny_lm(n_layers=3, seed=31)
    tokens = random_tokens(rng, 10, teacher.config.vocab)
    assert np.abs(lm_forward(teacher, tokens).data - R.stepwise_logits(teacher, tokens)).max() <= 1e-10
    hybrid = Model.from_checkpoint(
        swap_attention(teacher.to_checkpoint(), "mlp", k_causal=4, keep_every_nth_from_top=3, seed=4)
    )
    assert np.abs(lm_forward(hybrid, tokens).data - R.stepwise_logits(hybrid, tokens)).max() <= 1e-10


def test_seq2seq_generate_modes_agree():
    base = Model.init(seq2seq_config(max_positions=64), seed=32)
    ckpt = swap_attention(base.to_checkpoint(), "mlp", sites=("causal", "cross"), k_causal=3, k_cross=2, seed=5)
    model = Model.from_checkpoint(ckpt)
    src = np.array([1, 2, 3, 4])
    tgt_prompt = np.array([1])
    rec = R.generate_seq2seq(model, src, tgt_prompt, 20, mode="recurrent")
    par = R.generate_seq2seq(model, src, tgt_prompt, 20, mode="parallel")
    assert np.array_equal(rec, par)


def test_softmax_cache_grows_linear_state_constant():
    linear = tiny_linear_lm(seed=33, k=4, max_positions=64)
    _, stats_l = R.generate(linear, np.array([1]), 32, mode="recurrent", collect_stats=True)
    assert len(set(stats_l.state_elements)) == 1

    teacher = tiny_lm(seed=34, max_positions=64)
    _, stats_s = R.generate(teacher, np.array([1]), 32, mode="recurrent", collect_stats=True)
    counts = np.array(stats_s.state_elements)
    diffs = np.diff(counts)
    assert np.all(diffs == diffs[0]) and diffs[0] > 0
