"""History context encoder: time embedding, workout summaries, attention fusion."""
import numpy as np
import pytest

from hrcast import numerics as nx
from hrcast.histenc import (
    HistConfig,
    default_context,
    embed_gap,
    encode_context_batch,
    encode_history,
    encode_workout,
    encode_workouts,
    fuse_context,
    param_paths,
    register_params,
)


CFG = HistConfig(depth=4, bilstm_hidden=3, gru_hidden=4, attn_heads=2,
                 time_dim=2, context_dim=5)
INPUT_DIM = 3


def make_store(seed=0, zero=False):
    store = nx.ParameterStore()
    register_params(store, CFG, INPUT_DIM, np.random.default_rng(seed))
    if zero:
        for p in store.paths():
            store[p].data[:] = 0.0
    return store


def rand_workouts(n, T=7, seed=1):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(n, T, INPUT_DIM)), rng.normal(size=(n, T)),
            rng.uniform(0, 5000, n))


# ---------------------------------------------------------------------------
# time embedding


def test_embed_gap_zero_params_zero_output():
    store = make_store(zero=True)
    out = embed_gap([0.0, 3600.0], store)
    np.testing.assert_array_equal(out.data, 0.0)


def test_embed_gap_monotone_preactivation():
    store = make_store()
    store["hist.time.w"].data[:] = 1.0
    store["hist.time.b"].data[:] = 0.0
    gaps = [0.0, 60.0, 3600.0, 86400.0]
    out = embed_gap(gaps, store).data
    for d in range(CFG.time_dim):
        col = out[:, d]
        assert np.all(np.diff(col) > 0)


def test_embed_gap_rejects_negative():
    with pytest.raises(ValueError):
        embed_gap([-1.0], make_store())


def test_embed_gap_gradient():
    store = make_store()

    def fn():
        return nx.reduce_sum(nx.square(embed_gap([0.0, 10.0, 9999.0], store)))

    report = nx.grad_check(fn, [store["hist.time.w"], store["hist.time.b"]],
                           n_probes=30, rng=np.random.default_rng(0))
    assert report["max_rel_err"] < 1e-3


# ---------------------------------------------------------------------------
# workout summaries


def test_workout_summary_zero_params_is_zero():
    store = make_store(zero=True)
    ch, hr, gaps = rand_workouts(2)
    out = encode_workouts(ch, hr, gaps, store, CFG)
    assert out.shape == (2, CFG.summary_dim)
    np.testing.assert_array_equal(out.data, 0.0)


def test_workout_summaries_are_per_workout_independent():
    store = make_store()
    ch, hr, gaps = rand_workouts(3)
    full = encode_workouts(ch, hr, gaps, store, CFG).data
    solo = encode_workouts(ch[1:2], hr[1:2], gaps[1:2], store, CFG).data
    np.testing.assert_allclose(full[1], solo[0], rtol=1e-12)


def test_encode_workout_channel_major_wrapper():
    store = make_store()
    ch, hr, gaps = rand_workouts(1)
    batched = encode_workouts(ch, hr, gaps, store, CFG).data
    single = encode_workout(ch[0].T, hr[0], float(gaps[0]), store, CFG).data
    np.testing.assert_allclose(single, batched[0], rtol=1e-12)


def test_encode_workouts_rejects_empty_time_axis():
    store = make_store()
    with pytest.raises(ValueError):
        encode_workouts(np.zeros((1, 0, INPUT_DIM)), np.zeros((1, 0)), [0.0], store, CFG)


def test_workout_summary_gradient():
    store = make_store()
    ch, hr, gaps = rand_workouts(2, T=5)

    def fn():
        return nx.reduce_sum(nx.square(encode_workouts(ch, hr, gaps, store, CFG)))

    tensors = [store[p] for p in param_paths(store)]
    report = nx.grad_check(fn, tensors, n_probes=60, rng=np.random.default_rng(1))
    assert report["max_rel_err"] < 1e-3


# ---------------------------------------------------------------------------
# cross-workout recurrence


def test_encode_history_single_step_matches_gru_cell():
    store = make_store()
    rng = np.random.default_rng(5)
    w = rng.normal(size=(1, 1, CFG.summary_dim))
    ctx = encode_history(nx.Tensor(w), None, store, CFG).data
    cell = nx.gru_cell(nx.Tensor(w[:, 0]), nx.Tensor(np.zeros((1, CFG.gru_hidden))),
                       store["hist.gru.wx"], store["hist.gru.wh"],
                       store["hist.gru.bx"], store["hist.gru.bh"]).data
    np.testing.assert_allclose(ctx[0, 0], cell[0], rtol=1e-12)


def test_encode_history_is_causal():
    store = make_store()
    rng = np.random.default_rng(7)
    w = rng.normal(size=(1, 4, CFG.summary_dim))
    base = encode_history(nx.Tensor(w), None, store, CFG).data
    w2 = w.copy()
    w2[0, 3] += 10.0  # perturb the last workout only
    moved = encode_history(nx.Tensor(w2), None, store, CFG).data
    np.testing.assert_array_equal(base[0, :3], moved[0, :3])
    assert np.any(base[0, 3] != moved[0, 3])


# ---------------------------------------------------------------------------
# attention fusion


def test_fuse_context_single_slot_attends_to_itself():
    store = make_store()
    # make the attention path transparent so a == c(N)
    g = CFG.gru_hidden
    for name in ("wq", "wk", "wv", "wo"):
        store[f"hist.attn.{name}"].data[:] = np.eye(g)
    rng = np.random.default_rng(9)
    c = rng.normal(size=(2, 1, g))
    out_attn = nx.multi_head_attention(nx.Tensor(c[:, 0]), nx.Tensor(c), nx.Tensor(c),
                                       np.ones((2, 1), bool), store, "hist.attn",
                                       CFG.attn_heads)
    np.testing.assert_allclose(out_attn.data, c[:, 0], rtol=1e-12)
    fused = fuse_context(nx.Tensor(c), np.ones((2, 1), bool), store, CFG)
    assert fused.shape == (2, CFG.context_dim)


def test_fuse_context_ignores_padded_slots():
    store = make_store()
    rng = np.random.default_rng(11)
    c = rng.normal(size=(1, 4, CFG.gru_hidden))
    mask = np.array([[False, False, True, True]])
    base = fuse_context(nx.Tensor(c), mask, store, CFG).data
    c2 = c.copy()
    c2[0, 0] += 50.0  # padded slot content must not matter
    moved = fuse_context(nx.Tensor(c2), mask, store, CFG).data
    np.testing.assert_array_equal(base, moved)


def test_full_pipeline_zero_params_gives_zero_context():
    store = make_store(zero=True)
    ch, hr, gaps = rand_workouts(3, T=5)
    slot_of = [(0, 1), (0, 2), (0, 3)]
    out = encode_context_batch(ch, hr, gaps, slot_of, 1, store, CFG)
    np.testing.assert_array_equal(out.data, 0.0)


# ---------------------------------------------------------------------------
# default context


def test_empty_history_uses_shared_default():
    store = make_store()
    target = np.arange(CFG.context_dim, dtype=float)
    store["hist.default_context"].data[:] = target
    out = encode_context_batch(np.zeros((0, 5, INPUT_DIM)), np.zeros((0, 5)),
                               np.zeros(0), [], 3, store, CFG)
    assert out.shape == (3, CFG.context_dim)
    for b in range(3):
        np.testing.assert_array_equal(out.data[b], target)


def test_default_context_receives_gradients():
    store = make_store()
    store["hist.default_context"].data[:] = 1.5
    out = encode_context_batch(np.zeros((0, 5, INPUT_DIM)), np.zeros((0, 5)),
                               np.zeros(0), [], 2, store, CFG)
    nx.reduce_sum(nx.square(out)).backward()
    grad = store["hist.default_context"].grad
    # both batch rows pull on the shared vector: d/dx sum_b x^2 = 2*B*x
    np.testing.assert_allclose(grad, 6.0, rtol=1e-12)


def test_mixed_batch_empty_and_nonempty_histories():
    store = make_store()
    ch, hr, gaps = rand_workouts(2, T=5)
    store["hist.default_context"].data[:] = 7.0
    slot_of = [(0, 2), (0, 3)]  # example 0 has history, example 1 does not
    out = encode_context_batch(ch, hr, gaps, slot_of, 2, store, CFG).data
    np.testing.assert_array_equal(out[1], 7.0)
    assert np.any(out[0] != 7.0)
    # example 0 must match running it alone
    solo = encode_context_batch(ch, hr, gaps, [(0, 2), (0, 3)], 1, store, CFG).data
    np.testing.assert_allclose(out[0], solo[0], rtol=1e-12)


def test_context_batch_gradient_end_to_end():
    store = make_store()
    store["hist.default_context"].data[:] = 0.3
    ch, hr, gaps = rand_workouts(3, T=4)
    # example 2 is history-free, exercising the gather/fallback path too
    slot_of = [(0, 3), (1, 2), (1, 3)]

    def fn():
        out = encode_context_batch(ch, hr, gaps, slot_of, 3, store, CFG)
        return nx.reduce_sum(nx.square(out))

    tensors = [store[p] for p in param_paths(store)]
    report = nx.grad_check(fn, tensors, n_probes=80, rng=np.random.default_rng(2))
    assert report["max_rel_err"] < 1e-3
