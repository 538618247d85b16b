import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from a2summ import numerics as nx
from a2summ.alignmask import SegmentWindow as W
from a2summ.data import SampleRecord, make_batch
from a2summ.losses import LossWeights, objective
from a2summ.model import (
    ConfigError,
    ModelConfig,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    temperatures,
)
from a2summ.numerics import Tensor

from oracles import mask_oracle


def _sample(sid, N, M, seed, dv=5, dt=4):
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.choice(np.arange(1, N), size=M - 1, replace=False)) if M > 1 else []
    b = np.concatenate([[0], cuts, [N]]).astype(int)
    key = rng.random(M) < 0.5
    key[0] = True
    flab = np.zeros(N, np.int64)
    for k in range(M):
        flab[b[k] : b[k + 1]] = key[k]
    return SampleRecord(
        id=sid,
        frame_features=rng.normal(size=(N, dv)).astype(np.float32),
        sentence_features=rng.normal(size=(M, dt)).astype(np.float32),
        windows=[W(k, int(b[k]), int(b[k + 1])) for k in range(M)],
        frame_labels=flab,
        sentence_labels=key.astype(np.int64),
    )


def _cfg(**kw):
    base = dict(video_dim=5, text_dim=4, dim=8, heads=1, layers=1, dropout=0.0, max_positions=32, max_segments=16)
    base.update(kw)
    return ModelConfig(**base)


def _ln(x, g, b):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5) * g + b


def _gelu(x):
    return 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))


def reference_forward(sample, P, cfg):
    """Token-by-token numpy evaluation of the network for one sample."""
    P = {k: v.data.astype(np.float64) for k, v in P.items()}
    N, M = sample.n_frames, sample.n_sentences
    X = []
    seg_of_frame = [0] * N
    for w in sorted(sample.windows, key=lambda w: -w.sentence_index):
        for t in range(w.t_s, w.t_e):
            seg_of_frame[t] = w.sentence_index + 1
    X.append(P["cls_video"] + P["pos_table"][0] + P["seg_table"][0])
    for i in range(N):
        f = sample.frame_features[i] @ P["video_proj.w"] + P["video_proj.b"]
        X.append(f + P["pos_table"][i + 1] + P["seg_table"][seg_of_frame[i]])
    X.append(P["cls_text"] + P["pos_table"][0] + P["seg_table"][0])
    for k in range(M):
        s = sample.sentence_features[k] @ P["text_proj.w"] + P["text_proj.b"]
        X.append(s + P["pos_table"][k + 1] + P["seg_table"][k + 1])
    X = np.array(X)
    allowed = mask_oracle(N, M, [(w.sentence_index, w.t_s, w.t_e) for w in sample.windows])
    is_video = np.arange(len(X)) <= N
    H, d = cfg.heads, cfg.dim // cfg.heads
    for li in range(cfg.layers):
        b = f"blocks.{li}"
        h = _ln(X, P[f"{b}.ln1.g"], P[f"{b}.ln1.b"])
        Q, K, V = h @ P[f"{b}.wq.w"], h @ P[f"{b}.wk.w"], h @ P[f"{b}.wv.w"]
        out = np.zeros_like(X)
        for head in range(H):
            sl = slice(head * d, (head + 1) * d)
            for i in range(len(X)):
                logits = [Q[i, sl] @ K[j, sl] / math.sqrt(d) if allowed[i, j] else -math.inf for j in range(len(X))]
                mx = max(logits)
                e = [math.exp(v - mx) if v != -math.inf else 0.0 for v in logits]
                z = sum(e)
                out[i, sl] = sum(e[j] / z * V[j, sl] for j in range(len(X)))
        X = X + out @ P[f"{b}.wo.w"]
        h = _ln(X, P[f"{b}.ln2.g"], P[f"{b}.ln2.b"])
        for i in range(len(X)):
            e = "video_ffn" if is_video[i] else "text_ffn"
            u = _gelu(h[i] @ P[f"{b}.{e}.fc1.w"] + P[f"{b}.{e}.fc1.b"])
            X[i] = X[i] + u @ P[f"{b}.{e}.fc2.w"] + P[f"{b}.{e}.fc2.b"]
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    p = sig(X[1 : N + 1] @ P["frame_head.w"][:, 0] + P["frame_head.b"][0])
    q = sig(X[N + 2 :] @ P["sentence_head.w"][:, 0] + P["sentence_head.b"][0])
    return X, p, q


@pytest.mark.parametrize("heads,layers", [(1, 1), (2, 2)])
def test_forward_matches_token_loop_reference(heads, layers):
    cfg = _cfg(heads=heads, layers=layers)
    params = init_params(cfg, seed=3).astype(np.float64)
    s = _sample("a", 7, 3, seed=1)
    with nx.precision(np.float64):
        out = forward(make_batch([s]), params, cfg)
    Z, p, q = reference_forward(s, params, cfg)
    np.testing.assert_allclose(out.Z.data[0], Z, atol=1e-10)
    np.testing.assert_allclose(out.p.data[0], p, atol=1e-10)
    np.testing.assert_allclose(out.q.data[0], q, atol=1e-10)


def test_zero_layers_is_embedding_plus_heads():
    cfg = _cfg(layers=0)
    params = init_params(cfg, seed=0).astype(np.float64)
    s = _sample("a", 5, 2, seed=2)
    with nx.precision(np.float64):
        out = forward(make_batch([s]), params, cfg)
    Z, p, _ = reference_forward(s, params, cfg)
    np.testing.assert_allclose(out.Z.data[0], Z, atol=1e-12)
    np.testing.assert_allclose(out.p.data[0], p, atol=1e-12)


def test_zero_sublayers_give_identity_blocks():
    cfg = _cfg(layers=2)
    params = init_params(cfg, seed=0)
    for name, t in params.items():
        if name.endswith("wo.w") or name.endswith("fc2.w") or name.endswith("fc2.b"):
            t.data[:] = 0
    s = _sample("a", 6, 2, seed=0)
    full = forward(make_batch([s]), params, cfg)
    emb = forward(make_batch([s]), params, _cfg(layers=0))
    np.testing.assert_array_equal(full.Z.data, emb.Z.data)


def test_zero_head_gives_half():
    cfg = _cfg()
    params = init_params(cfg, seed=0)
    for n in ("frame_head.w", "frame_head.b", "sentence_head.w", "sentence_head.b"):
        params[n].data[:] = 0
    out = forward(make_batch([_sample("a", 6, 2, 0)]), params, cfg)
    assert np.all(out.p.data == 0.5) and np.all(out.q.data == 0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_forbidden_tokens_do_not_influence(seed):
    # perturbing the features of a sentence changes no frame outside its window in a 1-layer model
    rng = np.random.default_rng(seed)
    cfg = _cfg(heads=2)
    params = init_params(cfg, seed=int(rng.integers(1000)))
    s = _sample("a", 8, 3, seed=int(rng.integers(1000)))
    base = forward(make_batch([s]), params, cfg).Z.data[0]
    k = int(rng.integers(3))
    s.sentence_features[k] += rng.normal(scale=5.0, size=s.sentence_features.shape[1]).astype(np.float32)
    pert = forward(make_batch([s]), params, cfg).Z.data[0]
    w = s.windows[k]
    outside = [1 + t for t in range(s.n_frames) if not w.t_s <= t < w.t_e] + [0]
    assert np.max(np.abs(pert[outside] - base[outside])) < 1e-6


def test_padding_does_not_change_outputs():
    cfg = _cfg(heads=2, layers=2)
    params = init_params(cfg, seed=1)
    a, b = _sample("a", 6, 2, 0), _sample("b", 10, 4, 1)
    alone = forward(make_batch([a]), params, cfg)
    padded = forward(make_batch([a, b], pad_len=20), params, cfg)
    np.testing.assert_allclose(padded.p.data[0, :6], alone.p.data[0], atol=1e-6)
    np.testing.assert_allclose(padded.q.data[0, :2], alone.q.data[0], atol=1e-6)


def test_batched_objective_is_sum_of_singles_without_inter():
    cfg = _cfg(heads=2)
    params = init_params(cfg, seed=4).astype(np.float64)
    w = LossWeights(beta=0.0, lam=1.0, r=2, expansion=0)
    samples = [_sample("a", 6, 2, 0), _sample("b", 9, 3, 1)]
    with nx.precision(np.float64):
        joint = objective(forward(make_batch(samples), params, cfg), make_batch(samples), w, 0.5, 0.5)["total"].item()
        singles = sum(
            objective(forward(make_batch([s]), params, cfg), make_batch([s]), w, 0.5, 0.5)["total"].item()
            for s in samples
        )
    assert joint == pytest.approx(singles, rel=1e-10)


def test_same_seed_same_params():
    a, b = init_params(_cfg(), 9), init_params(_cfg(), 9)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    c = init_params(_cfg(), 10)
    assert not np.array_equal(a["video_proj.w"].data, c["video_proj.w"].data)


def test_temperature_init_and_clamp():
    params = init_params(_cfg(), 0)
    ti, ta = temperatures(params)
    assert ti.item() == pytest.approx(0.07, rel=1e-6) and ta.item() == pytest.approx(0.07, rel=1e-6)
    params["log_tau_inter"].data[:] = 5.0
    assert temperatures(params)[0].item() == 1.0


def test_checkpoint_round_trip(tmp_path):
    cfg = _cfg(layers=2)
    params = init_params(cfg, 2)
    save_checkpoint(tmp_path / "a.a2sm", params, cfg, {"epoch": 3})
    back, cfg2, meta = load_checkpoint(tmp_path / "a.a2sm")
    assert cfg2 == cfg and meta == {"epoch": 3}
    assert list(back) == list(params)
    assert all(back[k].data.tobytes() == params[k].data.tobytes() for k in params)
    save_checkpoint(tmp_path / "b.a2sm", back, cfg2, meta)
    assert (tmp_path / "a.a2sm").read_bytes() == (tmp_path / "b.a2sm").read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ConfigError, match="magic"):
        load_checkpoint(tmp_path / "x")


def test_config_errors():
    with pytest.raises(ConfigError):
        init_params(_cfg(dim=10, heads=3))
    params = init_params(_cfg(max_positions=4), 0)
    with pytest.raises(ConfigError, match="max_positions"):
        forward(make_batch([_sample("a", 8, 2, 0)]), params, _cfg(max_positions=4))


def test_mean_score_gradient_wrt_projection():
    cfg = _cfg(heads=2)
    params = init_params(cfg, 5).astype(np.float64)
    batch = make_batch([_sample("a", 6, 2, 0)])

    def f(w):
        params.tensors["video_proj.w"] = w
        out = forward(batch, params, cfg)
        return nx.mean(nx.mul(out.p, Tensor(batch.frame_valid.astype(np.float64))))

    assert nx.grad_check(f, params["video_proj.w"].data) < 1e-4
