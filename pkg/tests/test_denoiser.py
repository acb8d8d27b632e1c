import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdpm.denoiser import (Denoiser, DenoiserConfig, load_checkpoint, mse_loss, save_checkpoint,
                           silu, silu_grad, time_embedding)
from cdpm.errors import DataError, DivergedTrainingError, InvalidInputError, InvalidStateError
from cdpm.optim import AdamW, OptimizerConfig, learning_rate


def _random_net(rng, blocks=("point", "global", "point", "global"), hidden=6, cond=4, T=20, scale=0.4):
    cfg = DenoiserConfig(cond_width=cond, hidden=hidden, blocks=blocks, time_freqs=2, T=T, dtype="float64")
    net = Denoiser(cfg)
    for k, v in net.params.items():
        net.params[k] = rng.normal(size=v.shape) * scale
    return net


def _loop_forward(net, x, cond, t):
    """Reference forward pass, one point and one channel at a time."""
    cfg = net.config
    N = len(x)
    temb = time_embedding(t, cfg.T, cfg.time_freqs)
    h = [list(x[i]) + list(cond[i]) + list(temb) for i in range(N)]
    for b, kind in enumerate(cfg.blocks):
        W, bias = net.params[f"blocks.{b}.W"], net.params[f"blocks.{b}.b"]
        w = len(h[0])
        if kind == "global":
            hmax = [max(h[i][c] for i in range(N)) for c in range(w)]
            hmean = [sum(h[i][c] for i in range(N)) / N for c in range(w)]
        new = []
        for i in range(N):
            row = []
            for o in range(W.shape[1]):
                z = bias[o] + sum(h[i][c] * W[c, o] for c in range(w))
                if kind == "global":
                    z += sum(hmax[c] * W[w + c, o] + hmean[c] * W[2 * w + c, o] for c in range(w))
                row.append(z / (1 + np.exp(-z)))
            new.append(row)
        h = new
    Wo, bo = net.params["out.W"], net.params["out.b"]
    return np.array([[bo[o] + sum(h[i][c] * Wo[c, o] for c in range(len(h[i]))) for o in range(3)]
                     for i in range(N)])


def test_time_embedding_values():
    e = time_embedding(np.array([0, 5]), 10, 2)
    np.testing.assert_allclose(e[0], [0, 0, 1, 1], atol=1e-15)
    np.testing.assert_allclose(e[1], [1, 0, 0, -1], atol=1e-15)


def test_silu_and_grad():
    z = np.array([-30.0, -1.0, 0.0, 2.0, 800.0])
    np.testing.assert_allclose(silu(z), z / (1 + np.exp(-z)), atol=1e-15)
    h = 1e-6
    np.testing.assert_allclose(silu_grad(z[1:4]), (silu(z[1:4] + h) - silu(z[1:4] - h)) / (2 * h), rtol=1e-8)
    assert silu_grad(np.array([0.0]))[0] == 0.5


def test_tiny_net_by_hand():
    cfg = DenoiserConfig(cond_width=0, hidden=2, blocks=("point",), time_freqs=1, T=4, dtype="float64")
    params = {"blocks.0.W": np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.5, 0.0], [0.0, -1.0]]),
              "blocks.0.b": np.array([0.0, 0.5]),
              "out.W": np.array([[1.0, 0.0, 2.0], [0.0, 1.0, 0.0]]),
              "out.b": np.array([0.1, 0.2, 0.3])}
    net = Denoiser(cfg, params)
    # t = 1 of T = 4: embedding [sin(pi/4), cos(pi/4)]
    s = np.sqrt(0.5)
    z1 = 1.0 + 0.5 * s
    z2 = 2.0 - s + 0.5
    a1, a2 = z1 / (1 + np.exp(-z1)), z2 / (1 + np.exp(-z2))
    out = net(np.array([[1.0, 2.0, 3.0]]), np.zeros((1, 0)), 1)
    np.testing.assert_allclose(out[0], [a1 + 0.1, a2 + 0.2, 2 * a1 + 0.3], atol=1e-12)


@pytest.mark.parametrize("blocks", [("point",), ("global",), ("point", "global"), ("global", "global", "point")])
def test_forward_matches_loop_reference(rng, blocks):
    net = _random_net(rng, blocks)
    x = rng.normal(size=(7, 3))
    cond = rng.normal(size=(7, 4))
    np.testing.assert_allclose(net(x, cond, 3), _loop_forward(net, x, cond, 3), atol=1e-12)


def test_batched_equals_individual(rng):
    net = _random_net(rng)
    x = rng.normal(size=(3, 9, 3))
    c = rng.normal(size=(3, 9, 4))
    t = np.array([1, 7, 20])
    out = net(x, c, t)
    for b in range(3):
        np.testing.assert_allclose(out[b], net(x[b], c[b], t[b]), atol=1e-12)


@given(st.integers(0, 2 ** 31), st.integers(2, 12))
@settings(max_examples=25, deadline=None)
def test_permutation_equivariance(seed, n):
    r = np.random.default_rng(seed)
    net = _random_net(r)
    x = r.normal(size=(n, 3))
    c = r.normal(size=(n, 4))
    perm = r.permutation(n)
    np.testing.assert_allclose(net(x[perm], c[perm], 5), net(x, c, 5)[perm], atol=1e-12)


def test_zero_initialised_output():
    net = Denoiser(DenoiserConfig(hidden=16, T=10), seed=4)
    assert np.all(net(np.ones((5, 3)), np.ones((5, 5)), 3) == 0)


def _fd_check(net, x, cond, t, rng, h=1e-6):
    target = rng.normal(size=(len(x), 3))

    def loss():
        return mse_loss(net(x, cond, t), target)[0]

    _, dout = mse_loss(net.forward(x, cond, t), target)
    grads, dx, dcond = net.backward(dout)
    worst = 0.0
    for name, p in net.params.items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            dn = loss()
            p[idx] = old
            num[idx] = (up - dn) / (2 * h)
        denom = max(np.linalg.norm(num), np.linalg.norm(grads[name]), 1e-8)
        worst = max(worst, np.linalg.norm(num - grads[name]) / denom)
    for arr, g in ((x, dx), (cond, dcond)):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            dn = loss()
            arr[idx] = old
            num[idx] = (up - dn) / (2 * h)
        worst = max(worst, np.linalg.norm(num - g) / max(np.linalg.norm(num), 1e-8))
    return worst


@pytest.mark.parametrize("blocks", [("point",), ("global",), ("point", "global", "point", "global")])
def test_gradients_match_finite_differences(rng, blocks):
    net = _random_net(rng, blocks, hidden=5, cond=2)
    assert _fd_check(net, rng.normal(size=(6, 3)), rng.normal(size=(6, 2)), 4, rng) <= 1e-4


def test_zero_upstream_gives_zero_gradients(rng):
    net = _random_net(rng)
    net.forward(rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 5, 4)), 3)
    grads, dx, dc = net.backward(np.zeros((2, 5, 3)))
    assert all(np.all(g == 0) for g in grads.values())
    assert np.all(dx == 0) and np.all(dc == 0)


def test_parameter_gradients_invariant_to_point_order(rng):
    net = _random_net(rng)
    x, c = rng.normal(size=(8, 3)), rng.normal(size=(8, 4))
    dout = rng.normal(size=(8, 3))
    perm = rng.permutation(8)
    net.forward(x, c, 2)
    g1, dx1, _ = net.backward(dout)
    net.forward(x[perm], c[perm], 2)
    g2, dx2, _ = net.backward(dout[perm])
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-12)
    np.testing.assert_allclose(dx2, dx1[perm], atol=1e-12)


def test_backward_without_forward_fails(rng):
    net = _random_net(rng)
    with pytest.raises(InvalidStateError):
        net.backward(np.zeros((3, 3)))
    net(np.zeros((3, 3)), np.zeros((3, 4)), 1)  # inference keeps no cache
    with pytest.raises(InvalidStateError):
        net.backward(np.zeros((3, 3)))


def test_input_validation(rng):
    net = _random_net(rng)
    with pytest.raises(InvalidInputError):
        net(np.zeros((3, 3)), np.zeros((3, 5)), 1)
    with pytest.raises(InvalidInputError):
        net(np.zeros((3, 3)), np.zeros((3, 4)), 0)
    with pytest.raises(InvalidInputError):
        Denoiser(DenoiserConfig(hidden=4), {"out.W": np.zeros((4, 3))})
    with pytest.raises(InvalidInputError):
        DenoiserConfig(blocks=("conv",))


def test_translation_reaches_output_only_through_coordinate_rows(rng):
    net = _random_net(rng)
    x, c = rng.normal(size=(6, 3)), rng.normal(size=(6, 4))
    v = np.array([0.5, -1.0, 2.0])
    # the network itself is not translation equivariant, which is why centering lives outside it
    assert not np.allclose(net(x + v, c, 3), net(x, c, 3))
    net.params["blocks.0.W"][:3] = 0.0
    np.testing.assert_array_equal(net(x + v, c, 3), net(x, c, 3))


def test_checkpoint_round_trip(tmp_path, rng):
    net = Denoiser(DenoiserConfig(hidden=8, T=10), seed=1)
    for k in net.params:
        net.params[k] = rng.normal(size=net.params[k].shape).astype(np.float32)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, net, {"step": 7})
    back, header = load_checkpoint(path)
    assert header["step"] == 7 and back.config == net.config
    for k in net.params:
        np.testing.assert_array_equal(back.params[k], net.params[k])
    x, c = rng.normal(size=(4, 3)), rng.normal(size=(4, 5))
    np.testing.assert_array_equal(back(x, c, 2), net(x, c, 2))
    save_checkpoint(tmp_path / "again.bin", back, {"step": 7})
    assert (tmp_path / "again.bin").read_bytes() == path.read_bytes()


@pytest.mark.parametrize("mutate", [lambda b: b[:-3], lambda b: b + b"\0", lambda b: b"XXXX" + b[4:],
                                    lambda b: b[:10]])
def test_corrupt_checkpoint_rejected(tmp_path, mutate):
    path = tmp_path / "ck.bin"
    save_checkpoint(path, Denoiser(DenoiserConfig(hidden=4, T=10)))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_learning_rate_schedule():
    cfg = OptimizerConfig()
    assert learning_rate(cfg, 0) == 1e-5
    assert learning_rate(cfg, 1000) == pytest.approx(5.05e-4)
    assert learning_rate(cfg, 2000) == pytest.approx(1e-3)
    assert learning_rate(cfg, 51000) == pytest.approx(np.sqrt(1e-3 * 1e-8), rel=1e-9)
    assert learning_rate(cfg, 100_000) == 0.0
    lrs = [learning_rate(cfg, s) for s in range(2000, 100_001, 500)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_adamw_first_step_moves_by_lr():
    cfg = OptimizerConfig(base_lr=0.1, peak_lr=0.1, warmup_steps=0, total_steps=10, weight_decay=0.0, eps=0.0)
    p = {"a.W": np.array([3.0, -2.0]), "a.b": np.array([1.0])}
    lr = AdamW(cfg).step(p, {"a.W": p["a.W"].copy(), "a.b": p["a.b"].copy()})
    assert lr == 0.1
    np.testing.assert_allclose(p["a.W"], [2.9, -1.9])
    np.testing.assert_allclose(p["a.b"], [0.9])


def test_adamw_minimises_quadratic_and_skips_bias_decay():
    cfg = OptimizerConfig(base_lr=0.05, peak_lr=0.05, warmup_steps=0, total_steps=10**6, weight_decay=0.5)
    p = {"x.W": np.array([4.0, -3.0]), "x.b": np.array([2.0])}
    opt = AdamW(cfg)
    for _ in range(2000):
        opt.step(p, {"x.W": p["x.W"] - 1.0, "x.b": p["x.b"] - 1.0})
    assert np.all(np.abs(p["x.b"] - 1.0) < 1e-2)
    # decay pulls the weights below the unregularised optimum
    assert np.all(p["x.W"] < 1.0) and np.all(p["x.W"] > 0.8)


def test_adamw_rejects_non_finite():
    opt = AdamW(OptimizerConfig())
    with pytest.raises(DivergedTrainingError):
        opt.step({"w.W": np.zeros(2)}, {"w.W": np.array([np.nan, 0.0])})
