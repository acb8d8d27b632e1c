import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdpm.denoiser import Denoiser, DenoiserConfig
from cdpm.diffusion import (ChainTrace, DiffusionState, forward_sample, forward_step, posterior_mean,
                            reverse_step, reverse_update, sample_chain, sample_chains, training_step,
                            zero_denoiser)
from cdpm.errors import InvalidInputError, InvalidStateError
from cdpm.geometry import centralize, centroid
from cdpm.rng import make_rng, standard_normal
from cdpm.schedule import linear_schedule


def test_standard_normal_moments():
    z = standard_normal(make_rng(7), (1_000_000,))
    se = 1 / np.sqrt(len(z))
    assert abs(z.mean()) < 5 * se
    assert abs(z.var() - 1) < 5 * np.sqrt(2) * se
    assert abs(np.mean(z ** 4) - 3) < 5 * np.sqrt(96) * se
    assert abs(np.mean(z ** 3)) < 5 * np.sqrt(15) * se


def test_streams_are_deterministic_and_distinct():
    a = standard_normal(make_rng(1, 2), (5,))
    np.testing.assert_array_equal(a, standard_normal(make_rng(1, 2), (5,)))
    assert not np.allclose(a, standard_normal(make_rng(1, 3), (5,)))


def test_forward_sample_examples():
    s = linear_schedule(10, 1e-2, 0.2)
    x0 = np.array([[1.0, 2.0, 3.0]])
    eps = np.array([[0.5, -0.5, 0.0]])
    t = 4
    expected = np.sqrt(s.alpha_bar[t]) * x0 + np.sqrt(1 - s.alpha_bar[t]) * eps
    np.testing.assert_array_equal(forward_sample(s, x0, t, eps), expected)
    np.testing.assert_array_equal(forward_sample(s, x0, 0, eps), x0)
    with pytest.raises(InvalidInputError):
        forward_sample(s, x0, 11, eps)
    with pytest.raises(InvalidInputError):
        forward_sample(s, x0, 1, np.zeros((2, 3)))


def test_forward_sample_per_batch_steps():
    s = linear_schedule(10, 1e-2, 0.2)
    x0 = np.ones((2, 4, 3))
    eps = np.zeros((2, 4, 3))
    out = forward_sample(s, x0, np.array([1, 7]), eps)
    np.testing.assert_allclose(out[0], np.sqrt(s.alpha_bar[1]))
    np.testing.assert_allclose(out[1], np.sqrt(s.alpha_bar[7]))


def test_single_step_inversion_with_true_noise(rng):
    s = linear_schedule(1, 0.05, 0.05)
    x0 = rng.normal(size=(32, 3))
    eps = rng.normal(size=(32, 3))
    x1 = forward_sample(s, x0, 1, eps)
    np.testing.assert_allclose(reverse_update(s, x1, 1, eps, None, center=False), x0, atol=1e-12)


@given(st.integers(2, 50), st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_reverse_mean_inverts_forward_at_any_step(T, seed):
    s = linear_schedule(T, 1e-3, 0.2)
    r = np.random.default_rng(seed)
    t = int(r.integers(1, T + 1))
    x_prev = r.normal(size=(8, 3))
    eps = r.normal(size=(8, 3))
    x_t = forward_step(s, x_prev, t, eps)
    # with the one-step noise scaled as the network would see it
    eps_eq = eps * np.sqrt(s.beta[t]) * np.sqrt(1 - s.alpha_bar[t]) / s.beta[t]
    np.testing.assert_allclose(posterior_mean(s, x_t, t, eps_eq), x_prev, atol=1e-9)


def test_ddpm_zero_denoiser_centroid_displacement(rng):
    s = linear_schedule(20, 1e-3, 0.2)
    x = rng.normal(size=(16, 3)) + 0.3
    z = rng.normal(size=(16, 3))
    t = 9
    out = reverse_update(s, x, t, np.zeros_like(x), z, center=False)
    expected = centroid(x) / np.sqrt(s.alpha[t]) + s.sigma[t] * z.mean(0)
    np.testing.assert_allclose(centroid(out), expected, atol=1e-13)


def test_final_step_adds_no_noise(rng):
    s = linear_schedule(5, 1e-3, 0.2)
    x = rng.normal(size=(8, 3))
    a = reverse_update(s, x, 1, np.zeros_like(x), rng.normal(size=(8, 3)), center=False)
    b = reverse_update(s, x, 1, np.zeros_like(x), None, center=False)
    np.testing.assert_array_equal(a, b)


def test_expected_ddpm_centroid_after_one_step(rng):
    # E[c_{t-1} | x_t] = c_t / sqrt(alpha_t) for a zero denoiser
    s = linear_schedule(10, 1e-2, 0.2)
    x = rng.normal(size=(8, 3)) + np.array([0.4, -0.2, 0.1])
    t, trials = 6, 20000
    z = rng.normal(size=(trials, 8, 3))
    outs = centroid(reverse_update(s, np.broadcast_to(x, z.shape), t, np.zeros_like(z), z, center=False))
    se = s.sigma[t] / np.sqrt(8 * trials)
    assert np.all(np.abs(outs.mean(0) - centroid(x) / np.sqrt(s.alpha[t])) < 5 * se)


def test_modes_agree_on_centered_inputs(rng):
    s = linear_schedule(10, 1e-3, 0.2)
    x = centralize(rng.normal(size=(12, 3)))
    eps = centralize(rng.normal(size=(12, 3)))
    z = centralize(rng.normal(size=(12, 3)))
    a = reverse_step(s, DiffusionState(5, x, "ddpm"), eps, z)
    b = reverse_step(s, DiffusionState(5, x, "cdpm"), eps, z)
    np.testing.assert_allclose(a.cloud, b.cloud, atol=1e-13)
    assert a.t == b.t == 4


def test_cdpm_step_stays_centered_for_arbitrary_prediction(rng):
    s = linear_schedule(10, 1e-3, 0.2)
    x = centralize(rng.normal(size=(12, 3)))
    out = reverse_step(s, DiffusionState(7, x), rng.normal(size=(12, 3)) + 5, rng.normal(size=(12, 3)))
    assert np.max(np.abs(centroid(out.cloud))) < 1e-12


def test_reverse_step_at_zero_is_error():
    s = linear_schedule(3, 1e-3, 0.2)
    with pytest.raises(InvalidStateError):
        reverse_step(s, DiffusionState(0, np.zeros((2, 3))), np.zeros((2, 3)), np.zeros((2, 3)))


def test_chain_depends_only_on_own_seed():
    s = linear_schedule(8, 1e-3, 0.2)
    a, _ = sample_chains(s, zero_denoiser, None, 10, "ddpm", [3, 4, 5], cond_width=5)
    b, tr = sample_chain(s, zero_denoiser, None, 10, "ddpm", 4, cond_width=5)
    np.testing.assert_array_equal(a[1], b)
    assert tr.t[0] == 8 and tr.t[-1] == 0
    np.testing.assert_array_equal(tr.centroid[-1], centroid(b))


def test_project_centers_override():
    s = linear_schedule(8, 1e-3, 0.2)
    x, tr = sample_chain(s, zero_denoiser, None, 10, "ddpm", 0, cond_width=5, project_centers=True)
    assert np.max(np.abs(tr.centroid)) < 1e-12


def test_trace_csv_round_trip():
    tr = ChainTrace(np.array([2, 1, 0]), np.arange(9.0).reshape(3, 3) / 7, np.full((3, 2), np.nan))
    back = ChainTrace.from_csv(tr.to_csv())
    np.testing.assert_array_equal(back.t, tr.t)
    np.testing.assert_array_equal(back.centroid, tr.centroid)
    assert np.all(np.isnan(back.pixel))


def _zero_net(T=10, cond=5):
    return Denoiser(DenoiserConfig(cond_width=cond, hidden=8, T=T, dtype="float64"), seed=0)


@pytest.mark.parametrize("mode,expected", [("ddpm", lambda n: 1.0), ("cdpm", lambda n: 1 - 1 / n)])
def test_training_loss_of_zero_network(mode, expected):
    # output layer starts at zero, so the loss is the (centered) noise energy
    n, trials = 8, 400
    s = linear_schedule(10, 1e-3, 0.2)
    net = _zero_net()
    r = make_rng(11)
    losses = [training_step(s, net, np.zeros((4, n, 3)), None, mode, r).loss for _ in range(trials)]
    sd = np.std(losses) / np.sqrt(trials)
    assert abs(np.mean(losses) - expected(n)) < 5 * sd


def test_training_step_exact_with_fixed_noise(rng):
    s = linear_schedule(10, 1e-3, 0.2)
    eps = rng.normal(size=(2, 6, 3))
    res = training_step(s, _zero_net(), rng.normal(size=(2, 6, 3)), None, "cdpm", rng, t=3, noise=eps)
    assert res.loss == pytest.approx(np.mean(centralize(eps) ** 2), rel=1e-12)
    assert res.centering_violations == 0
    np.testing.assert_array_equal(res.t, [3, 3])


def test_training_step_gradients_match_finite_differences(rng):
    s = linear_schedule(10, 1e-3, 0.2)
    net = Denoiser(DenoiserConfig(cond_width=5, hidden=6, T=10, dtype="float64"), seed=2)
    for k in net.params:
        net.params[k] = rng.normal(size=net.params[k].shape) * 0.3
    x0 = rng.normal(size=(2, 5, 3))
    eps = rng.normal(size=(2, 5, 3))
    t = np.array([2, 9])
    for mode in ("ddpm", "cdpm"):
        res = training_step(s, net, x0, None, mode, rng, t=t, noise=eps)
        for name in ("out.W", "blocks.0.W", "blocks.1.W"):
            p = net.params[name]
            idx = (0, 0)
            h = 1e-6
            old = p[idx]
            p[idx] = old + h
            up = training_step(s, net, x0, None, mode, rng, t=t, noise=eps).loss
            p[idx] = old - h
            dn = training_step(s, net, x0, None, mode, rng, t=t, noise=eps).loss
            p[idx] = old
            fd = (up - dn) / (2 * h)
            assert abs(fd - res.grads[name][idx]) <= 1e-6 + 1e-5 * abs(fd)
