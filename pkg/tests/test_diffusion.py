import numpy as np
import pytest
import torch

from gesturediff.diffusion import (
    NoiseSchedule,
    cosine_schedule,
    huber_loss,
    load_schedule,
    posterior_step,
    q_sample,
    save_schedule,
)


def closed_form_alpha_bar(t, t_max, s=0.008):
    f = lambda x: np.cos(((x / t_max) + s) / (1 + s) * np.pi / 2) ** 2
    return f(t) / f(0)


def test_schedule_endpoints():
    for t_max in (50, 1000):
        schedule = cosine_schedule(t_max)
        assert schedule.alpha_bar[0] == 1.0
        assert schedule.alpha_bar[1] > 0.99
        assert schedule.alpha_bar[t_max] < 1e-3


def test_schedule_midpoint_matches_closed_form():
    # Independent evaluation of f(t)/f(0); beta clipping never bites at t/2.
    for t_max in (50, 1000):
        schedule = cosine_schedule(t_max)
        expected = closed_form_alpha_bar(t_max // 2, t_max)
        assert schedule.alpha_bar[t_max // 2] == pytest.approx(expected, rel=1e-10)


def test_schedule_invariants():
    schedule = cosine_schedule(200)
    assert np.all(np.diff(schedule.alpha_bar) < 0)
    assert np.all(schedule.beta[1:] > 0)
    assert np.all(schedule.beta[1:] <= 0.999)
    np.testing.assert_allclose(schedule.alpha, 1.0 - schedule.beta)


def test_schedule_validation():
    with pytest.raises(ValueError):
        cosine_schedule(0)
    with pytest.raises(ValueError, match="decreasing"):
        NoiseSchedule(t_max=2, beta=np.array([0.0, 0.5, 0.5]),
                      alpha=np.array([1.0, 0.5, 0.5]),
                      alpha_bar=np.array([1.0, 0.5, 0.6]))


def test_q_sample_extremes():
    x0 = torch.randn(4, 5, generator=torch.Generator().manual_seed(0))
    eps = torch.randn(4, 5, generator=torch.Generator().manual_seed(1))
    # Constructed schedule pinning alpha_bar at the two limits: ~1 at t=1
    # (x_t = x0) and ~0 at t=2 (x_t = eps).
    beta = np.array([0.0, 1e-14, 0.999])
    alpha = 1.0 - beta
    limits = NoiseSchedule(t_max=2, beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))
    assert torch.allclose(q_sample(x0, 1, eps, limits), x0, atol=1e-6)
    near_zero = q_sample(x0, 2, eps, limits)
    assert (near_zero - eps).abs().max().item() < 0.1  # alpha_bar[2] ~ 1e-3
    # Real cosine schedule: the same limits hold to schedule precision.
    schedule = cosine_schedule(1000)
    early = q_sample(x0, 1, eps, schedule)
    assert (early - x0).abs().max().item() < 4 * np.sqrt(1 - schedule.alpha_bar[1])
    late = q_sample(x0, 1000, eps, schedule)
    assert (late - eps).abs().max().item() < 1e-3


def test_q_sample_variance_preserved():
    schedule = cosine_schedule(100)
    g = torch.Generator().manual_seed(42)
    for t in (3, 50, 97):
        x0 = torch.randn(100_000, generator=g)
        eps = torch.randn(100_000, generator=g)
        x_t = q_sample(x0, t, eps, schedule)
        assert x_t.var().item() == pytest.approx(1.0, rel=0.02)


def test_q_sample_linear_superposition():
    schedule = cosine_schedule(50)
    g = torch.Generator().manual_seed(7)
    a, b = torch.randn(2, 6, generator=g), torch.randn(2, 6, generator=g)
    ea, eb = torch.randn(2, 6, generator=g), torch.randn(2, 6, generator=g)
    combined = q_sample(a + b, 20, ea + eb, schedule)
    split = q_sample(a, 20, ea, schedule) + q_sample(b, 20, eb, schedule)
    assert torch.allclose(combined, split, atol=1e-6)


def test_q_sample_batched_t():
    schedule = cosine_schedule(50)
    g = torch.Generator().manual_seed(3)
    x0 = torch.randn(3, 4, 5, generator=g)
    eps = torch.randn(3, 4, 5, generator=g)
    t = torch.tensor([1, 25, 50])
    batched = q_sample(x0, t, eps, schedule)
    for i, ti in enumerate(t.tolist()):
        single = q_sample(x0[i : i + 1], ti, eps[i : i + 1], schedule)
        assert torch.allclose(batched[i], single[0])


def test_q_sample_shape_mismatch():
    schedule = cosine_schedule(10)
    with pytest.raises(ValueError, match="shape"):
        q_sample(torch.zeros(2, 3), 5, torch.zeros(2, 4), schedule)
    with pytest.raises(ValueError, match="outside"):
        q_sample(torch.zeros(2, 3), 11, torch.zeros(2, 3), schedule)


def test_posterior_step_t1_returns_exact_mean():
    schedule = cosine_schedule(50)
    g = torch.Generator().manual_seed(5)
    x1 = torch.randn(4, 6, generator=g)
    x0_hat = torch.randn(4, 6, generator=g)
    noise = torch.randn(4, 6, generator=g)
    stepped = posterior_step(x1, x0_hat, 1, noise, schedule)
    # alpha_bar[0] = 1 makes the t=1 posterior mean collapse onto x0_hat.
    assert torch.allclose(stepped, x0_hat, atol=1e-6)


def test_posterior_mean_matches_direct_formula():
    schedule = cosine_schedule(80)
    g = torch.Generator().manual_seed(6)
    x_t = torch.randn(3, 4, generator=g, dtype=torch.float64)
    x0_hat = torch.randn(3, 4, generator=g, dtype=torch.float64)
    t = 37
    ab_t, ab_prev = schedule.alpha_bar[t], schedule.alpha_bar[t - 1]
    beta_t, alpha_t = schedule.beta[t], schedule.alpha[t]
    expected = (
        np.sqrt(ab_prev) * beta_t / (1 - ab_t) * x0_hat
        + np.sqrt(alpha_t) * (1 - ab_prev) / (1 - ab_t) * x_t
    )
    got = posterior_step(x_t, x0_hat, t, None, schedule)
    assert torch.allclose(got, expected, atol=1e-12)


def test_posterior_variance_applied():
    schedule = cosine_schedule(80)
    x_t = torch.zeros(8)
    x0_hat = torch.zeros(8)
    noise = torch.ones(8)
    t = 40
    got = posterior_step(x_t, x0_hat, t, noise, schedule)
    beta_tilde = (
        (1 - schedule.alpha_bar[t - 1]) / (1 - schedule.alpha_bar[t]) * schedule.beta[t]
    )
    assert torch.allclose(got, torch.full((8,), float(np.sqrt(beta_tilde))), atol=1e-12)


def test_posterior_step_range_check():
    schedule = cosine_schedule(10)
    with pytest.raises(ValueError, match="outside"):
        posterior_step(torch.zeros(2), torch.zeros(2), 0, None, schedule)


def test_oracle_reverse_recovers_target():
    # A denoiser that always answers the true x0, with zeroed fresh noise,
    # walks any start point back to x0.
    schedule = cosine_schedule(50)
    g = torch.Generator().manual_seed(9)
    target = torch.randn(5, 7, generator=g)
    x = torch.randn(5, 7, generator=g) * 3.0
    errors = []
    for t in range(schedule.t_max, 0, -1):
        x = posterior_step(x, target, t, None, schedule)
        errors.append((x - target).abs().max().item())
    assert errors[-1] < 1e-6
    # Contraction: deterministic error decreases monotonically.
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))


def test_huber_closed_forms():
    zero = huber_loss(torch.zeros(3, 3), torch.zeros(3, 3))
    assert zero.item() == 0.0
    inner = huber_loss(torch.tensor([0.5], dtype=torch.float64), torch.tensor([0.0], dtype=torch.float64))
    assert abs(inner.item() - 0.125) < 1e-12
    outer = huber_loss(torch.tensor([2.0], dtype=torch.float64), torch.tensor([0.0], dtype=torch.float64))
    assert abs(outer.item() - 1.5) < 1e-12


def test_huber_c1_at_delta():
    # Numerical derivative continuity across |e| = delta.
    delta = 1.0
    h = 1e-7
    f = lambda e: huber_loss(torch.tensor([e], dtype=torch.float64),
                             torch.tensor([0.0], dtype=torch.float64), delta).item()
    left = (f(delta) - f(delta - h)) / h
    right = (f(delta + h) - f(delta)) / h
    assert abs(left - right) < 1e-6
    assert abs(left - delta) < 1e-6


def test_huber_shape_mismatch():
    with pytest.raises(ValueError):
        huber_loss(torch.zeros(2), torch.zeros(3))


def test_schedule_serialization_round_trip(tmp_path):
    schedule = cosine_schedule(64)
    path = tmp_path / "schedule.gds1"
    save_schedule(path, schedule)
    loaded = load_schedule(path)
    assert loaded.t_max == 64
    np.testing.assert_allclose(loaded.beta, schedule.beta, atol=1e-7)
    np.testing.assert_allclose(loaded.alpha_bar, schedule.alpha_bar, atol=1e-6)
