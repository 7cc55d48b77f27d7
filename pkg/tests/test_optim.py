import numpy as np
import pytest

from srpgan import loss as L
from srpgan.gradcheck import tiny_models
from srpgan.optim import (AdamState, DivergenceError, Schedule, adam_step, discriminator_gradients,
                          generator_gradients, train_iteration)
from srpgan.tensor import NonFiniteError, Parameter


def scalar_param(value=0.0, grad=0.0):
    return Parameter("theta", np.array([value]), np.array([grad]))


class TestAdam:
    def test_first_step(self):
        p = scalar_param(0.0, 1.0)
        adam_step([p], AdamState(), 1e-4)
        assert p.data[0] == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-12)

    def test_default_hyperparameters(self):
        s = AdamState()
        assert (s.beta1, s.beta2, s.eps) == (0.9, 0.99, 1e-8)

    def test_zero_gradient(self):
        p = scalar_param(0.3, 0.0)
        s = AdamState()
        adam_step([p], s, 1e-3)
        assert p.data[0] == 0.3 and s.t == 1
        assert np.all(s.v["theta"] >= 0)

    def test_quadratic(self):
        p = scalar_param(1.0)
        s = AdamState()
        for _ in range(100):
            p.grad[...] = 2 * p.data
            adam_step([p], s, 0.1)
        assert abs(p.data[0]) < 0.1

    def test_step_size_tends_to_lr(self):
        p = scalar_param(0.0, 0.37)
        s = AdamState()
        for _ in range(200):
            before = p.data[0]
            adam_step([p], s, 1e-3)
        assert abs(before - p.data[0]) == pytest.approx(1e-3, rel=0.01)

    def test_counter(self):
        p = scalar_param(0.0, 1.0)
        s = AdamState()
        for k in range(1, 4):
            adam_step([p], s, 1e-3)
            assert s.t == k

    def test_non_finite_gradient_names_parameter(self):
        p = scalar_param(0.0, np.nan)
        with pytest.raises(NonFiniteError, match="theta"):
            adam_step([p], AdamState(), 1e-3)

    def test_bad_lr(self):
        with pytest.raises(ValueError):
            adam_step([scalar_param()], AdamState(), 0.0)


class TestSchedule:
    def test_switch(self):
        s = Schedule()
        assert s.lr(0) == 1e-4 and s.lr(999_999) == 1e-4 and s.lr(1_000_000) == 1e-5

    def test_non_increasing(self):
        s = Schedule(1e-3, 1e-4, 50)
        lrs = [s.lr(t) for t in range(120)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def batch(seed=0, n=2):
    rng = np.random.default_rng(seed)
    y = rng.random((n, 3, 16, 16)).astype(np.float32)
    z = np.clip(y + 0.05 * rng.standard_normal(y.shape), 0, 1).astype(np.float32)
    return z, y


def f32_models(seed):
    g, d, _ = tiny_models(seed, np.float32)
    return g, d


class TestTrainIteration:
    def test_d_step_leaves_g_untouched(self):
        g, d = f32_models(0)
        z, y = batch()
        before = {k: v.copy() for k, v in g.state_dict().items()}
        discriminator_gradients(z, y, g, d, L.LossWeights())
        adam_step(d.parameters(), AdamState(), 1e-3)
        assert all(np.array_equal(before[k], v) for k, v in g.state_dict().items())

    def test_g_step_leaves_d_untouched(self):
        g, d = f32_models(0)
        z, y = batch()
        before = {k: v.copy() for k, v in d.state_dict().items()}
        generator_gradients(z, y, g, d, L.LossWeights())
        adam_step(g.parameters(), AdamState(), 1e-3)
        assert all(np.array_equal(before[k], v) for k, v in d.state_dict().items())
        assert all(np.all(p.grad == 0) for p in d.parameters())

    def test_both_networks_move(self):
        g, d = f32_models(1)
        z, y = batch(1)
        g0, d0 = [{k: v.copy() for k, v in m.state_dict().items()} for m in (g, d)]
        train_iteration(z, y, g, d, L.LossWeights(), AdamState(), AdamState(), Schedule(), 0)
        assert any(not np.array_equal(g0[k], v) for k, v in g.state_dict().items())
        assert any(not np.array_equal(d0[k], v) for k, v in d.state_dict().items())

    def test_report_identities(self):
        g, d = f32_models(2)
        z, y = batch(2)
        w = L.LossWeights()
        sg, sd = AdamState(), AdamState()
        for t in range(3):
            r = train_iteration(z, y, g, d, w, sg, sd, Schedule(), t)
            assert r.l_d == pytest.approx(-r.l_a + w.lambda_d * r.l_p, rel=1e-6)
            assert r.l_g == pytest.approx(r.l_a + w.lambda1 * r.l_p + w.lambda2 * r.l_y, rel=1e-6)

    def test_zero_weights_still_report_parts(self):
        g, d = f32_models(3)
        z, y = batch(3)
        w = L.LossWeights(lambda_d=0, lambda1=0, lambda2=0)
        r = train_iteration(z, y, g, d, w, AdamState(), AdamState(), Schedule(), 0)
        assert r.l_y > 0 and r.l_p > 0
        assert r.l_g == r.l_a and r.l_d == -r.l_a

    def test_deterministic(self):
        traces = []
        for _ in range(2):
            g, d = f32_models(5)
            z, y = batch(5)
            sg, sd = AdamState(), AdamState()
            traces.append([train_iteration(z, y, g, d, L.LossWeights(), sg, sd, Schedule(), t)
                           for t in range(10)])
        assert traces[0] == traces[1]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_guard_reports_iteration(self):
        g, d = f32_models(6)
        z, y = batch(6)
        z[0, 0, 0, 0] = np.nan
        with pytest.raises(DivergenceError) as info:
            train_iteration(z, y, g, d, L.LossWeights(), AdamState(), AdamState(), Schedule(), 42)
        assert info.value.iteration == 42
