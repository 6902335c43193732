import numpy as np
import pytest

from trajclone.network import (
    GmmHead,
    LinearHead,
    NetSpec,
    Normalizer,
    Params,
    adam_step,
    backward,
    clip_gradient_norm,
    fit_normalizer,
    forward,
    init_params,
    zero_params,
)


def small_spec(input_dim=5, layers=(7, 6), heads=None):
    heads = heads or {"gmm": GmmHead(2, 3), "affordance": LinearHead(4)}
    return NetSpec(input_dim, layers, heads)


def reference_forward(params, spec, x):
    """Straight-line reimplementation with explicit loops (the oracle)."""
    h = list(map(float, x))
    prev = spec.input_dim
    for i, width in enumerate(spec.fusion_layers):
        W = params.view(f"fusion{i}/W")
        b = params.view(f"fusion{i}/b")
        nxt = []
        for j in range(width):
            z = b[j]
            for a in range(prev):
                z += h[a] * W[a, j]
            nxt.append(max(z, 0.0))
        h = nxt
        prev = width
    outputs = {}
    for name, head in spec.heads.items():
        W = params.view(f"head:{name}/W")
        b = params.view(f"head:{name}/b")
        out = []
        for j in range(head.out_dim):
            z = b[j]
            for a in range(prev):
                z += h[a] * W[a, j]
            out.append(z)
        outputs[name] = np.asarray(out)
    return outputs


class TestForward:
    def test_zero_params_give_biases(self):
        spec = small_spec()
        params = zero_params(spec)
        out, _ = forward(params, spec, np.ones(spec.input_dim))
        for name, head in spec.heads.items():
            assert np.all(out[name] == 0.0)

    def test_identity_single_layer(self):
        spec = NetSpec(3, (), {"trajectory_l2": LinearHead(3)})
        params = zero_params(spec)
        params.view("head:trajectory_l2/W")[...] = np.eye(3)
        x = np.array([0.5, -1.0, 2.0])
        out, _ = forward(params, spec, x)
        assert out["trajectory_l2"] == pytest.approx(x)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            spec = small_spec()
            params = init_params(spec, rng)
            x = rng.standard_normal(spec.input_dim)
            out, _ = forward(params, spec, x)
            ref = reference_forward(params, spec, x)
            for name in spec.heads:
                assert np.max(np.abs(out[name] - ref[name])) < 1e-12

    def test_rejects_nonfinite(self):
        spec = small_spec()
        params = zero_params(spec)
        x = np.ones(spec.input_dim)
        x[0] = np.nan
        with pytest.raises(ValueError):
            forward(params, spec, x)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        spec = small_spec()
        params = init_params(spec, rng)
        xs = rng.standard_normal((4, spec.input_dim))
        batch, _ = forward(params, spec, xs)
        for i in range(4):
            single, _ = forward(params, spec, xs[i])
            for name in spec.heads:
                assert batch[name][i] == pytest.approx(single[name], abs=1e-14)


class TestBackward:
    def test_zero_upstream_zero_grad(self):
        rng = np.random.default_rng(2)
        spec = small_spec()
        params = init_params(spec, rng)
        _, cache = forward(params, spec, rng.standard_normal(spec.input_dim))
        g = backward(cache, {"gmm": np.zeros(spec.heads["gmm"].out_dim)})
        assert np.all(g == 0.0)

    def test_finite_difference_all_heads(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            spec = small_spec(input_dim=4, layers=(6, 5))
            params = init_params(spec, rng)
            params.values += 0.01 * rng.standard_normal(params.size)
            x = rng.standard_normal(spec.input_dim)
            up = {name: rng.standard_normal(h.out_dim)
                  for name, h in spec.heads.items()}

            def scalar():
                out, _ = forward(params, spec, x)
                return sum(float(np.dot(up[n], out[n])) for n in spec.heads)

            _, cache = forward(params, spec, x)
            analytic = backward(cache, up)
            h = 1e-5
            fd = np.empty(params.size)
            for j in range(params.size):
                orig = params.values[j]
                params.values[j] = orig + h
                hi = scalar()
                params.values[j] = orig - h
                lo = scalar()
                params.values[j] = orig
                fd[j] = (hi - lo) / (2 * h)
            denom = np.maximum(np.abs(fd), 1.0)
            assert np.max(np.abs(analytic - fd) / denom) < 1e-4

    def test_two_heads_sum_of_singles(self):
        rng = np.random.default_rng(4)
        spec = small_spec()
        params = init_params(spec, rng)
        x = rng.standard_normal(spec.input_dim)
        up = {name: rng.standard_normal(h.out_dim)
              for name, h in spec.heads.items()}
        _, cache = forward(params, spec, x)
        both = backward(cache, up)
        parts = sum(backward(cache, {n: up[n]}) for n in spec.heads)
        assert np.max(np.abs(both - parts)) < 1e-12


class TestAdam:
    def test_first_step_closed_form(self):
        spec = NetSpec(2, (), {"trajectory_l2": LinearHead(2)})
        params = zero_params(spec)
        g = np.full(params.size, 0.25)
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        adam_step(params, g, lr, b1, b2, eps)
        m_hat = (1 - b1) * g / (1 - b1)
        v_hat = (1 - b2) * g * g / (1 - b2)
        expected = -lr * m_hat / (np.sqrt(v_hat) + eps)
        assert params.values == pytest.approx(expected, abs=1e-15)

    def test_zero_grad_no_motion(self):
        spec = small_spec()
        params = init_params(spec, np.random.default_rng(5))
        before = params.values.copy()
        for _ in range(10):
            adam_step(params, np.zeros(params.size))
        assert np.array_equal(params.values, before)

    def test_bit_identical_runs(self):
        def run():
            rng = np.random.default_rng(6)
            spec = small_spec()
            params = init_params(spec, rng)
            for _ in range(50):
                g = rng.standard_normal(params.size)
                adam_step(params, g)
            return params.values.copy()

        assert np.array_equal(run(), run())


class TestClip:
    def test_scales_to_norm(self):
        g = np.array([6.0, 8.0])  # norm 10
        out = clip_gradient_norm(g, 5.0)
        assert np.linalg.norm(out) == pytest.approx(5.0, abs=1e-12)

    def test_under_limit_unchanged(self):
        g = np.array([3.0, 0.0])
        assert np.array_equal(clip_gradient_norm(g, 5.0), g)

    def test_direction_preserved(self):
        rng = np.random.default_rng(7)
        g = rng.standard_normal(20) * 10
        out = clip_gradient_norm(g, 1.0)
        cos = np.dot(g, out) / (np.linalg.norm(g) * np.linalg.norm(out))
        assert cos == pytest.approx(1.0, abs=1e-12)


class TestNormalizer:
    def test_zero_variance_errors_with_dimension(self):
        t = np.ones((10, 3))
        t[:, 0] = np.arange(10)
        t[:, 2] = np.arange(10) * 2
        with pytest.raises(ValueError, match=r"\[1\]"):
            fit_normalizer(t)

    def test_apply_invert_identity(self):
        rng = np.random.default_rng(8)
        t = rng.standard_normal((100, 4)) * 5 + 3
        nz = fit_normalizer(t)
        assert np.max(np.abs(nz.invert(nz.apply(t)) - t)) < 1e-9

    def test_fit_statistics(self):
        rng = np.random.default_rng(9)
        t = rng.standard_normal((1000, 3)) * np.array([2.0, 5.0, 0.1]) + 7
        z = fit_normalizer(t).apply(t)
        assert np.max(np.abs(z.mean(axis=0))) < 1e-9
        assert np.max(np.abs(z.std(axis=0) - 1.0)) < 1e-9

    def test_round_trip_dict(self):
        nz = Normalizer(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        nz2 = Normalizer.from_dict(nz.to_dict())
        assert np.array_equal(nz.mean, nz2.mean)
        assert np.array_equal(nz.std, nz2.std)
