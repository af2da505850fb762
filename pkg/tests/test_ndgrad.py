import numpy as np
import pytest

from eisgan_soh import ndgrad as ng


def make_bank(rng, k_out, r_in, k_w):
    return ng.ConvKernelBank(
        ng.Tensor(rng.standard_normal((k_out, r_in, k_w)), is_param=True),
        ng.Tensor(rng.standard_normal(k_out), is_param=True))


def central_diff(loss_fn, arrays, grads, h=1e-5, rel_tol=1e-4):
    """Compare analytic grads against central finite differences."""
    for arr, grad in zip(arrays, grads):
        flat = arr.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = loss_fn()
            flat[i] = old - h
            lm = loss_fn()
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            an = grad.ravel()[i]
            denom = max(abs(fd), abs(an), 1e-6)
            assert abs(fd - an) / denom < rel_tol, f"index {i}: fd={fd} analytic={an}"


# ---------------------------------------------------------------------------
# conv1d
# ---------------------------------------------------------------------------

def test_conv1d_identity_kernel():
    bank = ng.ConvKernelBank(ng.Tensor(np.ones((1, 1, 1))), ng.Tensor(np.zeros(1)))
    out = ng.conv1d(ng.Tensor([[1.0, 2.0, 3.0]]), bank, padding=0)
    np.testing.assert_array_equal(out.data, [[1.0, 2.0, 3.0]])


def test_conv1d_hand_sum():
    # kernel [1,1], bias 10: outputs are pairwise sums plus bias
    bank = ng.ConvKernelBank(ng.Tensor(np.ones((1, 1, 2))), ng.Tensor([10.0]))
    out = ng.conv1d(ng.Tensor([[1.0, 2.0, 3.0]]), bank, padding=0)
    np.testing.assert_array_equal(out.data, [[13.0, 15.0]])


def test_conv1d_bias_only():
    bank = ng.ConvKernelBank(ng.Tensor(np.zeros((2, 1, 3))), ng.Tensor([0.5, 0.5]))
    out = ng.conv1d(ng.Tensor(np.zeros((1, 8))), bank, padding=1)
    assert np.all(out.data == 0.5)


def test_conv1d_output_length():
    rng = np.random.default_rng(0)
    bank = make_bank(rng, 3, 2, 5)
    out = ng.conv1d(ng.Tensor(rng.standard_normal((2, 60))), bank, padding=2)
    assert out.shape == (3, 60)


def test_conv1d_channel_mismatch_rejected():
    rng = np.random.default_rng(0)
    bank = make_bank(rng, 3, 2, 5)
    with pytest.raises(ng.ShapeError):
        ng.conv1d(ng.Tensor(rng.standard_normal((4, 60))), bank, padding=2)


def test_conv1d_too_short_rejected():
    rng = np.random.default_rng(0)
    bank = make_bank(rng, 1, 1, 7)
    with pytest.raises(ng.ShapeError):
        ng.conv1d(ng.Tensor(rng.standard_normal((1, 4))), bank, padding=1)


def test_conv1d_matches_triple_loop_reference():
    rng = np.random.default_rng(7)
    for _ in range(20):
        r_in = rng.integers(1, 5)
        k_out = rng.integers(1, 9)
        k_w = rng.integers(1, 6)
        length = rng.integers(k_w, 65)
        pad = rng.integers(0, 3)
        x = rng.standard_normal((r_in, length))
        bank = make_bank(rng, k_out, r_in, k_w)
        out = ng.conv1d(ng.Tensor(x), bank, padding=pad).data
        xp = np.pad(x, ((0, 0), (pad, pad)))
        l_out = length + 2 * pad - k_w + 1
        ref = np.zeros((k_out, l_out))
        for o in range(k_out):
            for t in range(l_out):
                acc = bank.biases.data[o]
                for r in range(r_in):
                    for k in range(k_w):
                        acc += xp[r, t + k] * bank.kernels.data[o, r, k]
                ref[o, t] = acc
        assert np.abs(out - ref).max() < 1e-12


# ---------------------------------------------------------------------------
# dense / leaky_relu
# ---------------------------------------------------------------------------

def test_dense_identity():
    out = ng.dense(ng.Tensor([1.0, 2.0]), ng.Tensor(np.eye(2)), ng.Tensor(np.zeros(2)))
    np.testing.assert_array_equal(out.data, [1.0, 2.0])


def test_dense_hand_case():
    out = ng.dense(ng.Tensor([2.0, 3.0]), ng.Tensor([[1.0, 1.0]]), ng.Tensor([-1.0]))
    np.testing.assert_array_equal(out.data, [4.0])


def test_dense_zero_weights():
    out = ng.dense(ng.Tensor([2.0, 3.0]), ng.Tensor([[0.0, 0.0]]), ng.Tensor([7.0]))
    np.testing.assert_array_equal(out.data, [7.0])


def test_dense_shape_mismatch_rejected():
    with pytest.raises(ng.ShapeError):
        ng.dense(ng.Tensor([1.0, 2.0, 3.0]), ng.Tensor([[1.0, 1.0]]), ng.Tensor([0.0]))


def test_leaky_relu_values():
    out = ng.leaky_relu(ng.Tensor([2.0, -1.0, 0.0]), 0.01)
    np.testing.assert_allclose(out.data, [2.0, -0.01, 0.0])


def test_leaky_relu_alpha_range():
    with pytest.raises(ng.NdgradError):
        ng.leaky_relu(ng.Tensor([1.0]), 1.5)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def test_bce_logit_zero():
    for target in (True, False):
        out = ng.bce_logit_loss(ng.Tensor(0.0), target)
        assert abs(float(out.data) - np.log(2)) < 1e-12


def test_bce_logit_limit_real():
    out = ng.bce_logit_loss(ng.Tensor(500.0), True)
    assert float(out.data) < 1e-12


def test_bce_logit_fake_one():
    out = ng.bce_logit_loss(ng.Tensor(1.0), False)
    assert abs(float(out.data) - np.log(1 + np.e)) < 1e-12


def test_bce_logit_stable_at_700():
    for logit in (-700.0, 700.0):
        for target in (True, False):
            assert np.isfinite(float(ng.bce_logit_loss(ng.Tensor(logit), target).data))


def test_gaussian_nll_zero_residual():
    out = ng.gaussian_nll(ng.Tensor([0.3]), np.array([0.3]), 1.0)
    assert abs(float(out.data) - 0.5 * np.log(2 * np.pi)) < 1e-12


def test_gaussian_nll_quadratic_scaling():
    base = float(ng.gaussian_nll(ng.Tensor([1.0, 1.0, 1.0]), np.zeros(3), 2.0).data)
    doubled = float(ng.gaussian_nll(ng.Tensor([2.0, 2.0, 2.0]), np.zeros(3), 2.0).data)
    # residual doubling adds 3 * delta^2 / (2 sigma^2) to the quadratic term
    assert abs((doubled - base) - 3.0 * 3.0 / (2 * 4.0)) < 1e-12


def test_gaussian_nll_empty_code():
    out = ng.gaussian_nll(ng.Tensor(np.zeros(0)), np.zeros(0), 1.0)
    assert float(out.data) == 0.0


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def test_backward_sum_gives_ones():
    x = ng.Tensor(np.arange(6.0).reshape(2, 3), is_param=True)
    with ng.Tape() as tape:
        loss = ng.sum_all(x)
        (grad,) = ng.backward(tape, loss, [x])
    np.testing.assert_array_equal(grad, np.ones((2, 3)))


def test_backward_disconnected_param_zero():
    x = ng.Tensor([1.0, 2.0], is_param=True)
    unused = ng.Tensor([5.0], is_param=True)
    with ng.Tape() as tape:
        loss = ng.sum_all(x)
        grads = ng.backward(tape, loss, [x, unused])
    np.testing.assert_array_equal(grads[1], [0.0])


def test_backward_rejects_nonscalar_loss():
    x = ng.Tensor([1.0, 2.0], is_param=True)
    with ng.Tape() as tape:
        out = ng.leaky_relu(x, 0.1)
        with pytest.raises(ng.ShapeError):
            ng.backward(tape, out, [x])


def test_dense_lrelu_chain_matches_finite_differences():
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 6))
    b = rng.standard_normal(4)
    x = rng.standard_normal(6)

    def run():
        wt = ng.Tensor(w, is_param=True)
        bt = ng.Tensor(b, is_param=True)
        with ng.Tape() as tape:
            out = ng.leaky_relu(ng.dense(ng.Tensor(x), wt, bt), 0.01)
            loss = ng.sum_all(out)
            grads = ng.backward(tape, loss, [wt, bt])
        return float(loss.data), grads

    _, grads = run()
    central_diff(lambda: run()[0], [w, b], grads, rel_tol=1e-6)


def test_all_ops_gradcheck_random_shapes():
    # full-chain gradient check across >=100 random shape/seed draws
    rng = np.random.default_rng(11)
    checked = 0
    for trial in range(100):
        r_in = int(rng.integers(1, 4))
        length = int(rng.integers(6, 20))
        k_out = int(rng.integers(1, 4))
        k_w = int(rng.integers(1, 4))
        pad = int(rng.integers(0, 2))
        if length + 2 * pad < k_w:
            pad = k_w
        x = rng.standard_normal((r_in, length))
        kern = rng.standard_normal((k_out, r_in, k_w)) * 0.5
        bias = rng.standard_normal(k_out) * 0.1
        l_conv = length + 2 * pad - k_w + 1
        flat_dim = k_out * ((l_conv * 2) // 2)
        w2 = rng.standard_normal((3, flat_dim)) * 0.3
        b2 = rng.standard_normal(3) * 0.1
        code = rng.standard_normal(3)

        def run():
            bank = ng.ConvKernelBank(ng.Tensor(kern, is_param=True),
                                     ng.Tensor(bias, is_param=True))
            w2t = ng.Tensor(w2, is_param=True)
            b2t = ng.Tensor(b2, is_param=True)
            params = [bank.kernels, bank.biases, w2t, b2t]
            with ng.Tape() as tape:
                h = ng.conv1d(ng.Tensor(x), bank, padding=pad)
                h = ng.upsample_nearest(h, 2)
                h = ng.avg_pool1d(h, 2)
                h = ng.leaky_relu(h, 0.01)
                h = ng.reshape(h, (flat_dim,))
                out = ng.dense(h, w2t, b2t)
                loss = ng.add(ng.bce_logit_loss(out, bool(trial % 2)),
                              ng.scale(ng.gaussian_nll(out, code, 1.0), 0.1))
                grads = ng.backward(tape, loss, params)
            return float(loss.data), grads

        _, grads = run()
        central_diff(lambda: run()[0], [kern, bias, w2, b2], grads)
        checked += 1
    assert checked == 100


def test_tape_replay_determinism():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 12))
    kern = rng.standard_normal((3, 2, 3))
    bias = rng.standard_normal(3)

    def run():
        bank = ng.ConvKernelBank(ng.Tensor(kern, is_param=True),
                                 ng.Tensor(bias, is_param=True))
        with ng.Tape() as tape:
            out = ng.leaky_relu(ng.conv1d(ng.Tensor(x), bank, padding=1), 0.01)
            loss = ng.mean_all(out)
            grads = ng.backward(tape, loss, [bank.kernels, bank.biases])
        return float(loss.data), grads

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    for a, b in zip(g1, g2):
        assert np.array_equal(a, b)


def test_nonfinite_input_trapped():
    with pytest.raises(ng.NonFiniteError):
        ng.Tensor([1.0, np.nan])


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def test_adamp_zero_gradient_no_change():
    p = ng.Tensor([1.0, -2.0], is_param=True)
    opt = ng.AdamP([p], lr=1e-3)
    opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adamp_first_step_hand_trace():
    p = ng.Tensor([0.0], is_param=True)
    opt = ng.AdamP([p], lr=1e-3)
    opt.step([np.ones(1)])
    # bias-corrected first step: -lr * 1 / (1 + eps)
    expected = -1e-3 / (1 + 1e-8)
    assert abs(p.data[0] - expected) < 1e-12


def test_adamp_monotone_under_constant_gradient():
    p = ng.Tensor([1.0], is_param=True)
    opt = ng.AdamP([p], lr=1e-2)
    values = [p.data[0]]
    for _ in range(5):
        opt.step([np.ones(1)])
        values.append(p.data[0])
    assert all(b < a for a, b in zip(values, values[1:]))


def test_adamp_rejects_nonfinite_gradient():
    p = ng.Tensor([1.0], is_param=True)
    opt = ng.AdamP([p], lr=1e-3)
    with pytest.raises(ng.NonFiniteError):
        opt.step([np.array([np.inf])])


def test_adamp_projection_noop_without_scale_invariance():
    p1 = ng.Tensor([0.5, -0.5], is_param=True)
    p2 = ng.Tensor([0.5, -0.5], is_param=True)
    g = np.array([0.3, 0.7])
    on = ng.AdamP([p1], lr=1e-3, projection=True)
    off = ng.AdamP([p2], lr=1e-3, projection=False)
    for _ in range(3):
        on.step([g])
        off.step([g])
    np.testing.assert_array_equal(p1.data, p2.data)


def test_clip_global_norm():
    grads = [np.array([3.0]), np.array([4.0])]
    clipped, norm = ng.clip_global_norm(grads, 1.0)
    assert norm == 5.0
    total = np.sqrt(sum(np.sum(g * g) for g in clipped))
    assert abs(total - 1.0) < 1e-12
