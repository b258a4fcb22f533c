"""Tape engine: every primitive against central finite differences, plus
the lifecycle rules (finalization, foreign nodes, re-running backward).
"""

import numpy as np
import pytest

from euv_ilt import field as fd
from euv_ilt.autodiff import BLUR_PASSTHROUGH_SIGMA_PX, Tape, check_gradients
from euv_ilt.errors import ContractError, TapeError


def fd_grad(fn, x, h=1e-6):
    """Central-difference gradient of scalar fn at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy(); xp[idx] += h
        xm = x.copy(); xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
        it.iternext()
    return g


def assert_grad_matches(build, x0, rtol=1e-5, atol=1e-8, h=1e-6):
    """build(tape, node) -> scalar node; checks d(scalar)/dx at x0."""
    tape = Tape()
    leaf = tape.leaf(np.asarray(x0, dtype=np.float64), "x")
    out = build(tape, leaf)
    tape.backward(out)
    analytic = leaf.grad

    def value_at(x):
        t2 = Tape()
        l2 = t2.leaf(x, "x")
        return float(build(t2, l2).value)

    numeric = fd_grad(value_at, x0, h=h)
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


RNG = np.random.default_rng(42)


class TestPointwiseOps:
    def test_sigmoid(self):
        assert_grad_matches(lambda t, x: t.mean(t.sigmoid(x)), RNG.normal(size=(4, 4)))

    def test_tanh(self):
        assert_grad_matches(lambda t, x: t.mean(t.tanh(x)), RNG.normal(size=(4, 4)))

    def test_relu_away_from_kink(self):
        x0 = RNG.normal(size=(4, 4))
        x0[np.abs(x0) < 0.05] = 0.5
        assert_grad_matches(lambda t, x: t.mean(t.relu(x)), x0)

    def test_absval_away_from_kink(self):
        x0 = RNG.normal(size=(4, 4))
        x0[np.abs(x0) < 0.05] = -0.7
        assert_grad_matches(lambda t, x: t.mean(t.absval(x)), x0)

    def test_clamp_inside_passes_gradient(self):
        x0 = RNG.uniform(0.1, 0.9, size=(3, 3))
        assert_grad_matches(lambda t, x: t.mean(t.clamp01(x)), x0)

    def test_clamp_outside_zero_gradient(self):
        tape = Tape()
        leaf = tape.leaf(np.array([[2.0, -1.0], [0.5, 3.0]]), "x")
        out = tape.mean(tape.clamp01(leaf))
        tape.backward(out)
        np.testing.assert_array_equal(leaf.grad, [[0.0, 0.0], [0.25, 0.0]])

    def test_add_mul_sub_chain(self):
        def build(t, x):
            y = t.mul(x, x)
            z = t.add(y, t.scale(x, 3.0))
            return t.mean(t.sub(z, t.add_const(x, 1.0)))
        assert_grad_matches(build, RNG.normal(size=(5, 3)))

    def test_mul_broadcasting(self):
        a0 = RNG.normal(size=(4, 5, 6))
        tape = Tape()
        a = tape.leaf(a0, "a")
        b = tape.leaf(RNG.normal(size=(1, 5, 6)), "b")
        out = tape.mean(tape.mul(a, b))
        tape.backward(out)
        assert a.grad.shape == (4, 5, 6)
        assert b.grad.shape == (1, 5, 6)

    def test_scalar_leaf(self):
        assert_grad_matches(lambda t, x: t.mul(x, x), np.asarray(1.7))


class TestStructuredOps:
    def test_gradient_l1(self):
        x0 = RNG.normal(size=(6, 6))
        assert_grad_matches(lambda t, x: t.gradient_l1(x), x0, rtol=1e-4)

    def test_conv2d(self):
        k = RNG.normal(size=(3, 3))
        assert_grad_matches(lambda t, x: t.mean(t.conv2d(x, k)), RNG.normal(size=(7, 7)),
                            rtol=1e-4)

    def test_mean(self):
        assert_grad_matches(lambda t, x: t.mean(x), RNG.normal(size=(3, 8)))

    def test_reshape(self):
        def build(t, x):
            flat = t.reshape(x, (12,))
            return t.mean(t.mul(flat, flat))
        assert_grad_matches(build, RNG.normal(size=(3, 4)))

    def test_gaussian_blur_field_gradient(self):
        def build(t, x):
            sigma = t.leaf(1.4, "sigma")
            return t.mean(t.gaussian_blur(x, sigma))
        assert_grad_matches(build, RNG.normal(size=(9, 9)), rtol=1e-4)

    def test_gaussian_blur_sigma_gradient(self):
        x0 = RNG.random((9, 9))

        def loss_and_grad(params):
            tape = Tape()
            sigma = tape.leaf(params["sigma"], "sigma")
            x = tape.leaf(x0, "x")
            out = tape.mean(tape.mul(tape.gaussian_blur(x, sigma),
                                     tape.leaf(x0 * x0, "w")))
            tape.backward(out)
            return float(out.value), {"sigma": sigma.grad}

        reports = check_gradients(loss_and_grad, {"sigma": 1.8}, h=1e-5)
        assert reports[0].rel_err < 1e-6

    def test_blur_passthrough_zero_sigma_gradient(self):
        tape = Tape()
        sigma = tape.leaf(BLUR_PASSTHROUGH_SIGMA_PX - 0.05, "sigma")
        x = tape.leaf(RNG.random((6, 6)), "x")
        out = tape.mean(tape.gaussian_blur(x, sigma))
        tape.backward(out)
        assert sigma.grad == 0.0
        np.testing.assert_allclose(x.grad, np.full((6, 6), 1 / 36))

    def test_shift_x_field_gradient(self):
        def build(t, x):
            dx = t.leaf(0.6, "dx")
            return t.mean(t.mul(t.shift_x(x, dx), x))
        assert_grad_matches(build, RNG.normal(size=(5, 8)), rtol=1e-4)

    def test_shift_x_dx_gradient(self):
        x0 = RNG.random((5, 8))

        def loss_and_grad(params):
            tape = Tape()
            dx = tape.leaf(params["dx"], "dx")
            x = tape.leaf(x0, "x")
            out = tape.mean(tape.mul(tape.shift_x(x, dx), tape.leaf(3 * x0, "w")))
            tape.backward(out)
            return float(out.value), {"dx": dx.grad}

        reports = check_gradients(loss_and_grad, {"dx": 0.37}, h=1e-5)
        assert reports[0].rel_err < 1e-5


def conv_ch_oracle(x, w, b):
    """Brute-force multichannel conv with reflect padding."""
    co, ci, kh, kw = w.shape
    _, h, wd = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.stack([np.pad(x[c], ((ph, ph), (pw, pw)), mode="reflect")
                   for c in range(ci)])
    out = np.zeros((co, h, wd))
    for o in range(co):
        for i in range(ci):
            for r in range(h):
                for c in range(wd):
                    out[o, r, c] += np.sum(w[o, i] * xp[i, r:r + kh, c:c + kw])
        out[o] += b[o]
    return out


class TestConvCh:
    def test_forward_matches_oracle(self):
        x = RNG.normal(size=(3, 6, 7))
        w = RNG.normal(size=(4, 3, 3, 5))
        b = RNG.normal(size=(4,))
        tape = Tape()
        out = tape.conv_ch(tape.leaf(x, "x"), tape.leaf(w, "w"), tape.leaf(b, "b"))
        np.testing.assert_allclose(out.value, conv_ch_oracle(x, w, b), rtol=1e-12)

    def test_gradients_match_fd(self):
        x0 = RNG.normal(size=(2, 5, 5))
        w0 = RNG.normal(size=(3, 2, 3, 3))
        b0 = RNG.normal(size=(3,))
        t0 = RNG.normal(size=(3, 5, 5))

        def loss_and_grad(params):
            tape = Tape()
            x = tape.leaf(params["x"], "x")
            w = tape.leaf(params["w"], "w")
            b = tape.leaf(params["b"], "b")
            out = tape.conv_ch(x, w, b)
            diff = tape.sub(out, tape.leaf(t0, "t"))
            loss = tape.mean(tape.mul(diff, diff))
            tape.backward(loss)
            return float(loss.value), {"x": x.grad, "w": w.grad, "b": b.grad}

        reports = check_gradients(loss_and_grad, {"x": x0, "w": w0, "b": b0},
                                  h=1e-5, pixel_samples=30, seed=5)
        assert max(r.rel_err for r in reports) < 1e-5

    def test_rectangular_kernel(self):
        x = RNG.normal(size=(1, 8, 8))
        w = RNG.normal(size=(2, 1, 9, 7))
        b = np.zeros(2)
        tape = Tape()
        out = tape.conv_ch(tape.leaf(x, "x"), tape.leaf(w, "w"), tape.leaf(b, "b"))
        np.testing.assert_allclose(out.value, conv_ch_oracle(x, w, b), rtol=1e-11)


class TestTapeLifecycle:
    def test_backward_requires_scalar(self):
        tape = Tape()
        x = tape.leaf(np.ones((3, 3)), "x")
        with pytest.raises(ContractError):
            tape.backward(tape.mul(x, x))

    def test_tape_locked_after_backward(self):
        tape = Tape()
        x = tape.leaf(2.0, "x")
        out = tape.mul(x, x)
        tape.backward(out)
        with pytest.raises(TapeError):
            tape.mul(x, x)

    def test_reset_unlocks(self):
        tape = Tape()
        x = tape.leaf(2.0, "x")
        tape.backward(tape.mul(x, x))
        tape.reset()
        y = tape.leaf(3.0, "y")
        tape.backward(tape.mul(y, y))
        assert y.grad == pytest.approx(6.0)

    def test_foreign_node_rejected(self):
        t1, t2 = Tape(), Tape()
        x = t1.leaf(1.0, "x")
        with pytest.raises(TapeError):
            t2.mul(x, x)

    def test_repeated_backward_rezeroes(self):
        tape = Tape()
        x = tape.leaf(3.0, "x")
        out = tape.mul(x, x)
        tape.backward(out)
        g1 = x.grad
        tape.backward(out)
        assert x.grad == g1 == pytest.approx(6.0)

    def test_unknown_record_kind(self):
        tape = Tape()
        x = tape.leaf(1.0, "x")
        with pytest.raises(TapeError):
            tape.record("not_an_op", x)

    def test_record_dispatch(self):
        tape = Tape()
        x = tape.leaf(np.array([[1.0, -2.0]]), "x")
        out = tape.record("relu", x)
        np.testing.assert_array_equal(out.value, [[1.0, 0.0]])

    def test_operator_sugar(self):
        tape = Tape()
        x = tape.leaf(2.0, "x")
        y = tape.leaf(5.0, "y")
        out = (x + y) * x - y
        tape.backward(out)
        assert out.value == pytest.approx(9.0)
        assert x.grad == pytest.approx(9.0)   # d/dx (x^2 + xy - y)
        assert y.grad == pytest.approx(1.0)


class TestCheckGradients:
    def test_reports_sorted_worst_first(self):
        def loss_and_grad(params):
            tape = Tape()
            a = tape.leaf(params["a"], "a")
            b = tape.leaf(params["b"], "b")
            loss = tape.add(tape.mul(a, a), tape.mul(b, b))
            tape.backward(loss)
            # sabotage b's gradient to verify ordering
            return float(loss.value), {"a": a.grad, "b": b.grad * 2.0}

        reports = check_gradients(loss_and_grad, {"a": 1.0, "b": 1.0}, h=1e-5)
        assert reports[0].param.startswith("b")
        assert reports[0].rel_err > reports[-1].rel_err

    def test_write_reports_csv(self, tmp_path):
        from euv_ilt.autodiff import GradReport, write_grad_reports
        path = tmp_path / "g.csv"
        write_grad_reports(str(path), [GradReport("p", 1.0, 1.0, 0.0)])
        text = path.read_text()
        assert text.splitlines()[0] == "param,analytic,numeric,rel_err"
        assert len(text.splitlines()) == 2
