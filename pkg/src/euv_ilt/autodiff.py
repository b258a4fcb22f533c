"""Minimal reverse-mode automatic differentiation on an explicit tape.

Forward evaluation is eager numpy; every operation records a node whose
closure holds exactly the saved values its adjoint needs. backward() walks
the node list in reverse insertion order (already topological for an eager
tape), so adjoint accumulation order is fixed and the same tape always
produces bit-identical gradients.

The primitive set is fixed: elementwise arithmetic, pointwise
sigmoid/tanh/relu/clamp/abs, mean reduction, reflect-padded convolution
(fixed kernel and learnable multichannel), gaussian blur with learnable
sigma (kernel gradient is analytic; the passthrough threshold contributes
no sigma gradient), fractional x-shift with learnable displacement, and the
mean-|forward-difference| edge reduction. Subgradients at kinks are zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import field as fd
from .errors import ContractError, TapeError

# sigma at/below which gaussian_blur is an exact passthrough (zero sigma grad)
BLUR_PASSTHROUGH_SIGMA_PX = 0.6


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One recorded value; parents/vjps describe how adjoints flow back."""

    __slots__ = ("value", "op", "parents", "vjps", "grad", "tape")

    def __init__(self, value, op, parents, vjps, tape):
        self.value = value
        self.op = op
        self.parents = parents
        self.vjps = vjps
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    # light operator sugar; everything routes through the owning tape
    def __add__(self, other):
        return self.tape.add(self, self.tape.as_node(other))

    def __sub__(self, other):
        return self.tape.sub(self, self.tape.as_node(other))

    def __mul__(self, other):
        return self.tape.mul(self, self.tape.as_node(other))

    __radd__ = __add__
    __rmul__ = __mul__


class Tape:
    """Eager forward trace supporting one deterministic reverse sweep."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._finalized = False

    # -- bookkeeping --------------------------------------------------------

    def _push(self, value, op, parents=(), vjps=()) -> Node:
        if self._finalized:
            raise TapeError("tape already consumed by backward(); call reset() first")
        node = Node(np.asarray(value, dtype=np.float64), op, parents, vjps, self)
        self.nodes.append(node)
        return node

    def leaf(self, value, name: str = "leaf") -> Node:
        return self._push(value, name)

    def as_node(self, x) -> Node:
        if isinstance(x, Node):
            if x.tape is not self:
                raise TapeError("input node belongs to a different tape")
            return x
        return self.leaf(x, "const")

    def reset(self) -> None:
        self.nodes.clear()
        self._finalized = False

    def backward(self, loss: Node) -> None:
        """Populate .grad for every node reachable from `loss`."""
        loss = self.as_node(loss)
        if loss.value.shape != ():
            raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")
        for n in self.nodes:
            n.grad = None
        loss.grad = np.asarray(1.0)
        for n in reversed(self.nodes):
            if n.grad is None:
                continue
            for parent, vjp in zip(n.parents, n.vjps):
                g = vjp(n.grad)
                parent.grad = g if parent.grad is None else parent.grad + g
        self._finalized = True

    # -- elementwise arithmetic ---------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        a, b = self.as_node(a), self.as_node(b)
        return self._push(
            a.value + b.value, "add", (a, b),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
        )

    def sub(self, a: Node, b: Node) -> Node:
        a, b = self.as_node(a), self.as_node(b)
        return self._push(
            a.value - b.value, "sub", (a, b),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
        )

    def mul(self, a: Node, b: Node) -> Node:
        a, b = self.as_node(a), self.as_node(b)
        av, bv = a.value, b.value
        return self._push(
            av * bv, "mul", (a, b),
            (lambda g: _unbroadcast(g * bv, a.shape), lambda g: _unbroadcast(g * av, b.shape)),
        )

    def scale(self, a: Node, c: float) -> Node:
        a = self.as_node(a)
        c = float(c)
        return self._push(a.value * c, "scale", (a,), (lambda g: g * c,))

    def add_const(self, a: Node, c: float) -> Node:
        a = self.as_node(a)
        return self._push(a.value + float(c), "add_const", (a,), (lambda g: g,))

    # -- pointwise nonlinearities -------------------------------------------

    def sigmoid(self, a: Node) -> Node:
        a = self.as_node(a)
        x = a.value
        y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return self._push(y, "sigmoid", (a,), (lambda g: g * y * (1.0 - y),))

    def tanh(self, a: Node) -> Node:
        a = self.as_node(a)
        y = np.tanh(a.value)
        return self._push(y, "tanh", (a,), (lambda g: g * (1.0 - y * y),))

    def relu(self, a: Node) -> Node:
        a = self.as_node(a)
        mask = a.value > 0
        return self._push(np.where(mask, a.value, 0.0), "relu", (a,), (lambda g: g * mask,))

    def clamp01(self, a: Node) -> Node:
        # subgradient 0 at the boundary and outside [0, 1]
        a = self.as_node(a)
        v = a.value
        inside = (v > 0.0) & (v < 1.0)
        return self._push(np.clip(v, 0.0, 1.0), "clamp01", (a,), (lambda g: g * inside,))

    def absval(self, a: Node) -> Node:
        a = self.as_node(a)
        s = np.sign(a.value)
        return self._push(np.abs(a.value), "abs", (a,), (lambda g: g * s,))

    # -- reductions ----------------------------------------------------------

    def mean(self, a: Node) -> Node:
        a = self.as_node(a)
        n = a.value.size
        shape = a.shape
        return self._push(
            a.value.mean(), "mean", (a,),
            (lambda g: np.full(shape, float(g) / n),),
        )

    def gradient_l1(self, a: Node) -> Node:
        """Mean |forward-diff x| + |forward-diff y|; matches field.gradient_l1."""
        a = self.as_node(a)
        v = a.value
        h, w = v.shape
        dx = v[:, 1:] - v[:, :-1]
        dy = v[1:, :] - v[:-1, :]
        val = (np.abs(dx).sum() + np.abs(dy).sum()) / (h * w)
        sx, sy = np.sign(dx), np.sign(dy)

        def vjp(g):
            gv = np.zeros((h, w))
            c = float(g) / (h * w)
            gv[:, 1:] += c * sx
            gv[:, :-1] -= c * sx
            gv[1:, :] += c * sy
            gv[:-1, :] -= c * sy
            return gv

        return self._push(val, "gradient_l1", (a,), (vjp,))

    # -- structured ops -------------------------------------------------------

    def conv2d(self, a: Node, weights: np.ndarray) -> Node:
        """Reflect-padded convolution with a fixed (non-learnable) kernel."""
        a = self.as_node(a)
        weights = np.asarray(weights, dtype=np.float64)
        return self._push(
            fd.conv_values(a.value, weights), "conv2d", (a,),
            (lambda g: fd.conv_adjoint_input(g, weights),),
        )

    def gaussian_blur(self, a: Node, sigma: Node) -> Node:
        """Blur with learnable sigma; identity (zero sigma grad) at sigma <= 0.6."""
        a, sigma = self.as_node(a), self.as_node(sigma)
        s = float(sigma.value)
        if s <= BLUR_PASSTHROUGH_SIGMA_PX:
            return self._push(
                a.value.copy(), "gaussian_blur", (a, sigma),
                (lambda g: g, lambda g: np.zeros(())),
            )
        weights = fd.gaussian_weights(s)
        dw = fd.gaussian_weights_dsigma(s)
        xv = a.value

        def vjp_sigma(g):
            gk = fd.conv_adjoint_kernel(g, xv, weights.shape[0])
            return np.asarray(np.sum(gk * dw))

        return self._push(
            fd.conv_values(xv, weights), "gaussian_blur", (a, sigma),
            (lambda g: fd.conv_adjoint_input(g, weights), vjp_sigma),
        )

    def shift_x(self, a: Node, dx: Node) -> Node:
        """Fractional x-shift, differentiable in both the field and the shift."""
        a, dx = self.as_node(a), self.as_node(dx)
        v = a.value
        h, w = v.shape
        d = float(dx.value)
        if abs(d) >= w:
            raise ContractError(f"|shift| {d} must be < width {w}")
        c_lo, c_hi, f = fd.shift_x_columns(w, d)
        x_lo, x_hi = v[:, c_lo], v[:, c_hi]

        def vjp_field(g):
            gv = np.zeros((h, w))
            np.add.at(gv.T, c_lo, (1.0 - f) * g.T)
            np.add.at(gv.T, c_hi, f * g.T)
            return gv

        def vjp_dx(g):
            return np.asarray(np.sum(g * (x_hi - x_lo)))

        return self._push(
            (1.0 - f) * x_lo + f * x_hi, "shift_x", (a, dx),
            (vjp_field, vjp_dx),
        )

    def conv_ch(self, x: Node, w: Node, b: Node) -> Node:
        """Multichannel conv: x (Ci,H,W), w (Co,Ci,kh,kw), b (Co,) -> (Co,H,W).

        Reflect padding per channel; same spatial shape out.
        """
        x, w, b = self.as_node(x), self.as_node(w), self.as_node(b)
        xv, wv, bv = x.value, w.value, b.value
        ci, h, wd = xv.shape
        co, ci2, kh, kw = wv.shape
        if ci != ci2:
            raise ContractError(f"channel mismatch: input {ci}, weights expect {ci2}")
        ph, pw = kh // 2, kw // 2
        xp = np.pad(xv, ((0, 0), (ph, ph), (pw, pw)), mode="reflect")
        windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        # windows: (Ci, H, W, kh, kw)
        out = np.einsum("oikl,ihwkl->ohw", wv, windows, optimize=True) + bv[:, None, None]

        def vjp_x(g):
            t = np.einsum("oikl,ohw->iklhw", wv, g, optimize=True)
            gxp = np.zeros_like(xp)
            for k in range(kh):
                for l in range(kw):
                    gxp[:, k:k + h, l:l + wd] += t[:, k, l]
            gx = np.empty_like(xv)
            for c in range(ci):
                gx[c] = fd._fold_reflect(gxp[c], h, wd, ph, pw)
            return gx

        def vjp_w(g):
            return np.einsum("ohw,ihwkl->oikl", g, windows, optimize=True)

        return self._push(
            out, "conv_ch", (x, w, b),
            (vjp_x, vjp_w, lambda g: g.sum(axis=(1, 2))),
        )

    def reshape(self, a: Node, shape: tuple) -> Node:
        a = self.as_node(a)
        old = a.shape
        return self._push(a.value.reshape(shape), "reshape", (a,), (lambda g: g.reshape(old),))

    # -- string-keyed dispatch ------------------------------------------------

    # ops whose second argument is plain data (kernel weights, scalar, shape)
    _RAW_SECOND_ARG = frozenset(["conv2d", "scale", "add_const", "reshape"])
    _OPS = {
        "add": add, "sub": sub, "mul": mul, "scale": scale, "add_const": add_const,
        "sigmoid": sigmoid, "tanh": tanh, "relu": relu, "clamp01": clamp01,
        "abs": absval, "mean": mean, "gradient_l1": gradient_l1, "conv2d": conv2d,
        "gaussian_blur": gaussian_blur, "shift_x": shift_x, "conv_ch": conv_ch,
        "reshape": reshape,
    }

    def record(self, op_kind: str, *inputs) -> Node:
        """Apply a primitive by name; numeric inputs become constant leaves."""
        fn = self._OPS.get(op_kind)
        if fn is None:
            raise TapeError(f"unknown op kind {op_kind!r}")
        args = []
        for i, x in enumerate(inputs):
            if i == 1 and op_kind in self._RAW_SECOND_ARG:
                args.append(x)
            else:
                args.append(self.as_node(x))
        return fn(self, *args)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradReport:
    param: str
    analytic: float
    numeric: float
    rel_err: float


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a), abs(n))


def check_gradients(
    loss_and_grad,
    params: dict[str, np.ndarray],
    h: float = 1e-4,
    pixel_samples: int = 64,
    seed: int = 0,
) -> list[GradReport]:
    """Compare analytic gradients against central differences.

    loss_and_grad(params) must return (loss_value, grads_dict) and be
    deterministic. Every scalar parameter is checked; array parameters are
    subsampled at `pixel_samples` seeded positions. Reports come back
    sorted by relative error, worst first.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = loss_and_grad(base)
    rng = np.random.default_rng(seed)
    reports = []

    def numeric_at(name, idx):
        p_hi = {k: v.copy() for k, v in base.items()}
        p_lo = {k: v.copy() for k, v in base.items()}
        if idx is None:
            p_hi[name] = p_hi[name] + h
            p_lo[name] = p_lo[name] - h
        else:
            p_hi[name][idx] += h
            p_lo[name][idx] -= h
        f_hi, _ = loss_and_grad(p_hi)
        f_lo, _ = loss_and_grad(p_lo)
        return (f_hi - f_lo) / (2.0 * h)

    for name, value in base.items():
        if value.ndim == 0:
            analytic = float(grads[name])
            numeric = numeric_at(name, None)
            reports.append(GradReport(name, analytic, numeric, _rel_err(analytic, numeric)))
        else:
            flat_count = value.size
            n_check = min(pixel_samples, flat_count)
            chosen = rng.choice(flat_count, size=n_check, replace=False)
            for flat in sorted(int(c) for c in chosen):
                idx = np.unravel_index(flat, value.shape)
                analytic = float(grads[name][idx])
                numeric = numeric_at(name, idx)
                label = f"{name}[{','.join(str(i) for i in idx)}]"
                reports.append(GradReport(label, analytic, numeric, _rel_err(analytic, numeric)))

    reports.sort(key=lambda r: r.rel_err, reverse=True)
    return reports


def write_grad_reports(path, reports: list[GradReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["param", "analytic", "numeric", "rel_err"])
        for r in reports:
            writer.writerow([r.param, repr(r.analytic), repr(r.numeric), repr(r.rel_err)])
