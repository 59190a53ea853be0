"""Central finite-difference verification of every differentiable operation.

Each registered case builds a scalar loss out of one primitive (plus a fixed
random cotangent so the full Jacobian-vector product is exercised), then
compares the engine's analytic gradients against central differences with
step 1e-4. Inputs are drawn in [-1, 1]; non-smooth ops are sampled away from
their kinks so the difference quotient is valid.
"""

from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad

FD_STEP = 1e-4
REL_TOL = 1e-4
ABS_FLOOR = 1e-7   # absolute slack for gradients that are themselves ~0


def numeric_grads(build, arrays, step: float = FD_STEP):
    """Central finite differences of the scalar build(*tensors) in each input."""
    work = [np.array(a, dtype=np.float64) for a in arrays]

    def value() -> float:
        with no_grad():
            return build(*[Tensor(a) for a in work]).item()

    grads = []
    for arr in work:
        g = np.zeros_like(arr)
        flat, gflat = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = value()
            flat[i] = orig - step
            down = value()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def analytic_grads(build, arrays):
    params = [ad.parameter(np.array(a, dtype=np.float64)) for a in arrays]
    loss = build(*params)
    loss.backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]


def worst_relative_error(analytic, numeric) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), ABS_FLOOR / REL_TOL)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check_case(build, arrays) -> float:
    """Worst elementwise relative error between analytic and numeric grads."""
    return worst_relative_error(analytic_grads(build, arrays),
                                numeric_grads(build, arrays))


# ---------------------------------------------------------------------------
# case construction helpers
# ---------------------------------------------------------------------------

def _u(rng, shape, lo=-1.0, hi=1.0):
    return rng.uniform(lo, hi, size=shape)


def _cotangent(rng, compute):
    """Wrap an op so its output is contracted with a fixed random weight."""
    probe = {}

    def build(*ts):
        out = compute(*ts)
        if "w" not in probe:
            probe["w"] = rng.uniform(-1.0, 1.0, size=out.shape)
        return (out * Tensor(probe["w"])).sum()

    return build


def _away_from(rng, shape, other, margin=5e-2):
    """Sample values elementwise at least ``margin`` away from ``other``."""
    x = _u(rng, shape)
    mask = np.abs(x - other) < margin
    x[mask] = other[mask] + np.where(x[mask] >= other[mask], margin, -margin)
    return x


def primitive_cases():
    """(name, case_fn) registry; case_fn(rng) -> (build, input_arrays)."""

    def binary(op):
        def case(rng):
            a, b = _u(rng, (3, 4)), _u(rng, (3, 4))
            return _cotangent(rng, op), [a, b]
        return case

    def binary_broadcast(op):
        def case(rng):
            a, b = _u(rng, (3, 4)), _u(rng, (3, 1))
            return _cotangent(rng, op), [a, b]
        return case

    def unary(op, lo=-1.0, hi=1.0):
        def case(rng):
            return _cotangent(rng, op), [_u(rng, (3, 4), lo, hi)]
        return case

    def div_case(rng):
        a = _u(rng, (3, 4))
        b = rng.uniform(0.5, 1.5, size=(3, 4)) * rng.choice([-1.0, 1.0], size=(3, 4))
        return _cotangent(rng, lambda x, y: ad.div(x, y)), [a, b]

    def maximum_case(rng):
        a = _u(rng, (3, 4))
        b = _away_from(rng, (3, 4), a)
        return _cotangent(rng, ad.maximum), [a, b]

    def abs_case(rng):
        x = _away_from(rng, (3, 4), np.zeros((3, 4)))
        return _cotangent(rng, ad.absolute), [x]

    def pow_case(rng):
        return _cotangent(rng, lambda x: ad.power(x, 3)), [_u(rng, (3, 4))]

    def softmax_case(rng):
        return _cotangent(rng, lambda x: ad.softmax(x, axis=1)), [_u(rng, (3, 5))]

    def layer_norm_case(rng):
        return _cotangent(rng, lambda x: ad.layer_norm(x, axis=0)), [_u(rng, (5, 3))]

    def matmul_case(rng):
        return _cotangent(rng, ad.matmul), [_u(rng, (3, 4)), _u(rng, (4, 2))]

    def reshape_case(rng):
        return _cotangent(rng, lambda x: ad.reshape(x, (4, 3))), [_u(rng, (3, 4))]

    def transpose_case(rng):
        return _cotangent(rng, lambda x: ad.transpose(x, (2, 0, 1))), [_u(rng, (2, 3, 2))]

    def flip_case(rng):
        return _cotangent(rng, lambda x: ad.flip(x, 0)), [_u(rng, (4, 3))]

    def concat_case(rng):
        return (_cotangent(rng, lambda x, y: ad.concat([x, y], axis=1)),
                [_u(rng, (2, 3)), _u(rng, (2, 2))])

    def slice_case(rng):
        return (_cotangent(rng, lambda x: x[1:3, :2]), [_u(rng, (4, 3))])

    def sum_case(rng):
        return (_cotangent(rng, lambda x: x.sum(axis=1)), [_u(rng, (3, 4))])

    def mean_case(rng):
        return (_cotangent(rng, lambda x: x.mean(axis=0, keepdims=True)),
                [_u(rng, (3, 4))])

    def conv1x1_case(rng):
        return (_cotangent(rng, lambda x, w: ad.conv2d(x, w, stride=1, pad=0)),
                [_u(rng, (2, 4, 4)), _u(rng, (3, 2, 1, 1))])

    def conv3x3_case(rng):
        return (_cotangent(rng, lambda x, w: ad.conv2d(x, w, stride=1, pad=1)),
                [_u(rng, (2, 4, 4)), _u(rng, (2, 2, 3, 3))])

    def conv_strided_case(rng):
        return (_cotangent(rng, lambda x, w: ad.conv2d(x, w, stride=2, pad=1)),
                [_u(rng, (1, 5, 5)), _u(rng, (2, 1, 3, 3))])

    def depthwise_case(rng):
        return (_cotangent(rng, ad.depthwise_conv2d),
                [_u(rng, (3, 4, 4)), _u(rng, (3, 3, 3))])

    def dilated_case(rng):
        return (_cotangent(rng, lambda x, w: ad.dilated_conv2d(x, w, dilation=2)),
                [_u(rng, (2, 5, 5)), _u(rng, (2, 2, 3, 3))])

    def pad_reflect_case(rng):
        return (_cotangent(rng, lambda x: ad.pad_reflect2d(x, 1)),
                [_u(rng, (2, 3, 4))])

    def scan_case(rng):
        length, ch, n = 4, 3, 2
        u = _u(rng, (length, ch))
        delta = rng.uniform(0.05, 0.8, size=(length, ch))
        b = _u(rng, (length, n))
        c = _u(rng, (length, n))
        a = rng.uniform(-1.5, -0.2, size=(ch, n))
        d = _u(rng, (ch,))
        return _cotangent(rng, ad.selective_scan_core), [u, delta, b, c, a, d]

    return [
        ("add", binary(ad.add)),
        ("add_broadcast", binary_broadcast(ad.add)),
        ("sub", binary(ad.sub)),
        ("mul", binary(ad.mul)),
        ("mul_broadcast", binary_broadcast(ad.mul)),
        ("div", div_case),
        ("neg", unary(ad.neg)),
        ("pow", pow_case),
        ("maximum", maximum_case),
        ("abs", abs_case),
        ("exp", unary(ad.exp)),
        ("sigmoid", unary(ad.sigmoid)),
        ("silu", unary(ad.silu)),
        ("gelu", unary(ad.gelu)),
        ("tanh", unary(ad.tanh)),
        ("softplus", unary(ad.softplus)),
        ("softmax", softmax_case),
        ("layer_norm", layer_norm_case),
        ("matmul", matmul_case),
        ("reshape", reshape_case),
        ("transpose", transpose_case),
        ("flip", flip_case),
        ("concat", concat_case),
        ("slice", slice_case),
        ("sum", sum_case),
        ("mean", mean_case),
        ("conv2d_1x1", conv1x1_case),
        ("conv2d_3x3", conv3x3_case),
        ("conv2d_stride2", conv_strided_case),
        ("depthwise_conv2d", depthwise_case),
        ("dilated_conv2d", dilated_case),
        ("pad_reflect2d", pad_reflect_case),
        ("selective_scan_core", scan_case),
    ]


def loss_cases():
    """Gradient checks of both loss stages w.r.t. the predicted image."""
    from . import losses

    def stage1_case(rng):
        h = w = 12
        truth_a = rng.uniform(0.1, 0.9, size=(1, h, w))
        truth_b = rng.uniform(0.1, 0.9, size=(1, h, w))
        pred_a = rng.uniform(0.1, 0.9, size=(1, h, w))
        pred_b = rng.uniform(0.1, 0.9, size=(1, h, w))

        def build(pa, pb):
            return losses.stage1_loss(Tensor(truth_a), pa, Tensor(truth_b), pb).total

        return build, [pred_a, pred_b]

    def stage2_case(rng):
        # the loss is piecewise linear in the fused image (L1 + abs inside
        # sobel); sample until every kink on the differentiated path is at
        # least a safe margin away from the finite-difference stencil
        # away from kinks the loss is exactly linear, so the margin only has
        # to cover the FD stencil (a 1e-4 nudge moves sobel sums by <= 8e-4)
        h = w = 8
        margin = 1e-3
        src_a = rng.uniform(0.0, 1.0, size=(1, h, w))
        src_b = rng.uniform(0.0, 1.0, size=(1, h, w))
        target = np.maximum(src_a, src_b)

        def sobel_parts(img):
            padded = np.pad(img[0], 1, mode="reflect")
            win = np.lib.stride_tricks.sliding_window_view(padded, (3, 3))
            gx = np.einsum("hwij,ij->hw", win, losses.SOBEL_X)
            gy = np.einsum("hwij,ij->hw", win, losses.SOBEL_Y)
            return gx, gy

        ga = np.abs(sobel_parts(src_a)[0]) + np.abs(sobel_parts(src_a)[1])
        gb = np.abs(sobel_parts(src_b)[0]) + np.abs(sobel_parts(src_b)[1])
        grad_target = np.maximum(ga, gb)
        # border columns of gx (rows of gy) are identically zero under
        # reflect padding and stay zero under any perturbation; at corners
        # both gradient magnitudes are invariantly zero on each side. Those
        # entries are constants, not kinks, so they carry no margin demand.
        corner = np.zeros((h, w), dtype=bool)
        corner[0, 0] = corner[0, -1] = corner[-1, 0] = corner[-1, -1] = True
        for _ in range(500):
            fused = rng.uniform(0.05, 0.95, size=(1, h, w))
            gx, gy = sobel_parts(fused)
            gf = np.abs(gx) + np.abs(gy)
            if (np.all(np.abs(fused - target) > margin)
                    and np.all(np.abs(gx[:, 1:-1]) > margin)
                    and np.all(np.abs(gy[1:-1, :]) > margin)
                    and np.all(np.abs(gf - grad_target)[~corner] > margin)):
                break
        else:
            raise RuntimeError("no kink-free stage2 sample found")

        def build(f):
            return losses.stage2_loss(f, Tensor(src_a), Tensor(src_b)).total

        return build, [fused]

    return [("stage1_loss", stage1_case), ("stage2_loss", stage2_case)]


def check_model_grads(loss_fn, named_params, step: float = FD_STEP,
                      sample: int | None = None, rng=None) -> float:
    """FD-check d(loss_fn()) / d(param) for every named parameter tensor.

    ``loss_fn`` must rebuild its graph from the parameters' current data on
    each call. With ``sample`` set, only that many randomly chosen elements
    per parameter are probed (full sweep otherwise). Returns the worst
    relative error; parameter grads are cleared afterwards.
    """
    for _, t in named_params:
        t.grad = None
    loss_fn().backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in named_params}
    worst = 0.0
    for name, t in named_params:
        flat = t.data.ravel()
        if sample is None or flat.size <= sample:
            idxs = range(flat.size)
        else:
            idxs = rng.choice(flat.size, size=sample, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                up = loss_fn().item()
            flat[i] = orig - step
            with no_grad():
                down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic[name].ravel()[i]
            denom = max(abs(a), abs(numeric), ABS_FLOOR / REL_TOL)
            worst = max(worst, abs(a - numeric) / denom)
    for _, t in named_params:
        t.grad = None
    return worst


def run_suite(cases_per_op: int = 20, seed: int = 0, verbose: bool = True):
    """Run the full gradient suite; returns list of (name, worst_err, seconds)."""
    results = []
    for name, case_fn in primitive_cases() + loss_cases():
        rng = np.random.default_rng(seed + hash(name) % 100000)
        worst = 0.0
        start = time.monotonic()
        for _ in range(cases_per_op):
            build, arrays = case_fn(rng)
            worst = max(worst, check_case(build, arrays))
        elapsed = time.monotonic() - start
        results.append((name, worst, elapsed))
        if verbose:
            status = "ok " if worst < REL_TOL else "FAIL"
            print("%s %-22s worst rel err %.3e  (%.2fs)" % (status, name, worst, elapsed))
    return results
