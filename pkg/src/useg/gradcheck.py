"""Central finite-difference verification of every analytic gradient.

Each check builds a random instance, reduces the op through a fixed random
readout to a scalar, and compares the analytic gradient against central
differences.  Everything runs in float64; the probe step is 1e-4.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

EPS = 1e-4


def central_difference(f, x, eps=EPS):
    """Central-difference gradient of the scalar function f w.r.t. x.

    f takes no arguments and reads x, which is perturbed in place."""
    grad = np.zeros(x.shape, dtype=np.float64)
    xf = x.ravel()
    gf = grad.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + eps
        fp = f()
        xf[i] = orig - eps
        fm = f()
        xf[i] = orig
        gf[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_conv2d(rng, stride=1, padding=1, bug_scale=1.0):
    x = rng.standard_normal((2, 3, 6, 7))
    k = rng.standard_normal((4, 3, 3, 3)) * 0.5
    b = rng.standard_normal(4) * 0.1
    r = rng.standard_normal(T.conv2d(x, k, b, stride, padding).shape)

    grads = T.conv2d_backward(x, k, r, stride, padding)
    errs = []
    for arr, g in ((x, grads.grad_input * bug_scale),
                   (k, grads.grad_params["kernel"]),
                   (b, grads.grad_params["bias"])):
        fd = central_difference(lambda: float((T.conv2d(x, k, b, stride, padding) * r).sum()), arr)
        errs.append(max_rel_error(g, fd))
    return max(errs)


def check_upconv2d(rng, stride=2, bug_scale=1.0):
    x = rng.standard_normal((2, 3, 4, 5))
    k = rng.standard_normal((3, 2, 2, 2)) * 0.5
    b = rng.standard_normal(2) * 0.1
    r = rng.standard_normal(T.upconv2d(x, k, b, stride).shape)

    grads = T.upconv2d_backward(x, k, r, stride)
    errs = []
    for arr, g in ((x, grads.grad_input * bug_scale),
                   (k, grads.grad_params["kernel"]),
                   (b, grads.grad_params["bias"])):
        fd = central_difference(lambda: float((T.upconv2d(x, k, b, stride) * r).sum()), arr)
        errs.append(max_rel_error(g, fd))
    return max(errs)


def check_maxpool2d(rng, bug_scale=1.0):
    # spread values out so no window has a near-tie within the probe step
    x = rng.permutation(8 * 2 * 6 * 6).astype(np.float64).reshape(8, 2, 6, 6) * 0.01
    out, idx = T.maxpool2d(x, 2)
    r = rng.standard_normal(out.shape)
    g = T.maxpool2d_backward(r, idx, x.shape, 2) * bug_scale
    fd = central_difference(lambda: float((T.maxpool2d(x, 2)[0] * r).sum()), x)
    return max_rel_error(g, fd)


def check_batchnorm2d(rng, bug_scale=1.0):
    x = rng.standard_normal((3, 4, 5, 5)) * 2.0 + 0.5
    gamma = rng.standard_normal(4) * 0.5 + 1.0
    beta = rng.standard_normal(4) * 0.2
    state = T.BatchNormState.initial(4)
    out0, _, _ = T.batchnorm2d(x, gamma, beta, state, "train")
    r = rng.standard_normal(out0.shape)

    def readout():
        out, _, _ = T.batchnorm2d(x, gamma, beta, state, "train")
        return float((out * r).sum())

    _, cache, _ = T.batchnorm2d(x, gamma, beta, state, "train")
    grads = T.batchnorm2d_backward(r, cache)
    errs = [max_rel_error(grads.grad_input * bug_scale, central_difference(readout, x)),
            max_rel_error(grads.grad_params["gamma"], central_difference(readout, gamma)),
            max_rel_error(grads.grad_params["beta"], central_difference(readout, beta))]
    return max(errs)


def check_relu(rng, bug_scale=1.0):
    x = rng.standard_normal((2, 3, 5, 5))
    x = np.where(np.abs(x) < 1e-2, x + np.sign(x) * 1e-2 + (x == 0) * 1e-2, x)
    r = rng.standard_normal(x.shape)
    g = T.relu_backward(x, r) * bug_scale
    fd = central_difference(lambda: float((T.relu(x) * r).sum()), x)
    return max_rel_error(g, fd)


def check_loss(rng, kind, gamma, bug_scale=1.0):
    from .loss import LossConfig, PixelTargets, compute_loss

    c = 4
    logits = rng.standard_normal((2, c, 3, 4)) * 2.0
    labels = rng.integers(0, c, size=(2, 3, 4))
    valid = rng.random((2, 3, 4)) > 0.25
    valid.flat[0] = True  # at least one valid pixel
    weights = list(rng.uniform(0.5, 8.0, size=c))
    cfg = LossConfig(kind=kind, gamma=gamma, class_weights=weights)
    targets = PixelTargets(labels, valid)

    _, grad = compute_loss(logits, targets, cfg)
    fd = central_difference(lambda: compute_loss(logits, targets, cfg)[0], logits)
    return max_rel_error(grad * bug_scale, fd)


def check_model_params(rng, sample_frac=0.02, bug_scale=1.0):
    """End-to-end check: gradient of mean(logits) w.r.t. a random sample of
    the network parameters."""
    from .model import UNet, UNetConfig

    cfg = UNetConfig(in_channels=2, num_classes=3, base_features=2, depth=2)
    net = UNet.build(cfg, seed=7)
    x = rng.standard_normal((1, 2, 8, 8))

    logits = net.forward(x, mode="train", update_stats=False)
    r = np.full(logits.shape, 1.0 / logits.size)
    param_grads = net.backward(r)

    def readout():
        return float(net.forward(x, mode="train", update_stats=False).mean())

    worst = 0.0
    for name in net.params:
        p = net.params[name]
        n_probe = max(1, int(p.size * sample_frac))
        idxs = rng.choice(p.size, size=min(n_probe, p.size), replace=False)
        for i in idxs:
            orig = p.flat[i]
            p.flat[i] = orig + EPS
            fp = readout()
            p.flat[i] = orig - EPS
            fm = readout()
            p.flat[i] = orig
            fd = (fp - fm) / (2.0 * EPS)
            a = param_grads[name].flat[i] * bug_scale
            denom = max(abs(a), abs(fd), 1e-6)
            worst = max(worst, abs(a - fd) / denom)
    return worst


def run_suite(seed=0, inject_bug=False):
    """Runs every layer and loss check; returns a list of (name, max_rel_err).

    inject_bug scales one analytic gradient by 1.01 as a self-test that the
    harness actually detects wrong gradients."""
    results = []
    bug = 1.01 if inject_bug else 1.0

    def run(name, fn, *args, **kw):
        r = np.random.default_rng(np.random.SeedSequence((seed, len(results))))
        results.append((name, fn(r, *args, **kw)))

    run("conv2d(stride=1,pad=1)", check_conv2d, 1, 1, bug)
    run("conv2d(stride=2,pad=0)", check_conv2d, 2, 0)
    run("upconv2d(stride=2)", check_upconv2d, 2)
    run("maxpool2d", check_maxpool2d)
    run("batchnorm2d", check_batchnorm2d)
    run("relu", check_relu)
    for kind in ("sce", "w_sce", "focal", "w_focal"):
        gammas = (0.5, 1.0, 2.0) if kind in ("focal", "w_focal") else (0.0,)
        for g in gammas:
            run(f"loss[{kind},gamma={g}]", check_loss, kind, g)
    run("unet-params", check_model_params)
    return results
