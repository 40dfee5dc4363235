"""64-bit central finite-difference checks of reverse-mode gradients."""
from __future__ import annotations

import numpy as np

from terracer.autodiff import Tensor

H = 1e-5
# End-to-end checks use a smaller step: with millions of relu/max-pool units a
# 1e-5 nudge reliably pushes a few activations across a kink.
H_MODEL = 1e-7


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``, 0 when everything vanishes."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return 0.0 if scale == 0 else float(np.linalg.norm(analytic - numeric) / scale)


def check_op(fn, arrays, seed: int, h: float = H) -> float:
    """Worst relative error of d(sum(fn(*xs) * R))/dx over every input entry.

    ``fn`` maps float64 Tensors to a Tensor (or a list of Tensors); R is a
    fixed random projection so every output element contributes.
    """
    rng = np.random.default_rng(seed + 10_000)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    projections = []

    def scalar(outs):
        outs = outs if isinstance(outs, list) else [outs]
        while len(projections) < len(outs):
            projections.append(rng.normal(size=outs[len(projections)].shape))
        return outs, projections

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    outs, proj = scalar(fn(*tensors))
    loss = None
    for o, p in zip(outs, proj):
        term = (o * Tensor(p)).sum()
        loss = term if loss is None else loss + term
    loss.backward()

    def value():
        outs_ = fn(*[Tensor(a) for a in arrays])
        outs_ = outs_ if isinstance(outs_, list) else [outs_]
        return sum(float((o.data * p).sum()) for o, p in zip(outs_, proj))

    worst = 0.0
    for t, a in zip(tensors, arrays):
        numeric = np.zeros_like(a)
        flat, nflat = a.reshape(-1), numeric.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = value()
            flat[k] = orig - h
            fm = value()
            flat[k] = orig
            nflat[k] = (fp - fm) / (2 * h)
        analytic = t.grad if t.grad is not None else np.zeros_like(a)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_model(model, x: np.ndarray, loss_fn, n_params: int, seed: int, h: float = H_MODEL) -> float:
    """Spot-check ``n_params`` randomly chosen scalar parameters of ``model``.

    Errors are relative to ``max(|a|, |n|, 1e-4 * G)`` with ``G`` the largest
    analytic gradient entry, so parameters whose true gradient is exactly zero
    (a conv bias feeding batchnorm) are judged against the model's scale.
    """
    rng = np.random.default_rng(seed)
    params = model.parameters()
    model.zero_grad()
    loss = loss_fn(model(Tensor(x)))
    loss.backward()
    worst = 0.0
    picked = rng.choice(len(params), size=min(n_params, len(params)), replace=False)
    analytic, numeric = [], []
    for i in picked:
        p = params[i]
        k = int(rng.integers(p.size))
        flat = p.data.reshape(-1)
        orig = flat[k]
        flat[k] = orig + h
        fp = float(loss_fn(model(Tensor(x))).item())
        flat[k] = orig - h
        fm = float(loss_fn(model(Tensor(x))).item())
        flat[k] = orig
        analytic.append(float(p.grad.reshape(-1)[k]))
        numeric.append((fp - fm) / (2 * h))
    scale = max(float(np.abs(p.grad).max()) for p in params if p.grad is not None)
    for a, n in zip(analytic, numeric):
        worst = max(worst, relative_error(np.array([a]), np.array([n]), floor=1e-4 * scale))
    return worst


# ---------------------------------------------------------------- op registry

def _away_from_zero(rng, shape, gap=1e-3):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * (gap + np.abs(x)), x)


def _distinct(rng, shape):
    """Values spaced at least 1e-3 apart so max-pool never sits on a tie."""
    n = int(np.prod(shape))
    return rng.permutation(np.arange(n) * 1e-2 + rng.uniform(0, 1e-3)).reshape(shape) - n * 5e-3


def _op_cases():
    from terracer.autodiff import ops

    def bn(x, g, b):
        c = x.shape[1]
        return ops.batchnorm(x, g, b, np.zeros(c), np.ones(c), True)

    def bn_eval(x, g, b):
        c = x.shape[1]
        return ops.batchnorm(x, g, b, np.full(c, 0.3), np.full(c, 1.7), False)

    def pool_unpool(x):
        v, idx = ops.maxpool2d_with_indices(x)
        return ops.max_unpool2d(v * 2.0, idx)

    ce_labels = np.random.default_rng(0).integers(0, 5, (2, 3, 3))
    ce_labels[0, 0, 0] = 65535

    def ce(logits):
        return ops.softmax_cross_entropy(logits, ce_labels)

    return {
        "add": (lambda a, b: a + b, lambda r: [r.normal(size=(2, 3)), r.normal(size=(3,))]),
        "mul": (lambda a, b: a * b, lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 1))]),
        "sum_reshape_slice": (lambda a: (a[1:, ::2].reshape(-1) * 3.0).sum(), lambda r: [r.normal(size=(3, 4))]),
        "conv2d": (
            lambda x, w, b: ops.conv2d(x, w, b, stride=1, padding=1),
            lambda r: [r.normal(size=(2, 2, 5, 5)), r.normal(size=(3, 2, 3, 3)), r.normal(size=3)],
        ),
        "conv2d_strided": (
            lambda x, w, b: ops.conv2d(x, w, b, stride=2, padding=0),
            lambda r: [r.normal(size=(1, 2, 7, 6)), r.normal(size=(2, 2, 3, 3)), r.normal(size=2)],
        ),
        "conv3d": (
            lambda x, w, b: ops.conv3d(x, w, b, padding=(1, 1, 1)),
            lambda r: [r.normal(size=(1, 2, 5, 4, 4)), r.normal(size=(2, 2, 3, 3, 3)), r.normal(size=2)],
        ),
        "conv3d_squeeze": (
            lambda x, w, b: ops.conv3d(x, w, b, padding=(0, 0, 0)),
            lambda r: [r.normal(size=(1, 3, 5, 3, 3)), r.normal(size=(2, 3, 5, 1, 1)), r.normal(size=2)],
        ),
        "maxpool": (lambda x: ops.maxpool2d_with_indices(x)[0], lambda r: [_distinct(r, (1, 2, 4, 6))]),
        "maxpool_odd": (lambda x: ops.maxpool2d_with_indices(x)[0], lambda r: [_distinct(r, (1, 1, 5, 3))]),
        "max_unpool": (pool_unpool, lambda r: [_distinct(r, (2, 2, 4, 4))]),
        "upsample_nearest": (lambda x: ops.upsample(x, factor=2), lambda r: [r.normal(size=(1, 2, 3, 3))]),
        "upsample_bilinear": (
            lambda x: ops.upsample(x, size=(7, 5), mode="bilinear"),
            lambda r: [r.normal(size=(1, 2, 3, 4))],
        ),
        "concat": (lambda a, b: ops.concat_channels([a, b]), lambda r: [r.normal(size=(1, 2, 3, 3)), r.normal(size=(1, 3, 3, 3))]),
        "residual_add": (ops.residual_add, lambda r: [r.normal(size=(1, 2, 3, 3)), r.normal(size=(1, 2, 3, 3))]),
        "relu": (ops.relu, lambda r: [_away_from_zero(r, (2, 3, 4))]),
        "batchnorm_train": (bn, lambda r: [r.normal(size=(3, 2, 3, 3)), r.normal(size=2), r.normal(size=2)]),
        "batchnorm_train_5d": (bn, lambda r: [r.normal(size=(2, 2, 3, 2, 2)), r.normal(size=2), r.normal(size=2)]),
        "batchnorm_eval": (bn_eval, lambda r: [r.normal(size=(2, 2, 3, 3)), r.normal(size=2), r.normal(size=2)]),
        "softmax_cross_entropy": (ce, lambda r: [r.normal(size=(2, 5, 3, 3))]),
        "conv_relu_loss": (
            lambda x, w: ops.softmax_cross_entropy(ops.relu(ops.conv2d(x, w, padding=1)), np.zeros((1, 4, 4), int)),
            lambda r: [r.normal(size=(1, 2, 4, 4)), r.normal(size=(3, 2, 3, 3))],
        ),
    }


OP_CASES = _op_cases()


def model_case(preset_name: str, seed: int):
    """(model, input, loss) for an end-to-end check: tiny input, 3 classes, 64-bit."""
    from terracer.autodiff import ops
    from terracer.models import SegNetConfig, build_model, preset

    cfg = preset(preset_name, num_classes=3)
    model = build_model(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    size = 32 if isinstance(cfg, SegNetConfig) else 16
    x = rng.normal(size=(2, cfg.input_bands, size, size))
    if isinstance(cfg, SegNetConfig):
        projections = [rng.normal(size=(2, 3) + (size // s,) * 2) for s in model.head_strides]

        def loss(outs):
            total = None
            for o, p in zip(outs, projections):
                term = (o * p).sum()
                total = term if total is None else total + term
            return total
    else:
        labels = rng.integers(0, 3, size=(2, size, size))

        def loss(out):
            return ops.softmax_cross_entropy(out, labels)

    return model, x, loss
