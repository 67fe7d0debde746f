"""Finite-difference gradient harness over every differentiable building block.

Each registry entry builds ``(fn, inputs)`` from an rng; the harness contracts
``fn(*inputs)`` with random weights and compares backward() to central
differences in 64-bit precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .encoder import EncoderConfig
from .geometry import positional_encode
from .renderer import composite

PRIMITIVE_TOL = 1e-3
END_TO_END_TOL = 2e-3
EPS = 1e-4
# smaller step end to end: a 1e-4 nudge to a weight routinely crosses a ReLU kink somewhere
END_TO_END_EPS = 1e-6


def _t(rng, *shape, low=-1.0, high=1.0, away=0.0):
    """Random leaf tensor; ``away`` keeps entries at least that far from zero."""
    x = rng.uniform(low, high, size=shape)
    if away:
        x = np.where(np.abs(x) < away, np.sign(x + 1e-12) * away + x, x)
    return Tensor(x, requires_grad=True)


def _unary(op, **kw):
    return lambda rng: (op, [_t(rng, 3, 4, **kw)])


def _binary(op):
    return lambda rng: (op, [_t(rng, 3, 4), _t(rng, 4)])


def _div(rng):
    return dc.div, [_t(rng, 3, 4), _t(rng, 3, 4, low=0.5, high=2.0)]


def _log(rng):
    return dc.log, [_t(rng, 5, low=0.2, high=3.0)]


def _maximum(rng):
    return (lambda a: dc.maximum(a, 0.1)), [_t(rng, 10, away=0.05)]


def _index(rng):
    idx = np.array([0, 2, 2, 1])
    return (lambda a: dc.index(a, (slice(1, 3), idx))), [_t(rng, 3, 4)]


def _concat(rng):
    return (lambda a, b: dc.concat([a, b], axis=1)), [_t(rng, 2, 3), _t(rng, 2, 2)]


def _stack(rng):
    return (lambda a, b: dc.stack([a, b], axis=0)), [_t(rng, 2, 3), _t(rng, 2, 3)]


def _conv(fn, x_shape, w_shape, **kw):
    def build(rng):
        transposed = fn in (dc.conv_transpose2d, dc.conv_transpose3d)
        c_out = w_shape[1] if transposed else w_shape[0]
        return (lambda x, w, b: fn(x, w, b, **kw)), [_t(rng, *x_shape), _t(rng, *w_shape), _t(rng, c_out)]
    return build


def _trilinear(rng):
    vol = _t(rng, 2, 3, 4, 5)
    coords = _t(rng, 7, 3, low=-0.95, high=0.95)
    return dc.trilinear_sample, [vol, coords]


def _pe(rng):
    return positional_encode, [_t(rng, 4, 6, low=-0.3, high=0.3)]


def _composite(rng):
    rays, n = 5, 6
    depths = np.sort(rng.uniform(1.0, 3.0, size=(rays, n)), axis=1)

    def fn(vol):
        out = composite(vol, depths, 1.0, 3.0)
        return dc.concat([out.features.reshape(-1, rays), out.depth.reshape(1, rays),
                          out.opacity.reshape(1, rays)], axis=0)

    return fn, [_t(rng, 4, n, rays, 1)]


PRIMITIVES = {
    "add": _binary(dc.add),
    "sub": _binary(dc.sub),
    "mul": _binary(dc.mul),
    "div": _div,
    "neg": _unary(dc.neg),
    "square": _unary(dc.square),
    "exp": _unary(dc.exp),
    "log": _log,
    "sin": _unary(dc.sin),
    "cos": _unary(dc.cos),
    "abs": _unary(dc.abs, away=0.05),
    "relu": _unary(dc.relu, away=0.05),
    "sigmoid": _unary(dc.sigmoid),
    "softplus": _unary(dc.softplus),
    "maximum": _maximum,
    "sum": _unary(lambda a: dc.sum(a, axis=1)),
    "mean": _unary(lambda a: dc.mean(a, axis=0, keepdims=True)),
    "softmax": _unary(lambda a: dc.softmax(a, axis=0)),
    "cumsum": _unary(lambda a: dc.cumsum(a, axis=1)),
    "cumsum_exclusive": _unary(lambda a: dc.cumsum(a, axis=1, exclusive=True)),
    "reshape": _unary(lambda a: dc.reshape(a, (2, 6))),
    "transpose": _unary(lambda a: dc.transpose(a, (1, 0))),
    "index": _index,
    "concat": _concat,
    "stack": _stack,
    "broadcast_to": lambda rng: ((lambda a: dc.broadcast_to(a, (3, 4))), [_t(rng, 1, 4)]),
    "matmul": lambda rng: (dc.matmul, [_t(rng, 3, 4), _t(rng, 4, 2)]),
    "linear": lambda rng: (dc.linear, [_t(rng, 5, 4), _t(rng, 3, 4), _t(rng, 3)]),
    "upsample2x": _unary(lambda a: dc.upsample2x(a.reshape(1, 3, 4))),
    "conv2d": _conv(dc.conv2d, (2, 6, 6), (3, 2, 4, 4), stride=2, padding=1),
    "conv3d": _conv(dc.conv3d, (2, 4, 4, 4), (3, 2, 3, 3, 3), padding=1),
    "conv_transpose2d": _conv(dc.conv_transpose2d, (2, 3, 3), (2, 3, 4, 4), stride=2, padding=1),
    "conv_transpose3d": _conv(dc.conv_transpose3d, (2, 2, 2, 2), (2, 3, 4, 4, 4), stride=2, padding=1),
    "trilinear_sample": _trilinear,
    "positional_encode": _pe,
    "composite": _composite,
}

def end_to_end_case(seed, n_inputs=2, n_coarse=6):
    """Loss of the full pipeline on 8x8 random images as a function of its parameters.

    Fine sampling is disabled here: fine depths are a non-differentiable function of
    the coarse weights, so finite differences would see an effect the gradient does not.
    """
    from .lightfield import LightFieldConfig, LightFieldModel, ModelConfig, render_image
    from .losses import total_loss
    from .scenes import camera_ring
    from .trainer import TINY_ENCODER

    rng = np.random.default_rng(seed)
    enc = EncoderConfig(**TINY_ENCODER)
    cfg = ModelConfig(encoder=enc, lightfield=LightFieldConfig(hidden=16, feature_dim=enc.feature_dim),
                      n_coarse=n_coarse, n_fine=0)
    model = LightFieldModel(cfg, rng)
    # zero-initialised biases put dead ReLU rows exactly on the kink, where central
    # differences see half a slope; jitter them off it
    for name, p in model.named_parameters():
        if name.endswith("bias"):
            p.data[...] = rng.uniform(-0.1, 0.1, size=p.shape)
    cams = camera_ring(n_inputs + 1, size=8, elevation=15.0)
    images = [rng.uniform(0, 1, size=(8, 8, 3)) for _ in cams]
    inputs = list(zip(images[:-1], cams[:-1]))

    def loss():
        out = render_image(model, inputs, cams[-1], np.random.default_rng(seed + 1))
        return total_loss(out, images[-1])[0]

    named = list(model.named_parameters())
    return model, named, loss, rng


def check_end_to_end(seed, probes_per_tensor=2, max_tensors=24):
    """Max norm-wise relative error over a random subset of parameter entries."""
    model, named, loss, rng = end_to_end_case(seed)
    for _, p in named:
        p.grad = None
    loss().backward()
    order = rng.permutation(len(named))[:max_tensors]
    analytic, numeric = [], []
    for i in sorted(order):
        _, p = named[i]
        idx = rng.choice(p.size, size=min(probes_per_tensor, p.size), replace=False)
        g = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1)
        analytic.append(g[idx])
        numeric.append(dc.numerical_gradient(loss, p, eps=END_TO_END_EPS, indices=idx))
    return dc.relative_error(np.concatenate(analytic), np.concatenate(numeric))


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)  # component -> max relative error
    tolerances: dict = field(default_factory=dict)

    @property
    def failures(self):
        return [k for k, e in self.errors.items() if not e <= self.tolerances[k]]

    @property
    def passed(self):
        return not self.failures

    def table(self):
        lines = []
        for k, e in self.errors.items():
            status = "ok" if e <= self.tolerances[k] else "FAIL"
            lines.append(f"{k:<20} {e:10.3e}  tol {self.tolerances[k]:.0e}  {status}")
        return "\n".join(lines)


def gradcheck(components=None, seed=0, registry=None, end_to_end=True):
    """Run finite-difference checks; ``components`` filters by name (``end_to_end`` included)."""
    registry = PRIMITIVES if registry is None else registry
    names = list(registry) + (["end_to_end"] if end_to_end else [])
    if components:
        unknown = set(components) - set(names)
        if unknown:
            raise KeyError(f"unknown gradcheck components: {sorted(unknown)}")
        names = [n for n in names if n in components]
    report = GradcheckReport()
    with dc.precision(np.float64):
        for i, name in enumerate(names):
            rng = np.random.default_rng([seed, i])
            if name == "end_to_end":
                err = check_end_to_end(seed)
                tol = END_TO_END_TOL
            else:
                fn, inputs = registry[name](rng)
                errs = dc.check_gradients(fn, inputs, rng, eps=EPS)
                err = max(errs.values()) if errs else 0.0
                tol = PRIMITIVE_TOL
            report.errors[name] = err
            report.tolerances[name] = tol
    return report
