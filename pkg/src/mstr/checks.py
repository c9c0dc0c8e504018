"""Runtime self-checks backing the ``gradcheck`` and ``selftest`` commands."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as tn
from .block import MstrBlockParams, mstr_block_forward
from .complexity import analytic_flops_mstr, analytic_flops_vtr, scaling_report
from .data import feature_bytes, parse_feature_bytes
from .model import (
    MstrConfig,
    checkpoint_bytes,
    init_params,
    model_forward_batch,
    parse_checkpoint,
    vanilla_block_forward,
)
from .trainer import compute_metrics

GRAD_TOL = 1e-4
FD_STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<28} {self.detail}"


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``x``, perturbed in place."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def _check_op(name: str, build: Callable, inputs: dict[str, np.ndarray], weight_seed: int = 0) -> CheckResult:
    """Compare tape gradients of sum(op(inputs) * W) against central differences."""
    def run(tape=None):
        ts = {k: (tape.leaf(v, name=k) if tape is not None else tn.Tensor(v)) for k, v in inputs.items()}
        out = build(**ts)
        W = np.random.default_rng(weight_seed).uniform(-1, 1, out.shape)
        return tn.sum_all(tn.mul(out, tn.Tensor(W)))

    tape = tn.Tape()
    grads = tn.backward(tape, run(tape))
    worst = 0.0
    for k, v in inputs.items():
        num = numeric_grad(lambda: float(run().data[0, 0]), v)
        worst = max(worst, relative_error(grads[k], num))
    return CheckResult(name, worst < GRAD_TOL, f"rel_err={worst:.2e}")


def primitive_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-2, 2, shape)

    return [
        _check_op("matmul", lambda a, b: tn.matmul(a, b), {"a": u(4, 6), "b": u(6, 3)}),
        _check_op("add(broadcast)", lambda a, b: tn.add(a, b), {"a": u(4, 6), "b": u(1, 6)}),
        _check_op("mul", lambda a, b: tn.mul(a, b), {"a": u(4, 6), "b": u(4, 6)}),
        _check_op("scale", lambda a: tn.scale(a, 0.7), {"a": u(4, 6)}),
        _check_op("transpose", lambda a: tn.transpose(a), {"a": u(4, 6)}),
        _check_op("softmax_rows", lambda a: tn.softmax_rows(a), {"a": u(4, 6)}),
        _check_op("gelu", lambda a: tn.gelu(a), {"a": u(4, 6)}),
        _check_op("layer_norm", lambda a, g, b: tn.layer_norm(a, g, b, 1e-5),
                  {"a": u(4, 6), "g": u(1, 6), "b": u(1, 6)}),
        _check_op("avg_pool_time", lambda a: tn.avg_pool_time(a, 2), {"a": u(4, 6)}),
        _check_op("upsample_nearest_time", lambda a: tn.upsample_nearest_time(a, 3), {"a": u(4, 6)}),
        _check_op("slice/concat", lambda a: tn.concat_cols([tn.slice_cols(a, 3, 6), tn.slice_rows(a, 0, 4)]),
                  {"a": u(4, 6)}),
        _check_op("window_scores", lambda q, k: tn.window_scores(q, k, 2, 1 / math.sqrt(6)),
                  {"q": u(4, 6), "k": u(4, 6)}),
        _check_op("window_apply", lambda a, v: tn.window_apply(a, v, 2), {"a": u(4, 2), "v": u(4, 6)}),
        _check_op("segment_mean_rows", lambda a: tn.segment_mean_rows(a, [(0, 3), (2, 2)]), {"a": u(4, 6)}),
        _check_op("cross_entropy", lambda a: tn.cross_entropy(a, [0, 5, 2, 1]), {"a": u(4, 6)}),
    ]


def model_gradient_check(seed: int = 0, T: int = 27, F: int = 8, p: int = 3, L: int = 3,
                         blocks: int = 1, num_classes: int = 3, heads: int = 2,
                         variant: str = "mstr") -> CheckResult:
    """End-to-end loss gradient of a tiny double-precision model."""
    cfg = MstrConfig(input_dim=4, model_dim=F, p=p, L=L, heads=heads, blocks=blocks,
                     num_classes=num_classes, precision="double", variant=variant)
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    feats = [rng.uniform(-2, 2, (T, 4)), rng.uniform(-2, 2, (T, 4))]
    lens, labels = [T, T - 5], [0, num_classes - 1]

    def loss(tape=None):
        return tn.cross_entropy(model_forward_batch(feats, lens, params, tape=tape), labels)

    tape = tn.Tape()
    grads = tn.backward(tape, loss(tape))
    worst = 0.0
    for name, arr in params.arrays.items():
        num = numeric_grad(lambda: float(loss().data[0, 0]), arr)
        worst = max(worst, relative_error(grads[name], num))
    return CheckResult(f"model[{variant}] end-to-end", worst < GRAD_TOL, f"rel_err={worst:.2e}")


def degeneracy_check(cases: int = 20, seed: int = 0) -> CheckResult:
    """Single level with one window spanning the sequence equals the global-attention block."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        T = int(rng.integers(2, 65))
        heads = int(rng.choice([1, 2, 4]))
        F = heads * int(rng.integers(1, 32 // heads + 1))
        cfg = MstrConfig(input_dim=F, model_dim=F, heads=heads, blocks=1, num_classes=2, p=T, L=1)
        arrays = {k.split(".", 1)[1]: v for k, v in init_params(cfg, int(rng.integers(1 << 30))).arrays.items()
                  if k.startswith("block0.")}
        bp = MstrBlockParams.from_arrays(arrays)
        x = tn.Tensor(rng.standard_normal((T, F)).astype(np.float32))
        a = mstr_block_forward(x, bp, T, 1, heads).data
        b = vanilla_block_forward(x, bp, heads).data
        worst = max(worst, float(np.abs(a - b).max()))
    return CheckResult("degeneracy L=1,p=T", worst < 1e-6, f"max_abs_diff={worst:.2e}")


def flops_check() -> CheckResult:
    rep = scaling_report([81, 162, 324, 648], 8, 3, 4)
    ok = (analytic_flops_vtr(81, 8) == 52488 and analytic_flops_mstr(81, 8, 3, 4) == 8640
          and abs(rep.slope_vtr - 2) <= 0.05 and abs(rep.slope_mstr - 1) <= 0.05)
    return CheckResult("flops formulas/scaling", ok,
                       f"slopes vanilla={rep.slope_vtr:.3f} mstr={rep.slope_mstr:.3f}")


def roundtrip_check(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((7, 5)).astype(np.float32)
    ok = parse_feature_bytes(feature_bytes(x)).tobytes() == x.tobytes()
    params = init_params(MstrConfig(input_dim=3, model_dim=8, heads=2, blocks=1, num_classes=3), seed)
    blob = checkpoint_bytes(params)
    ok = ok and checkpoint_bytes(parse_checkpoint(blob)) == blob
    return CheckResult("MSF1/checkpoint round trip", ok, "bitwise")


def metrics_check(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    y, yh = rng.integers(0, 6, 1000), rng.integers(0, 6, 1000)
    m = compute_metrics(y, yh, 6)
    wa = np.mean(y == yh)
    recalls = [np.mean(yh[y == c] == c) for c in range(6) if np.any(y == c)]
    ok = abs(m.wa - wa) < 1e-12 and abs(m.ua - np.mean(recalls)) < 1e-12
    return CheckResult("metrics recount", ok, f"wa={m.wa:.4f} ua={m.ua:.4f}")


def gradcheck_all(seed: int = 0) -> list[CheckResult]:
    return primitive_checks(seed) + [model_gradient_check(seed), model_gradient_check(seed, variant="vanilla")]


def selftest(seed: int = 0) -> list[CheckResult]:
    return gradcheck_all(seed) + [degeneracy_check(seed=seed), flops_check(), roundtrip_check(seed),
                                  metrics_check(seed)]
