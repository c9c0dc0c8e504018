"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run directly for just the summary lines::

    python tests/test_acceptance.py

Under pytest the same lines are collected and printed in the terminal
summary.  Criterion 1 is expected to report FAIL; see the README section on
attention cost accounting.
"""
from __future__ import annotations

import dataclasses
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from mstr import tensor as tn
from mstr.block import MstrBlockParams, multiscale_attention
from mstr.checks import degeneracy_check, model_gradient_check, primitive_checks
from mstr.complexity import analytic_flops_mstr, analytic_flops_vtr, count_attention_macs, scaling_report
from mstr.data import SyntheticSpec, feature_bytes, generate_synthetic_dataset, parse_feature_bytes
from mstr.experiments import multiscale_benefit
from mstr.model import MstrConfig, checkpoint_bytes, init_params, parameter_count, parse_checkpoint
from mstr.trainer import TrainConfig, compute_metrics, train

RESULTS: dict[int, str] = {}


def record(n: int, title: str, passed: bool, detail: str, elapsed: float) -> bool:
    line = f"criterion {n} [{'PASS' if passed else 'FAIL'}] {title}: {detail} ({elapsed:.2f}s)"
    RESULTS[n] = line
    print(line, flush=True)
    return passed


def criterion_1() -> bool:
    t0 = time.perf_counter()
    vtr, mstr = analytic_flops_vtr(81, 8), analytic_flops_mstr(81, 8, 3, 4)
    cv = count_attention_macs("vanilla", 81, 8)
    cm = count_attention_macs("mstr", 81, 8, 3, 4)
    analytic_ok = vtr == 52488 and mstr == 8640
    counted_ok = all(c[k] == ref for c, ref in ((cv, 52488), (cm, 8640))
                     for k in ("attention-scores", "attention-values"))
    dt = time.perf_counter() - t0
    detail = (f"analytic vtr={vtr} mstr={mstr} ({'ok' if analytic_ok else 'WRONG'}); "
              f"counted per side vtr={cv['attention-scores']} mstr={cm['attention-scores']} (required 52488 / 8640)")
    return record(1, "complexity formulas", analytic_ok and counted_ok and dt < 1.0, detail, dt)


def criterion_2() -> bool:
    t0 = time.perf_counter()
    rep = scaling_report([81, 162, 324, 648], 8, 3, 4)
    dt = time.perf_counter() - t0
    ok = abs(rep.slope_vtr - 2.0) <= 0.05 and abs(rep.slope_mstr - 1.0) <= 0.05 and dt < 60
    return record(2, "scaling law", ok, f"counted slopes vanilla={rep.slope_vtr:.4f} mstr={rep.slope_mstr:.4f}", dt)


def criterion_3() -> bool:
    t0 = time.perf_counter()
    r = degeneracy_check(cases=20, seed=0)
    dt = time.perf_counter() - t0
    return record(3, "degeneracy oracle", r.passed and dt < 60, r.detail, dt)


def criterion_4() -> bool:
    t0 = time.perf_counter()
    checks = primitive_checks(0) + [model_gradient_check(0, T=27, F=8, p=3, L=3, blocks=1, num_classes=3)]
    dt = time.perf_counter() - t0
    worst = max(float(c.detail.split("=")[1]) for c in checks)
    failed = [c.name for c in checks if not c.passed]
    detail = f"{len(checks) - len(failed)}/{len(checks)} within 1e-4, worst rel_err={worst:.2e}"
    return record(4, "gradient suite", not failed and dt < 300, detail, dt)


def criterion_5() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    F, p, L, heads, T = 8, 3, 4, 4, 162
    cfg = MstrConfig(input_dim=F, model_dim=F, p=p, L=L, heads=heads, blocks=1, num_classes=2)
    arrays = {k[len("block0."):]: v for k, v in init_params(cfg, 0).arrays.items() if k.startswith("block0.")}
    bp = MstrBlockParams.from_arrays(arrays)
    x = rng.standard_normal((T, F)).astype(np.float32)
    base = {}
    multiscale_attention(tn.Tensor(x), bp, p, L, heads, base)
    worst_sum = max(float(np.abs(a.sum(axis=1) - 1).max()) for lvl in base["probs"] for a in lvl)
    local_ok = True
    for frame in rng.choice(T, 12, replace=False):
        y = x.copy()
        y[frame] += np.float32(1.0)
        pert = {}
        multiscale_attention(tn.Tensor(y), bp, p, L, heads, pert)
        for k in range(L):
            win = frame // (p * p ** k)
            keep = np.ones(base["levels"][k].shape[0], bool)
            keep[win * p:(win + 1) * p] = False
            local_ok &= np.array_equal(base["levels"][k][keep], pert["levels"][k][keep])
            local_ok &= all(np.array_equal(a[keep], b[keep]) for a, b in zip(base["probs"][k], pert["probs"][k]))
    dt = time.perf_counter() - t0
    ok = worst_sum <= 1e-6 and local_ok and dt < 60
    return record(5, "normalization/locality", ok,
                  f"max |row sum - 1|={worst_sum:.1e}, untouched windows bitwise equal={local_ok}", dt)


def criterion_6() -> bool:
    t0 = time.perf_counter()
    res = multiscale_benefit(seeds=(0, 1, 2, 3, 4), levels=(4, 1))
    dt = time.perf_counter() - t0
    m4, m1 = res.median(4), res.median(1)
    ok = m4 - m1 >= 0.05 and m4 >= 0.90 and dt <= 1200
    detail = (f"median test WA L=4 {m4:.4f} vs L=1 {m1:.4f} (gap {100 * (m4 - m1):.1f} pts); "
              f"per seed L=4 {[round(v, 3) for v in res.test_wa[4]]} L=1 {[round(v, 3) for v in res.test_wa[1]]}")
    return record(6, "multi-scale benefit", ok, detail, dt)


def criterion_7() -> bool:
    t0 = time.perf_counter()
    pairs = []
    for F, heads, blocks, L in ((64, 16, 4, 4), (16, 2, 1, 1), (32, 4, 2, 3)):
        m = MstrConfig(input_dim=16, model_dim=F, heads=heads, blocks=blocks, L=L, num_classes=4)
        v = dataclasses.replace(m, variant="vanilla")
        pairs.append((parameter_count(m), parameter_count(v), init_params(m, 0).count(), init_params(v, 0).count()))
    dt = time.perf_counter() - t0
    ok = all(a == b == c == d for a, b, c, d in pairs)
    return record(7, "parameter parity", ok, "counts " + ", ".join(f"{a}={b}" for a, b, _, _ in pairs), dt)


def criterion_8() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 5)).astype(np.float32)
    msf_ok = parse_feature_bytes(feature_bytes(x)).tobytes() == x.tobytes()
    params = init_params(MstrConfig(input_dim=5, model_dim=8, heads=2, blocks=2, L=2, num_classes=3), 3)
    blob = checkpoint_bytes(params)
    back = parse_checkpoint(blob)
    ckpt_ok = checkpoint_bytes(back) == blob and all(
        back.arrays[k].tobytes() == params.arrays[k].tobytes() for k in params.arrays)
    spec = SyntheticSpec(T_range=(20, 27), pattern_scales=(1, 3, 9), samples_per_class=10)
    ds = generate_synthetic_dataset(spec, 0, 3, 2)
    cfg = MstrConfig(input_dim=8, model_dim=8, heads=2, blocks=1, L=2, num_classes=3)
    tc = TrainConfig(epochs=3, batch_size=8, seeds=(0, 1), dropout_rate=0.1)
    with tempfile.TemporaryDirectory() as d:
        train(cfg, tc, ds, out_dir=Path(d) / "a")
        train(cfg, tc, ds, out_dir=Path(d) / "b")
        hist_ok = (Path(d) / "a/history.csv").read_bytes() == (Path(d) / "b/history.csv").read_bytes()
    dt = time.perf_counter() - t0
    return record(8, "round trips/determinism", msf_ok and ckpt_ok and hist_ok,
                  f"msf={msf_ok} checkpoint={ckpt_ok} history={hist_ok}", dt)


def criterion_9() -> bool:
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    C, n = 6, 1000
    y, yh = rng.integers(0, C, n), rng.integers(0, C, n)
    m = compute_metrics(y, yh, C)
    correct = sum(int(a == b) for a, b in zip(y, yh))
    recalls, weighted_f1 = [], 0.0
    for c in range(C):
        tp = sum(1 for a, b in zip(y, yh) if a == c and b == c)
        fn = sum(1 for a, b in zip(y, yh) if a == c and b != c)
        fp = sum(1 for a, b in zip(y, yh) if a != c and b == c)
        if tp + fn:
            recalls.append(tp / (tp + fn))
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        weighted_f1 += f1 * (tp + fn) / n
    errs = (abs(m.wa - correct / n), abs(m.ua - sum(recalls) / len(recalls)), abs(m.wf1 - weighted_f1))
    dt = time.perf_counter() - t0
    return record(9, "metrics oracle", max(errs) < 1e-12, f"max abs diff={max(errs):.1e}", dt)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9]


@pytest.mark.xfail(strict=True, reason="a windowed counter performs T/p^k windows per level, i.e. the "
                                       "analytic sum divided by p (2880 vs 8640 at T=81)")
def test_criterion_1_complexity_formulas():
    assert criterion_1()


def test_criterion_2_scaling_law():
    assert criterion_2()


def test_criterion_3_degeneracy():
    assert criterion_3()


def test_criterion_4_gradients():
    assert criterion_4()


def test_criterion_5_normalization_locality():
    assert criterion_5()


@pytest.mark.slow
def test_criterion_6_multiscale_benefit():
    assert criterion_6()


def test_criterion_7_parameter_parity():
    assert criterion_7()


def test_criterion_8_roundtrips_determinism():
    assert criterion_8()


def test_criterion_9_metrics_oracle():
    assert criterion_9()


if __name__ == "__main__":
    outcomes = [fn() for fn in CRITERIA]
    print(f"{sum(outcomes)}/{len(outcomes)} criteria pass")
    sys.exit(0 if all(outcomes) else 1)
