"""Attention cost models and the empirical MAC counter.

Counting convention: one MAC per scalar multiply in a matrix product.  The
score product (Q K^t) and the value product (A V) are reported separately
("per side"); pooling, up-sampling, softmax and normalisation are not
counted.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .block import MstrBlockParams, multiscale_attention
from .errors import ConfigurationError, ContractError
from .model import MstrConfig, global_attention, init_params, model_forward
from .tensor import Tape, Tensor, matmul, tape_scope

CATEGORIES = ("attention-scores", "attention-values", "projections", "ffn", "classifier")


def analytic_flops_vtr(T: int, F: int) -> int:
    """Global attention cost, T^2 * F."""
    if T < 1 or F < 1:
        raise ConfigurationError(f"T and F must be >= 1, got T={T}, F={F}")
    return T * T * F


def analytic_flops_mstr(T: int, F: int, p: int, L: int) -> int:
    """Multi-scale windowed attention cost, sum_k (T / p^(k-1)) * p^2 * F."""
    if T < 1 or F < 1 or p < 1 or L < 1:
        raise ConfigurationError(f"invalid sizes T={T}, F={F}, p={p}, L={L}")
    if T % p ** (L - 1):
        raise ConfigurationError(f"T={T} is not divisible by p^(L-1)={p ** (L - 1)}")
    return sum((T // p ** (k - 1)) * p * p * F for k in range(1, L + 1))


def analytic_flops_mstr_closed(T: int, F: int, p: int, L: int) -> Fraction:
    """Geometric-series form p^2 F T (1 - p^-L) / (1 - p^-1), exact."""
    p_ = Fraction(p)
    if p == 1:
        return Fraction(T * F * L)
    return p_ * p_ * F * T * (1 - p_ ** -L) / (1 - 1 / p_)


def windowed_macs_per_side(T: int, F: int, p: int, L: int) -> int:
    """Multiplies actually performed by one side of the windowed attention.

    Level k has T/p^k windows, each costing p^2 F per side, i.e.
    (T / p^(k-1)) * p * F in total.  This is the analytic formula divided by p.
    """
    if T % p ** L:
        raise ConfigurationError(f"T={T} is not divisible by p^L={p ** L}")
    return sum((T // p ** k) * p * p * F for k in range(1, L + 1))


def count_empirical_macs(tape: Tape) -> dict[str, int]:
    """MACs recorded on ``tape``, one entry per category (zeros included)."""
    if not tape.count_macs:
        raise ContractError("this tape was created without count_macs=True")
    out = {c: int(tape.macs.get(c, 0)) for c in CATEGORIES}
    extra = {k: int(v) for k, v in tape.macs.items() if k not in out}
    out.update(extra)
    return out


def _random_block(F: int, rng: np.random.Generator) -> MstrBlockParams:
    def r(a, b):
        return Tensor(rng.standard_normal((a, b)) / math.sqrt(a))
    return MstrBlockParams(
        r(F, F), r(F, F), r(F, F), r(F, F),
        r(F, 4 * F), Tensor(np.zeros((1, 4 * F))), r(4 * F, F), Tensor(np.zeros((1, F))),
        Tensor(np.ones((1, F))), Tensor(np.zeros((1, F))), Tensor(np.ones((1, F))), Tensor(np.zeros((1, F))),
    )


def count_attention_macs(variant: str, T: int, F: int, p: int = 3, L: int = 4,
                         heads: int = 1, seed: int = 0) -> dict[str, int]:
    """Run one attention sublayer on random data and return its MAC counts."""
    rng = np.random.default_rng(seed)
    tape = Tape(count_macs=True)
    x = tape.leaf(rng.standard_normal((T, F)), name="x", requires_grad=False)
    params = _random_block(F, rng)
    if variant == "mstr":
        if T % p ** L:
            raise ConfigurationError(f"T={T} must be a multiple of p^L={p ** L}")
        multiscale_attention(x, params, p, L, heads)
    elif variant == "vanilla":
        with tape_scope(x, name="projections"):
            q, k, v = matmul(x, params.w_q), matmul(x, params.w_k), matmul(x, params.w_v)
        global_attention(q, k, v, heads)
    else:
        raise ConfigurationError(f"unknown variant {variant!r}")
    return count_empirical_macs(tape)


@dataclass
class FlopsReport:
    T: int
    F: int
    p: int
    L: int
    analytic_vtr: int
    analytic_mstr: int
    counted_vtr_macs: int
    counted_mstr_macs: int
    scope: str = "attention-only"

    @property
    def reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.analytic_mstr / self.analytic_vtr)

    @property
    def counted_reduction_pct(self) -> float:
        return 100.0 * (1.0 - self.counted_mstr_macs / self.counted_vtr_macs)


def flops_report(T: int, F: int, p: int, L: int, heads: int = 1) -> FlopsReport:
    """Attention-only comparison at one sequence length (per-side counts)."""
    vtr = count_attention_macs("vanilla", T, F, p, L, heads)
    mstr = count_attention_macs("mstr", T, F, p, L, heads)
    return FlopsReport(T, F, p, L, analytic_flops_vtr(T, F), analytic_flops_mstr(T, F, p, L),
                       vtr["attention-scores"], mstr["attention-scores"])


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    slope, _ = np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)
    return float(slope)


@dataclass
class ScalingReport:
    reports: list[FlopsReport]
    slope_vtr: float
    slope_mstr: float
    analytic_slope_vtr: float
    analytic_slope_mstr: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["T", "F", "p", "L", "variant", "analytic", "counted", "reduction_pct"])
        for r in self.reports:
            w.writerow([r.T, r.F, r.p, r.L, "vanilla", r.analytic_vtr, r.counted_vtr_macs, "0.00"])
            w.writerow([r.T, r.F, r.p, r.L, "mstr", r.analytic_mstr, r.counted_mstr_macs,
                        f"{r.reduction_pct:.2f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        head = f"{'T':>6} {'F':>4} {'p':>3} {'L':>3} {'variant':>8} {'analytic':>12} {'counted':>12} {'reduction_pct':>14}"
        lines = [head, "-" * len(head)]
        for r in self.reports:
            lines.append(f"{r.T:>6} {r.F:>4} {r.p:>3} {r.L:>3} {'vanilla':>8} {r.analytic_vtr:>12} "
                         f"{r.counted_vtr_macs:>12} {'0.00':>14}")
            lines.append(f"{r.T:>6} {r.F:>4} {r.p:>3} {r.L:>3} {'mstr':>8} {r.analytic_mstr:>12} "
                         f"{r.counted_mstr_macs:>12} {r.reduction_pct:>13.2f}%")
        if len(self.reports) > 1:
            lines.append(f"log-log slope (counted):  vanilla {self.slope_vtr:.4f}  mstr {self.slope_mstr:.4f}")
            lines.append(f"log-log slope (analytic): vanilla {self.analytic_slope_vtr:.4f}  "
                         f"mstr {self.analytic_slope_mstr:.4f}")
        return "\n".join(lines) + "\n"


def scaling_report(T_list: Sequence[int], F: int, p: int, L: int, heads: int = 1) -> ScalingReport:
    if not T_list:
        raise ConfigurationError("T_list is empty")
    reports = [flops_report(T, F, p, L, heads) for T in T_list]
    Ts = [r.T for r in reports]
    if len(reports) > 1:
        slopes = (loglog_slope(Ts, [r.counted_vtr_macs for r in reports]),
                  loglog_slope(Ts, [r.counted_mstr_macs for r in reports]),
                  loglog_slope(Ts, [r.analytic_vtr for r in reports]),
                  loglog_slope(Ts, [r.analytic_mstr for r in reports]))
    else:
        slopes = (float("nan"),) * 4
    return ScalingReport(reports, *slopes)


def count_model_macs(config: MstrConfig, T: int, seed: int = 0) -> dict[str, int]:
    """Per-category MACs of one full forward pass on a random length-T input."""
    if T % config.multiple:
        raise ConfigurationError(f"T={T} must be a multiple of {config.multiple}")
    params = init_params(config, seed)
    x = np.random.default_rng(seed).standard_normal((T, config.input_dim))
    tape = Tape(count_macs=True)
    model_forward(x, T, params, tape=tape)
    return count_empirical_macs(tape)
