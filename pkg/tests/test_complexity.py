from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from mstr.complexity import (
    CATEGORIES,
    analytic_flops_mstr,
    analytic_flops_mstr_closed,
    analytic_flops_vtr,
    count_attention_macs,
    count_empirical_macs,
    count_model_macs,
    flops_report,
    loglog_slope,
    scaling_report,
    windowed_macs_per_side,
)
from mstr.errors import ConfigurationError, ContractError
from mstr.model import MstrConfig
from mstr.tensor import Tape


def test_hand_evaluated_values():
    assert analytic_flops_vtr(81, 8) == 52488
    # 81*9*8 + 27*9*8 + 9*9*8 + 3*9*8
    assert analytic_flops_mstr(81, 8, 3, 4) == 5832 + 1944 + 648 + 216 == 8640


def test_reduction_at_81():
    rep = flops_report(81, 8, 3, 4)
    assert rep.reduction_pct == pytest.approx(100 * (1 - 8640 / 52488))
    assert 0 <= rep.reduction_pct < 100


@given(st.integers(1, 40), st.integers(1, 16), st.integers(2, 5), st.integers(1, 4))
def test_closed_form_agrees_exactly(m, F, p, L):
    T = m * p ** (L - 1)
    assert Fraction(analytic_flops_mstr(T, F, p, L)) == analytic_flops_mstr_closed(T, F, p, L)


@given(st.integers(1, 6), st.integers(1, 8), st.integers(2, 4), st.integers(1, 3))
def test_monotone_in_each_argument(m, F, p, L):
    T = m * (p + 1) ** L * p ** L  # divisible for p and p+1 at L and L+1 levels
    assume(T % p ** L == 0)
    base = analytic_flops_mstr(T, F, p, L)
    assert analytic_flops_mstr(2 * T, F, p, L) >= base
    assert analytic_flops_mstr(T, F + 1, p, L) >= base
    assert analytic_flops_mstr(T, F, p, L + 1) >= base
    assert analytic_flops_mstr(T, F, p + 1, L) >= base


def test_analytic_errors():
    with pytest.raises(ConfigurationError):
        analytic_flops_mstr(80, 8, 3, 4)
    with pytest.raises(ConfigurationError):
        analytic_flops_vtr(0, 8)


def test_vanilla_counter_equals_t_squared_f():
    for T in (5, 27, 81):
        c = count_attention_macs("vanilla", T, 8)
        assert c["attention-scores"] == c["attention-values"] == analytic_flops_vtr(T, 8)


def test_windowed_counter_is_exact_and_a_factor_p_below_analytic():
    # each of the T/p^k windows at level k costs p*p*F per side
    c = count_attention_macs("mstr", 81, 8, 3, 4)
    assert c["attention-scores"] == c["attention-values"] == windowed_macs_per_side(81, 8, 3, 4) == 2880
    assert windowed_macs_per_side(81, 8, 3, 4) * 3 == analytic_flops_mstr(81, 8, 3, 4)


@pytest.mark.parametrize("heads", [1, 2, 4, 8])
def test_heads_do_not_change_attention_macs(heads):
    for variant in ("mstr", "vanilla"):
        ref = count_attention_macs(variant, 81, 8, heads=1)
        c = count_attention_macs(variant, 81, 8, heads=heads)
        assert c["attention-scores"] == ref["attention-scores"]
        assert c["attention-values"] == ref["attention-values"]


def test_counter_categories_and_projection_count():
    c = count_attention_macs("mstr", 27, 4, 3, 3)
    assert set(CATEGORIES) <= set(c)
    assert c["projections"] == 4 * 27 * 4 * 4  # Q, K, V and W_o
    assert c["ffn"] == 0 and c["classifier"] == 0


def test_counter_requires_counting_tape():
    with pytest.raises(ContractError):
        count_empirical_macs(Tape())


def test_full_model_counter_attributes_every_category():
    cfg = MstrConfig(input_dim=4, model_dim=8, p=3, L=2, heads=2, blocks=2, num_classes=3)
    c = count_model_macs(cfg, 18)
    F, T = 8, 18
    assert c["ffn"] == cfg.blocks * 2 * T * F * 4 * F
    assert c["classifier"] == F * 4 + 4 * 2 + 2 * 3
    assert c["projections"] == T * 4 * F + cfg.blocks * 4 * T * F * F
    assert c["attention-scores"] == cfg.blocks * windowed_macs_per_side(T, F, 3, 2)


def test_scaling_slopes():
    rep = scaling_report([81, 162, 324, 648], 8, 3, 4)
    assert abs(rep.slope_vtr - 2.0) <= 0.05
    assert abs(rep.slope_mstr - 1.0) <= 0.05
    assert abs(rep.analytic_slope_mstr - 1.0) <= 0.05


def test_loglog_slope_exact_power():
    xs = [1, 2, 4, 8]
    assert loglog_slope(xs, [3 * x ** 2 for x in xs]) == pytest.approx(2.0)


def test_report_csv_columns():
    text = scaling_report([81, 162], 8, 3, 4).to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "T,F,p,L,variant,analytic,counted,reduction_pct"
    assert lines[1].startswith("81,8,3,4,vanilla,52488,52488,")
    assert lines[2].startswith("81,8,3,4,mstr,8640,2880,83.54")
    assert len(lines) == 5


def test_unknown_variant():
    with pytest.raises(ConfigurationError):
        count_attention_macs("cnn", 9, 2)
