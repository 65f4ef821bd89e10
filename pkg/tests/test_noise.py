import math

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from bgvlab import noise
from bgvlab.noise import (
    CanonicalEstimate, NoiseContext, canonical_track, const_factor, correction_F, failure_log2, from_variance,
    gaussian_condition, v_add, v_clean, v_const, v_keyswitch_ghs, v_ms, v_mult,
)

T = 65537
VE = 3.19**2
VS = 2 / 3


def ctx_for(n):
    return NoiseContext(n, T, VE, VS)


def test_context_validation():
    with pytest.raises(ValueError):
        NoiseContext(8, T, 0.0, VS)
    with pytest.raises(ValueError):
        NoiseContext(8, T, VE, VS, alpha=2.0)
    assert ctx_for(8).V_u == VS


@pytest.mark.parametrize("n", [2**13, 2**14, 2**15])
def test_clean_variance_closed_form(n):
    want = T**2 * (1 / 12 + VE + 2 * n * VE * VS)
    assert v_clean(ctx_for(n)).variance == pytest.approx(want, rel=1e-12)


def test_clean_variance_reference_value():
    assert v_clean(ctx_for(2**13)).log2_variance == pytest.approx(48.762, abs=1e-3)


def test_ms_at_theoretical_top_prime():
    ctx = ctx_for(2**13)
    c = v_clean(ctx)
    p = math.sqrt(c.variance / (ctx.alpha * ctx.V_ms))
    out = v_ms(c, 1 / p, ctx)
    want = c.variance / p**2 + T**2 / 12 * (1 + 2**13 * VS)
    assert out.variance == pytest.approx(want, rel=1e-12)
    assert round(out.log2_variance, 2) == 40.84
    assert (out.K, out.s_degree) == (0, 1)
    assert out.flags == ()


def test_ms_flags_when_carried_noise_dominates():
    ctx = ctx_for(2**13)
    out = v_ms(v_clean(ctx), 2.0**-3, ctx)
    assert "gaussian_condition_violated" in out.flags
    assert out.K == 1
    with pytest.raises(ValueError):
        v_ms(v_clean(ctx), 1.5, ctx)


def test_gaussian_condition_margin_sign():
    ctx = ctx_for(2**13)
    c = v_clean(ctx)
    lr = -0.5 * math.log2(c.variance / (ctx.alpha * ctx.V_ms))
    assert gaussian_condition(c, lr, ctx) == pytest.approx(0.0, abs=1e-9)
    assert gaussian_condition(c, lr - 1, ctx) == pytest.approx(2.0)
    assert gaussian_condition(c, lr + 1, ctx) == pytest.approx(-2.0)


def test_correction_factor_values():
    assert [correction_F(a, b) for a, b in [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (3, 3)]] == [1, 1, 2, 3, 6, 20]
    with pytest.raises(ValueError):
        correction_F(-1, 0)


def test_mult_worked_example():
    ctx = ctx_for(1024)
    a = noise.NoiseEstimate(((0, 1, 10.0),), "x", 0, 1)
    b = noise.NoiseEstimate(((0, 1, 12.0),), "x", 0, 1)
    # shared secret degree: F(1, 1) = 2
    assert v_mult(a, b, ctx).log2_variance == pytest.approx(10 + 10 + 12 + 1)
    c = noise.NoiseEstimate(((1, 0, 12.0),), "x", 1, 0)
    # e-term times s-term: no shared factor
    assert v_mult(a, c, ctx).log2_variance == pytest.approx(10 + 10 + 12)
    r = v_mult(a, b, ctx)
    assert r.terms[0][:2] == (0, 2) and r.s_degree == 2


def test_mult_of_switched_noise_reference_values():
    for n, want in [(2**13, 95.68), (2**14, 98.68), (2**15, 101.68)]:
        ctx = ctx_for(n)
        c = v_clean(ctx)
        p = math.sqrt(c.variance / (ctx.alpha * ctx.V_ms))
        ms = v_ms(c, 1 / p, ctx)
        assert v_mult(ms, ms, ctx).log2_variance == pytest.approx(want, abs=0.01)


def test_add_and_const():
    ctx = ctx_for(2**13)
    a, b = from_variance(2.0**20), from_variance(2.0**20)
    assert v_add(a, b).log2_variance == pytest.approx(21.0)
    assert math.log2(const_factor(ctx)) == pytest.approx(math.log2((T**2 - 1) * 2**13 / 12))
    assert v_const(a, ctx).log2_variance == pytest.approx(20 + math.log2(const_factor(ctx)))


def test_keyswitch_variance_with_square_extension():
    ctx = ctx_for(2**13)
    q = 2**100
    want = T**2 / 12 * (2**13 * VE + 1 + 2**13 * VS)
    assert v_keyswitch_ghs(ctx, q, q * q) == pytest.approx(want, rel=1e-12)
    assert v_keyswitch_ghs(ctx, log2_q=100.0, log2_Q=200.0) == pytest.approx(want, rel=1e-12)


def _mp_failure_log2(V, q, n):
    mpmath.mp.dps = 60
    z = mpmath.mpf(q) / (2 * mpmath.sqrt(2 * mpmath.mpf(V)))
    return float(mpmath.log(n * mpmath.erfc(z), 2))


@pytest.mark.parametrize("ratio", [3.0, 6.0, 12.0, 16.0, 40.0])
def test_failure_log2_matches_mpmath(ratio):
    n, V = 8192, 2.0**40
    q = ratio * math.sqrt(V)
    assert failure_log2(V, q, n) == pytest.approx(min(0.0, _mp_failure_log2(V, q, n)), abs=1e-9)


def test_failure_log2_reference_values():
    ctx = ctx_for(2**13)
    V = 1.01 * ctx.V_ms
    assert failure_log2(V, 2 * 6 * math.sqrt(2 * V), 2**13) == pytest.approx(-42.37, abs=0.01)
    assert failure_log2(V, 2 * 8 * math.sqrt(2 * V), 2**13) == pytest.approx(-83.17, abs=0.01)
    # tiny modulus saturates at probability one
    assert failure_log2(V, 1, 2**13) == 0.0
    assert failure_log2(None, None, 8, log2_variance=10.0, log2_modulus=2000.0) == -math.inf


def test_canonical_bounds():
    ctx = ctx_for(2**13)
    enc = canonical_track("enc", ctx=ctx)
    want = 8 * T * math.sqrt(2**13 * (1 / 12 + 2 * 2**13 * VE * VS + VE))
    assert enc.bound == pytest.approx(want)
    ms = canonical_track("ms", enc, ctx=ctx, p=2.0**30)
    assert ms.bound == pytest.approx(want / 2**30 + 8 * T * math.sqrt(2**13 * (1 / 12 + 2**13 * VS)))
    assert canonical_track("mult", ms, ms, ctx=ctx).bound == pytest.approx(ms.bound**2)
    assert canonical_track("add", ms, ms, ctx=ctx).bound == pytest.approx(2 * ms.bound)
    with pytest.raises(ValueError):
        canonical_track("ms", enc, ctx=ctx)
    with pytest.raises(ValueError):
        canonical_track("rotate", enc, ctx=ctx)
    with pytest.raises(ValueError):
        CanonicalEstimate(0.0)


terms = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3), st.floats(0, 100)), min_size=1, max_size=4)


def _est(ts):
    d = {}
    for m, i, v in ts:
        d[(m, i)] = v
    return noise._normalize(d, "x", 0, 0)


@settings(max_examples=80, deadline=None)
@given(terms, terms)
def test_mult_and_add_properties(a, b):
    ctx = ctx_for(4096)
    ea, eb = _est(a), _est(b)
    m = v_mult(ea, eb, ctx)
    assert m.log2_variance == pytest.approx(v_mult(eb, ea, ctx).log2_variance)
    # at least the independent product, at most the fully correlated bound
    lo = math.log2(4096) + ea.log2_variance + eb.log2_variance
    assert lo - 1e-9 <= m.log2_variance <= lo + math.log2(400) + 1e-9
    s = v_add(ea, eb)
    assert s.log2_variance >= max(ea.log2_variance, eb.log2_variance) - 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(-60, -1), st.floats(-60, -1))
def test_ms_monotone_in_ratio(r1, r2):
    ctx = ctx_for(4096)
    c = v_clean(ctx)
    a = v_ms(c, 0, ctx, log2_ratio=min(r1, r2)).log2_variance
    b = v_ms(c, 0, ctx, log2_ratio=max(r1, r2)).log2_variance
    assert a <= b + 1e-12
    assert a >= math.log2(ctx.ms_additive) - 1e-9
