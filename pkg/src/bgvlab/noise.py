"""Average-case noise variance model and worst-case canonical-norm bounds.

A critical quantity is tracked as a sum of terms b_mu(iota) e^mu s^iota,
where e is the public-key error and s the secret. Each term keeps its
coefficient variance together with its (mu, iota) degrees, which is what
the dependency correction for products needs. All variances are stored
as log2 values so nothing overflows at large depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

from scipy.special import erfcx

EPSILON = 6 / 100**2 + 6 / 100
_PRUNE_LOG2 = -80.0
# chains sized exactly at a bound sit on the boundary; ignore float rounding there
MARGIN_TOL = 1e-9


@dataclass(frozen=True)
class NoiseContext:
    n: int
    t: int
    V_e: float
    V_s: float
    V_u: float | None = None
    D: float = 8.0
    alpha: float = 0.01

    def __post_init__(self):
        if self.V_u is None:
            object.__setattr__(self, "V_u", self.V_s)
        for name in ("n", "t", "V_e", "V_s", "V_u", "D", "alpha"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.alpha > 1:
            raise ValueError("alpha must be <= 1")

    @property
    def V_ms(self) -> float:
        """Variance of the dominant modulus-switching term delta_1 s / p."""
        return self.t**2 * self.n * self.V_s / 12

    @property
    def ms_additive(self) -> float:
        """Full additive variance of a modulus switch: (t^2/12)(1 + n V_s)."""
        return self.t**2 / 12 * (1 + self.n * self.V_s)


def _log2sum(values) -> float:
    values = list(values)
    if not values:
        return -math.inf
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log2(sum(2.0 ** (v - m) for v in values))


@dataclass(frozen=True)
class NoiseEstimate:
    """Predicted coefficient variance of a critical quantity.

    terms maps (mu, iota) degrees to the log2 variance of that component.
    K and s_degree are the bookkeeping degrees reported alongside.
    """

    terms: tuple
    rule: str
    K: int
    s_degree: int
    flags: tuple = field(default=())

    @property
    def log2_variance(self) -> float:
        return _log2sum(v for _, _, v in self.terms)

    @property
    def variance(self) -> float:
        return 2.0 ** self.log2_variance

    def scaled(self, log2_factor: float, rule: str) -> "NoiseEstimate":
        return replace(self, terms=tuple((m, i, v + log2_factor) for m, i, v in self.terms), rule=rule)

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "log2_variance": self.log2_variance,
            "K": self.K,
            "s_degree": self.s_degree,
            "flags": list(self.flags),
        }


def _normalize(terms: dict, rule: str, K: int, iota: int, flags=()) -> NoiseEstimate:
    """Drop vanishing terms and sort the rest by degree.

    Terms below 2^-80 of the total are discarded. Folding them into a
    conservative bucket at maximal degrees looks safer but compounds
    through the correction factors level after level and ends up
    dominating the estimate.
    """
    total = _log2sum(terms.values())
    cut = total + _PRUNE_LOG2
    kept = [(m, i, v) for (m, i), v in terms.items() if v > -math.inf and v >= cut]
    return NoiseEstimate(tuple(sorted(kept)), rule, K, iota, tuple(flags))


def from_variance(variance: float, rule: str = "given", K: int = 0, s_degree: int = 0) -> NoiseEstimate:
    return NoiseEstimate(((K, s_degree, math.log2(variance)),), rule, K, s_degree)


def v_clean(ctx: NoiseContext) -> NoiseEstimate:
    t2 = ctx.t**2
    terms = {
        (0, 0): math.log2(t2 * (1 / 12 + ctx.V_e)),  # m + t e_0
        (1, 0): math.log2(t2 * ctx.n * ctx.V_e * ctx.V_u),  # t e u
        (0, 1): math.log2(t2 * ctx.n * ctx.V_e * ctx.V_s),  # t e_1 s
    }
    return _normalize(terms, "clean", 1, 1)


def v_add(v1: NoiseEstimate, v2: NoiseEstimate) -> NoiseEstimate:
    terms: dict = {}
    for m, i, v in v1.terms + v2.terms:
        terms[(m, i)] = _log2sum([terms.get((m, i), -math.inf), v])
    return _normalize(terms, "add", max(v1.K, v2.K), max(v1.s_degree, v2.s_degree))


def const_factor(ctx: NoiseContext) -> float:
    """Variance growth from multiplying by a constant uniform over Z_t."""
    return (ctx.t**2 - 1) * ctx.n / 12


def v_const(v: NoiseEstimate, ctx: NoiseContext) -> NoiseEstimate:
    return v.scaled(math.log2(const_factor(ctx)), "const")


def v_ms(v: NoiseEstimate, ratio: float, ctx: NoiseContext, log2_ratio: float | None = None) -> NoiseEstimate:
    """Modulus switch by q'/q = ratio (pass log2_ratio for huge moduli)."""
    lr = math.log2(ratio) if log2_ratio is None else log2_ratio
    if not lr < 0:
        raise ValueError("modulus switching needs 0 < ratio < 1")
    terms: dict = {(m, i): val + 2 * lr for m, i, val in v.terms}
    add0 = math.log2(ctx.t**2 / 12)
    add1 = math.log2(ctx.V_ms)
    terms[(0, 0)] = _log2sum([terms.get((0, 0), -math.inf), add0])
    terms[(0, 1)] = _log2sum([terms.get((0, 1), -math.inf), add1])
    carried = v.log2_variance + 2 * lr
    dominant = math.log2(ctx.ms_additive) - carried >= math.log2(1 / ctx.alpha) - MARGIN_TOL
    if dominant:
        K, iota = 0, 1
    else:
        K, iota = v.K, max(v.s_degree, 1)
    flags = () if dominant else ("gaussian_condition_violated",)
    return _normalize(terms, "ms", K, iota, flags)


def gaussian_condition(v_prev: NoiseEstimate, log2_ratio: float, ctx: NoiseContext) -> float:
    """Margin log2(alpha V_ms) - log2(V_prev ratio^2); nonnegative when the condition holds."""
    return math.log2(ctx.alpha * ctx.V_ms) - (v_prev.log2_variance + 2 * log2_ratio)


@lru_cache(maxsize=None)
def correction_F(i1: int, i2: int) -> int:
    if i1 < 0 or i2 < 0:
        raise ValueError("degrees must be nonnegative")
    return math.comb(i1 + i2, i1)


def v_mult(v1: NoiseEstimate, v2: NoiseEstimate, ctx: NoiseContext) -> NoiseEstimate:
    """Term-wise product bound: n V V' F(iota, iota') F(mu, mu') per pair."""
    ln = math.log2(ctx.n)
    terms: dict = {}
    for m1, i1, a in v1.terms:
        for m2, i2, b in v2.terms:
            val = ln + a + b + math.log2(correction_F(i1, i2) * correction_F(m1, m2))
            key = (m1 + m2, i1 + i2)
            terms[key] = _log2sum([terms.get(key, -math.inf), val])
    flags = tuple(sorted(set(v1.flags) | set(v2.flags)))
    return _normalize(terms, "mult", v1.K + v2.K, v1.s_degree + v2.s_degree, flags)


def collapsed_mult_variance(ctx: NoiseContext) -> float:
    """(2 + eps) n V_ms^2, the per-level fixed point of the reference circuit."""
    return (2 + EPSILON) * ctx.n * ctx.V_ms**2


def v_keyswitch_ghs(ctx: NoiseContext, q=None, Q=None, log2_q: float | None = None, log2_Q: float | None = None) -> float:
    """Additive variance of GHS relinearization with extension modulus Q.

    (t^2/12)(n V_e q^4/Q^2 + 1 + n V_s); for Q = q^2 this is
    (t^2/12)(n V_e + 1 + n V_s).
    """
    lq = _log2(q) if log2_q is None else log2_q
    lQ = _log2(Q) if log2_Q is None else log2_Q
    lr = 4 * lq - 2 * lQ
    return ctx.t**2 / 12 * (ctx.n * ctx.V_e * 2.0**lr + 1 + ctx.n * ctx.V_s)


def with_additive(v: NoiseEstimate, variance: float, rule: str) -> NoiseEstimate:
    """Add an independent term at degrees (1, 1), an over-approximation for key switching noise."""
    terms = {(m, i): val for m, i, val in v.terms}
    terms[(1, 1)] = _log2sum([terms.get((1, 1), -math.inf), math.log2(variance)])
    return _normalize(terms, rule, v.K, v.s_degree, v.flags)


def _log2(x) -> float:
    # math.log2 accepts arbitrarily large ints without converting to float
    return math.log2(x)


# failure probability -----------------------------------------------------

def failure_log2(variance, modulus, n: int, log2_variance: float | None = None,
                 log2_modulus: float | None = None) -> float:
    """log2 of n * erfc(q / (2 sqrt(2 V))), capped at 0."""
    lv = math.log2(variance) if log2_variance is None else log2_variance
    lm = _log2(modulus) if log2_modulus is None else log2_modulus
    lz = lm - 1 - 0.5 * (1 + lv)
    if lz > 511:
        return -math.inf
    z = 2.0**lz
    # erfc(z) = erfcx(z) exp(-z^2)
    val = math.log2(n) + math.log2(erfcx(z)) - z * z * math.log2(math.e)
    return min(val, 0.0)


def failure_probability(variance: float, modulus, n: int) -> float:
    return 2.0 ** failure_log2(variance, modulus, n)


# worst-case canonical norm ------------------------------------------------

@dataclass(frozen=True)
class CanonicalEstimate:
    bound: float

    def __post_init__(self):
        if not self.bound > 0:
            raise ValueError("canonical bound must be positive")

    @property
    def log2_bound(self) -> float:
        return math.log2(self.bound)


def canonical_track(op: str, *inputs: CanonicalEstimate, ctx: NoiseContext, p: float | None = None) -> CanonicalEstimate:
    t, n, D = ctx.t, ctx.n, ctx.D
    if op == "enc":
        return CanonicalEstimate(D * t * math.sqrt(n * (1 / 12 + 2 * n * ctx.V_e * ctx.V_s + ctx.V_e)))
    if op == "ms":
        if p is None:
            raise ValueError("ms needs the dropped modulus p")
        (b,) = inputs
        return CanonicalEstimate(b.bound / p + D * t * math.sqrt(n * (1 / 12 + n * ctx.V_s)))
    if op == "mult":
        b1, b2 = inputs
        return CanonicalEstimate(b1.bound * b2.bound)
    if op == "add":
        b1, b2 = inputs
        return CanonicalEstimate(b1.bound + b2.bound)
    raise ValueError(f"unknown canonical op {op!r}; expected enc, ms, mult or add")
