"""Ciphertext-modulus chain selection for the reference product-tree circuit.

Average-case sizing per slot (bottom p_0, intermediates p_1..p_M, top p_{M+1}):

    p_0     >= 2 D sqrt(2 (1 + alpha) V_ms)        correctness after the final switch
    p_j     >= sqrt((2 + eps) n V_ms / alpha)      keeps V_mult / p_j^2 <= alpha V_ms
    p_{M+1} >= sqrt(V_clean / (alpha V_ms))        same condition for fresh noise

and every level product holding a multiplication output must exceed
2 D sqrt(2 V_mult). The worst-case mode propagates canonical-norm bounds
with the same chain shape.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from . import noise
from .circuit import CircuitSpec, execute, predict
from .primes import PrimeSearchError, is_prime, ntt_primes, prime_search
from .ring import SamplerSpec, gaussian, ternary
from .scheme import ModulusChain, SchemeParams

MODES = ("average_case", "worst_case_canonical")
CONGRUENCES = ("ntt_and_t", "ntt")

# Published reference totals (log2 q) for the reference circuit with D = 8.
OPENFHE_TOTALS = {
    3: {4096: 147.3, 8192: 151.8, 16384: 156.3, 32768: 161.6},
    6: {4096: 249.3, 8192: 256.8, 16384: 264.3, 32768: 272.6},
}
PUBLISHED_OURS = {
    3: {4096: 121.0, 8192: 124.5, 16384: 128.0, 32768: 131.5},
    6: {4096: 210.3, 8192: 216.8, 16384: 223.3, 32768: 229.8},
}
HELIB_PRIME_BITS = 54.0
PUBLISHED_RATIO_BITS = {4096: 29.55, 8192: 30.55, 16384: 31.55, 32768: 32.55}


@dataclass(frozen=True)
class ParamRequest:
    n: int
    t: int = 65537
    M: int = 3
    D: float = 8.0
    alpha: float = 0.01
    secret_spec: SamplerSpec = field(default_factory=ternary)
    error_spec: SamplerSpec = field(default_factory=gaussian)
    sizing_mode: str = "average_case"
    congruence: str = "ntt_and_t"

    def __post_init__(self):
        if self.M < 0:
            raise ValueError("M must be >= 0")
        if self.D < 4:
            raise ValueError("D must be >= 4")
        if not is_prime(self.t) or (self.t - 1) % (2 * self.n):
            raise ValueError(f"t={self.t} must be a prime congruent to 1 mod 2n={2 * self.n}")
        if self.sizing_mode not in MODES:
            raise ValueError(f"sizing_mode must be one of {MODES}")
        if self.congruence not in CONGRUENCES:
            raise ValueError(f"congruence must be one of {CONGRUENCES}")

    def context(self) -> noise.NoiseContext:
        vs = self.secret_spec.variance(self.n)
        return noise.NoiseContext(self.n, self.t, self.error_spec.variance(self.n), vs, vs, self.D, self.alpha)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["secret_spec"] = asdict(self.secret_spec)
        d["error_spec"] = asdict(self.error_spec)
        return d


@dataclass
class ParamPlan:
    request: ParamRequest
    theoretical_bits: list
    realized_primes: list
    per_level_predicted: dict
    predicted_failure_log2: float
    references: list = field(default_factory=list)
    alarms: list = field(default_factory=list)

    @property
    def theoretical_total(self) -> float:
        return sum(self.theoretical_bits)

    @property
    def total_log2_q(self) -> float:
        return sum(math.log2(p) for p in self.realized_primes)

    @property
    def realization_gap(self) -> float:
        return self.total_log2_q - self.theoretical_total

    @property
    def chain(self) -> ModulusChain:
        return ModulusChain(tuple(self.realized_primes))

    def scheme_params(self, seed: int = 0) -> SchemeParams:
        r = self.request
        return SchemeParams(r.n, r.t, self.chain, r.secret_spec.with_seed(seed), r.error_spec, r.D, r.alpha)

    def to_dict(self) -> dict:
        return {
            "request": self.request.to_dict(),
            "theoretical_bits": self.theoretical_bits,
            "theoretical_total": self.theoretical_total,
            "realized_primes": [str(p) for p in self.realized_primes],
            "realized_bits": [math.log2(p) for p in self.realized_primes],
            "total_log2_q": self.total_log2_q,
            "realization_gap": self.realization_gap,
            "predictions": self.per_level_predicted,
            "predicted_failure_log2": self.predicted_failure_log2,
            "references": self.references,
            "alarms": self.alarms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ParamPlan":
        d = json.loads(text)
        r = d["request"]
        req = ParamRequest(
            n=r["n"], t=r["t"], M=r["M"], D=r["D"], alpha=r["alpha"],
            secret_spec=SamplerSpec(**r["secret_spec"]), error_spec=SamplerSpec(**r["error_spec"]),
            sizing_mode=r["sizing_mode"], congruence=r.get("congruence", "ntt_and_t"),
        )
        return cls(req, d["theoretical_bits"], [int(p) for p in d["realized_primes"]], d["predictions"],
                   d["predicted_failure_log2"], d.get("references", []), d.get("alarms", []))


def intermediate_bound_bits(ctx: noise.NoiseContext) -> float:
    """log2 of sqrt((2 + eps) n V_ms / alpha)."""
    return 0.5 * math.log2(noise.collapsed_mult_variance(ctx) / (ctx.alpha * ctx.V_ms))


def average_case_bits(ctx: noise.NoiseContext, M: int) -> list[float]:
    v_ms = ctx.V_ms
    bottom = math.log2(2 * ctx.D * math.sqrt(2 * (1 + ctx.alpha) * v_ms))
    top = 0.5 * math.log2(noise.v_clean(ctx).variance / (ctx.alpha * v_ms))
    mid = intermediate_bound_bits(ctx)
    bits = [bottom] + [mid] * M + [top]
    # levels holding a multiplication output need q_l >= 2 D sqrt(2 V_mult)
    need = math.log2(2 * ctx.D) + 0.5 * math.log2(2 * noise.collapsed_mult_variance(ctx))
    if M >= 1 and bits[0] + bits[1] < need:
        bits[0] = need - bits[1]
    return bits


def worst_case_bits(ctx: noise.NoiseContext, M: int) -> list[float]:
    """Canonical-norm sizing with the same slot structure.

    The carried bound after a switch must stay below sqrt(alpha) times the
    switching bound (the norm-space analogue of the variance condition),
    the bottom modulus must exceed twice the post-switch bound, and every
    multiplication level must exceed twice the product bound.
    """
    enc = noise.canonical_track("enc", ctx=ctx).log2_bound
    b_add = math.log2(ctx.D * ctx.t * math.sqrt(ctx.n * (1 / 12 + ctx.n * ctx.V_s)))
    ra = 0.5 * math.log2(ctx.alpha)
    b_ms = b_add + math.log2(1 + math.sqrt(ctx.alpha))
    b_mult = 2 * b_ms
    top = enc - (b_add + ra)
    mid = b_mult - (b_add + ra)
    bottom = 1 + b_ms
    bits = [bottom] + [mid] * M + [top]
    if M >= 1 and bits[0] + bits[1] < 1 + b_mult:
        bits[0] = 1 + b_mult - bits[1]
    return bits


def _realize(bits: list[float], n: int, t: int, congruence: str) -> list[int]:
    out: list[int] = []
    for slot, b in enumerate(bits):
        # p_0 is never switched away, so its residue mod t does not matter
        cong = [2 * n, t] if congruence == "ntt_and_t" and slot > 0 else [2 * n]
        step = math.lcm(*cong)
        lo = math.ceil(2.0**b)
        ceiling = max(2 * lo, lo + 1024 * step)
        out.append(prime_search(max(lo, 3), cong, excluded=out, ceiling=ceiling))
    return out


def _references(req: ParamRequest, theoretical: float) -> list[dict]:
    refs = []
    if req.M in PUBLISHED_OURS and req.n in PUBLISHED_OURS[req.M]:
        refs.append({"name": "published average-case total", "log2_q": PUBLISHED_OURS[req.M][req.n],
                     "delta_bits": theoretical - PUBLISHED_OURS[req.M][req.n]})
    if req.M in OPENFHE_TOTALS and req.n in OPENFHE_TOTALS[req.M]:
        refs.append({"name": "OpenFHE", "log2_q": OPENFHE_TOTALS[req.M][req.n],
                     "delta_bits": theoretical - OPENFHE_TOTALS[req.M][req.n]})
    return refs


def plan(req: ParamRequest) -> ParamPlan:
    ctx = req.context()
    bits = average_case_bits(ctx, req.M) if req.sizing_mode == "average_case" else worst_case_bits(ctx, req.M)
    primes = _realize(bits, req.n, req.t, req.congruence)
    chain = ModulusChain(tuple(primes))
    spec = CircuitSpec("product_tree", req.M)
    pred = predict(spec, ctx, chain)
    per_level = {}
    fail_terms = []
    for node, p in pred.nodes.items():
        if node.endswith("[0]") or node == "final_ms":
            per_level[node] = {"level": p.level, "log2_variance": p.log2_variance, "failure_log2": p.failure_log2}
    for p in pred.nodes.values():
        if p.op in ("mult", "ms"):
            fail_terms.append(p.failure_log2)
    # union bound over every node a decryption could be attempted at
    failure = noise._log2sum(fail_terms) if fail_terms else -math.inf
    result = ParamPlan(req, bits, primes, per_level, min(failure, 0.0))
    result.references = _references(req, result.theoretical_total)
    if result.realization_gap > 2:
        result.alarms.append(
            f"realization gap {result.realization_gap:.2f} bits exceeds 2 bits "
            f"(prime congruence {req.congruence} forces primes above the theoretical bounds)"
        )
    if pred.violations:
        result.alarms.append(f"gaussian condition violated at {pred.violations}")
    return result


def compare_modes(req: ParamRequest) -> dict:
    avg = plan(ParamRequest(**{**_fields(req), "sizing_mode": "average_case"}))
    worst = plan(ParamRequest(**{**_fields(req), "sizing_mode": "worst_case_canonical"}))
    rows = [
        {"name": "average_case", "theoretical_log2_q": avg.theoretical_total, "realized_log2_q": avg.total_log2_q},
        {"name": "worst_case_canonical", "theoretical_log2_q": worst.theoretical_total,
         "realized_log2_q": worst.total_log2_q},
    ]
    for ref in _references(req, avg.theoretical_total):
        rows.append({"name": ref["name"], "theoretical_log2_q": ref["log2_q"], "realized_log2_q": None,
                     "delta_vs_average_case": avg.theoretical_total - ref["log2_q"]})
    mid = intermediate_bound_bits(req.context())
    rows.append({"name": "HElib typical prime", "prime_bits": HELIB_PRIME_BITS,
                 "average_case_prime_bits": mid, "delta_bits": mid - HELIB_PRIME_BITS})
    return {"n": req.n, "M": req.M, "rows": rows,
            "average_case_strictly_smaller": avg.theoretical_total < worst.theoretical_total}


def ratio_table(ns=(4096, 8192, 16384, 32768), t: int = 65537, alpha: float = 0.01, sigma: float = 3.19) -> list[dict]:
    """Intermediate-prime bound for Hamming-weight n/2 secrets across ring sizes."""
    rows = []
    for n in ns:
        ctx = noise.NoiseContext(n, t, sigma**2, 0.5, 0.5, 8.0, alpha)
        bits = intermediate_bound_bits(ctx)
        ref = PUBLISHED_RATIO_BITS.get(n)
        rows.append({"n": n, "log2_p": bits, "published": ref,
                     "delta": None if ref is None else bits - ref, "helib_bits": HELIB_PRIME_BITS})
    return rows


def no_ms_chain(req: ParamRequest) -> tuple[list[float], list[int]]:
    """Two-level chain for the circuit without intermediate switching.

    All multiplications happen at the top level, which is sized so the
    last product still satisfies q >= 2 D sqrt(2 V); a final switch lands
    on the usual bottom modulus. The top level is realized as a run of
    48-bit NTT primes. Returns (theoretical log2 sizes, primes).
    """
    ctx = req.context()
    spec = CircuitSpec("product_tree", req.M, "none")
    out = spec.output() if req.M == 0 else f"mult{req.M}[0]"
    bottom = average_case_bits(ctx, 0)[0]
    top = 64.0
    for _ in range(8):
        # key switching noise grows with the top modulus, so iterate to a fixed point
        pred = predict(spec, ctx, [bottom, top])
        src = "enc[0]" if req.M == 0 else out
        need = math.log2(2 * ctx.D) + 0.5 * (1 + pred.log2(src))
        if abs(need - top) < 1e-3:
            break
        top = need
    p0 = prime_search(max(3, math.ceil(2.0**bottom)), [2 * req.n])
    count = 1
    while True:
        tops = ntt_primes(req.n, count, bits=48, excluded=[p0])
        if sum(math.log2(p) for p in tops) >= top:
            break
        count += 1
    return [bottom, top], [p0] + tops[::-1]


def _fields(req: ParamRequest) -> dict:
    return {f: getattr(req, f) for f in req.__dataclass_fields__}


def shrink_bottom(p: ParamPlan, bits: float = 10.0) -> ParamPlan:
    """Copy of the plan with the bottom prime made `bits` smaller (negative control).

    When no NTT-friendly prime exists that far down, the smallest one is used.
    """
    req = p.request
    # largest NTT-friendly prime at least `bits` below the original; the bottom
    # prime is never switched away, so its residue mod t does not matter
    step = 2 * req.n
    q0 = (p.realized_primes[0] >> math.ceil(bits)) // step * step + 1
    while q0 > step and (not is_prime(q0) or q0 in p.realized_primes):
        q0 -= step
    if q0 <= step:
        q0 = prime_search(step + 1, [step], excluded=p.realized_primes[1:])
    primes = [q0] + list(p.realized_primes[1:])
    out = ParamPlan(req, list(p.theoretical_bits), primes, dict(p.per_level_predicted), p.predicted_failure_log2)
    spec = CircuitSpec("product_tree", req.M)
    pred = predict(spec, req.context(), ModulusChain(tuple(primes)))
    out.predicted_failure_log2 = min(0.0, noise._log2sum(
        [x.failure_log2 for x in pred.nodes.values() if x.op in ("mult", "ms")]))
    return out


def validate_plan(p: ParamPlan, trials: int, seed: int = 0, workers: int = 1, progress=None) -> dict:
    """Run the reference circuit under the plan and compare with its predictions."""
    from .lab import SampleSet, summarize

    req = p.request
    params = p.scheme_params(seed)
    spec = CircuitSpec("product_tree", req.M)
    pred = predict(spec, req.context(), p.chain)
    samples = execute(spec, params, trials, seed=seed, verify=True, workers=workers, progress=progress)
    levels = {}
    for col in samples.columns:
        vals = samples.column(col)
        emp = SampleSet(vals, col).log2_variance()
        levels[col] = {"model_log2": pred.log2(col), "empirical_log2": emp, "delta": pred.log2(col) - emp}
    margins = {k: v.gaussian_margin for k, v in pred.nodes.items() if v.gaussian_margin is not None}
    expected = trials * 2.0 ** p.predicted_failure_log2
    return {
        "trials": trials,
        "seed": seed,
        "failures": samples.failures,
        "expected_failures": expected,
        "per_level": levels,
        "gaussian_margin_log2": margins,
        "min_gaussian_margin_log2": min(margins.values()) if margins else None,
        "fingerprint": params.fingerprint(),
    }
