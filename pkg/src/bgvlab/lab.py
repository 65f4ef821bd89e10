"""Statistics on critical-quantity samples: variance, normality tests, moment oracles."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numba as nb
import numpy as np
from scipy import stats

from .ring import SamplerSpec, sample_array

AD_CRITICAL_15PCT = 0.576
KURTOSIS_RANGE = (2.8, 3.2)
KS_ALPHA = 0.05
MIN_SAMPLES = 30
UNDERESTIMATE_TOL = 0.1


@dataclass
class SampleSet:
    values: list
    probe: str = ""
    fingerprint: str = ""

    def __len__(self) -> int:
        return len(self.values)

    def scaled(self) -> tuple[np.ndarray, int]:
        """Values as float64 after dividing by 2**shift, exact enough for statistics.

        Integers above 2**52 lose low bits in a plain float conversion and
        beyond 2**1023 the conversion overflows, so large samples are scaled
        down by a power of two first; variances scale back by 4**shift.
        """
        big = max((abs(int(v)).bit_length() for v in self.values), default=0)
        shift = max(0, big - 52)
        if shift == 0:
            return np.array([int(v) for v in self.values], dtype=np.float64), 0
        d = 1 << shift
        return np.array([int(v) / d for v in self.values], dtype=np.float64), shift

    def log2_variance(self) -> float:
        x, shift = self.scaled()
        return math.log2(np.var(x, ddof=1)) + 2 * shift


@dataclass
class GaussianityReport:
    probe: str
    count: int
    sample_variance: float
    log2_variance: float
    kurtosis: float
    skewness: float
    ks_pvalue: float
    ad_statistic: float
    ad_critical_15pct: float = AD_CRITICAL_15PCT
    verdict: bool = False
    mean: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _ldexp(x: float, e: int) -> float:
    # beyond double range only log2_variance stays meaningful
    try:
        return math.ldexp(x, e)
    except OverflowError:
        return math.copysign(math.inf, x)


def summarize(s: SampleSet) -> GaussianityReport:
    """Normality battery on one probe.

    KS compares against a normal with the sample's own mean and standard
    deviation (so strictly a Lilliefors-type use of the KS statistic). AD
    uses the normal-family statistic with the 15% critical value 0.576.
    Kurtosis is the bias-corrected Pearson kurtosis (3 for a normal).
    """
    if len(s) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {len(s)}")
    x, shift = s.scaled()
    mean = float(np.mean(x))
    x = x - mean
    var = float(np.var(x, ddof=1))
    if var == 0:
        raise ValueError("sample has zero variance")
    sd = math.sqrt(var)
    ks = stats.kstest(x / sd, "norm").pvalue
    ad = stats.anderson(x / sd, "norm").statistic
    kurt = float(stats.kurtosis(x, fisher=False, bias=False))
    skew = float(stats.skew(x, bias=False))
    verdict = bool(ks > KS_ALPHA and ad < AD_CRITICAL_15PCT and KURTOSIS_RANGE[0] <= kurt <= KURTOSIS_RANGE[1])
    return GaussianityReport(
        probe=s.probe, count=len(s), sample_variance=_ldexp(var, 2 * shift),
        log2_variance=math.log2(var) + 2 * shift, kurtosis=kurt, skewness=skew,
        ks_pvalue=float(ks), ad_statistic=float(ad), verdict=verdict, mean=_ldexp(mean, shift),
    )


def calibrate(reps: int = 50, size: int = 50_000, seed: int = 0) -> dict:
    """Acceptance rates of the battery on synthetic normal, uniform and Student-t(3) data."""
    rng = np.random.default_rng(seed)
    gens = {
        "normal": lambda: rng.normal(0, 1000, size),
        "uniform": lambda: rng.uniform(-1000, 1000, size),
        "student_t3": lambda: rng.standard_t(3, size) * 1000,
    }
    out = {}
    for name, g in gens.items():
        verdicts = [summarize(SampleSet(list(np.rint(g()).astype(np.int64)), name)).verdict for _ in range(reps)]
        out[name] = sum(verdicts) / reps
    return out


# moment oracle ------------------------------------------------------------

@nb.njit(cache=True)
def _power_coeff0(a, k):
    # a: (trials, n) int64; returns coefficient 0 of a^k per row (exact int64)
    trials, n = a.shape
    out = np.empty(trials, np.int64)
    cur = np.empty(n, np.int64)
    nxt = np.empty(n, np.int64)
    for r in range(trials):
        for i in range(n):
            cur[i] = a[r, i]
        for _ in range(k - 2):
            for i in range(n):
                nxt[i] = 0
            for i in range(n):
                ci = cur[i]
                if ci == 0:
                    continue
                for j in range(n):
                    m = i + j
                    if m < n:
                        nxt[m] += ci * a[r, j]
                    else:
                        nxt[m - n] -= ci * a[r, j]
            for i in range(n):
                cur[i] = nxt[i]
        if k == 1:
            out[r] = cur[0]
        else:
            # constant term of cur * a: cur_0 a_0 - sum_{j>0} cur_j a_{n-j}
            acc = cur[0] * a[r, 0]
            for j in range(1, n):
                acc -= cur[j] * a[r, n - j]
            out[r] = acc
    return out


@dataclass
class MomentEstimate:
    k: int
    n: int
    trials: int
    mean_of_coeff: float
    mean_of_square: float
    se_square: float
    predicted_square: float

    @property
    def relative_error(self) -> float:
        return abs(self.mean_of_square - self.predicted_square) / self.predicted_square


def lemma4_prediction(variance: float, n: int, k: int) -> float:
    """k! n^(k-1) V^k."""
    return math.factorial(k) * n ** (k - 1) * variance**k


def moment_oracle(spec: SamplerSpec, n: int, k: int, trials: int, seed: int | None = None,
                  batch: int = 20_000) -> MomentEstimate:
    """Monte Carlo E[a^k|_0] and E[(a^k|_0)^2] with exact ring powering."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < 1 or n & (n - 1):
        raise ValueError("n must be a power of two")
    if spec.kind == "uniform":
        bound = spec.modulus // 2
    elif spec.kind == "discrete_gaussian":
        bound = int(12 * spec.sigma) + 1
    else:
        bound = 1
    if k * math.log2(max(bound, 2)) + (k - 1) * math.log2(n) > 62:
        raise ValueError("coefficients of a^k could overflow 64-bit accumulators")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    vals = []
    done = 0
    while done < trials:
        b = min(batch, trials - done)
        if spec.kind == "uniform":
            q = spec.modulus
            raw = rng.integers(0, q, size=(b, n), dtype=np.int64)
            a = np.where(2 * raw >= q, raw - q, raw)
        else:
            a = np.stack([sample_array(spec, n, rng) for _ in range(b)]) if spec.kind == "ternary_hw" else \
                _draw_block(spec, b, n, rng)
        vals.append(_power_coeff0(np.ascontiguousarray(a, dtype=np.int64), k))
        done += b
    x = np.concatenate(vals).astype(np.float64)
    sq = x * x
    return MomentEstimate(k, n, trials, float(x.mean()), float(sq.mean()),
                          float(sq.std(ddof=1) / math.sqrt(trials)), lemma4_prediction(spec.variance(n), n, k))


def _draw_block(spec: SamplerSpec, b: int, n: int, rng) -> np.ndarray:
    if spec.kind == "ternary":
        return rng.integers(-1, 2, size=(b, n), dtype=np.int64)
    return np.rint(rng.normal(0.0, spec.sigma, size=(b, n))).astype(np.int64)


# model vs experiment ------------------------------------------------------

@dataclass
class ComparisonRow:
    probe: str
    model_log2: float
    empirical_log2: float
    delta: float
    underestimate: bool
    overestimate: bool


def _model_value(v) -> float:
    if hasattr(v, "log2_variance"):
        return float(v.log2_variance)
    return float(v)


def compare_table(model: dict, empirical: dict, tol: float = UNDERESTIMATE_TOL, over_tol: float = 1.0) -> list[ComparisonRow]:
    """Join model and empirical log2-variances by probe id.

    A row is an underestimation alarm when model < empirical - tol.
    """
    if set(model) != set(empirical):
        missing = sorted(set(model) ^ set(empirical))
        raise KeyError(f"probe ids do not match: {missing}")
    rows = []
    for probe in empirical:
        m = _model_value(model[probe])
        e = _model_value(empirical[probe])
        rows.append(ComparisonRow(probe, m, e, m - e, m < e - tol, m > e + over_tol))
    return rows


def render_table(rows: list[ComparisonRow], fmt: str = "text") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["probe", "model_log2", "empirical_log2", "delta", "underestimate"])
        for r in rows:
            w.writerow([r.probe, f"{r.model_log2:.4f}", f"{r.empirical_log2:.4f}", f"{r.delta:.4f}", int(r.underestimate)])
        return buf.getvalue()
    lines = [f"{'probe':<14}{'model':>10}{'empirical':>12}{'delta':>9}  status"]
    for r in rows:
        status = "ALARM underestimate" if r.underestimate else ("over" if r.overestimate else "ok")
        lines.append(f"{r.probe:<14}{r.model_log2:>10.2f}{r.empirical_log2:>12.2f}{r.delta:>9.2f}  {status}")
    return "\n".join(lines)


# covariance of fresh-noise components --------------------------------------

@dataclass
class CovarianceEstimate:
    first: tuple
    second: tuple
    covariance: float
    std_error: float

    @property
    def z(self) -> float:
        return self.covariance / self.std_error if self.std_error > 0 else math.inf


def fresh_decompositions(key, trials: int, seed: int = 0) -> dict:
    """Encrypt random messages with randomness logging and split the noise.

    A fresh critical quantity is b_0(0) + b_1(0) e + b_0(1) s with
    b_0(0) = m + t e0, b_1(0) = t u and b_0(1) = t e1.
    Returns {(mu, iota): (trials, n) int64 array}.
    """
    from .scheme import encrypt

    params = key.params
    n, t = params.n, params.t
    out = {(0, 0): np.empty((trials, n), np.int64), (1, 0): np.empty((trials, n), np.int64),
           (0, 1): np.empty((trials, n), np.int64)}
    rng = np.random.default_rng(seed)
    for i in range(trials):
        m = rng.integers(-(t // 2), t // 2 + 1, n, dtype=np.int64)
        tr: dict = {}
        encrypt(m, key, rng, trace=tr, track_noise=False)
        out[(0, 0)][i] = tr["m"] + t * tr["e0"]
        out[(1, 0)][i] = t * tr["u"]
        out[(0, 1)][i] = t * tr["e1"]
    return out


def covariance_probe(decomp: dict, pairs) -> list[CovarianceEstimate]:
    """Sample covariances of b_mu(iota)|_j pairs, each given as ((mu, iota, j), (mu, iota, j))."""
    res = []
    for first, second in pairs:
        x = decomp[(first[0], first[1])][:, first[2]].astype(np.float64)
        y = decomp[(second[0], second[1])][:, second[2]].astype(np.float64)
        prod = (x - x.mean()) * (y - y.mean())
        N = len(prod)
        cov = float(prod.sum() / (N - 1))
        se = float(prod.std(ddof=1) / math.sqrt(N))
        res.append(CovarianceEstimate(tuple(first), tuple(second), cov, se))
    return res


# product correction factor --------------------------------------------------

@dataclass
class CorrectionMeasurement:
    trials: int
    log2_V1: float
    log2_V2: float
    product_variance: float
    ratio: float
    std_error: float


def measure_mult_correction(key, trials: int, seed: int = 0) -> CorrectionMeasurement:
    """Var((nu nu')|_0) / (n V V') for two independent freshly switched ciphertexts.

    Both critical quantities share the secret, so the product picks up the
    dependency factor F(1, 1) = 2 rather than the independent value 1.
    The product is formed over the integers from the extracted noises,
    so no modulus is involved. V and V' are pooled over all coefficients.
    """
    from .scheme import encrypt, extract_critical_quantity, mod_switch

    params = key.params
    n, t = params.n, params.t
    prods = np.empty(trials, dtype=np.float64)
    s1 = s2 = 0.0
    for i in range(trials):
        rng = np.random.default_rng([seed, 2, i])
        nus = []
        for _ in range(2):
            m = rng.integers(-(t // 2), t // 2 + 1, n, dtype=np.int64)
            c = mod_switch(encrypt(m, key, rng, track_noise=False))
            nus.append(np.array(extract_critical_quantity(c, key).coeffs, dtype=np.int64))
        a, b = nus
        # constant coefficient of a*b mod x^n + 1
        prods[i] = float(a[0] * b[0] - np.dot(a[1:], b[:0:-1]))
        s1 += float(np.dot(a.astype(np.float64), a))
        s2 += float(np.dot(b.astype(np.float64), b))
    V1, V2 = s1 / (n * trials), s2 / (n * trials)
    pv = float(np.var(prods, ddof=1))
    ratio = pv / (n * V1 * V2)
    kurt = float(stats.kurtosis(prods, fisher=False, bias=False))
    se = ratio * math.sqrt(max(kurt - 1, 0.0) / trials)
    return CorrectionMeasurement(trials, math.log2(V1), math.log2(V2), pv, ratio, se)
