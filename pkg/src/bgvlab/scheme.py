"""BGV over R_q = Z_q[x]/(x^n + 1) with RNS arithmetic and noise instrumentation.

Ciphertext components are kept as (k, n) residue matrices in evaluation
(NTT) form over the primes of their level. Relinearization uses the GHS
method: the 3-component product is lifted to Q = q_l * P, where P is a
product of special primes with P >= q_{L-1}, and switched back down.

Plaintext scale: modulus switching by a factor D multiplies the plaintext
hidden in the critical quantity by D^-1 mod t. Chains built from primes
congruent to 1 mod t keep the scale at 1. Other primes are still handled:
each ciphertext carries its scale and decryption divides it out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from math import gcd, prod

import numpy as np

from . import noise
from .ntt import RnsBasis, get_basis
from .primes import is_prime, ntt_primes
from .ring import RingElement, RingParams, SamplerSpec, center, gaussian, sample_array, ternary


class LabModeError(RuntimeError):
    """Raised when secret-dependent instrumentation is used without lab mode."""


@dataclass(frozen=True)
class ModulusChain:
    primes: tuple

    def __post_init__(self):
        ps = tuple(int(p) for p in self.primes)
        object.__setattr__(self, "primes", ps)
        if not ps:
            raise ValueError("modulus chain needs at least one prime")
        for i, a in enumerate(ps):
            if a < 2:
                raise ValueError(f"invalid modulus {a}")
            for b in ps[i + 1:]:
                if gcd(a, b) != 1:
                    raise ValueError(f"chain moduli {a} and {b} are not coprime")

    @property
    def L(self) -> int:
        return len(self.primes)

    @cached_property
    def level_products(self) -> tuple:
        out, acc = [], 1
        for p in self.primes:
            acc *= p
            out.append(acc)
        return tuple(out)

    def q(self, level: int) -> int:
        return self.level_products[level]

    @property
    def top(self) -> int:
        return self.L - 1

    def log2_sizes(self) -> list[float]:
        return [math.log2(p) for p in self.primes]


@dataclass(frozen=True)
class SchemeParams:
    n: int
    t: int
    chain: ModulusChain
    secret_spec: SamplerSpec = field(default_factory=ternary)
    error_spec: SamplerSpec = field(default_factory=gaussian)
    D: float = 8.0
    alpha: float = 0.01

    def __post_init__(self):
        RingParams(self.n, 2)  # validates n
        if not is_prime(self.t):
            raise ValueError(f"plaintext modulus t={self.t} must be prime")
        if (self.t - 1) % (2 * self.n):
            raise ValueError(f"t={self.t} must be 1 mod 2n={2 * self.n}")
        for p in self.chain.primes:
            if p % self.t == 0:
                raise ValueError(f"chain prime {p} shares a factor with t")
        if self.secret_spec.kind not in ("ternary", "ternary_hw"):
            raise ValueError("secret distribution must be ternary or ternary_hw")
        if self.error_spec.kind != "discrete_gaussian":
            raise ValueError("error distribution must be discrete_gaussian")

    def noise_context(self) -> noise.NoiseContext:
        vs = self.secret_spec.variance(self.n)
        return noise.NoiseContext(self.n, self.t, self.error_spec.variance(self.n), vs, vs, self.D, self.alpha)

    def fingerprint(self) -> str:
        import hashlib

        text = "|".join([
            str(self.n), str(self.t), ",".join(map(str, self.chain.primes)),
            repr(self.secret_spec), repr(self.error_spec), str(self.D), str(self.alpha),
        ])
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def special_primes_for(chain: ModulusChain, n: int) -> tuple:
    """48-bit NTT primes, disjoint from the chain, whose product is >= q_{L-1}."""
    q = chain.q(chain.top)
    count = -(-q.bit_length() // 47)
    while True:
        sp = ntt_primes(n, count, bits=48, excluded=chain.primes)
        if prod(sp) >= q:
            return tuple(sp)
        count += 1


@dataclass
class KeyMaterial:
    params: SchemeParams
    s: np.ndarray  # int64 coefficients
    pk: tuple  # (b, a) evaluation form over the top basis
    ks_key: tuple  # (ek0, ek1) evaluation form over top basis + special primes
    special_primes: tuple
    lab_mode: bool = False
    pk_error: np.ndarray | None = None
    ks_error: np.ndarray | None = None
    _s_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def P(self) -> int:
        return prod(self.special_primes)

    @property
    def Q(self) -> int:
        """Extension modulus for the top level, q_{L-1} * P."""
        return self.params.chain.q(self.params.chain.top) * self.P

    def basis(self, level: int) -> RnsBasis:
        return get_basis(self.params.chain.primes[: level + 1], self.n)

    def ext_basis(self, level: int) -> RnsBasis:
        return get_basis(self.params.chain.primes[: level + 1] + self.special_primes, self.n)

    def sp_basis(self) -> RnsBasis:
        return get_basis(self.special_primes, self.n)

    def s_ntt(self, level: int, power: int = 1) -> np.ndarray:
        """Secret (or its square) in evaluation form over the level basis."""
        key = (level, power)
        if key not in self._s_cache:
            top = self.params.chain.top
            if (top, 1) not in self._s_cache:
                B = self.basis(top)
                self._s_cache[(top, 1)] = B.forward(B.from_small(self.s))
            s1 = self._s_cache[(top, 1)][: level + 1]
            self._s_cache[(level, 1)] = s1
            if power == 2:
                self._s_cache[key] = self.basis(level).mul(s1, s1)
        return self._s_cache[key]

    @property
    def sk(self) -> RingElement:
        q = self.params.chain.q(self.params.chain.top)
        return RingElement(RingParams(self.n, q), tuple(int(v) for v in self.s))

    def pk_elements(self) -> tuple:
        B = self.basis(self.params.chain.top)
        rp = RingParams(self.n, B.modulus)
        return tuple(RingElement(rp, tuple(B.to_ints(B.inverse(x)))) for x in self.pk)

    def ks_elements(self) -> tuple:
        B = self.ext_basis(self.params.chain.top)
        rp = RingParams(self.n, B.modulus)
        return tuple(RingElement(rp, tuple(B.to_ints(B.inverse(x)))) for x in self.ks_key)


@dataclass
class ExtendedCiphertext:
    parts: tuple  # evaluation-form residue matrices, 2 or 3 of them
    level: int
    params: SchemeParams
    estimate: noise.NoiseEstimate | None = None
    lineage: str = "fresh"
    scale: int = 1

    @property
    def modulus(self) -> int:
        return self.params.chain.q(self.level)

    @property
    def basis(self) -> RnsBasis:
        return get_basis(self.params.chain.primes[: self.level + 1], self.params.n)

    @property
    def predicted_variance(self) -> float:
        return self.estimate.variance if self.estimate is not None else float("nan")

    @property
    def c(self) -> tuple:
        """Components as centered RingElements mod q_l."""
        B = self.basis
        rp = RingParams(self.params.n, B.modulus)
        return tuple(RingElement(rp, tuple(B.to_ints(B.inverse(x)))) for x in self.parts)

    @classmethod
    def from_ring_elements(cls, comps, level: int, params: SchemeParams, **kw) -> "ExtendedCiphertext":
        B = get_basis(params.chain.primes[: level + 1], params.n)
        parts = tuple(B.forward(B.from_ints(list(c.coeffs))) for c in comps)
        return cls(parts, level, params, **kw)


# key generation ---------------------------------------------------------

def _uniform_eval(B: RnsBasis, rng: np.random.Generator) -> np.ndarray:
    # Uniform residues per prime are a uniform element mod the basis
    # modulus, and the transform is a bijection, so sample evaluations directly.
    return np.stack([rng.integers(0, p, B.n, dtype=np.uint64) for p in B.primes])


def keygen(params: SchemeParams, seed: int | None = None, lab_mode: bool = False) -> KeyMaterial:
    rng = np.random.default_rng(params.secret_spec.seed if seed is None else seed)
    n, t = params.n, params.t
    chain = params.chain
    s = sample_array(params.secret_spec, n, rng)
    e = sample_array(params.error_spec, n, rng)
    B = get_basis(chain.primes, n)
    s_hat = B.forward(B.from_small(s))
    a = _uniform_eval(B, rng)
    b = B.add(B.neg(B.mul(a, s_hat)), B.forward(B.from_small(t * e)))

    sp = special_primes_for(chain, n)
    E = get_basis(chain.primes + sp, n)
    P = prod(sp)
    s_e = E.forward(E.from_small(s))
    e2 = sample_array(params.error_spec, n, rng)
    a2 = _uniform_eval(E, rng)
    ek0 = E.add(E.neg(E.mul(a2, s_e)), E.forward(E.from_small(t * e2)))
    ek0 = E.add(ek0, E.mul_scalar(E.mul(s_e, s_e), P))
    key = KeyMaterial(params, s, (b, a), (ek0, a2), sp, lab_mode,
                      e if lab_mode else None, e2 if lab_mode else None)
    key._s_cache[(chain.top, 1)] = s_hat
    return key


# encryption / decryption -------------------------------------------------

def _check_plaintext(m, params: SchemeParams) -> np.ndarray:
    if isinstance(m, RingElement):
        vals = np.array(m.coeffs, dtype=np.int64)
    else:
        vals = np.asarray(m, dtype=np.int64)
    if vals.shape != (params.n,):
        raise ValueError(f"plaintext must have {params.n} coefficients")
    half = params.t // 2
    if np.any(vals < -half) or np.any(vals > half):
        raise ValueError("plaintext coefficients must be centered mod t")
    return vals


def encrypt(m, key: KeyMaterial, rng: np.random.Generator | None = None, trace: dict | None = None,
            track_noise: bool = True) -> ExtendedCiphertext:
    """Public-key encryption at the top level.

    If trace is a dict, the sampled u, e0, e1 and m are stored in it.
    With track_noise=False no variance estimate is attached, and the
    operations downstream skip their bookkeeping too.
    """
    params = key.params
    mv = _check_plaintext(m, params)
    if rng is None:
        rng = np.random.default_rng()
    n, t = params.n, params.t
    u = sample_array(params.secret_spec, n, rng)
    e0 = sample_array(params.error_spec, n, rng)
    e1 = sample_array(params.error_spec, n, rng)
    top = params.chain.top
    B = key.basis(top)
    u_hat = B.forward(B.from_small(u))
    b, a = key.pk
    c0 = B.add(B.mul(b, u_hat), B.forward(B.from_small(t * e0 + mv)))
    c1 = B.add(B.mul(a, u_hat), B.forward(B.from_small(t * e1)))
    if trace is not None:
        trace.update(u=u, e0=e0, e1=e1, m=mv)
    est = noise.v_clean(params.noise_context()) if track_noise else None
    return ExtendedCiphertext((c0, c1), top, params, est, "fresh", 1)


def _nu_eval(c: ExtendedCiphertext, key: KeyMaterial) -> np.ndarray:
    B = c.basis
    acc = c.parts[0]
    if len(c.parts) >= 2:
        acc = B.add(acc, B.mul(c.parts[1], key.s_ntt(c.level, 1)))
    if len(c.parts) == 3:
        acc = B.add(acc, B.mul(c.parts[2], key.s_ntt(c.level, 2)))
    return acc


def _critical_ints(c: ExtendedCiphertext, key: KeyMaterial) -> list[int]:
    B = c.basis
    return B.to_ints(B.inverse(_nu_eval(c, key)))


def _unscale(values, c: ExtendedCiphertext) -> tuple:
    t = c.params.t
    inv = pow(c.scale, -1, t)
    return tuple(center(v * inv, t) for v in values)


def decrypt(c: ExtendedCiphertext, key: KeyMaterial) -> RingElement:
    """[[c0 + c1 s]_q]_t, with the ciphertext's plaintext scale removed."""
    if len(c.parts) != 2:
        raise ValueError("decrypt expects a 2-component ciphertext; use decrypt3")
    return RingElement(RingParams(c.params.n, c.params.t), _unscale(_critical_ints(c, key), c))


def decrypt3(d: ExtendedCiphertext, key: KeyMaterial) -> RingElement:
    """[[d0 + d1 s + d2 s^2]_q]_t."""
    if len(d.parts) != 3:
        raise ValueError("decrypt3 expects a 3-component ciphertext")
    return RingElement(RingParams(d.params.n, d.params.t), _unscale(_critical_ints(d, key), d))


def extract_critical_quantity(c: ExtendedCiphertext, key: KeyMaterial) -> RingElement:
    if not key.lab_mode:
        raise LabModeError("critical-quantity extraction requires a lab-mode key")
    return RingElement(RingParams(c.params.n, c.modulus), tuple(_critical_ints(c, key)))


def critical_coeff0(c: ExtendedCiphertext, key: KeyMaterial) -> int:
    """Coefficient 0 of the critical quantity, without a full inverse transform."""
    if not key.lab_mode:
        raise LabModeError("critical-quantity extraction requires a lab-mode key")
    return c.basis.coeff0(_nu_eval(c, key))


def noise_budget(c: ExtendedCiphertext, key: KeyMaterial) -> float:
    """log2(q_l) - log2(||nu||_inf) - 1."""
    nu = extract_critical_quantity(c, key)
    norm = nu.norm_inf()
    return math.log2(c.modulus) - (math.log2(norm) if norm else 0.0) - 1


# homomorphic operations -------------------------------------------------

def _same_level(c1: ExtendedCiphertext, c2: ExtendedCiphertext) -> None:
    if c1.level != c2.level:
        raise ValueError(f"level mismatch: {c1.level} vs {c2.level}")
    if c1.params is not c2.params and c1.params != c2.params:
        raise ValueError("ciphertexts use different parameters")


def add(c1: ExtendedCiphertext, c2: ExtendedCiphertext) -> ExtendedCiphertext:
    _same_level(c1, c2)
    if c1.scale != c2.scale:
        raise ValueError("plaintext scales differ; switch both operands along the same path")
    B = c1.basis
    k = max(len(c1.parts), len(c2.parts))
    zero = np.zeros_like(c1.parts[0])
    p1 = c1.parts + (zero,) * (k - len(c1.parts))
    p2 = c2.parts + (zero,) * (k - len(c2.parts))
    parts = tuple(B.add(a, b) for a, b in zip(p1, p2))
    est = noise.v_add(c1.estimate, c2.estimate) if c1.estimate and c2.estimate else None
    return ExtendedCiphertext(parts, c1.level, c1.params, est, "post_add", c1.scale)


def const_mul(k, c: ExtendedCiphertext) -> ExtendedCiphertext:
    kv = _check_plaintext(k, c.params)
    B = c.basis
    k_hat = B.forward(B.from_small(kv))
    parts = tuple(B.mul(x, k_hat) for x in c.parts)
    est = noise.v_const(c.estimate, c.params.noise_context()) if c.estimate else None
    return ExtendedCiphertext(parts, c.level, c.params, est, "post_const", c.scale)


def tensor(c1: ExtendedCiphertext, c2: ExtendedCiphertext) -> ExtendedCiphertext:
    """Raw product (d0, d1, d2) before relinearization."""
    _same_level(c1, c2)
    if len(c1.parts) != 2 or len(c2.parts) != 2:
        raise ValueError("tensor expects 2-component ciphertexts")
    B = c1.basis
    a0, a1 = c1.parts
    b0, b1 = c2.parts
    d0 = B.mul(a0, b0)
    d1 = B.add(B.mul(a0, b1), B.mul(a1, b0))
    d2 = B.mul(a1, b1)
    est = None
    if c1.estimate and c2.estimate:
        est = noise.v_mult(c1.estimate, c2.estimate, c1.params.noise_context())
    t = c1.params.t
    return ExtendedCiphertext((d0, d1, d2), c1.level, c1.params, est, "post_tensor", c1.scale * c2.scale % t)


def _divide_out(x_ext: np.ndarray, keep: RnsBasis, drop: RnsBasis, t: int, drop_coeff: np.ndarray | None = None) -> np.ndarray:
    """(x + t[-x t^-1]_D) / D over the kept primes, where D is the dropped product.

    x_ext holds evaluations over keep + drop rows. The correction is exactly
    divisible by construction; this is asserted rather than rounded.
    """
    kk = keep.k
    xk = x_ext[:kk]
    xd = drop.inverse(x_ext[kk:]) if drop_coeff is None else drop_coeff
    neg_tinv = np.array([(-pow(t, -1, p)) % p for p in drop.primes], dtype=np.uint64)
    w_d = drop.mul_scalars(xd, neg_tinv)
    check = drop.add(xd, drop.mul_scalar(w_d, t))
    if check.any():
        raise AssertionError("modulus switch correction is not exactly divisible")
    w_k = keep.forward(drop.extend_to(w_d, keep))
    y = keep.add(xk, keep.mul_scalar(w_k, t))
    dinv = np.array([pow(drop.modulus % p, -1, p) for p in keep.primes], dtype=np.uint64)
    return keep.mul_scalars(y, dinv)


def mod_switch(c: ExtendedCiphertext, target_level: int | None = None) -> ExtendedCiphertext:
    """Switch to a lower level: c' = (q'/q)(c + delta), delta = t[-c t^-1]_{q/q'}."""
    if target_level is None:
        target_level = c.level - 1
    if not 0 <= target_level < c.level:
        raise ValueError(f"target level {target_level} must be below current level {c.level}")
    params = c.params
    primes = params.chain.primes
    keep = get_basis(primes[: target_level + 1], params.n)
    drop = get_basis(primes[target_level + 1: c.level + 1], params.n)
    if drop.modulus % params.t == 0:
        raise ValueError("t is not invertible modulo the dropped factor")
    parts = tuple(_divide_out(x, keep, drop, params.t) for x in c.parts)
    t = params.t
    scale = c.scale * pow(drop.modulus % t, -1, t) % t
    est = None
    if c.estimate:
        lr = math.log2(keep.modulus) - math.log2(c.modulus)
        est = noise.v_ms(c.estimate, 0.0, params.noise_context(), log2_ratio=lr)
    return ExtendedCiphertext(parts, target_level, params, est, "post_ms", scale)


def key_switch_ghs(d: ExtendedCiphertext, key: KeyMaterial) -> ExtendedCiphertext:
    """Relinearize (d0, d1, d2) to two components through Q = q_l * P."""
    if len(d.parts) != 3:
        raise ValueError("key switching expects a 3-component ciphertext")
    params = d.params
    lvl = d.level
    B = d.basis
    S = key.sp_basis()
    E = key.ext_basis(lvl)
    Q = E.modulus
    if Q % B.modulus:
        raise ValueError("extension modulus is not a multiple of q_l")
    P = S.modulus
    d0, d1, d2 = d.parts
    # lift d2 (centered) to the special primes
    d2_coeff = B.inverse(d2)
    d2_sp = S.forward(B.extend_to(d2_coeff, S))
    d2_ext = np.vstack([d2, d2_sp])
    top = params.chain.top
    rows = list(range(lvl + 1)) + list(range(top + 1, top + 1 + S.k))
    out = []
    for di, ek in zip((d0, d1), key.ks_key):
        ek_l = ek[rows]
        prod_ = E.mul(d2_ext, ek_l)
        pd = np.vstack([B.mul_scalar(di, P), np.zeros((S.k, params.n), np.uint64)])
        out.append(_divide_out(E.add(prod_, pd), B, S, params.t))
    est = d.estimate
    if est is not None:
        ctx = params.noise_context()
        est = noise.with_additive(est, noise.v_keyswitch_ghs(ctx, B.modulus, Q), "mult")
    return ExtendedCiphertext(tuple(out), lvl, params, est, "post_mult", d.scale)


def multiply(c1: ExtendedCiphertext, c2: ExtendedCiphertext, key: KeyMaterial) -> ExtendedCiphertext:
    return key_switch_ghs(tensor(c1, c2), key)
