"""Exact arithmetic in Z_q[x]/(x^n + 1) and the samplers the scheme needs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ntt import negacyclic_multiply


def center(value: int, modulus: int) -> int:
    """Representative of value mod modulus in [-modulus/2, modulus/2)."""
    r = value % modulus
    return r - modulus if 2 * r >= modulus else r


@dataclass(frozen=True)
class RingParams:
    n: int
    modulus: int

    def __post_init__(self):
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if self.modulus < 2:
            raise ValueError(f"modulus must be >= 2, got {self.modulus}")


@dataclass(frozen=True)
class RingElement:
    params: RingParams
    coeffs: tuple

    def __post_init__(self):
        if len(self.coeffs) != self.params.n:
            raise ValueError(f"expected {self.params.n} coefficients, got {len(self.coeffs)}")
        q = self.params.modulus
        object.__setattr__(self, "coeffs", tuple(center(int(c), q) for c in self.coeffs))

    @classmethod
    def zero(cls, params: RingParams) -> "RingElement":
        return cls(params, (0,) * params.n)

    @classmethod
    def monomial(cls, params: RingParams, degree: int, coeff: int = 1) -> "RingElement":
        c = [0] * params.n
        sign = -1 if (degree // params.n) % 2 else 1
        c[degree % params.n] = sign * coeff
        return cls(params, tuple(c))

    def __add__(self, other):
        return ring_add(self, other)

    def __sub__(self, other):
        return ring_sub(self, other)

    def __mul__(self, other):
        if isinstance(other, int):
            return RingElement(self.params, tuple(c * other for c in self.coeffs))
        return ring_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return RingElement(self.params, tuple(-c for c in self.coeffs))

    def norm_inf(self) -> int:
        return max(abs(c) for c in self.coeffs)

    def to_json(self) -> str:
        return json.dumps({
            "n": self.params.n,
            "modulus": str(self.params.modulus),
            "coeffs": [str(c) for c in self.coeffs],
        })

    @classmethod
    def from_json(cls, text: str) -> "RingElement":
        d = json.loads(text)
        params = RingParams(int(d["n"]), int(d["modulus"]))
        return cls(params, tuple(int(c) for c in d["coeffs"]))


def _check(a: RingElement, b: RingElement) -> None:
    if a.params != b.params:
        raise ValueError(f"parameter mismatch: {a.params} vs {b.params}")


def ring_add(a: RingElement, b: RingElement) -> RingElement:
    _check(a, b)
    return RingElement(a.params, tuple(x + y for x, y in zip(a.coeffs, b.coeffs)))


def ring_sub(a: RingElement, b: RingElement) -> RingElement:
    _check(a, b)
    return RingElement(a.params, tuple(x - y for x, y in zip(a.coeffs, b.coeffs)))


def negacyclic_schoolbook(a: Sequence[int], b: Sequence[int], modulus: int) -> list[int]:
    """O(n^2) reference product in Z_modulus[x]/(x^n + 1)."""
    a = [int(x) for x in a]
    b = [int(x) for x in b]
    n = len(a)
    acc = [0] * n
    for i, ai in enumerate(a):
        if not ai:
            continue
        for j, bj in enumerate(b):
            k = i + j
            if k < n:
                acc[k] += ai * bj
            else:
                acc[k - n] -= ai * bj
    return [center(v, modulus) for v in acc]


def ring_mul(a: RingElement, b: RingElement) -> RingElement:
    _check(a, b)
    p = a.params
    return RingElement(p, tuple(negacyclic_multiply(a.coeffs, b.coeffs, p.n, p.modulus)))


def centered_reduce(a: RingElement, new_modulus: int) -> RingElement:
    params = RingParams(a.params.n, new_modulus)
    return RingElement(params, a.coeffs)


# samplers ---------------------------------------------------------------

_KINDS = ("uniform", "ternary", "ternary_hw", "discrete_gaussian")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str
    modulus: int | None = None
    h: int | None = None
    sigma: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "discrete_gaussian" and not (self.sigma and self.sigma > 0):
            raise ValueError("discrete_gaussian needs sigma > 0")
        if self.kind == "ternary_hw" and not (self.h and self.h > 0):
            raise ValueError("ternary_hw needs h > 0")
        if self.kind == "uniform" and (self.modulus is None or self.modulus < 2):
            raise ValueError("uniform needs modulus >= 2")

    def variance(self, n: int) -> float:
        if self.kind == "ternary":
            return 2.0 / 3.0
        if self.kind == "ternary_hw":
            return self.h / n
        if self.kind == "discrete_gaussian":
            return float(self.sigma) ** 2
        return self.modulus ** 2 / 12.0

    def with_seed(self, seed: int) -> "SamplerSpec":
        return SamplerSpec(self.kind, self.modulus, self.h, self.sigma, seed)


def ternary(seed: int = 0) -> SamplerSpec:
    return SamplerSpec("ternary", seed=seed)


def gaussian(sigma: float = 3.19, seed: int = 0) -> SamplerSpec:
    return SamplerSpec("discrete_gaussian", sigma=sigma, seed=seed)


def sample_array(spec: SamplerSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Small-coefficient draws as int64 (uniform draws are returned as objects)."""
    if spec.kind == "ternary":
        return rng.integers(-1, 2, n, dtype=np.int64)
    if spec.kind == "ternary_hw":
        if spec.h > n:
            raise ValueError(f"h={spec.h} exceeds n={n}")
        out = np.zeros(n, dtype=np.int64)
        pos = rng.choice(n, size=spec.h, replace=False)
        out[pos] = rng.integers(0, 2, spec.h, dtype=np.int64) * 2 - 1
        return out
    if spec.kind == "discrete_gaussian":
        return np.rint(rng.normal(0.0, spec.sigma, n)).astype(np.int64)
    return np.array(uniform_ints(spec.modulus, n, rng), dtype=object)


def uniform_ints(q: int, n: int, rng: np.random.Generator) -> list[int]:
    """n integers uniform on [0, q), by rejection on random words."""
    bits = q.bit_length()
    words = -(-bits // 63)
    out: list[int] = []
    while len(out) < n:
        raw = rng.integers(0, 2**63, size=(n - len(out), words), dtype=np.int64)
        for row in raw.tolist():
            v = 0
            for w in row:
                v = (v << 63) | w
            v >>= 63 * words - bits
            if v < q:
                out.append(v)
    return out


def sample(spec: SamplerSpec, params: RingParams, rng: np.random.Generator | None = None) -> RingElement:
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.kind == "uniform" and spec.modulus != params.modulus:
        raise ValueError("uniform sampler modulus must match the ring modulus")
    vals = sample_array(spec, params.n, rng)
    return RingElement(params, tuple(int(v) for v in vals))
