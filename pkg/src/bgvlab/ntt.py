"""Residue-number-system backend: negacyclic NTT kernels and CRT helpers.

Every prime handled here must satisfy p = 1 mod 2n and p < 2**49. The
modular multiply uses a double-precision quotient estimate followed by an
exact wrapped 64-bit correction, which is exact below that bound.
"""

from __future__ import annotations

from functools import lru_cache
from math import prod

import numba as nb
import numpy as np

MAX_PRIME_BITS = 49


@nb.njit(cache=True)
def _mulmod(a, b, p, pinv):
    q = np.uint64(np.float64(a) * np.float64(b) * pinv)
    r = np.int64(a * b - q * p)
    ip = np.int64(p)
    if r < 0:
        r += ip
    elif r >= ip:
        r -= ip
    return np.uint64(r)


@nb.njit(cache=True)
def _ntt_rows(x, roots, ps, pinvs):
    k, n = x.shape
    for r in range(k):
        p = ps[r]
        pinv = pinvs[r]
        t = n
        m = 1
        while m < n:
            t >>= 1
            for i in range(m):
                j1 = 2 * i * t
                s = roots[r, m + i]
                for j in range(j1, j1 + t):
                    u = x[r, j]
                    v = _mulmod(x[r, j + t], s, p, pinv)
                    a = u + v
                    if a >= p:
                        a -= p
                    x[r, j] = a
                    if u >= v:
                        x[r, j + t] = u - v
                    else:
                        x[r, j + t] = u + p - v
            m <<= 1


@nb.njit(cache=True)
def _intt_rows(x, iroots, ps, pinvs, ninvs):
    k, n = x.shape
    for r in range(k):
        p = ps[r]
        pinv = pinvs[r]
        t = 1
        m = n
        while m > 1:
            h = m >> 1
            j1 = 0
            for i in range(h):
                s = iroots[r, h + i]
                for j in range(j1, j1 + t):
                    u = x[r, j]
                    v = x[r, j + t]
                    a = u + v
                    if a >= p:
                        a -= p
                    x[r, j] = a
                    if u >= v:
                        d = u - v
                    else:
                        d = u + p - v
                    x[r, j + t] = _mulmod(d, s, p, pinv)
                j1 += 2 * t
            t <<= 1
            m = h
        ninv = ninvs[r]
        for j in range(n):
            x[r, j] = _mulmod(x[r, j], ninv, p, pinv)


@nb.njit(cache=True)
def _mul_rows(a, b, ps, pinvs):
    k, n = a.shape
    out = np.empty_like(a)
    for r in range(k):
        p = ps[r]
        pinv = pinvs[r]
        for j in range(n):
            out[r, j] = _mulmod(a[r, j], b[r, j], p, pinv)
    return out


@nb.njit(cache=True)
def _scale_rows(a, s, ps, pinvs):
    k, n = a.shape
    out = np.empty_like(a)
    for r in range(k):
        p = ps[r]
        pinv = pinvs[r]
        sr = s[r]
        for j in range(n):
            out[r, j] = _mulmod(a[r, j], sr, p, pinv)
    return out


@nb.njit(cache=True)
def _add_rows(a, b, ps):
    k, n = a.shape
    out = np.empty_like(a)
    for r in range(k):
        p = ps[r]
        for j in range(n):
            s = a[r, j] + b[r, j]
            out[r, j] = s - p if s >= p else s
    return out


@nb.njit(cache=True)
def _sub_rows(a, b, ps):
    k, n = a.shape
    out = np.empty_like(a)
    for r in range(k):
        p = ps[r]
        for j in range(n):
            x = a[r, j]
            y = b[r, j]
            out[r, j] = x - y if x >= y else x + p - y
    return out


@nb.njit(cache=True)
def _from_small(v, ps):
    k = ps.shape[0]
    n = v.shape[0]
    out = np.empty((k, n), np.uint64)
    for r in range(k):
        p = np.int64(ps[r])
        for j in range(n):
            x = v[j] % p
            if x < 0:
                x += p
            out[r, j] = np.uint64(x)
    return out


@nb.njit(cache=True)
def _sum_rows(x, ps):
    k, n = x.shape
    out = np.zeros(k, np.uint64)
    for r in range(k):
        p = ps[r]
        acc = np.uint64(0)
        for j in range(n):
            acc += x[r, j]
            if acc >= p:
                acc -= p
        out[r] = acc
    return out


@nb.njit(cache=True)
def _extend_rows(x, src_p, src_pinv, hat_inv, dst_p, dst_pinv, hat_mod_dst, prod_mod_dst):
    # Centered lift of each column of x (residues mod src primes) to dst primes.
    ks, n = x.shape
    kd = dst_p.shape[0]
    out = np.empty((kd, n), np.uint64)
    y = np.empty(ks, np.uint64)
    for c in range(n):
        frac = 0.0
        for j in range(ks):
            yj = _mulmod(x[j, c], hat_inv[j], src_p[j], src_pinv[j])
            y[j] = yj
            frac += np.float64(yj) * src_pinv[j]
        v = np.uint64(np.floor(frac + 0.5))
        for d in range(kd):
            pd = dst_p[d]
            pdi = dst_pinv[d]
            acc = np.uint64(0)
            for j in range(ks):
                acc += _mulmod(y[j], hat_mod_dst[j, d], pd, pdi)
                if acc >= pd:
                    acc -= pd
            sub = _mulmod(v, prod_mod_dst[d], pd, pdi)
            if acc >= sub:
                out[d, c] = acc - sub
            else:
                out[d, c] = acc + pd - sub
    return out


def _bit_reverse(i: int, bits: int) -> int:
    return int(format(i, f"0{bits}b")[::-1], 2) if bits else 0


def _primitive_2n_root(p: int, n: int) -> int:
    exp = (p - 1) // (2 * n)
    for g in range(2, p):
        psi = pow(g, exp, p)
        if pow(psi, n, p) == p - 1:
            return psi
    raise ValueError(f"no primitive {2 * n}-th root of unity mod {p}")


@lru_cache(maxsize=None)
def _tables(p: int, n: int) -> tuple[np.ndarray, np.ndarray, int]:
    if (p - 1) % (2 * n):
        raise ValueError(f"prime {p} is not 1 mod {2 * n}")
    if p.bit_length() > MAX_PRIME_BITS:
        raise ValueError(f"prime {p} exceeds {MAX_PRIME_BITS} bits")
    bits = n.bit_length() - 1
    psi = _primitive_2n_root(p, n)
    psi_inv = pow(psi, -1, p)
    pw = [1] * n
    ipw = [1] * n
    for i in range(1, n):
        pw[i] = pw[i - 1] * psi % p
        ipw[i] = ipw[i - 1] * psi_inv % p
    rev = [_bit_reverse(i, bits) for i in range(n)]
    roots = np.array([pw[r] for r in rev], dtype=np.uint64)
    iroots = np.array([ipw[r] for r in rev], dtype=np.uint64)
    roots.setflags(write=False)
    iroots.setflags(write=False)
    return roots, iroots, pow(n, -1, p)


class RnsBasis:
    """A tuple of NTT-friendly primes for ring dimension n.

    Polynomials are (k, n) uint64 residue matrices, one row per prime.
    """

    def __init__(self, primes, n: int):
        self.primes = tuple(int(p) for p in primes)
        if len(set(self.primes)) != len(self.primes):
            raise ValueError("basis primes must be distinct")
        self.n = n
        self.k = len(self.primes)
        self.modulus = prod(self.primes)
        self.p = np.array(self.primes, dtype=np.uint64)
        self.pinv = 1.0 / np.array(self.primes, dtype=np.float64)
        tabs = [_tables(p, n) for p in self.primes]
        self.roots = np.stack([t[0] for t in tabs]) if tabs else np.zeros((0, n), np.uint64)
        self.iroots = np.stack([t[1] for t in tabs]) if tabs else np.zeros((0, n), np.uint64)
        self.ninv = np.array([t[2] for t in tabs], dtype=np.uint64)
        self._pcol = self.p[:, None]
        hats = [self.modulus // p for p in self.primes]
        self._hats = hats
        self.hat_inv = np.array([pow(h % p, -1, p) for h, p in zip(hats, self.primes)], dtype=np.uint64)

    def __repr__(self) -> str:
        return f"RnsBasis(k={self.k}, n={self.n}, bits={self.modulus.bit_length()})"

    # transforms -------------------------------------------------------
    def forward(self, x: np.ndarray) -> np.ndarray:
        y = np.array(x, dtype=np.uint64, copy=True)
        _ntt_rows(y, self.roots, self.p, self.pinv)
        return y

    def inverse(self, x: np.ndarray) -> np.ndarray:
        y = np.array(x, dtype=np.uint64, copy=True)
        _intt_rows(y, self.iroots, self.p, self.pinv, self.ninv)
        return y

    # pointwise arithmetic --------------------------------------------
    def add(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return _add_rows(a, b, self.p)

    def sub(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return _sub_rows(a, b, self.p)

    def neg(self, a: np.ndarray) -> np.ndarray:
        return _sub_rows(np.zeros_like(a), a, self.p)

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return _mul_rows(a, b, self.p, self.pinv)

    def mul_scalar(self, a: np.ndarray, c: int) -> np.ndarray:
        s = np.array([c % p for p in self.primes], dtype=np.uint64)
        return _scale_rows(a, s, self.p, self.pinv)

    def mul_scalars(self, a: np.ndarray, residues: np.ndarray) -> np.ndarray:
        return _scale_rows(a, residues, self.p, self.pinv)

    # conversions ------------------------------------------------------
    def from_small(self, arr: np.ndarray) -> np.ndarray:
        """Residues of an int64 vector (any sign)."""
        return _from_small(np.ascontiguousarray(arr, dtype=np.int64), self.p)

    def from_ints(self, values) -> np.ndarray:
        """Residues of arbitrary-precision integers."""
        obj = np.asarray(values, dtype=object)
        return np.stack([(obj % p).astype(np.uint64) for p in self.primes])

    def to_ints(self, res: np.ndarray) -> list[int]:
        """CRT-reconstruct coefficients, centered in [-Q/2, Q/2)."""
        y = _scale_rows(np.ascontiguousarray(res, dtype=np.uint64), self.hat_inv, self.p, self.pinv)
        acc = np.zeros(res.shape[1], dtype=object)
        for j in range(self.k):
            acc = acc + y[j].astype(object) * self._hats[j]
        q = self.modulus
        out = []
        for v in acc:
            r = int(v) % q
            out.append(r - q if 2 * r >= q else r)
        return out

    def crt_scalar(self, residues) -> int:
        q = self.modulus
        r = sum(int(x) * h * int(hi) for x, h, hi in zip(residues, self._hats, self.hat_inv)) % q
        return r - q if 2 * r >= q else r

    def coeff0(self, x_ntt: np.ndarray) -> int:
        """Coefficient 0 of a polynomial given in evaluation form.

        For x^n + 1 the constant term is n^-1 times the sum of all
        evaluations, so no inverse transform is needed.
        """
        s = _sum_rows(x_ntt, self.p)
        s = _scale_rows(s[:, None], self.ninv, self.p, self.pinv)[:, 0]
        return self.crt_scalar(s)

    def extend_to(self, res: np.ndarray, dst: "RnsBasis") -> np.ndarray:
        """Centered lift of coefficient-domain residues into another basis."""
        hat_mod_dst, prod_mod_dst = _extension_consts(self.primes, dst.primes)
        return _extend_rows(
            np.ascontiguousarray(res, dtype=np.uint64),
            self.p, self.pinv, self.hat_inv,
            dst.p, dst.pinv, hat_mod_dst, prod_mod_dst,
        )


@lru_cache(maxsize=None)
def _extension_consts(src: tuple, dst: tuple) -> tuple[np.ndarray, np.ndarray]:
    q = prod(src)
    hat = np.array([[(q // p) % d for d in dst] for p in src], dtype=np.uint64)
    qm = np.array([q % d for d in dst], dtype=np.uint64)
    return hat, qm


@lru_cache(maxsize=256)
def get_basis(primes: tuple, n: int) -> RnsBasis:
    return RnsBasis(primes, n)


@lru_cache(maxsize=None)
def _aux_primes(n: int, count: int) -> tuple:
    from .primes import ntt_primes

    return tuple(ntt_primes(n, count, bits=48))


def negacyclic_multiply(a, b, n: int, modulus: int) -> list[int]:
    """Product of two integer vectors in Z_modulus[x]/(x^n + 1), centered.

    The exact integer product is formed in an auxiliary basis large enough
    to hold every coefficient, then reduced.
    """
    bound_bits = 2 * (modulus.bit_length()) + n.bit_length() + 2
    k = -(-bound_bits // 47)
    basis = get_basis(_aux_primes(n, k), n)
    ra = basis.forward(basis.from_ints(a))
    rb = basis.forward(basis.from_ints(b))
    prod_ints = basis.to_ints(basis.inverse(basis.mul(ra, rb)))
    out = []
    for v in prod_ints:
        r = v % modulus
        out.append(r - modulus if 2 * r >= modulus else r)
    return out
