"""Primality testing and congruence-constrained prime search."""

from __future__ import annotations

from math import lcm
from typing import Iterable

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


class PrimeSearchError(ValueError):
    """No qualifying prime exists below the search ceiling."""


def is_prime(n: int) -> bool:
    """Miller-Rabin with the first 13 prime bases.

    Deterministic for n < 3.3e24, which covers every prime this package
    generates (all are below 2**60).
    """
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def prime_search(
    min_value: int,
    congruences: Iterable[int] = (),
    excluded: Iterable[int] = (),
    ceiling: int | None = None,
) -> int:
    """Smallest prime p >= min_value with p = 1 mod m for every m in `congruences`.

    Primes in `excluded` are skipped. Raises PrimeSearchError when the
    candidate passes `ceiling`.
    """
    if min_value < 2:
        raise ValueError("min_value must be at least 2")
    step = 1
    for m in congruences:
        step = lcm(step, int(m))
    skip = set(excluded)
    if step == 1:
        p = max(int(min_value), 2)
        inc = 1
    else:
        p = int(min_value) + (1 - int(min_value)) % step
        inc = step
    while True:
        if ceiling is not None and p > ceiling:
            raise PrimeSearchError(
                f"no prime = 1 mod {step} in [{min_value}, {ceiling}]"
            )
        if p not in skip and is_prime(p):
            return p
        p += inc


def ntt_primes(n: int, count: int, bits: int = 48, excluded: Iterable[int] = ()) -> list[int]:
    """`count` distinct primes just below 2**bits with p = 1 mod 2n, descending."""
    step = 2 * n
    skip = set(excluded)
    p = ((1 << bits) - 1) // step * step + 1
    if p >= 1 << bits:
        p -= step
    out: list[int] = []
    while len(out) < count:
        if p < step:
            raise PrimeSearchError(f"ran out of {bits}-bit primes = 1 mod {step}")
        if p not in skip and is_prime(p):
            out.append(p)
        p -= step
    return out
