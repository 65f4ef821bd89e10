import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bgvlab.ntt import RnsBasis, get_basis, negacyclic_multiply
from bgvlab.primes import PrimeSearchError, is_prime, ntt_primes, prime_search
from bgvlab.ring import (
    RingElement, RingParams, SamplerSpec, center, centered_reduce, gaussian, negacyclic_schoolbook,
    ring_add, ring_mul, ring_sub, sample, sample_array, ternary, uniform_ints,
)


def test_center_half_open_interval():
    assert center(8, 17) == 8
    assert center(9, 17) == -8
    assert center(8, 16) == -8
    assert center(-1, 16) == -1
    assert center(16, 16) == 0


def test_ring_params_validation():
    with pytest.raises(ValueError):
        RingParams(12, 17)
    with pytest.raises(ValueError):
        RingParams(16, 1)


def test_x_to_the_n_is_minus_one():
    rp = RingParams(8, 97)
    x = RingElement.monomial(rp, 1)
    acc = RingElement.monomial(rp, 0)
    for _ in range(8):
        acc = acc * x
    assert acc.coeffs == (-1,) + (0,) * 7


def test_schoolbook_small_example():
    # (1 + x)(1 + x) = 1 + 2x + x^2 in degree 4
    assert negacyclic_schoolbook([1, 1, 0, 0], [1, 1, 0, 0], 101) == [1, 2, 1, 0]
    # x^3 * x = x^4 = -1
    assert negacyclic_schoolbook([0, 0, 0, 1], [0, 1, 0, 0], 101) == [-1, 0, 0, 0]


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([8, 16, 32]), st.integers(2, 2**130), st.data())
def test_ring_mul_matches_schoolbook(n, q, data):
    a = data.draw(st.lists(st.integers(-q, q), min_size=n, max_size=n))
    b = data.draw(st.lists(st.integers(-q, q), min_size=n, max_size=n))
    rp = RingParams(n, q)
    got = ring_mul(RingElement(rp, tuple(a)), RingElement(rp, tuple(b)))
    assert list(got.coeffs) == negacyclic_schoolbook(a, b, q)


def test_ring_ops_and_json_roundtrip():
    rng = np.random.default_rng(0)
    rp = RingParams(16, 2**61 + 5)
    a = RingElement(rp, tuple(int(v) for v in rng.integers(-2**40, 2**40, 16)))
    b = RingElement(rp, tuple(int(v) for v in rng.integers(-2**40, 2**40, 16)))
    assert ring_sub(ring_add(a, b), b) == a
    assert (a + b) - b == a
    assert -(-a) == a
    assert RingElement.from_json(a.to_json()) == a
    assert a * 3 == a + a + a


def test_ring_mismatch_rejected():
    with pytest.raises(ValueError):
        ring_add(RingElement.zero(RingParams(8, 17)), RingElement.zero(RingParams(8, 19)))


def test_centered_reduce():
    rp = RingParams(8, 1000)
    a = RingElement(rp, (499, -499, 7, 0, 0, 0, 0, 0))
    r = centered_reduce(a, 10)
    assert r.coeffs[:3] == (-1, 1, -3)


def test_rns_roundtrip_and_products():
    n = 64
    primes = tuple(ntt_primes(n, 3, bits=40))
    B = get_basis(primes, n)
    rng = np.random.default_rng(1)
    q = B.modulus
    a = [int(v) for v in uniform_ints(q, n, rng)]
    b = [int(v) for v in uniform_ints(q, n, rng)]
    ah, bh = B.forward(B.from_ints(a)), B.forward(B.from_ints(b))
    assert B.to_ints(B.inverse(ah)) == [center(v, q) for v in a]
    prod_ = B.to_ints(B.inverse(B.mul(ah, bh)))
    assert prod_ == negacyclic_schoolbook(a, b, q)
    # constant coefficient straight from evaluations
    assert B.coeff0(B.mul(ah, bh)) == prod_[0]


def test_base_extension_is_exact_for_centered_values():
    n = 32
    src = get_basis(tuple(ntt_primes(n, 2, bits=45)), n)
    dst = get_basis(tuple(ntt_primes(n, 3, bits=40)), n)
    rng = np.random.default_rng(2)
    vals = [int(v) - src.modulus // 2 for v in uniform_ints(src.modulus, n, rng)]
    ext = src.extend_to(src.from_ints(vals), dst)
    assert dst.to_ints(ext) == [center(v, dst.modulus) for v in vals]


def test_negacyclic_multiply_helper():
    rng = np.random.default_rng(3)
    q = 2**100 + 277
    a = [int(v) for v in uniform_ints(q, 16, rng)]
    b = [int(v) for v in uniform_ints(q, 16, rng)]
    assert negacyclic_multiply(a, b, 16, q) == negacyclic_schoolbook(a, b, q)


def test_prime_helpers():
    assert [p for p in range(40) if is_prime(p)] == [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37]
    assert is_prime(2**61 - 1) and not is_prime(2**61 + 1)
    assert prime_search(3) == 3
    p = prime_search(2**30, [2**14, 65537])
    assert is_prime(p) and p >= 2**30 and (p - 1) % (2**14 * 65537) == 0
    nxt = prime_search(2**30, [2**14, 65537], excluded=[p])
    assert nxt > p and is_prime(nxt)
    with pytest.raises(PrimeSearchError):
        prime_search(2**40, [2**20], ceiling=2**40 + 2**20)
    ps = ntt_primes(1024, 4, bits=48)
    assert len(set(ps)) == 4 and all(is_prime(q) and q % 2048 == 1 and q < 2**48 for q in ps)


@pytest.mark.parametrize("spec,var", [(ternary(), 2 / 3), (gaussian(3.19), 3.19**2),
                                      (SamplerSpec("ternary_hw", h=128), 0.5)])
def test_sampler_variances(spec, var):
    rng = np.random.default_rng(4)
    x = np.concatenate([sample_array(spec, 256, rng) for _ in range(400)]).astype(float)
    assert abs(x.mean()) < 0.05 * max(1, var**0.5)
    # rounding a continuous Gaussian adds 1/12 to its variance
    extra = 1 / 12 if spec.kind == "discrete_gaussian" else 0
    assert x.var() == pytest.approx(var + extra, rel=0.03)
    assert spec.variance(256) == pytest.approx(var)


def test_hamming_weight_is_exact():
    rng = np.random.default_rng(5)
    s = sample_array(SamplerSpec("ternary_hw", h=37), 128, rng)
    assert np.count_nonzero(s) == 37


def test_uniform_sample_range_and_determinism():
    q = 2**130 + 51
    a = sample(SamplerSpec("uniform", modulus=q, seed=9), RingParams(16, q))
    b = sample(SamplerSpec("uniform", modulus=q, seed=9), RingParams(16, q))
    assert a == b
    assert all(-q // 2 <= v <= q // 2 for v in a.coeffs)


def test_sampler_spec_validation():
    with pytest.raises(ValueError):
        SamplerSpec("laplace")
    with pytest.raises(ValueError):
        SamplerSpec("discrete_gaussian")
    with pytest.raises(ValueError):
        SamplerSpec("uniform", modulus=1)
