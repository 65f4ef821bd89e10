import numpy as np
import pytest

from bgvlab.container import ContainerError, dump_ciphertext, dump_key, load_ciphertext, load_key
from bgvlab.scheme import decrypt, encrypt, mod_switch


def _ct(key, seed):
    t = key.params.t
    m = np.random.default_rng(seed).integers(-(t // 2), t // 2 + 1, key.n)
    return m, mod_switch(encrypt(m, key, np.random.default_rng(seed + 1)))


def test_ciphertext_roundtrip(small_key):
    m, c = _ct(small_key, 0)
    back = load_ciphertext(dump_ciphertext(c))
    assert back.level == c.level and back.scale == c.scale and back.params == c.params
    assert all(np.array_equal(a, b) for a, b in zip(back.parts, c.parts))
    assert list(decrypt(back, small_key).coeffs) == list(m)


def test_key_roundtrip(small_key):
    key = load_key(dump_key(small_key))
    m, c = _ct(small_key, 2)
    assert list(decrypt(c, key).coeffs) == list(m)
    assert np.array_equal(key.pk_error, small_key.pk_error)
    assert key.special_primes == small_key.special_primes and key.lab_mode


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + bytes([9]) + b[5:],
    lambda b: b + b"\x00",
])
def test_corrupt_containers_rejected(small_key, mutate):
    _, c = _ct(small_key, 4)
    with pytest.raises(ContainerError):
        load_ciphertext(mutate(dump_ciphertext(c)))


def test_kind_and_fingerprint_checked(small_key):
    _, c = _ct(small_key, 5)
    blob = dump_ciphertext(c)
    with pytest.raises(ContainerError):
        load_key(blob)
    tampered = blob.replace(b'"D": 8.0', b'"D": 9.0')
    assert tampered != blob
    with pytest.raises(ContainerError):
        load_ciphertext(tampered)
