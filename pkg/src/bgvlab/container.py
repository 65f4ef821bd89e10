"""Versioned binary container for keys and ciphertexts.

Layout: magic b"BGVL", u8 version, u32 header length, UTF-8 JSON header,
then each array as u32 element count followed by little-endian 64-bit
words. Moduli live in the header as decimal strings. Residue matrices are
stored in evaluation form exactly as held in memory.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict

import numpy as np

from .ring import SamplerSpec
from .scheme import ExtendedCiphertext, KeyMaterial, ModulusChain, SchemeParams

MAGIC = b"BGVL"
VERSION = 1


class ContainerError(ValueError):
    pass


def _spec_header(spec: SamplerSpec) -> dict:
    d = asdict(spec)
    if d["modulus"] is not None:
        d["modulus"] = str(d["modulus"])
    return d


def _params_header(p: SchemeParams) -> dict:
    return {
        "n": p.n, "t": str(p.t), "chain": [str(q) for q in p.chain.primes],
        "secret_spec": _spec_header(p.secret_spec), "error_spec": _spec_header(p.error_spec),
        "D": p.D, "alpha": p.alpha, "fingerprint": p.fingerprint(),
    }


def _spec(d: dict) -> SamplerSpec:
    d = dict(d)
    if d.get("modulus") is not None:
        d["modulus"] = int(d["modulus"])
    return SamplerSpec(**d)


def _params_from(h: dict) -> SchemeParams:
    p = SchemeParams(int(h["n"]), int(h["t"]), ModulusChain(tuple(int(q) for q in h["chain"])),
                     _spec(h["secret_spec"]), _spec(h["error_spec"]), h["D"], h["alpha"])
    if p.fingerprint() != h["fingerprint"]:
        raise ContainerError("parameter fingerprint mismatch")
    return p


def _write(header: dict, arrays: list[np.ndarray]) -> bytes:
    header = dict(header, arrays=[{"dtype": a.dtype.str, "shape": list(a.shape)} for a in arrays])
    hb = json.dumps(header, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<BI", VERSION, len(hb)))
    out.write(hb)
    for a in arrays:
        flat = np.ascontiguousarray(a).reshape(-1)
        le = flat.astype(flat.dtype.newbyteorder("<"), copy=False)
        out.write(struct.pack("<I", flat.size))
        out.write(le.tobytes())
    return out.getvalue()


def _read(data: bytes) -> tuple[dict, list[np.ndarray]]:
    if data[:4] != MAGIC:
        raise ContainerError("not a bgvlab container")
    version, hlen = struct.unpack_from("<BI", data, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 9
    header = json.loads(data[pos: pos + hlen].decode())
    pos += hlen
    arrays = []
    for spec in header["arrays"]:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dt = np.dtype(spec["dtype"]).newbyteorder("<")
        if count != int(np.prod(spec["shape"])):
            raise ContainerError("array length does not match header shape")
        a = np.frombuffer(data, dtype=dt, count=count, offset=pos).reshape(spec["shape"])
        arrays.append(a.astype(dt.newbyteorder("="), copy=True))
        pos += count * dt.itemsize
    if pos != len(data):
        raise ContainerError("trailing bytes after last array")
    return header, arrays


def dump_ciphertext(c: ExtendedCiphertext) -> bytes:
    header = {"kind": "ciphertext", "params": _params_header(c.params), "level": c.level,
              "scale": str(c.scale), "lineage": c.lineage, "parts": len(c.parts)}
    return _write(header, [np.asarray(x, dtype=np.uint64) for x in c.parts])


def load_ciphertext(data: bytes) -> ExtendedCiphertext:
    h, arrays = _read(data)
    if h.get("kind") != "ciphertext":
        raise ContainerError("container does not hold a ciphertext")
    params = _params_from(h["params"])
    return ExtendedCiphertext(tuple(arrays), int(h["level"]), params, None, h["lineage"], int(h["scale"]))


def dump_key(key: KeyMaterial) -> bytes:
    header = {"kind": "key", "params": _params_header(key.params),
              "special_primes": [str(p) for p in key.special_primes], "lab_mode": key.lab_mode,
              "has_errors": key.pk_error is not None}
    arrays = [np.asarray(key.s, dtype=np.int64), *[np.asarray(x, dtype=np.uint64) for x in key.pk],
              *[np.asarray(x, dtype=np.uint64) for x in key.ks_key]]
    if key.pk_error is not None:
        arrays += [np.asarray(key.pk_error, dtype=np.int64), np.asarray(key.ks_error, dtype=np.int64)]
    return _write(header, arrays)


def load_key(data: bytes) -> KeyMaterial:
    h, arrays = _read(data)
    if h.get("kind") != "key":
        raise ContainerError("container does not hold a key")
    params = _params_from(h["params"])
    s, b, a, ek0, ek1 = arrays[:5]
    errs = arrays[5:7] if h["has_errors"] else [None, None]
    return KeyMaterial(params, s, (b, a), (ek0, ek1), tuple(int(p) for p in h["special_primes"]),
                       bool(h["lab_mode"]), errs[0], errs[1])
