"""Evaluation circuits: symbolic noise prediction and Monte Carlo execution.

The reference circuit is a binary product tree of depth M. Every level
switches its inputs down one prime and then multiplies pairs; a final
switch to the bottom modulus follows the last multiplication. Custom
DAGs built from enc/ms/mult/add/const nodes are also supported.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import noise
from .scheme import (
    ExtendedCiphertext, KeyMaterial, ModulusChain, SchemeParams, add, const_mul, critical_coeff0,
    decrypt, encrypt, extract_critical_quantity, keygen, mod_switch, multiply,
)

STAGES = {"enc": "post_enc", "ms": "post_ms", "mult": "post_mult", "add": "post_add", "const": "post_const"}
POLICIES = ("before_each_mult", "none")


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    inputs: tuple = ()
    target: int | None = None  # ms target level; None means one level down


@dataclass(frozen=True)
class ProbePoint:
    node: str
    coeff: int = 0
    pooled: bool = False

    @property
    def column(self) -> str:
        return self.node if self.coeff == 0 else f"{self.node}@{self.coeff}"


@dataclass(frozen=True)
class CircuitSpec:
    kind: str = "product_tree"
    M: int = 3
    ms_policy: str = "before_each_mult"
    final_ms: bool = True
    nodes: tuple = ()
    probes: tuple = ()

    def __post_init__(self):
        if self.kind not in ("product_tree", "custom"):
            raise ValueError(f"unknown circuit kind {self.kind!r}")
        if self.ms_policy not in POLICIES:
            raise ValueError(f"ms_policy must be one of {POLICIES}")
        if self.M < 0:
            raise ValueError("depth M must be nonnegative")
        if self.kind == "custom" and not self.nodes:
            raise ValueError("custom circuits need a node list")

    def dag(self) -> list[Node]:
        if self.kind == "custom":
            out = []
            for d in self.nodes:
                if isinstance(d, Node):
                    out.append(d)
                else:
                    out.append(Node(d["id"], d["op"], tuple(d.get("inputs", ())), d.get("target")))
            _validate_dag(out)
            return out
        return _product_tree(self.M, self.ms_policy, self.final_ms)

    def output(self) -> str:
        return self.dag()[-1].id

    def probe_points(self) -> list[ProbePoint]:
        if self.probes:
            return [p if isinstance(p, ProbePoint) else ProbePoint(**p) if isinstance(p, dict) else ProbePoint(p)
                    for p in self.probes]
        return default_probes(self)

    def required_levels(self) -> int:
        """Minimum chain length for this circuit."""
        if self.kind == "custom":
            return 1 + sum(1 for n in self.dag() if n.op == "ms")  # loose upper bound
        per_level = 1 if self.ms_policy == "before_each_mult" else 0
        return 1 + per_level * self.M + (1 if self.final_ms else 0)


def _validate_dag(nodes: list[Node]) -> None:
    seen = set()
    for n in nodes:
        if n.op not in STAGES:
            raise ValueError(f"node {n.id}: unknown op {n.op!r}")
        arity = {"enc": 0, "ms": 1, "const": 1, "mult": 2, "add": 2}[n.op]
        if len(n.inputs) != arity:
            raise ValueError(f"node {n.id}: {n.op} takes {arity} inputs")
        for i in n.inputs:
            if i not in seen:
                raise ValueError(f"node {n.id}: input {i} is not defined earlier")
        if n.id in seen:
            raise ValueError(f"duplicate node id {n.id}")
        seen.add(n.id)


def _product_tree(M: int, policy: str, final_ms: bool) -> list[Node]:
    nodes = [Node(f"enc[{i}]", "enc") for i in range(2**M)]
    prev = [n.id for n in nodes]
    for d in range(1, M + 1):
        if policy == "before_each_mult":
            ms = [Node(f"ms{d}[{i}]", "ms", (p,)) for i, p in enumerate(prev)]
            nodes += ms
            prev = [n.id for n in ms]
        mult = [Node(f"mult{d}[{i}]", "mult", (prev[2 * i], prev[2 * i + 1])) for i in range(len(prev) // 2)]
        nodes += mult
        prev = [n.id for n in mult]
    if final_ms:
        nodes.append(Node("final_ms", "ms", (prev[0],), 0))
    return nodes


def default_probes(spec: CircuitSpec) -> list[ProbePoint]:
    """First coefficient of the first node of every stage along the tree's left spine."""
    if spec.kind == "custom":
        return [ProbePoint(n.id) for n in spec.dag()]
    out = [ProbePoint("enc[0]")]
    for d in range(1, spec.M + 1):
        if spec.ms_policy == "before_each_mult":
            out.append(ProbePoint(f"ms{d}[0]"))
        out.append(ProbePoint(f"mult{d}[0]"))
    if spec.final_ms:
        out.append(ProbePoint("final_ms"))
    return out


def load_circuit_spec(path: str | os.PathLike) -> CircuitSpec:
    """Read {kind, M, ms_policy, final_ms, probes[], nodes[]} from JSON or TOML."""
    p = Path(path)
    text = p.read_text()
    if p.suffix.lower() == ".toml":
        import tomli

        data = tomli.loads(text)
    else:
        data = json.loads(text)
    probes = tuple(ProbePoint(**q) if isinstance(q, dict) else ProbePoint(q) for q in data.get("probes", ()))
    return CircuitSpec(
        kind=data.get("kind", "product_tree"),
        M=int(data.get("M", 3)),
        ms_policy=data.get("ms_policy", "before_each_mult"),
        final_ms=bool(data.get("final_ms", True)),
        nodes=tuple(data.get("nodes", ())),
        probes=probes,
    )


# prediction ------------------------------------------------------------

@dataclass
class NodePrediction:
    node: str
    op: str
    stage: str
    level: int
    estimate: noise.NoiseEstimate
    canonical_log2: float
    failure_log2: float
    gaussian_margin: float | None = None

    @property
    def log2_variance(self) -> float:
        return self.estimate.log2_variance

    def to_dict(self) -> dict:
        d = self.estimate.to_dict()
        d.update(node=self.node, stage=self.stage, level=self.level,
                 canonical_log2_bound=self.canonical_log2, failure_log2_prob=self.failure_log2)
        if self.gaussian_margin is not None:
            d["gaussian_margin_log2"] = self.gaussian_margin
        return d


@dataclass
class Prediction:
    nodes: dict
    violations: list = field(default_factory=list)
    output: str = ""

    def __getitem__(self, node_id: str) -> NodePrediction:
        return self.nodes[node_id]

    def log2(self, node_id: str) -> float:
        return self.nodes[node_id].log2_variance

    def to_dict(self) -> dict:
        return {
            "nodes": {k: v.to_dict() for k, v in self.nodes.items()},
            "gaussian_condition_violations": list(self.violations),
            "output": self.output,
        }


def _chain_log2(chain) -> list[float]:
    if isinstance(chain, ModulusChain):
        return chain.log2_sizes()
    return [float(x) for x in chain]


def predict(spec: CircuitSpec, ctx: noise.NoiseContext, chain) -> Prediction:
    """Walk the circuit applying the noise rules node by node.

    chain is a ModulusChain or a list of log2 prime sizes (bottom first).
    Key switching is modelled with extension modulus q_l * q_{L-1}.
    """
    lp = _chain_log2(chain)
    L = len(lp)
    if L < spec.required_levels():
        raise ValueError(f"chain has {L} moduli, circuit needs {spec.required_levels()}")
    lq = [float(x) for x in np.cumsum(lp)]
    top = L - 1
    dag = spec.dag()
    out: dict = {}
    violations = []
    cache: dict = {}
    for node in dag:
        ins = [out[i] for i in node.inputs]
        if node.op == "enc":
            level = top
        elif node.op == "ms":
            level = ins[0].level - 1 if node.target is None else node.target
            if not 0 <= level < ins[0].level:
                raise ValueError(f"node {node.id}: cannot switch from level {ins[0].level} to {level}")
        else:
            levels = {p.level for p in ins}
            if len(levels) != 1:
                raise ValueError(f"node {node.id}: inputs at different levels {sorted(levels)}")
            level = ins[0].level
        key = (node.op, tuple(id(p.estimate) for p in ins), level)
        if key in cache:
            est, can, margin = cache[key]
        else:
            margin = None
            if node.op == "enc":
                est = noise.v_clean(ctx)
                can = noise.canonical_track("enc", ctx=ctx)
            elif node.op == "ms":
                drop = lq[ins[0].level] - lq[level]
                est = noise.v_ms(ins[0].estimate, 0.0, ctx, log2_ratio=-drop)
                margin = noise.gaussian_condition(ins[0].estimate, -drop, ctx)
                can = noise.canonical_track("ms", _can(ins[0]), ctx=ctx, p=2.0**drop)
            elif node.op == "mult":
                est = noise.v_mult(ins[0].estimate, ins[1].estimate, ctx)
                ks = noise.v_keyswitch_ghs(ctx, log2_q=lq[level], log2_Q=lq[level] + lq[top])
                est = noise.with_additive(est, ks, "mult")
                can = noise.canonical_track("mult", _can(ins[0]), _can(ins[1]), ctx=ctx)
            elif node.op == "add":
                est = noise.v_add(ins[0].estimate, ins[1].estimate)
                can = noise.canonical_track("add", _can(ins[0]), _can(ins[1]), ctx=ctx)
            else:
                est = noise.v_const(ins[0].estimate, ctx)
                can = noise.CanonicalEstimate(_can(ins[0]).bound * ctx.t * ctx.n / 2)
            cache[key] = (est, can, margin)
        fail = noise.failure_log2(None, None, ctx.n, log2_variance=est.log2_variance, log2_modulus=lq[level])
        out[node.id] = NodePrediction(node.id, node.op, STAGES[node.op], level, est, can.log2_bound, fail, margin)
        if margin is not None and margin < -noise.MARGIN_TOL:
            violations.append(node.id)
    return Prediction(out, violations, dag[-1].id)


def _can(p: NodePrediction) -> noise.CanonicalEstimate:
    return noise.CanonicalEstimate(2.0**p.canonical_log2)


# execution -------------------------------------------------------------

@dataclass
class SampleMatrix:
    columns: list
    rows: list  # one list of ints per trial
    trials: int
    seed: int
    fingerprint: str
    failures: int = 0
    failed_trials: list = field(default_factory=list)
    verified: bool = True
    pooled: dict = field(default_factory=dict)

    def column(self, name: str) -> list[int]:
        j = self.columns.index(name)
        return [r[j] for r in self.rows]

    def to_csv(self, path: str | os.PathLike) -> None:
        failed = set(self.failed_trials)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial"] + list(self.columns) + ["decrypt_ok"])
            for i, r in enumerate(self.rows):
                ok = "" if not self.verified else int(i not in failed)
                w.writerow([i] + [str(v) for v in r] + [ok])

    @classmethod
    def from_csv(cls, path: str | os.PathLike, seed: int = -1, fingerprint: str = "") -> "SampleMatrix":
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            cols = header[1:-1]
            rows, failed, verified = [], [], True
            for rec in rd:
                rows.append([int(v) for v in rec[1:-1]])
                if rec[-1] == "":
                    verified = False
                elif rec[-1] == "0":
                    failed.append(int(rec[0]))
        return cls(cols, rows, len(rows), seed, fingerprint, len(failed), failed, verified)


def _plain_mul(a: np.ndarray, b: np.ndarray, t: int) -> np.ndarray:
    from .ntt import get_basis

    n = a.shape[0]
    B = get_basis((t,), n)
    r = B.inverse(B.mul(B.forward(B.from_small(a)), B.forward(B.from_small(b))))[0].astype(np.int64)
    return np.where(2 * r >= t, r - t, r)


def _center_t(a: np.ndarray, t: int) -> np.ndarray:
    r = np.mod(a, t)
    return np.where(2 * r >= t, r - t, r)


def run_trial(dag: list[Node], key: KeyMaterial, seed: int, trial: int, probes: list[ProbePoint],
              verify: bool) -> tuple[list[int], bool | None, dict]:
    """One circuit evaluation. Returns probe values, decryption verdict, pooled data.

    Each node draws from its own stream keyed by (seed, trial, node index),
    so a probe value does not depend on which other nodes were evaluated.
    """
    params = key.params
    n, t = params.n, params.t
    index = {nd.id: i for i, nd in enumerate(dag)}
    by_id = {nd.id: nd for nd in dag}
    cts: dict = {}
    plain: dict = {}

    def ev(nid: str) -> ExtendedCiphertext:
        if nid in cts:
            return cts[nid]
        nd = by_id[nid]
        rng = np.random.default_rng([seed, 1, trial, index[nid]])
        if nd.op == "enc":
            m = rng.integers(-(t // 2), t // 2 + 1, n, dtype=np.int64)
            c = encrypt(m, key, rng, track_noise=False)
            plain[nid] = m
        elif nd.op == "ms":
            src = ev(nd.inputs[0])
            c = mod_switch(src, nd.target)
            plain[nid] = plain[nd.inputs[0]]
        elif nd.op == "mult":
            a, b = ev(nd.inputs[0]), ev(nd.inputs[1])
            c = multiply(a, b, key)
            if verify:
                plain[nid] = _plain_mul(plain[nd.inputs[0]], plain[nd.inputs[1]], t)
        elif nd.op == "add":
            a, b = ev(nd.inputs[0]), ev(nd.inputs[1])
            c = add(a, b)
            if verify:
                plain[nid] = _center_t(plain[nd.inputs[0]] + plain[nd.inputs[1]], t)
        else:
            k = rng.integers(-(t // 2), t // 2 + 1, n, dtype=np.int64)
            c = const_mul(k, ev(nd.inputs[0]))
            if verify:
                plain[nid] = _plain_mul(k, plain[nd.inputs[0]], t)
        cts[nid] = c
        return c

    values = []
    pooled = {}
    for p in probes:
        c = ev(p.node)
        if p.pooled:
            pooled[p.node] = list(extract_critical_quantity(c, key).coeffs)
        if p.coeff == 0:
            values.append(critical_coeff0(c, key))
        else:
            values.append(extract_critical_quantity(c, key).coeffs[p.coeff])
    ok = None
    if verify:
        out = dag[-1].id
        got = np.array(decrypt(ev(out), key).coeffs, dtype=np.int64)
        ok = bool(np.array_equal(got, plain[out]))
    return values, ok, pooled


_WORKER: dict = {}


def _worker_chunk(spec: CircuitSpec, params: SchemeParams, seed: int, start: int, stop: int, probes, verify):
    k = (params.fingerprint(), seed)
    if k not in _WORKER:
        _WORKER.clear()
        _WORKER[k] = keygen(params, seed=seed, lab_mode=True)
    key = _WORKER[k]
    dag = spec.dag()
    return [run_trial(dag, key, seed, i, probes, verify) for i in range(start, stop)]


def execute(spec: CircuitSpec, params: SchemeParams, trials: int, probes=None, seed: int = 0,
            verify: bool = True, key: KeyMaterial | None = None, workers: int = 1,
            checkpoint: str | os.PathLike | None = None, checkpoint_every: int = 200,
            progress=None) -> SampleMatrix:
    """Run the circuit `trials` times and collect critical-quantity samples.

    One key pair (derived from seed) is shared by all trials. With verify,
    the full circuit is evaluated and the output decrypted against the
    plaintext-side result; otherwise only the nodes the probes need run.
    Decryption mismatches are counted, never raised.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    probes = list(probes) if probes is not None else spec.probe_points()
    probes = [p if isinstance(p, ProbePoint) else ProbePoint(p) for p in probes]
    dag = spec.dag()
    ids = {n.id for n in dag}
    for p in probes:
        if p.node not in ids:
            raise ValueError(f"probe {p.node!r} is not a node of the circuit")
    if len(params.chain.primes) < spec.required_levels():
        raise ValueError("modulus chain too short for this circuit")
    fp = params.fingerprint()
    columns = [p.column for p in probes]
    rows: list = []
    failed: list = []
    pooled: dict = {}
    start = 0
    if checkpoint and Path(checkpoint).exists():
        state = json.loads(Path(checkpoint).read_text())
        if state.get("fingerprint") == fp and state.get("seed") == seed and state.get("columns") == columns \
                and state.get("verified") == verify:
            rows = [[int(v) for v in r] for r in state["rows"]][:trials]
            failed = [i for i in state["failed_trials"] if i < len(rows)]
            start = len(rows)

    def absorb(i0, results):
        for off, (vals, ok, pool) in enumerate(results):
            rows.append(vals)
            if ok is False:
                failed.append(i0 + off)
            for k, v in pool.items():
                pooled.setdefault(k, []).extend(v)

    def save():
        if checkpoint:
            tmp = Path(str(checkpoint) + ".tmp")
            tmp.write_text(json.dumps({
                "fingerprint": fp, "seed": seed, "columns": columns, "verified": verify,
                "rows": [[str(v) for v in r] for r in rows], "failed_trials": failed,
            }))
            os.replace(tmp, checkpoint)

    if workers > 1 and trials - start > 1:
        bounds = list(range(start, trials, checkpoint_every)) + [trials]
        with ProcessPoolExecutor(workers) as pool:
            futs = [pool.submit(_worker_chunk, spec, params, seed, a, b, probes, verify)
                    for a, b in zip(bounds[:-1], bounds[1:])]
            for a, f in zip(bounds[:-1], futs):
                absorb(a, f.result())
                save()
                if progress:
                    progress(len(rows), trials)
    else:
        if key is None:
            key = keygen(params, seed=seed, lab_mode=True)
        for i in range(start, trials):
            absorb(i, [run_trial(dag, key, seed, i, probes, verify)])
            if (i + 1) % checkpoint_every == 0:
                save()
                if progress:
                    progress(i + 1, trials)
        save()
    return SampleMatrix(columns, rows, trials, seed, fp, len(failed), sorted(failed), verify, pooled)
