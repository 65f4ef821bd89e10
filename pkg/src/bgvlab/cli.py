"""Command line: estimate, simulate, gaussianity, select-params, compare.

Every report embeds the request, the seed, a parameter fingerprint and the
package version. The exit status is 0 iff the run raised no alarm.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__, lab
from .circuit import CircuitSpec, ProbePoint, SampleMatrix, execute, predict
from .params import (
    ParamPlan, ParamRequest, compare_modes, average_case_bits, no_ms_chain, plan, ratio_table,
)
from .ring import SamplerSpec, gaussian
from .scheme import ModulusChain, SchemeParams

# published closed-form log2 variances (ternary secrets, t = 65537, sigma = 3.19)
PUBLISHED_MODEL = {
    8192: {"enc": 48.76, "ms": 40.84, "mult": 95.68, "mult_deep": 95.71},
    16384: {"enc": 49.76, "ms": 41.84, "mult": 98.68, "mult_deep": 98.71},
    32768: {"enc": 50.76, "ms": 42.84, "mult": 101.68, "mult_deep": 101.71},
}
# published measured log2 variances at n = 2^13
PUBLISHED_EXPERIMENT = {"enc": 48.76, "ms": 40.83, "mult": 95.65, "mult_deep": 95.25}


@dataclass
class RunConfig:
    command: str
    flags: dict
    seed: int = 0
    out: str | None = None
    format: str = "text"
    alarms: list = field(default_factory=list)


def version_string() -> str:
    try:
        sha = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        sha = ""
    return f"{__version__}+g{sha}" if sha else __version__


def _secret(text: str, n: int) -> SamplerSpec:
    if text == "ternary":
        return SamplerSpec("ternary")
    if text.startswith("hw:"):
        h = text[3:]
        return SamplerSpec("ternary_hw", h=n // 2 if h == "half" else int(h))
    raise SystemExit(f"--secret must be 'ternary', 'hw:H' or 'hw:half', got {text!r}")


_MODES = {"average-case": "average_case", "worst-case": "worst_case_canonical"}


def _request(a, M: int | None = None) -> ParamRequest:
    try:
        return ParamRequest(
            n=a.n, t=a.t, M=a.depth if M is None else M, D=a.D, alpha=a.alpha,
            secret_spec=_secret(a.secret, a.n), error_spec=gaussian(a.sigma),
            sizing_mode=_MODES[getattr(a, "mode", "average-case")],
            congruence=getattr(a, "congruence", "ntt_and_t"),
        )
    except ValueError as exc:
        raise SystemExit(f"invalid parameters: {exc}")


def _fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _emit(cfg: RunConfig, report: dict, text: str) -> None:
    report = {"command": cfg.command, "version": version_string(), "seed": cfg.seed, **report,
              "alarms": cfg.alarms}
    body = json.dumps(report, indent=2, default=str) if cfg.format == "json" else text
    if cfg.out:
        Path(cfg.out).write_text(json.dumps(report, indent=2, default=str))
        if cfg.format != "json":
            print(text)
    else:
        print(body)


# estimate ------------------------------------------------------------------

def _table_rows(pred, M: int, policy: str) -> list[tuple[str, str]]:
    rows = [("enc", "enc[0]")]
    if M >= 1:
        if policy == "before_each_mult":
            rows.append(("ms", "ms1[0]"))
        rows.append(("mult", "mult1[0]"))
        if M > 1:
            rows.append((f"mult (depth {M})", f"mult{M}[0]"))
    if "final_ms" in pred.nodes:
        rows.append(("final ms", "final_ms"))
    return rows


def cmd_estimate(a) -> int:
    req = _request(a)
    ctx = req.context()
    spec = CircuitSpec("product_tree", req.M, a.ms_policy)
    if a.chain_bits:
        bits = [float(x) for x in a.chain_bits.split(",")]
    elif a.ms_policy == "none":
        bits, _ = no_ms_chain(req)
    else:
        bits = average_case_bits(ctx, req.M)
    try:
        pred = predict(spec, ctx, bits)
    except ValueError as exc:
        raise SystemExit(f"estimate: {exc}")
    cfg = RunConfig("estimate", vars(a), a.seed, a.out, a.format)
    regime = "non_gaussian_fallback" if a.ms_policy == "none" else "gaussian"
    rows = _table_rows(pred, req.M, a.ms_policy)
    lines = [f"n={req.n} t={req.t} M={req.M} D={req.D:g} alpha={req.alpha:g} ms_policy={a.ms_policy} ({regime})",
             f"{'stage':<18}{'node':<12}{'log2 V':>10}{'log2 q_l':>10}{'log2 Pf':>12}"]
    lq = np.cumsum(bits)
    for label, nid in rows:
        p = pred[nid]
        lines.append(f"{label:<18}{nid:<12}{p.log2_variance:>10.2f}{lq[p.level]:>10.2f}{p.failure_log2:>12.4g}")
    if pred.violations:
        worst = min(pred[v].gaussian_margin for v in pred.violations)
        lines.append(f"gaussian condition missed at {len(pred.violations)} switch(es), "
                     f"worst margin {worst:.4f} bits: {', '.join(pred.violations[:4])}"
                     + (" ..." if len(pred.violations) > 4 else ""))
    report = {
        "request": req.to_dict(), "fingerprint": _fingerprint([req.to_dict(), bits, a.ms_policy]),
        "ms_policy": a.ms_policy, "regime": regime, "chain_bits": bits,
        "table": {nid: pred.log2(nid) for _, nid in rows},
        "prediction": pred.to_dict(),
    }
    _emit(cfg, report, "\n".join(lines))
    return 0 if not cfg.alarms else 1


# simulate ------------------------------------------------------------------

def _scheme_for(a, req: ParamRequest) -> tuple[SchemeParams, CircuitSpec, dict]:
    spec = CircuitSpec("product_tree", req.M, a.ms_policy)
    if a.plan:
        p = ParamPlan.from_json(Path(a.plan).read_text())
        primes = p.realized_primes
        req = p.request
    elif a.ms_policy == "none":
        _, primes = no_ms_chain(req)
    else:
        primes = plan(req).realized_primes
    params = SchemeParams(req.n, req.t, ModulusChain(tuple(primes)), req.secret_spec.with_seed(a.seed),
                          req.error_spec, req.D, req.alpha)
    return params, spec, req.to_dict()


def _failure_alarm(failures: int, expected: float) -> bool:
    if failures == 0:
        return False
    # observed count implausible under the predicted rate
    return stats.poisson.sf(failures - 1, expected) < 1e-3


def cmd_simulate(a) -> int:
    if a.trials < lab.MIN_SAMPLES:
        raise SystemExit(f"simulate: trials must be >= {lab.MIN_SAMPLES}, got {a.trials}")
    req = _request(a)
    params, spec, reqd = _scheme_for(a, req)
    probes = [ProbePoint(x) for x in a.probes.split(",")] if a.probes else None
    progress = (lambda done, total: print(f"  {done}/{total}", file=sys.stderr)) if a.progress else None
    try:
        samples = execute(spec, params, a.trials, probes=probes, seed=a.seed, verify=not a.no_verify,
                          workers=a.workers, checkpoint=a.checkpoint, checkpoint_every=a.checkpoint_every,
                          progress=progress)
    except ValueError as exc:
        raise SystemExit(f"simulate: {exc}")
    if a.csv:
        samples.to_csv(a.csv)
    pred = predict(spec, params.noise_context(), params.chain)
    cfg = RunConfig("simulate", vars(a), a.seed, a.out, a.format)
    reports = {}
    for col in samples.columns:
        reports[col] = lab.summarize(lab.SampleSet(samples.column(col), col, params.fingerprint()))
    model = {c: pred.log2(c.split("@")[0]) for c in samples.columns}
    rows = lab.compare_table(model, {c: r.log2_variance for c, r in reports.items()})
    for r in rows:
        if r.underestimate:
            cfg.alarms.append(f"model underestimates {r.probe} by {-r.delta:.2f} bits")
    out_fail = pred[spec.output()].failure_log2
    expected = a.trials * 2.0**out_fail if samples.verified else None
    if samples.verified and _failure_alarm(samples.failures, expected):
        cfg.alarms.append(f"{samples.failures} decryption failures, expected {expected:.3g}")
    lines = [f"trials={a.trials} seed={a.seed} fingerprint={params.fingerprint()}",
             f"{'probe':<12}{'model':>9}{'emp':>9}{'kurt':>9}{'KS p':>10}{'AD':>9}  verdict"]
    for r in rows:
        g = reports[r.probe]
        lines.append(f"{r.probe:<12}{r.model_log2:>9.2f}{r.empirical_log2:>9.2f}{g.kurtosis:>9.3f}"
                     f"{g.ks_pvalue:>10.3g}{g.ad_statistic:>9.3f}  {'gaussian' if g.verdict else 'NOT gaussian'}")
    lines.append(f"decryption failures: {samples.failures if samples.verified else 'not checked'}")
    report = {
        "request": reqd, "fingerprint": params.fingerprint(), "trials": a.trials,
        "chain": [str(p) for p in params.chain.primes], "ms_policy": a.ms_policy,
        "probes": {c: reports[c].to_dict() for c in samples.columns},
        "comparison": [r.__dict__ for r in rows],
        "failures": samples.failures if samples.verified else None,
        "expected_failures": expected, "csv": a.csv,
    }
    _emit(cfg, report, "\n".join(lines))
    return 0 if not cfg.alarms else 1


# gaussianity ---------------------------------------------------------------

def cmd_gaussianity(a) -> int:
    cfg = RunConfig("gaussianity", vars(a), a.seed, a.out, a.format)
    if a.synthetic:
        rng = np.random.default_rng(a.seed)
        gen = {"normal": lambda: rng.normal(0, 1000, a.size), "uniform": lambda: rng.uniform(-1000, 1000, a.size),
               "student_t3": lambda: rng.standard_t(3, a.size) * 1000}[a.synthetic]
        sets = {a.synthetic: lab.SampleSet(list(np.rint(gen()).astype(np.int64)), a.synthetic)}
        fp = _fingerprint([a.synthetic, a.size, a.seed])
    elif a.csv:
        m = SampleMatrix.from_csv(a.csv)
        cols = a.columns.split(",") if a.columns else m.columns
        sets = {c: lab.SampleSet(m.column(c), c) for c in cols}
        fp = hashlib.sha256(Path(a.csv).read_bytes()).hexdigest()[:16]
    else:
        raise SystemExit("gaussianity: give a sample CSV or --synthetic")
    try:
        reports = {c: lab.summarize(s) for c, s in sets.items()}
    except ValueError as exc:
        raise SystemExit(f"gaussianity: {exc}")
    lines = [f"{'probe':<12}{'n':>8}{'log2 V':>9}{'kurt':>9}{'KS p':>10}{'AD':>9}  verdict"]
    for c, r in reports.items():
        lines.append(f"{c:<12}{r.count:>8}{r.log2_variance:>9.2f}{r.kurtosis:>9.3f}{r.ks_pvalue:>10.3g}"
                     f"{r.ad_statistic:>9.3f}  {'gaussian' if r.verdict else 'NOT gaussian'}")
    _emit(cfg, {"fingerprint": fp, "reports": {c: r.to_dict() for c, r in reports.items()}}, "\n".join(lines))
    return 0


# select-params -------------------------------------------------------------

def cmd_select_params(a) -> int:
    req = _request(a)
    try:
        p = plan(req)
    except (ValueError, ArithmeticError) as exc:
        raise SystemExit(f"select-params: {exc}")
    cfg = RunConfig("select-params", vars(a), a.seed, a.out, a.format)
    cfg.alarms.extend(p.alarms)
    report = {"fingerprint": p.scheme_params(a.seed).fingerprint(), "plan": p.to_dict()}
    if a.validate:
        v = lab_validate(p, a.validate, a.seed, a.workers)
        report["validation"] = v
        if _failure_alarm(v["failures"], v["expected_failures"]):
            cfg.alarms.append(f"{v['failures']} decryption failures, expected {v['expected_failures']:.3g}")
    lines = [f"mode={req.sizing_mode} n={req.n} M={req.M} D={req.D:g}",
             "theoretical bits: " + " ".join(f"{b:.2f}" for b in p.theoretical_bits),
             f"theoretical total: {p.theoretical_total:.2f}",
             "realized bits:    " + " ".join(f"{math.log2(q):.2f}" for q in p.realized_primes),
             f"realized total log2 q: {p.total_log2_q:.2f} (gap {p.realization_gap:.2f})",
             f"predicted failure log2: {p.predicted_failure_log2:.1f}"]
    lines += [f"ALARM {x}" for x in p.alarms]
    _emit(cfg, report, "\n".join(lines))
    return 0 if not cfg.alarms else 1


def lab_validate(p: ParamPlan, trials: int, seed: int, workers: int) -> dict:
    from .params import validate_plan

    return validate_plan(p, trials, seed=seed, workers=workers)


# compare -------------------------------------------------------------------

def cmd_compare(a) -> int:
    ns = [int(x) for x in a.grid.split(",") if x.strip()] if a.grid is not None else [a.n]
    if not ns:
        raise SystemExit("compare: empty --grid; give ring sizes like --grid 4096,8192")
    cfg = RunConfig("compare", vars(a), a.seed, a.out, a.format)
    lines = []
    report: dict = {"grid": ns}
    # closed-form table against the published model column
    table1 = []
    for n in ns:
        req = ParamRequest(n=n, t=a.t, M=6, D=a.D, alpha=a.alpha,
                           secret_spec=_secret(a.secret, n), error_spec=gaussian(a.sigma))
        ctx = req.context()
        pred = predict(CircuitSpec("product_tree", req.M), ctx, average_case_bits(ctx, req.M))
        comparable = a.secret == "ternary" and a.t == 65537 and a.sigma == 3.19
        ref = PUBLISHED_MODEL.get(n, {}) if comparable else {}
        for stage, nid in (("enc", "enc[0]"), ("ms", "ms1[0]"), ("mult", "mult1[0]"), ("mult_deep", "mult6[0]")):
            published = ref.get(stage)
            delta = None if published is None else pred.log2(nid) - published
            table1.append({"n": n, "stage": stage, "model_log2": pred.log2(nid), "published": published,
                           "delta": delta, "pass": None if delta is None else abs(delta) <= 0.05})
    report["table1"] = table1
    lines.append("closed-form variances (log2) vs published model column")
    for r in table1:
        pub = "-" if r["published"] is None else f"{r['published']:.2f}"
        mark = "" if r["pass"] is None else ("  ok" if r["pass"] else "  MISMATCH")
        lines.append(f"  n={r['n']:<6} {r['stage']:<10} {r['model_log2']:8.2f}  published {pub}{mark}")
    # total modulus comparison
    modes = []
    for n in ns:
        req = _request(argparse.Namespace(**{**vars(a), "n": n}))
        try:
            modes.append(compare_modes(req))
        except ValueError as exc:
            raise SystemExit(f"compare: {exc}")
    report["modes"] = modes
    lines.append(f"log2 q for the depth-{a.depth} circuit")
    for m in modes:
        for r in m["rows"]:
            if "theoretical_log2_q" in r:
                lines.append(f"  n={m['n']:<6} {r['name']:<30} {r['theoretical_log2_q']:8.2f}")
    ratios = ratio_table(ns, a.t, a.alpha, a.sigma)
    report["prime_ratio"] = ratios
    lines.append("intermediate prime bound with Hamming-weight n/2 secrets")
    for r in ratios:
        pub = "-" if r["published"] is None else f"{r['published']:.2f}"
        mark = "" if r["delta"] is None else ("  ok" if abs(r["delta"]) <= 0.1 else "  MISMATCH")
        lines.append(f"  n={r['n']:<6} {r['log2_p']:8.3f}  published {pub}{mark}")
    if a.simulation:
        sim = json.loads(Path(a.simulation).read_text())
        rows = sim.get("comparison", [])
        report["empirical_join"] = rows
        lines.append("model vs empirical (from simulate output)")
        for r in rows:
            if r["underestimate"]:
                cfg.alarms.append(f"model underestimates {r['probe']} by {-r['delta']:.2f} bits")
            lines.append(f"  {r['probe']:<12} {r['model_log2']:8.2f} {r['empirical_log2']:8.2f} "
                         f"{'ALARM' if r['underestimate'] else 'ok'}")
    report["fingerprint"] = _fingerprint(report)
    _emit(cfg, report, "\n".join(lines))
    return 0 if not cfg.alarms else 1


# parser --------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, need_n: bool = True) -> None:
    p.add_argument("--config", help="TOML or JSON file with default flag values")
    p.add_argument("--n", type=int, default=8192 if not need_n else None)
    p.add_argument("--t", type=int, default=65537)
    p.add_argument("--sigma", type=float, default=3.19)
    p.add_argument("--secret", default="ternary", help="ternary, hw:H or hw:half")
    p.add_argument("--depth", "-M", type=int, default=3)
    p.add_argument("--D", type=float, default=8.0)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", help="write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bgvlab", description="BGV noise estimation and measurement")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="closed-form noise prediction for the product-tree circuit")
    _common(p)
    p.add_argument("--ms-policy", choices=("before_each_mult", "none"), default="before_each_mult")
    p.add_argument("--chain-bits", help="comma-separated log2 prime sizes, bottom first")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo run of the product-tree circuit")
    _common(p)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--probes", help="comma-separated node ids (default: left spine)")
    p.add_argument("--ms-policy", choices=("before_each_mult", "none"), default="before_each_mult")
    p.add_argument("--plan", help="plan JSON from select-params")
    p.add_argument("--csv", help="write probe samples here")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--checkpoint", help="resume file for long runs")
    p.add_argument("--checkpoint-every", type=int, default=200)
    p.add_argument("--no-verify", action="store_true", help="skip decryption checks, evaluate only probed nodes")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gaussianity", help="normality battery on a sample CSV")
    p.add_argument("csv", nargs="?")
    p.add_argument("--columns")
    p.add_argument("--synthetic", choices=("normal", "uniform", "student_t3"))
    p.add_argument("--size", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gaussianity)

    p = sub.add_parser("select-params", help="modulus chain for the product-tree circuit")
    _common(p)
    p.add_argument("--mode", choices=("average-case", "worst-case"), default="average-case")
    p.add_argument("--congruence", choices=("ntt_and_t", "ntt"), default="ntt_and_t")
    p.add_argument("--validate", type=int, metavar="TRIALS", help="also run the circuit under the plan")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_select_params)

    p = sub.add_parser("compare", help="model tables against published reference values")
    _common(p, need_n=False)
    p.add_argument("--grid", help="comma-separated ring sizes")
    p.add_argument("--mode", choices=("average-case",), default="average-case")
    p.add_argument("--simulation", help="simulate JSON report to join")
    p.set_defaults(func=cmd_compare)
    return ap


def _load_config(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith(".toml"):
        import tomli

        data = tomli.loads(text)
    else:
        data = json.loads(text)
    return {k.replace("-", "_"): v for k, v in data.items()}


def main(argv=None) -> int:
    ap = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    a = ap.parse_args(argv)
    if getattr(a, "config", None):
        # config supplies defaults; flags given on the command line win
        sp = ap._subparsers._group_actions[0].choices[a.command]
        sp.set_defaults(**_load_config(a.config))
        a = ap.parse_args(argv)
    if hasattr(a, "n") and a.n is None:
        ap.error("--n is required")
    return a.func(a)


if __name__ == "__main__":
    sys.exit(main())
