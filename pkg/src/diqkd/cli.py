"""Command-line entry point: ``diqkd <command> ...``.

Exit codes: 0 on success or protocol acceptance, 2 when the simulated
protocol aborts, 1 on any operational error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import npa
from .behavior import (
    PRESETS,
    Behavior,
    BehaviorError,
    MeasurementAngles,
    qber,
    singlet_behavior,
)
from .guess import (
    DualCertificate,
    GuessError,
    KeyFunction,
    behavior_hash,
    evaluate_certificate,
    solve_bit_distance,
    solve_guess,
)
from .protocol import (
    HashSeed,
    ProtocolError,
    ProtocolParams,
    binary_entropy,
    key_rate,
    parameter_estimation,
    reconcile,
    security_report,
    simulate_rounds,
)
from .sdp import SdpError

log = logging.getLogger("diqkd")

EXIT_OK, EXIT_ERROR, EXIT_ABORT = 0, 1, 2
HIERARCHY_SLACK = 1e-7
CERT_ENV = "DIQKD_CERT_DIR"
# figures use the two-input bases; the protocol uses all three of Bob's inputs
SWEEP_PRESET = "chsh"
PROTOCOL_PRESET = "ekert"


class CliError(Exception):
    pass


@dataclass
class CurvePoint:
    rho: float
    value: float
    level: object
    diagnostics: dict = field(default_factory=dict)


# -- helpers ---------------------------------------------------------------------------


def parse_grid(text: str) -> list[float]:
    """``a:b:step`` (inclusive) or a comma list; returned sorted ascending."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise CliError(f"grid {text!r} must look like a:b:step")
        a, b, step = (float(p) for p in parts)
        if step <= 0 or b < a:
            raise CliError(f"grid {text!r} needs step > 0 and b >= a")
        count = int(math.floor((b - a) / step + 1e-9)) + 1
        values = [round(a + i * step, 12) for i in range(count)]
    else:
        values = [float(p) for p in text.split(",") if p.strip()]
    if not values:
        raise CliError("empty grid")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise CliError(f"grid value {v} outside [0, 1]")
    return sorted(set(values))


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _dump_json(obj, path: str | None) -> None:
    text = json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _angles(args) -> MeasurementAngles:
    flip = not args.no_flip
    if getattr(args, "alice", None) or getattr(args, "bob", None):
        if not (args.alice and args.bob):
            raise CliError("--alice and --bob must be given together")
        return MeasurementAngles(tuple(float(a) for a in args.alice.split(",")),
                                 tuple(float(b) for b in args.bob.split(",")), bob_flip=flip)
    return PRESETS[args.preset](bob_flip=flip)


def cert_dir(arg: str | None) -> Path | None:
    """Explicit flag, then the environment variable, then the user cache."""
    if arg:
        return Path(arg)
    if os.environ.get(CERT_ENV):
        return Path(os.environ[CERT_ENV])
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
    return Path(base) / "diqkd" / "certificates"


def _cache_key(b: Behavior, f: KeyFunction, level, kind: str, robust: float) -> str:
    blob = json.dumps({"behavior": behavior_hash(b), "f": f.to_dict(), "level": str(npa.normalize_level(level)),
                       "kind": kind, "robust": robust}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def certified_bound(b: Behavior, level, kind: str = "guess", robust: float = 0.0,
                    cache: Path | None = None, f: KeyFunction | None = None) -> tuple[float, DualCertificate, dict]:
    """Solve (or load from the content-addressed cache) one bound."""
    f = KeyFunction.identity(0, b.alphabets.nx) if f is None else f
    path = None
    if cache is not None:
        path = cache / f"{_cache_key(b, f, level, kind, robust)}.json"
        if path.exists():
            try:
                doc = json.loads(path.read_text())
                cert = DualCertificate.from_dict(doc["certificate"])
                value = float(doc["value"])
                if cert.meta.get("behavior_hash") == behavior_hash(b):
                    log.debug("certificate cache hit %s", path)
                    return value, cert, dict(doc.get("diagnostics", {}))
            except (OSError, ValueError, KeyError) as exc:
                log.warning("ignoring unreadable cache entry %s: %s", path, exc)
    if kind == "guess":
        res = solve_guess(b, f, level, robust=robust)
        value = res.p_guess
    else:
        res = solve_bit_distance(b, f, level, robust=robust)
        value = res.distance
    cert, diag = res.certificate, res.diagnostics
    if path is not None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(_clean({"certificate": cert.to_dict(), "value": value, "diagnostics": diag}),
                                      sort_keys=True))
            tmp.replace(path)
        except OSError as exc:
            log.warning("could not write cache entry %s: %s", path, exc)
    return value, cert, diag


def _solve_point(job) -> CurvePoint:
    rho, angles, level, cache = job
    b = singlet_behavior(rho, angles)
    try:
        value, _, diag = certified_bound(b, level, cache=cache)
        if level != 1:
            # the coarser level must never certify a smaller value
            coarse, _, _ = certified_bound(b, 1, cache=cache)
            diag = dict(diag, level1_value=coarse)
            if coarse < value - HIERARCHY_SLACK:
                log.warning("rho=%g: level 1 bound %.9g below level %s bound %.9g", rho, coarse, level, value)
                diag["hierarchy_violation"] = True
    except (GuessError, SdpError) as exc:
        return CurvePoint(rho, math.nan, level, {"error": str(exc)})
    return CurvePoint(rho, value, level, diag)


def guess_curve(grid, angles, level, cache, jobs: int = 1) -> list[CurvePoint]:
    work = [(rho, angles, level, cache) for rho in grid]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_solve_point, work))
    return [_solve_point(w) for w in work]


def _write_csv(points: list[CurvePoint], header: str, path: str | None) -> None:
    lines = [header] + [f"{p.rho:.6f},{p.value:.6f}" for p in points]
    text = "\n".join(lines) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _report_failures(points: list[CurvePoint]) -> int:
    bad = [p for p in points if not math.isfinite(p.value)]
    for p in bad:
        print(f"rho={p.rho:.6f}: {p.diagnostics.get('error', 'solve failed')}", file=sys.stderr)
    return EXIT_ERROR if bad else EXIT_OK


# -- commands ----------------------------------------------------------------------------


def cmd_behavior(args) -> int:
    b = singlet_behavior(args.rho, _angles(args))
    _dump_json(b.to_dict(), args.out)
    return EXIT_OK


def _sweep_inputs(args):
    grid = parse_grid(args.grid) if args.grid else parse_grid(args.rho if args.rho is not None else "0")
    return grid, _angles(args), npa.normalize_level(args.level), cert_dir(args.cert_dir)


def cmd_pguess_sweep(args) -> int:
    grid, angles, level, cache = _sweep_inputs(args)
    points = guess_curve(grid, angles, level, cache, args.jobs)
    _write_csv(points, "rho,pguess", args.out)
    return _report_failures(points)


def model_delta(rho: float) -> float:
    """Raw-key error rate of the noise model on the protocol's key inputs."""
    return qber(singlet_behavior(rho, PRESETS[PROTOCOL_PRESET]()), *ProtocolParams(n=1).key_inputs)


def cmd_keyrate_sweep(args) -> int:
    grid, angles, level, cache = _sweep_inputs(args)
    points = guess_curve(grid, angles, level, cache, args.jobs)
    out = []
    for p in points:
        delta = p.rho if args.delta_mode == "figure" else model_delta(p.rho)
        q = key_rate(p.value, min(delta, 0.5)) if math.isfinite(p.value) else math.nan
        out.append(CurvePoint(p.rho, q, p.level, dict(p.diagnostics, delta=delta)))
    _write_csv(out, "rho,q", args.out)
    return _report_failures(out)


def _reconcile_blocks(t, params: ProtocolParams, block: int, max_blocks: int, seed: int) -> dict:
    xs, ys = t.x[t.key], t.y[t.key]
    count = min(max_blocks, len(xs) // block)
    m = min(block, math.ceil(block * binary_entropy(min(0.5, params.delta_max + params.kappa))) + 2)
    rng = np.random.default_rng([seed, 1])
    failures = 0
    for i in range(count):
        hs = HashSeed.random(block, m, rng)
        sl = slice(i * block, (i + 1) * block)
        if not reconcile(xs[sl], ys[sl], m, hs, rng).success:
            failures += 1
    return {"blocks": count, "block_bits": block, "syndrome_bits": m, "failures": failures}


def cmd_simulate(args) -> int:
    if args.behavior:
        b = Behavior.load(args.behavior)
    else:
        b = singlet_behavior(args.rho if args.rho is not None else 0.0, _angles(args))
    a = b.alphabets
    key_inputs = tuple(int(i) for i in args.key_inputs.split(","))
    if args.n > 10**7:
        raise CliError("simulation is limited to 10^7 rounds")
    n_key = math.floor((1 - args.k) ** 2 * args.p * args.n)
    m = args.m if args.m is not None else min(args.n, math.ceil(n_key * binary_entropy(args.delta_max + args.kappa)) + 1)
    base = ProtocolParams(n=args.n, k=args.k, p=args.p, eta=args.eta, delta_max=args.delta_max, kappa=args.kappa,
                          m=m, s=0, level=npa.normalize_level(args.level), seed=args.seed, key_inputs=key_inputs)
    # reference certificate: tuned for the eta penalty at the declared reference behavior
    ref = singlet_behavior(args.ref_rho, _angles(args)) if not args.behavior else b
    if ref.alphabets != a:
        raise CliError("reference behavior alphabets differ from the simulated behavior")
    robust = a.nu * a.nv * args.eta
    _, cert, cdiag = certified_bound(ref, base.level, robust=robust, cache=cert_dir(args.cert_dir),
                                     f=KeyFunction.identity(key_inputs[0], a.nx))
    probe = security_report(b, base, cert)
    s = args.s if args.s is not None else max(0, int(math.floor(probe.h_min_after_ir - 2 * args.pa_security)))
    params = ProtocolParams(**{**base.__dict__, "s": s})
    transcript = simulate_rounds(b, params)
    if args.transcript:
        transcript.dump(args.transcript)
    est = parameter_estimation(transcript, params, cert)
    doc = {
        "seed": params.seed,
        "behavior": {"hash": behavior_hash(b), "meta": b.meta, "reference_rho": args.ref_rho},
        "certificate": {"l1_norm": cert.l1_norm, "bound_at_reference": cert.bound_at_origin, "robust": robust,
                        "diagnostics": cdiag},
        "estimation": est.to_dict(),
        "accepted": est.accepted,
    }
    if est.accepted:
        doc["reconciliation"] = _reconcile_blocks(transcript, params, args.block, args.max_blocks, params.seed)
        doc["security"] = security_report(b, params, cert).to_dict()
    _dump_json(doc, args.out)
    if not est.accepted:
        print(f"protocol aborted: {est.reason}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_certificate(args) -> int:
    if args.action == "solve":
        b = Behavior.load(args.behavior) if args.behavior else singlet_behavior(args.rho or 0.0, _angles(args))
        f = KeyFunction.identity(args.key_input, b.alphabets.nx)
        value, cert, diag = certified_bound(b, npa.normalize_level(args.level), args.kind, args.robust,
                                            cert_dir(args.cert_dir) if args.cache else None, f)
        _dump_json(cert.to_dict(), args.out)
        print(f"{args.kind} bound {value:.9f} (l1 norm {cert.l1_norm:.6g})", file=sys.stderr)
        return EXIT_OK
    cert = DualCertificate.from_dict(json.loads(Path(args.certificate).read_text()))
    b = Behavior.load(args.behavior)
    print(f"{evaluate_certificate(cert, b):.12g}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------


def _add_behavior_flags(p, default_preset: str) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default=default_preset)
    p.add_argument("--alice", help="comma-separated angles in degrees (overrides the preset)")
    p.add_argument("--bob", help="comma-separated angles in degrees (overrides the preset)")
    p.add_argument("--no-flip", action="store_true", help="keep Bob's raw outcome labels")


def _add_sweep_flags(p) -> None:
    p.add_argument("--grid", help="a:b:step or a comma list of noise weights")
    p.add_argument("--rho", help="single value or comma list (used when --grid is absent)")
    p.add_argument("--level", default="2", choices=["1", "1ab", "2"])
    p.add_argument("--jobs", type=int, default=1, help="parallel solver processes")
    p.add_argument("--cert-dir")
    p.add_argument("--out")
    _add_behavior_flags(p, SWEEP_PRESET)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diqkd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("behavior", help="write a noisy-singlet behavior as JSON")
    p.add_argument("--rho", type=float, default=0.0)
    p.add_argument("--out")
    _add_behavior_flags(p, PROTOCOL_PRESET)
    p.set_defaults(func=cmd_behavior)

    p = sub.add_parser("pguess-sweep", help="guessing-probability bound over a noise grid (CSV)")
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_pguess_sweep)

    p = sub.add_parser("keyrate-sweep", help="asymptotic key rate over a noise grid (CSV)")
    _add_sweep_flags(p)
    p.add_argument("--delta-mode", choices=["figure", "model"], default="figure",
                   help="figure: error rate equals rho; model: error rate of the noise model")
    p.set_defaults(func=cmd_keyrate_sweep)

    p = sub.add_parser("simulate", help="run the protocol on simulated devices and report epsilons")
    p.add_argument("--behavior", help="behavior JSON (default: noisy singlet from --rho/--preset)")
    p.add_argument("--rho", type=float)
    p.add_argument("--ref-rho", type=float, default=0.0, help="noise of the reference behavior for the certificate")
    p.add_argument("--n", type=int, default=10**5)
    p.add_argument("--k", type=float, default=0.3)
    p.add_argument("--p", type=float, default=0.9)
    p.add_argument("--eta", type=float, default=0.02)
    p.add_argument("--delta-max", type=float, default=0.02)
    p.add_argument("--kappa", type=float, default=0.05)
    p.add_argument("--m", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--pa-security", type=float, default=40.0, help="target -log2 of the hashing distance")
    p.add_argument("--key-inputs", default="0,2")
    p.add_argument("--level", default="2", choices=["1", "1ab", "2"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--block", type=int, default=16, help="reconciliation block length (at most 24)")
    p.add_argument("--max-blocks", type=int, default=64)
    p.add_argument("--transcript", help="also write the transcript JSON here")
    p.add_argument("--cert-dir")
    p.add_argument("--out")
    _add_behavior_flags(p, PROTOCOL_PRESET)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("certificate", help="solve for or evaluate a dual certificate")
    csub = p.add_subparsers(dest="action", required=True)
    s = csub.add_parser("solve")
    s.add_argument("--behavior")
    s.add_argument("--rho", type=float)
    s.add_argument("--level", default="2", choices=["1", "1ab", "2"])
    s.add_argument("--kind", choices=["guess", "distance"], default="guess")
    s.add_argument("--robust", type=float, default=0.0, help="l1 penalty weight on the certificate")
    s.add_argument("--key-input", type=int, default=0)
    s.add_argument("--cache", action="store_true", help="read and write the certificate cache")
    s.add_argument("--cert-dir")
    s.add_argument("--out")
    _add_behavior_flags(s, SWEEP_PRESET)
    s.set_defaults(func=cmd_certificate)
    e = csub.add_parser("eval")
    e.add_argument("certificate")
    e.add_argument("--behavior", required=True)
    e.set_defaults(func=cmd_certificate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; 2 is reserved for protocol aborts
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, BehaviorError, GuessError, ProtocolError, SdpError, npa.NpaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
