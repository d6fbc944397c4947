"""Command-line interface: ``tensorpart <subcommand> ...``.

Exit codes: 0 success, 1 a ``verify`` check failed, 2 input error, 3 the
solver did not converge (outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time

import numpy as np

from . import __version__
from .coordfile import CoordinateFormatError, read_coo, write_coo
from .graphpart import spectral_bipartition
from .lowrank import ApproxResult, StationarityReport, best_of_restarts, check_stationarity
from .normalize import normalize_slices, verify_normalization
from .structure import DEFAULT_RANKS, SCORE_THRESHOLD, partition
from .synth import PATTERNS, SynthSpec, generate
from .tensor import contract_mode2, permute

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3

log = logging.getLogger("tensorpart")


class InputError(Exception):
    """Bad user input; reported with exit code 2."""


# argument helpers ------------------------------------------------------


def _rank(text):
    try:
        parts = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"rank must look like 2,2,1, got {text!r}") from None
    if len(parts) != 3 or parts[0] != parts[1] or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"rank must be r1,r1,r3 with positive entries, got {text!r}")
    return parts


def _rank_list(text):
    ranks = [_rank(t) for t in text.split(";") if t.strip()]
    if not ranks:
        raise argparse.ArgumentTypeError("rank list is empty")
    return ranks


def _positive_float(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _nonneg_float(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text!r}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tensorpart",
        description="Partition sparse (1,2)-symmetric 3-tensors via best rank-(2,2,r) approximation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="degree-normalize every slice")
    p.add_argument("input", help="coordinate file, '-' for stdin")
    p.add_argument("output", help="coordinate file, '-' for stdout")
    p.add_argument("--report", help="write the degree profile as JSON")

    def solver_args(q, default_seed=0):
        q.add_argument("--tol", type=_positive_float, default=1e-12, help="relative objective change (default 1e-12)")
        q.add_argument("--stat-tol", type=_positive_float, default=1e-9, help="stationarity residual bound (default 1e-9)")
        q.add_argument("--max-iter", type=int, default=200, help="maximum sweeps (default 200)")
        q.add_argument("--seed", type=int, default=default_seed, help="random seed (default 0)")

    p = sub.add_parser("approx", help="best rank-(r1,r1,r3) approximation")
    p.add_argument("input", nargs="?", default="-", help="coordinate file (default stdin)")
    p.add_argument("--rank", type=_rank, default=(2, 2, 1), help="r1,r1,r3 (default 2,2,1)")
    solver_args(p)
    p.add_argument("--restarts", type=int, default=1, help="independent starts, best kept (default 1)")
    p.add_argument("--out", default="-", help="result JSON (default stdout)")
    p.add_argument("--export-vectors", help="CSV with the columns of U and W")

    p = sub.add_parser("partition", help="rank scan, indicator vectors and classification")
    p.add_argument("input", nargs="?", default="-", help="coordinate file (default stdin)")
    p.add_argument(
        "--ranks", type=_rank_list, default=[tuple(r) for r in DEFAULT_RANKS],
        help="ranks to scan, e.g. '2,2,1;2,2,2;2,2,3' (default)",
    )
    solver_args(p)
    p.add_argument("--rel-gain", type=_nonneg_float, default=0.01, help="core-norm gain threshold (default 0.01)")
    p.add_argument("--threshold", type=_positive_float, default=SCORE_THRESHOLD, help="pattern score threshold")
    p.add_argument("--refine", type=int, default=0, help="scan cuts within +-k of the sign change (default off)")
    p.add_argument("--rotation", choices=("norms", "lsq"), default="norms", help="indicator rotation method")
    p.add_argument("--corner-size", type=int, help="corner blocks of this size instead of the cut blocks")
    p.add_argument("--out", default="-", help="report JSON (default stdout)")
    p.add_argument("--export-vectors", help="CSV with reordered U, indicator vectors and W")
    p.add_argument("--export-reordered", help="coordinate file of the reordered tensor")

    p = sub.add_parser("baseline", help="spectral bipartition of one slice")
    p.add_argument("input", nargs="?", default="-", help="coordinate file (default stdin)")
    p.add_argument("--slice", type=int, default=1, help="1-based slice index (default 1)")
    p.add_argument("--window", type=int, default=10, help="cuts scanned around the sign change (default 10)")
    p.add_argument("--cost", choices=("cut", "conductance"), default="cut")
    p.add_argument("--out", default="-", help="partition JSON (default stdout)")

    p = sub.add_parser("synth", help="generate a planted instance")
    p.add_argument("--pattern", choices=PATTERNS, required=True)
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--density", type=_nonneg_float, help="edge probability inside blocks")
    p.add_argument("--perturb", type=_nonneg_float, help="relative perturbation density")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="coordinate file (default stdout)")
    p.add_argument("--truth", help="ground-truth JSON")

    p = sub.add_parser("verify", help="check invariants of a tensor and optionally a result")
    p.add_argument("input", help="coordinate file, '-' for stdin")
    p.add_argument("--result", help="approx result JSON to check against the tensor")
    p.add_argument("--stat-tol", type=_positive_float, default=1e-6)
    p.add_argument("--out", default="-", help="check report JSON (default stdout)")
    return parser


# output helpers --------------------------------------------------------


def _envelope(args, command, payload, started):
    config = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("func",)}
    out = {
        "tool": "tensorpart",
        "version": __version__,
        "command": command,
        "seed": getattr(args, "seed", None),
        "config": config,
        "timing": {"seconds": time.perf_counter() - started},
    }
    out.update(payload)
    return out


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def _write_json(obj, target):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"
    if target == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(target, "w", encoding="utf-8") as fh:
            fh.write(text)


def _write_columns(path, header, columns):
    length = max(len(c) for c in columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(length):
            w.writerow([_cell(c, r) for c in columns])


def _cell(column, r):
    if r >= len(column):
        return ""
    if np.issubdtype(np.asarray(column).dtype, np.integer):
        return str(int(column[r]))
    return repr(float(column[r]))


def _read_tensor(path):
    try:
        return read_coo(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from None


# subcommands -----------------------------------------------------------


def cmd_normalize(args, started):
    A = _read_tensor(args.input)
    try:
        B, profile = normalize_slices(A)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    for w in profile.warnings:
        log.warning(w)
    write_coo(B, args.output)
    if args.report:
        _write_json(_envelope(args, "normalize", {"degrees": profile.to_dict()}, started), args.report)
    return EXIT_OK


def _solver_opts(args):
    return {"tol": args.tol, "max_iter": args.max_iter, "stat_tol": args.stat_tol}


def cmd_approx(args, started):
    A = _read_tensor(args.input)
    r1, _, r3 = args.rank
    if not A.sym12:
        raise InputError("approx needs a (1,2)-symmetric tensor (header flag sym12)")
    if not (1 <= r1 < A.dims[0] and 1 <= r3 <= A.dims[2]):
        raise InputError(f"rank {args.rank} out of range for dims {A.dims}")
    if args.restarts < 1:
        raise InputError("--restarts must be at least 1")
    res = best_of_restarts(A, r1, r3, restarts=args.restarts, seed=args.seed, **_solver_opts(args))
    _write_json(_envelope(args, "approx", {"result": res.to_dict()}, started), args.out)
    if args.export_vectors:
        cols = [np.arange(1, max(A.dims[0], A.dims[2]) + 1)]
        header = ["index"] + [f"U{c + 1}" for c in range(r1)] + [f"W{c + 1}" for c in range(r3)]
        cols += [res.U[:, c] for c in range(r1)] + [res.W[:, c] for c in range(r3)]
        _write_columns(args.export_vectors, header, cols)
    if not res.converged:
        log.error("solver did not converge in %d sweeps", res.iterations)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_partition(args, started):
    A = _read_tensor(args.input)
    if not A.sym12:
        raise InputError("partition needs a (1,2)-symmetric tensor (header flag sym12)")
    for r in args.ranks:
        if r[0] != 2 or r[2] > A.dims[2] or A.dims[0] < 3:
            raise InputError(f"rank {r} not usable for dims {A.dims}")
    try:
        rep = partition(
            A,
            ranks=args.ranks,
            rel_gain=args.rel_gain,
            threshold=args.threshold,
            refine=args.refine,
            corner_size=args.corner_size,
            rotation=args.rotation,
            seed=args.seed,
            **_solver_opts(args),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    payload = {"report": rep.to_dict(), "tensor_norm": A.norm()}
    _write_json(_envelope(args, "partition", payload, started), args.out)
    ext = rep.extraction
    if args.export_vectors:
        res = rep.working_result
        order = rep.perm12.order
        header = ["position", "index"] + [f"U{c + 1}" for c in range(2)]
        header += ["indicator1", "indicator2", "contrast"]
        cols = [np.arange(1, A.dims[0] + 1), order + 1]
        cols += [res.U[order, c] for c in range(2)]
        cols += [ext.indicator_U[:, 0], ext.indicator_U[:, 1], ext.contrast_U]
        r3 = res.W.shape[1]
        order3 = rep.perm3.order
        header += ["slice_index"] + [f"W{c + 1}" for c in range(r3)]
        cols += [order3 + 1] + [res.W[order3, c] for c in range(r3)]
        _write_columns(args.export_vectors, header, cols)
    if args.export_reordered:
        write_coo(permute(A, rep.perm12, rep.perm3), args.export_reordered)
    if not rep.converged[rep.working_rank]:
        log.error("solver did not converge at the working rank %s", rep.working_rank)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_baseline(args, started):
    A = _read_tensor(args.input)
    if not 1 <= args.slice <= A.dims[2]:
        raise InputError(f"--slice must lie in 1..{A.dims[2]}")
    if A.dims[0] != A.dims[1]:
        raise InputError("baseline needs square slices")
    try:
        part = spectral_bipartition(A.slice_matrix(args.slice - 1), window=args.window, cost=args.cost)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _write_json(_envelope(args, "baseline", {"partition": part.to_dict()}, started), args.out)
    return EXIT_OK if part.converged else EXIT_NOT_CONVERGED


def cmd_synth(args, started):
    spec = SynthSpec(args.pattern, args.m, args.n, density=args.density, perturb=args.perturb, seed=args.seed)
    try:
        A, truth = generate(spec)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    write_coo(A, args.out, comments=[f"tensorpart {__version__} synth {json.dumps(spec.to_dict(), sort_keys=True)}"])
    if args.truth:
        _write_json(_envelope(args, "synth", {"truth": truth.to_dict()}, started), args.truth)
    return EXIT_OK


def _load_result(path, A):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read result {path}: {exc}") from None
    r = data.get("result", data)
    try:
        U = np.asarray(r["U"], dtype=float)
        W = np.asarray(r["W"], dtype=float)
        core = np.asarray(r["core"], dtype=float)
    except (KeyError, TypeError, ValueError):
        raise InputError(f"{path} does not hold U, W and core") from None
    if U.ndim != 2 or W.ndim != 2 or U.shape[0] != A.dims[0] or W.shape[0] != A.dims[2]:
        raise InputError("result factors do not match the tensor dimensions")
    if core.shape != (U.shape[1], U.shape[1], W.shape[1]):
        raise InputError("result core does not match the factor ranks")
    return ApproxResult(
        U=U, W=W, core=core,
        objective_history=list(r.get("objective_history", [])),
        stationarity=StationarityReport(float("nan"), float("nan")),
        iterations=int(r.get("iterations", 0)),
        converged=bool(r.get("converged", False)),
    )


def _residual_norm(A, U, W, core):
    """``||A - (U, U, W) . core||`` without forming the dense tensor."""
    i, j, k = A.subs[:, 0], A.subs[:, 1], A.subs[:, 2]
    approx = np.einsum("abc,ea,eb,ec->e", core, U[i], U[j], W[k], optimize=True)
    G = U.T @ U
    H = W.T @ W
    full = float(np.einsum("abc,ad,be,cf,def->", core, G, G, H, core, optimize=True))
    sq = full - float(np.sum(approx**2)) + float(np.sum((A.vals - approx) ** 2))
    return float(np.sqrt(max(sq, 0.0)))


def cmd_verify(args, started):
    A = _read_tensor(args.input)
    checks = []

    def check(name, ok, value=None):
        checks.append({"name": name, "passed": bool(ok), "value": _jsonable(value)})

    check("sym12_flag", A.sym12)
    check("symmetric_entries", A.is_symmetric())
    check("finite", bool(np.all(np.isfinite(A.vals))))
    nonneg = A.is_nonnegative()
    check("nonnegative", nonneg)
    diag = A.subs[:, 0] == A.subs[:, 1]
    check("hollow", not np.any(diag), int(np.count_nonzero(diag)))
    if A.sym12 and nonneg:
        lam = verify_normalization(A)
        nonempty = lam[lam != 0]
        dev = float(np.max(np.abs(nonempty - 1.0))) if nonempty.size else 0.0
        check("normalized_slices", dev <= 1e-8, dev)
    if args.result:
        res = _load_result(args.result, A)
        U, W, core = res.U, res.W, res.core
        orth = max(
            float(np.abs(U.T @ U - np.eye(U.shape[1])).max()),
            float(np.abs(W.T @ W - np.eye(W.shape[1])).max()),
        )
        check("orthonormal_factors", orth <= 1e-10, orth)
        T = contract_mode2(A, U)
        fresh = np.einsum("ia,kib,kc->abc", U, T, W, optimize=True)
        scale = max(float(np.linalg.norm(fresh)), 1e-300)
        dcore = float(np.linalg.norm(core - fresh)) / scale
        check("core_consistent", dcore <= 1e-10, dcore)
        sym = float(np.abs(core - core.transpose(1, 0, 2)).max())
        check("core_slices_symmetric", sym <= 1e-10 * scale, sym)
        st = check_stationarity(A, res)
        check("stationarity", st.max() <= args.stat_tol, st.to_dict())
        resid = _residual_norm(A, U, W, core)
        a2 = A.norm() ** 2
        pyth = abs(a2 - float(np.sum(core**2)) - resid**2) / a2
        check("pythagoras", pyth <= 1e-10, pyth)
        hist = np.asarray(res.objective_history, dtype=float)
        mono = float(np.min(np.diff(hist))) if hist.size > 1 else 0.0
        check("monotone_history", mono >= -1e-12, mono)
    ok = all(c["passed"] for c in checks)
    _write_json(_envelope(args, "verify", {"checks": checks, "passed": ok}, started), args.out)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


COMMANDS = {
    "normalize": cmd_normalize,
    "approx": cmd_approx,
    "partition": cmd_partition,
    "baseline": cmd_baseline,
    "synth": cmd_synth,
    "verify": cmd_verify,
}


def run(argv=None):
    """Run the CLI and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="tensorpart: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    started = time.perf_counter()
    try:
        return COMMANDS[args.command](args, started)
    except CoordinateFormatError as exc:
        print(f"tensorpart: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"tensorpart: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
