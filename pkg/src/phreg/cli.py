"""``phreg`` command line: validate, analyze, regularize and generate systems.

Systems travel as one JSON bundle ``{"n", "m", "E", "A", "B", "C"}`` with the
optional realization fields ``Q, J, R, G, P``.  Every command prints a JSON
report on stdout.  Exit codes: 0 success, 1 solvability failure, 2 input error,
3 verification failure.
"""

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    analyze_pencil,
    check_con1,
    check_con1_1,
    check_con2,
    check_r1,
    is_completely_observable,
    max_derivative_rank,
)
from .condense import form_summary
from .errors import (
    InfeasibleRequest,
    ObservabilityFailed,
    PHRegError,
    SolvabilityError,
    VerificationFailed,
)
from .matops import DEFAULT_TOL, RankTolerance, numerical_rank
from .regularize import (
    regularize_combined,
    regularize_derivative,
    regularize_derivative_with_rank,
    regularize_proportional,
)
from .sysmodel import (
    DescriptorSystem,
    PHRealization,
    closed_loop,
    compress_outputs,
    random_ph_system,
    validate_ph,
)

EXIT_OK, EXIT_SOLVABILITY, EXIT_INPUT, EXIT_VERIFICATION = 0, 1, 2, 3
REALIZATION_FIELDS = ("Q", "J", "R", "G", "P")


class InputError(Exception):
    pass


# --------------------------------------------------------------------------
# JSON emission: 17 significant digits, stable key order, atomic writes
# --------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set)):
        items = sorted(obj) if isinstance(obj, set) else obj
        return [_plain(v) for v in items]
    return obj


def _fmt_float(x):
    if math.isnan(x) or math.isinf(x):
        return json.dumps(str(x))
    return format(x, ".17g")


def dumps(obj, indent=0):
    """JSON text with every float written to 17 significant digits.

    Matrices (lists of numeric lists) are kept one row per line.
    """
    obj = _plain(obj)
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        body = ",\n".join(f"{inner}{json.dumps(k)}: {dumps(v, indent + 1)}" for k, v in obj.items())
        return "{\n" + body + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_atomic(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# loading
# --------------------------------------------------------------------------


def _matrix(doc, name, shape):
    raw = doc.get(name)
    if raw is None:
        raise InputError(f"missing field {name!r}")
    try:
        M = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"field {name!r} is not a rectangular numeric array") from exc
    if M.size == 0:
        M = M.reshape(shape)
    if M.shape != shape:
        raise InputError(f"field {name!r} has shape {M.shape}, expected {shape}")
    if not np.all(np.isfinite(M)):
        raise InputError(f"field {name!r} has non-finite entries")
    return M


def parse_bundle(doc):
    """``(DescriptorSystem, PHRealization or None)`` from a bundle dict."""
    if not isinstance(doc, dict):
        raise InputError("bundle must be a JSON object")
    try:
        E0 = np.array(doc["E"], dtype=float)
        B0 = np.array(doc["B"], dtype=float)
    except KeyError as exc:
        raise InputError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InputError("E and B must be rectangular numeric arrays") from exc
    n = int(doc.get("n", E0.shape[0] if E0.ndim else 0))
    m = int(doc.get("m", B0.shape[1] if B0.ndim == 2 else 0))
    if n < 1 or m < 0:
        raise InputError(f"invalid sizes n={n}, m={m}")
    mats = {k: _matrix(doc, k, s) for k, s in (("E", (n, n)), ("A", (n, n)), ("B", (n, m)), ("C", (m, n)))}
    sysm = DescriptorSystem(**mats)
    present = [k for k in REALIZATION_FIELDS if k in doc]
    real = None
    if present:
        if len(present) != len(REALIZATION_FIELDS):
            missing = [k for k in REALIZATION_FIELDS if k not in doc]
            raise InputError(f"validation requires realization fields (missing {', '.join(missing)})")
        shapes = {"Q": (n, n), "J": (n, n), "R": (n, n), "G": (n, m), "P": (n, m)}
        real = PHRealization(**{k: _matrix(doc, k, shapes[k]) for k in REALIZATION_FIELDS})
    return sysm, real


def _read_mm_dir(path):
    import scipy.io

    d = Path(path)
    if not d.is_dir():
        raise InputError(f"{path} is not a directory")
    doc, digest = {}, hashlib.sha256()
    for name in ("E", "A", "B", "C") + REALIZATION_FIELDS:
        f = d / f"{name}.mtx"
        if f.exists():
            data = f.read_bytes()
            digest.update(name.encode() + b"\0" + data)
            try:
                M = scipy.io.mmread(str(f))
            except Exception as exc:
                raise InputError(f"cannot read {f}: {exc}") from exc
            M = M.toarray() if hasattr(M, "toarray") else np.asarray(M)
            doc[name] = np.atleast_2d(M).tolist()
    for name in ("E", "A", "B", "C"):
        if name not in doc:
            raise InputError(f"{name}.mtx not found in {path}")
    doc["n"] = len(doc["E"])
    doc["m"] = len(doc["B"][0])
    return doc, digest.hexdigest()


def load(args):
    if getattr(args, "mm_dir", None):
        doc, digest = _read_mm_dir(args.mm_dir)
    else:
        if not args.path:
            raise InputError("an input bundle path (or --mm-dir) is required")
        try:
            data = Path(args.path).read_bytes()
        except OSError as exc:
            raise InputError(f"cannot read {args.path}: {exc.strerror}") from exc
        digest = hashlib.sha256(data).hexdigest()
        try:
            doc = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise InputError(f"cannot parse {args.path}: {exc}") from exc
    try:
        sysm, real = parse_bundle(doc)
    except (ValueError, PHRegError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(str(exc)) from exc
    return sysm, real, digest


def bundle(sysm, real=None):
    doc = {"n": sysm.n, "m": sysm.m, "E": sysm.E, "A": sysm.A, "B": sysm.B, "C": sysm.C}
    if real is not None:
        doc.update({k: getattr(real, k) for k in REALIZATION_FIELDS})
    return doc


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _rank_tol(args):
    return RankTolerance(relative=args.tol) if args.tol is not None else DEFAULT_TOL


def _header(args, digest):
    return {
        "command": args.command,
        "input_digest": digest,
        "seed": getattr(args, "seed", None),
        "version": __version__,
    }


def cmd_validate(args):
    sysm, real, digest = load(args)
    if real is None:
        raise InputError(f"validation requires realization fields ({', '.join(REALIZATION_FIELDS)})")
    tol = 1e-8 if args.tol is None else args.tol
    rep = validate_ph(sysm, real, tol)
    report = _header(args, digest)
    report.update(
        verdict=rep.verdict,
        failed=rep.failed,
        residuals=rep.residuals,
        tolerance=tol,
        rank_B=rep.rank_B,
        rank_C=rep.rank_C,
    )
    return (EXIT_OK if rep.verdict else EXIT_SOLVABILITY), report


def cmd_analyze(args):
    sysm, _, digest = load(args)
    tol = _rank_tol(args)
    pencil = analyze_pencil(sysm.E, sysm.A, tol)
    report = _header(args, digest)
    report.update(
        regular=pencil.regular,
        index=pencil.index_label,
        rank_E=pencil.rank_E,
        finite_eig_count=pencil.finite_eig_count,
        con1=check_con1(sysm, tol).holds,
        con1_1=check_con1_1(sysm, tol).holds,
        con2=check_con2(sysm, tol).holds,
        max_derivative_rank=max_derivative_rank(sysm, tol),
        rank_B=numerical_rank(sysm.B, tol),
        tolerance={"relative": tol.relative, "absolute": tol.absolute},
    )
    observable = is_completely_observable(sysm, tol)
    report["completely_observable"] = observable
    if observable:
        r = sysm.n if args.rank is None else args.rank
        try:
            v = check_r1(sysm, r, tol)
            report["mu"] = v.rank("mu")
            report["feasible_ranks_derivative"] = v.details["feasible_ranks"]
            report["parity_constraint"] = bool(v.parity_constraint)
            rb = report["rank_B"]
            report["feasible_ranks_combined"] = list(range(sysm.n - rb, sysm.n + 1))
            if args.rank is not None:
                report["rank_query"] = {"r": r, "derivative_feasible": v.holds}
        except PHRegError as exc:
            report["r1_error"] = f"{type(exc).__name__}: {exc}"
    elif args.rank is not None:
        report["rank_query"] = {"r": args.rank, "derivative_feasible": None, "reason": "not completely observable"}
    return EXIT_OK, report


def _synthesis_report(syn, sysm, real, dump_forms, tol):
    v = syn.verification
    out = {
        "synthesis_mode": syn.mode,
        "F": syn.F,
        "K": syn.K,
        "target_rank": syn.target_rank,
        "achieved_rank": syn.achieved_rank,
        "verification": {
            "success": v.success,
            "regular": v.regular,
            "index": v.index,
            "rank_E": v.rank_E,
            "finite_eig_count": v.finite_eig_count,
            "ph_preserved": v.ph_preserved,
            "ph_residuals": v.ph_residuals,
            "symmetric_K": v.symmetric_K,
            "psd_K": v.psd_K,
        },
        "notes": {k: v_ for k, v_ in syn.notes.items()},
    }
    if dump_forms:
        red = compress_outputs(sysm, None, tol)[0]
        summaries = []
        for f in syn.forms:
            target = sysm if f.kind in ("EABC0", "DerivStaircase") else red
            summaries.append(form_summary(f, target))
        out["forms"] = summaries
    return out


def cmd_regularize(args):
    sysm, real, digest = load(args)
    tol = _rank_tol(args)
    report = _header(args, digest)
    report["mode"] = args.mode
    try:
        if args.mode == "p":
            syn = regularize_proportional(sysm, real, tol)
        elif args.mode == "d":
            syn = regularize_derivative(sysm, real, tol, seed=args.seed)
        elif args.mode == "pd":
            syn = regularize_combined(sysm, real, args.rank, tol)
        else:
            syn = regularize_derivative_with_rank(sysm, real, args.rank, tol)
    except (SolvabilityError, ObservabilityFailed) as exc:
        name = type(exc).__name__
        msg = str(exc) if str(exc).startswith(name) else f"{name}: {exc}"
        report.update(success=False, error=name, message=msg)
        verdict = getattr(exc, "verdict", None)
        if verdict is not None:
            report["verdict"] = {
                "condition": verdict.condition_id,
                "ranks": dict(verdict.computed_ranks),
                "details": verdict.details,
            }
        print(msg, file=sys.stderr)
        return EXIT_SOLVABILITY, report
    except VerificationFailed as exc:
        report.update(success=False, error="VerificationFailed", message=str(exc))
        if exc.report is not None:
            report["residuals"] = exc.report.ph_residuals
            report["closed_loop"] = {
                "regular": exc.report.regular,
                "index": exc.report.index,
                "rank_E": exc.report.rank_E,
            }
        print(str(exc), file=sys.stderr)
        return EXIT_VERIFICATION, report
    except PHRegError as exc:
        # numerical breakdown inside a construction; nothing was verified
        report.update(success=False, error=type(exc).__name__, message=str(exc))
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION, report
    report["success"] = True
    report.update(_synthesis_report(syn, sysm, real, args.dump_forms, tol))
    if args.out:
        cl, cl_real = closed_loop(sysm, real, F=syn.F, K=syn.K)
        write_atomic(args.out, dumps(bundle(cl, cl_real)) + "\n")
        report["output"] = str(args.out)
    return EXIT_OK, report


def cmd_generate(args):
    try:
        sysm, real = random_ph_system(
            args.n, args.m, args.rank_e, args.rank_r, seed=args.seed, singular_Q=args.singular_q
        )
    except InfeasibleRequest as exc:
        raise InputError(str(exc)) from exc
    text = dumps(bundle(sysm, real)) + "\n"
    write_atomic(args.out, text)
    report = {
        "command": "generate",
        "seed": args.seed,
        "version": __version__,
        "output": str(args.out),
        "output_digest": hashlib.sha256(text.encode()).hexdigest(),
        "n": args.n,
        "m": args.m,
        "rank_E": args.rank_e,
        "rank_R": args.rank_r,
    }
    return EXIT_OK, report


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _env_tol():
    raw = os.environ.get("PHREG_TOL")
    if raw is None:
        return None
    try:
        return float(raw)
    except ValueError:
        raise InputError(f"PHREG_TOL is not a number: {raw!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="phreg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"phreg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def inputs(sp):
        sp.add_argument("path", nargs="?", help="JSON system bundle")
        sp.add_argument("--mm-dir", help="directory of Matrix Market files E.mtx, A.mtx, ...")
        sp.add_argument(
            "--tol", type=float, default=None,
            help="tolerance (rank: relative threshold; validate: residual bound); default from PHREG_TOL",
        )

    sp = sub.add_parser("validate", help="check the port-Hamiltonian conditions")
    inputs(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("analyze", help="regularity, index and solvability conditions")
    inputs(sp)
    sp.add_argument("--rank", type=int, default=None, help="target rank to test for derivative feedback")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("regularize", help="synthesize and verify a regularizing feedback")
    inputs(sp)
    sp.add_argument("--mode", choices=("p", "d", "pd", "d-rank"), required=True)
    sp.add_argument("--rank", type=int, default=None, help="target rank(E + BKC) for pd and d-rank")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--dump-forms", action="store_true", help="include condensed-form diagnostics")
    sp.add_argument("--out", help="write the closed-loop bundle here")
    sp.set_defaults(func=cmd_regularize)

    sp = sub.add_parser("generate", help="write a random port-Hamiltonian system")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--rank-e", type=int, required=True)
    sp.add_argument("--rank-r", type=int, default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--singular-q", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "tol", "absent") is None:
            args.tol = _env_tol()
        code, report = args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(dumps({"command": args.command, "success": False, "error": "InputError", "message": str(exc)}))
        return EXIT_INPUT
    print(dumps(report))
    return code


if __name__ == "__main__":
    raise SystemExit(main())
