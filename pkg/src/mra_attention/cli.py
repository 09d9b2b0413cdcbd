"""Command-line harness: ``mra-attn {gen,approx,sweep,bounds,haar}``.

Every command writes CSV whose first lines are ``#`` comments echoing the
tool version and an equivalent command line.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .attention import (
    DEFAULT_DENSE_CAP,
    AttentionInputs,
    attention_entropy,
    exact_attention,
    relative_error,
    softmax_rows,
)
from .baselines import (
    coefficient_histogram,
    frame_truncate,
    haar2d_decompose,
    haar2d_reconstruct,
    histogram_csv,
    keep_count,
    lowrank_svd,
    rpca_block_solution,
    topk_sparse,
)
from .bounds import (
    block_scores,
    check_lemma1,
    check_mu_squared,
    check_prop1,
    csv_header,
    haar_column_bound,
    jensen_gap_check,
    range_bound,
    BoundReport,
)
from .matvec import approx_attention, normalize
from .plan import FULL, SPARSE_ONLY, ComponentId, ResolutionSchedule, assemble_dense
from .tensor_io import GeneratorSpec, generate, read_tensor, write_tensor

METHODS = ("mra", "mra-s", "svd", "sparse", "rpca", "haar")

WORKLOAD_NOTE = (
    "workload matching: MRA refines m1 blocks of b^2 entries == sparse keeps "
    "m1*b^2 entries == SVD rank ceil(m1*b^2/(2n)) == rpca keeps m1 blocks == "
    "haar keeps m1*b^2 coefficients; m1 = ceil(fraction*(n/b)^2)"
)


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def csv_line(values) -> str:
    return ",".join(fmt(v) for v in values)


def int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------


def _add_generator_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_argument_group("generator")
    g.add_argument("--kind", choices=("gaussian", "clustered", "peaked"),
                   required=required, default=None if required else "gaussian")
    g.add_argument("--n", type=int, default=None if required else 128, required=required)
    g.add_argument("--d", type=int, default=None if required else 16, required=required)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--clusters", type=int, default=1)
    g.add_argument("--tau", type=float, default=0.1)
    g.add_argument("--gain", type=float, default=1.0)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q", type=Path, help="query matrix (MRT1 or .csv)")
    p.add_argument("--k", type=Path, help="key matrix")
    p.add_argument("--v", type=Path, help="value matrix")
    p.add_argument("--logit-scale", type=float, default=1.0)
    p.add_argument("--logit-bias", type=float, default=0.0)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.add_argument("--out", type=Path, help="output CSV path (default stdout)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--cap", type=int, default=DEFAULT_DENSE_CAP,
                   help="largest n for dense reference work")
    _add_generator_flags(p)


def _add_schedule(p: argparse.ArgumentParser, scales="32,1", budgets="64") -> None:
    p.add_argument("--scales", type=int_list, default=int_list(scales))
    p.add_argument("--budgets", type=int_list, default=int_list(budgets))
    p.add_argument("--variant", choices=("full", "sparse-only"), default="full")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mra-attn", description="Multiresolution attention approximation toolkit"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write seeded Q, K, V matrices")
    _add_generator_flags(p, required=True)
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("approx", help="approximate attention and report error")
    _add_common(p)
    _add_schedule(p)
    p.add_argument("--no-check-dense", dest="check_dense", action="store_false")
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("sweep", help="compare methods over a parameter grid")
    _add_common(p)
    p.add_argument("--param", choices=("budget", "entropy", "keepfrac"), default="budget")
    p.add_argument("--grid", type=float_list, default=float_list("0,0.25,0.5,1"),
                   help="workload fractions (budget/keepfrac) or gains (entropy)")
    p.add_argument("--fraction", type=float, default=0.25,
                   help="fixed workload fraction for the entropy sweep")
    p.add_argument("--block", type=int, default=32, help="coarse block size b")
    p.add_argument("--methods", default="mra,mra-s,svd,sparse")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="check the error bounds on an input")
    _add_common(p)
    _add_schedule(p, scales="8,1", budgets="16")
    p.add_argument("--p-norm", type=float, default=2.0)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("haar", help="Haar / frame / low rank / sparse thresholding")
    _add_common(p)
    p.add_argument("--keep", type=float_list, default=float_list("0.05,0.1"))
    p.add_argument("--hist-out", type=Path, help="write Haar coefficient histogram CSV")
    p.add_argument("--bins", type=int, default=40)
    p.set_defaults(func=cmd_haar)
    return parser


def to_argv(args: argparse.Namespace) -> list[str]:
    """Equivalent command line for a parsed namespace."""
    out = [args.command]
    for key, val in sorted(vars(args).items()):
        if key in ("command", "func") or val is None:
            continue
        flag = "--" + key.replace("_", "-")
        if key == "check_dense":
            if not val:
                out.append("--no-check-dense")
            continue
        if isinstance(val, list):
            val = ",".join(map(str, val))
        out.extend([flag, str(val)])
    return out


def header_lines(args: argparse.Namespace, extra: tuple[str, ...] = ()) -> list[str]:
    lines = [f"# mra-attn {__version__}", "# command: " + " ".join(to_argv(args))]
    lines.extend(f"# {e}" for e in extra)
    return lines


class Output:
    def __init__(self, path: Optional[Path]):
        self.path = path
        self.lines: list[str] = []

    def write(self, line: str) -> None:
        self.lines.append(line)

    def flush(self) -> None:
        text = "\n".join(self.lines) + "\n"
        if self.path is None:
            sys.stdout.write(text)
        else:
            self.path.write_text(text)


def load_inputs(args: argparse.Namespace) -> AttentionInputs:
    if any(getattr(args, k) is not None for k in ("q", "k", "v")):
        if not all(getattr(args, k) is not None for k in ("q", "k", "v")):
            raise SystemExit("error: --q, --k and --v must be given together")
        q, k, v = (read_tensor(getattr(args, n)) for n in ("q", "k", "v"))
    else:
        q, k, v = generate(_generator_spec(args))
    if args.dtype == "f32":
        q, k, v = (m.astype(np.float32).astype(np.float64) for m in (q, k, v))
    return AttentionInputs(q, k, v, args.logit_scale, args.logit_bias)


def _generator_spec(args) -> GeneratorSpec:
    return GeneratorSpec(
        kind=args.kind, n=args.n, d=args.d, seed=args.seed, sigma=args.sigma,
        clusters=args.clusters, tau=args.tau, gain=args.gain,
    )


def _variant(args) -> str:
    return SPARSE_ONLY if args.variant == "sparse-only" else FULL


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    q, k, v = generate(_generator_spec(args))
    dtype = np.float32 if args.dtype == "f32" else np.float64
    prefix = args.out_prefix
    if prefix.endswith(("/", "\\")):
        Path(prefix).mkdir(parents=True, exist_ok=True)
    for name, m in (("Q", q), ("K", k), ("V", v)):
        path = f"{prefix}{name}.mrt"
        write_tensor(m.astype(dtype), path)
        print(path)
    return 0


APPROX_COLUMNS = (
    "n", "d", "scales", "budgets", "variant", "rel_error", "mu_evals",
    "predicted_mu_evals", "uncovered_rows", "wall_time_ms",
)


def cmd_approx(args) -> int:
    inputs = load_inputs(args)
    schedule = ResolutionSchedule(tuple(args.scales), tuple(args.budgets))
    schedule.validate_for(inputs.n)
    t0 = time.perf_counter()
    out = approx_attention(inputs, schedule, _variant(args))
    wall = (time.perf_counter() - t0) * 1e3
    rel = float("nan")
    if args.check_dense and inputs.n <= args.cap:
        rel = relative_error(out.Z_hat, exact_attention(inputs, cap=args.cap).Z)
    o = Output(args.out)
    for line in header_lines(args, ("wall_time_ms is the only non-deterministic column",)):
        o.write(line)
    o.write(",".join(APPROX_COLUMNS))
    o.write(csv_line([
        inputs.n, inputs.d, "|".join(map(str, schedule.scales)),
        "|".join(map(str, schedule.budgets)), args.variant, rel,
        sum(out.diagnostics.mu_evals.values()),
        sum(schedule.predicted_mu_evals(inputs.n).values()),
        out.diagnostics.uncovered_row_count, f"{wall:.3f}",
    ]))
    o.flush()
    return 0


# -- sweep -------------------------------------------------------------------


def _dense_output(Ahat: np.ndarray, V: np.ndarray) -> np.ndarray:
    Z, _ = normalize(Ahat @ V, Ahat.sum(axis=1))
    return Z


def _method_runner(inputs: AttentionInputs, b: int) -> Callable:
    """Return ``run(method, fraction) -> (workload_entries, Z_hat, A_hat)``."""
    n = inputs.n
    P = inputs.logits()
    shift = float(P.max())
    A = np.exp(P - shift)
    g = n // b

    def run(method: str, fraction: float):
        m1 = min(g * g, math.ceil(round(fraction * g * g, 9)))
        entries = m1 * b * b
        if method in ("mra", "mra-s"):
            variant = FULL if method == "mra" else SPARSE_ONLY
            out = approx_attention(inputs, ResolutionSchedule((b, 1), (m1,)), variant)
            Ahat = assemble_dense(out.plan) * math.exp(-shift)
            return entries, out.Z_hat, Ahat
        if method == "sparse":
            Ahat, _ = topk_sparse(A, entries)
        elif method == "svd":
            rank = math.ceil(entries / (2 * n))
            Ahat = lowrank_svd(A, min(rank, n))[0] if rank else np.zeros_like(A)
        elif method == "rpca":
            Ahat = rpca_block_solution(P - shift, b, m1).S_dense
        elif method == "haar":
            frac = entries / (n * n)
            Ahat, _ = haar2d_reconstruct(haar2d_decompose(A), frac, reference=A)
        else:
            raise ValueError(f"unknown method {method!r}")
        return entries, _dense_output(Ahat, inputs.V), Ahat

    return run, A


SWEEP_COLUMNS = (
    "method", "param", "value", "workload_entries", "rel_error", "matrix_rel_error",
    "entropy",
)


def cmd_sweep(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise SystemExit(f"error: unknown method(s) {bad}; choose from {METHODS}")
    o = Output(args.out)
    for line in header_lines(args, (WORKLOAD_NOTE,)):
        o.write(line)
    o.write(",".join(SWEEP_COLUMNS))

    def emit(inputs, value, fraction):
        Z = exact_attention(inputs, cap=args.cap).Z
        run, A = _method_runner(inputs, args.block)
        H = attention_entropy(inputs, cap=args.cap)
        for method in methods:
            entries, Zhat, Ahat = run(method, fraction)
            o.write(csv_line([
                method, args.param, value, entries, relative_error(Zhat, Z),
                relative_error(Ahat, A), H,
            ]))

    if args.param == "entropy":
        for gain in args.grid:
            args_g = argparse.Namespace(**{**vars(args), "kind": "peaked", "gain": gain})
            emit(load_inputs(args_g), gain, args.fraction)
    else:
        inputs = load_inputs(args)
        for frac in args.grid:
            emit(inputs, frac, frac)
    o.flush()
    return 0


# -- bounds ------------------------------------------------------------------


def bound_reports(inputs: AttentionInputs, b: int, m1: int, p: float = 2.0) -> list[BoundReport]:
    """All bound checks for one input at coarse scale ``b``."""
    n = inputs.n
    if n % b:
        raise ValueError(f"coarse scale {b} does not divide n={n}")
    P = inputs.logits()
    reports = []
    g = n // b
    for x in range(1, g + 1):
        for y in range(1, g + 1):
            c = ComponentId(b, x, y)
            ms, mu = block_scores(P, c)
            reports.append(check_lemma1(P, c, ms, mu))
            measured = reports[-1].r
            hold = range_bound(inputs.Q, inputs.K, c, p, inputs.logit_scale)
            reports.append(BoundReport(name="range_bound", lhs=measured, rhs=hold))
            reports.append(check_mu_squared(P, c))
            reports.append(jensen_gap_check(P[c.rows, c.cols]))
    if b >= 2:
        reports.append(check_prop1(
            inputs.Q, inputs.K, b, m1, inputs.logit_scale, inputs.logit_bias
        ))
    if n % 2 == 0:
        Qs = inputs.Q * inputs.logit_scale
        for j in range(n):
            reports.append(haar_column_bound(Qs, inputs.K, j, p))
    return reports


def cmd_bounds(args) -> int:
    inputs = load_inputs(args)
    b = args.scales[0]
    m1 = args.budgets[0] if args.budgets else 0
    reports = bound_reports(inputs, b, m1, args.p_norm)
    violations = sum(not r.holds for r in reports)
    o = Output(args.out)
    for line in header_lines(args):
        o.write(line)
    o.write(csv_header())
    for r in reports:
        o.write(r.csv_row())
    o.write(f"# summary: checks={len(reports)} violations={violations}")
    o.flush()
    return 0 if violations == 0 else 1


# -- haar --------------------------------------------------------------------


def cmd_haar(args) -> int:
    inputs = load_inputs(args)
    A, _ = softmax_rows(inputs.logits(args.cap))
    n = inputs.n
    coeffs = haar2d_decompose(A)
    o = Output(args.out)
    for line in header_lines(args, ("matrix: row-normalized attention; error ||Ahat-A||_F/||A||_F",)):
        o.write(line)
    o.write("method,keep_fraction,budget,rel_error")
    for frac in args.keep:
        k = keep_count(frac, n)
        o.write(csv_line(["haar", frac, k, haar2d_reconstruct(coeffs, frac, reference=A)[1]]))
        o.write(csv_line(["mra-frame", frac, k, frame_truncate(A, frac)[1]]))
        rank = max(1, min(n, round(frac * n)))
        o.write(csv_line(["lowrank", frac, rank, lowrank_svd(A, rank)[1]]))
        o.write(csv_line(["sparse", frac, k, topk_sparse(A, k)[1]]))
    o.flush()
    if args.hist_out is not None:
        edges, counts = coefficient_histogram(coeffs.flat(), bins=args.bins)
        args.hist_out.write_text(histogram_csv(edges, counts))
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with threadpool_limits(limits=max(1, getattr(args, "threads", 1))):
            return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
