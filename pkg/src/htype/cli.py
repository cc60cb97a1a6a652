"""Command line entry point: ``htype <area> <action> [options]``.

Exit status is 0 on success, 1 on usage or input errors and 2 when an
estimate suite fails (non-finite ratio, residual over tolerance or
quadrature exhaustion).  Plain numbers are printed with 17 significant
digits; reports are JSON or CSV.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time

import numpy as np

from .algebra import AxiomViolation, HTypeGroup, load_group, parse_group_spec
from .geometry import (
    DomainError,
    GeodesicCoords,
    cc_distance_from_identity,
    jacobian_A,
    phi,
    phi_inverse,
    phi_norms,
)
from .kernel import KernelEvaluator, QuadratureConfig, QuadratureFailure
from .polynomial import k2_ratio, parse_rational
from . import verification as V

DEFAULT_SEED = 20240101


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def fmt(v) -> str:
    return format(float(v), ".17g")


def _vector(text, flag):
    try:
        return np.array([float(s) for s in text.split(",")], dtype=float)
    except ValueError:
        raise UsageError(f"{flag}: expected comma separated numbers, got {text!r}")


def _group(args) -> HTypeGroup:
    src = getattr(args, "file", None) or args.group
    if src is None:
        raise UsageError("--group: a group is required (heisenberg:N, quaternionic:K or a JSON file)")
    try:
        return load_group(src) if getattr(args, "file", None) else parse_group_spec(src)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"--group: cannot read {src!r}: {exc}")


def _evaluator(G, args) -> KernelEvaluator:
    kw = {}
    if getattr(args, "rel_tol", None) is not None:
        kw["rel_tol"] = args.rel_tol
    if getattr(args, "abs_tol", None) is not None:
        kw["abs_tol"] = args.abs_tol
    return KernelEvaluator(G, QuadratureConfig(**kw))


def _check_dims(G, x=None, z=None, u=None, eta=None):
    for name, v, k in (("--x", x, 2 * G.n), ("--z", z, G.m), ("--u", u, 2 * G.n),
                       ("--eta", eta, G.m)):
        if v is not None and v.shape != (k,):
            raise UsageError(f"{name}: expected {k} components for {G.name}, got {v.size}")


def _positive_t(args):
    if not args.t > 0:
        raise UsageError("--t: time must be positive")
    return args.t


# -- group ------------------------------------------------------------------

def cmd_group_validate(args, out):
    G = _group(args)
    print(f"ok {G.name} n={G.n} m={G.m} Q={G.Q}", file=out)
    return 0


def cmd_group_export(args, out):
    G = _group(args)
    print(json.dumps(G.to_json(), indent=2, sort_keys=True), file=out)
    return 0


# -- kernel -----------------------------------------------------------------

def cmd_kernel_eval(args, out):
    G = _group(args)
    x, z = _vector(args.x, "--x"), _vector(args.z, "--z")
    _check_dims(G, x=x, z=z)
    E = _evaluator(G, args)
    rk = E.radial(_positive_t(args), np.linalg.norm(x), np.linalg.norm(z))
    print(fmt(rk.value), file=out)
    if args.verbose:
        grad, gradz, hat = E.kernel_gradients(args.t, (x, z))
        print("error " + fmt(rk.error), file=out)
        print("grad " + ",".join(fmt(v) for v in grad), file=out)
        print("grad_z " + ",".join(fmt(v) for v in gradz), file=out)
        print("grad_hat " + ",".join(fmt(v) for v in hat), file=out)
    return 0


def cmd_kernel_mass(args, out):
    G = _group(args)
    E = _evaluator(G, args)
    print(fmt(E.total_mass(_positive_t(args))), file=out)
    return 0


def cmd_kernel_grid(args, out):
    G = _group(args)
    E = _evaluator(G, args)
    t = _positive_t(args)
    d = np.linspace(args.d_max / args.n, args.d_max, args.n)
    rho = np.linspace(0.0, 2 * math.pi, args.n + 1)[1:-1]
    D, R = np.meshgrid(d, rho, indexing="ij")
    nx, nz = phi_norms(D / R, R)
    rk = E.radial(t, nx.ravel(), nz.ravel())
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["d", "rho", "x_norm", "z_norm", "p", "grad_norm", "grad_z_norm"])
    grad = np.hypot(rk.a * nx.ravel(), 0.5 * rk.b * nz.ravel() * nx.ravel())
    for row in zip(D.ravel(), R.ravel(), nx.ravel(), nz.ravel(), rk.value, grad,
                   np.abs(rk.b) * nz.ravel()):
        w.writerow([fmt(v) for v in row])
    return 0


# -- geodesy ----------------------------------------------------------------

def cmd_geodesy_dist(args, out):
    G = _group(args)
    x, z = _vector(args.x, "--x"), _vector(args.z, "--z")
    _check_dims(G, x=x, z=z)
    print(fmt(cc_distance_from_identity(G, (x, z))), file=out)
    return 0


def cmd_geodesy_phi(args, out):
    G = _group(args)
    u, eta = _vector(args.u, "--u"), _vector(args.eta, "--eta")
    _check_dims(G, u=u, eta=eta)
    g = phi(G, GeodesicCoords(u, eta))
    print("x " + ",".join(fmt(v) for v in g.x), file=out)
    print("z " + ",".join(fmt(v) for v in g.z), file=out)
    return 0


def cmd_geodesy_phi_inv(args, out):
    G = _group(args)
    x, z = _vector(args.x, "--x"), _vector(args.z, "--z")
    _check_dims(G, x=x, z=z)
    c = phi_inverse(G, (x, z))
    print("u " + ",".join(fmt(v) for v in c.u), file=out)
    print("eta " + ",".join(fmt(v) for v in c.eta), file=out)
    return 0


def cmd_geodesy_jacobian(args, out):
    G = _group(args)
    print(fmt(jacobian_A(G, args.r, args.rho)), file=out)
    return 0


# -- poly -------------------------------------------------------------------

def cmd_poly_k2(args, out):
    G = _group(args)
    try:
        ts = [parse_rational(s) for s in args.t.split(",")]
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"--t: expected rationals such as 1/3, got {args.t!r}")
    if args.format == "csv":
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["n", "t", "k2_exact_num", "k2_exact_den", "k2_float"])
        for t in ts:
            k = k2_ratio(G, t)
            w.writerow([G.n, str(t), k.numerator, k.denominator, fmt(k)])
    else:
        for t in ts:
            print(str(k2_ratio(G, t)), file=out)
    return 0


# -- verify -----------------------------------------------------------------

def _run_check(name, G, args):
    E = _evaluator(G, args)
    level = args.level
    seed = args.seed
    t = _positive_t(args)
    if name == "p1":
        return [V.check_p1_estimate(G, V.EstimateGrid(level=level), E)]
    if name == "gradient":
        return list(V.check_gradient_estimates(G, V.EstimateGrid(level=level, axes=False), E))
    if name == "jacobian":
        return [V.check_A_asymptotics(G, level)]
    if name == "lemma":
        return V.check_geodesic_integral_lemma(G, level=level, evaluator=E)
    if name == "projection":
        return [V.check_projection_identity(G, seed=seed, evaluator=E)]
    if name in ("commutation", "byparts"):
        reps = V.check_identity_suites(G, t, seed, evaluator=E)
        return [reps[0]] if name == "commutation" else list(reps[1:])
    if name == "scan":
        fam = V.TestFunctionFamily.random(G, args.size, seed)
        return [V.scan_gradient_inequality(fam, t, E)]
    if name == "optimal":
        return [V.optimal_constant_report(G)]
    return V.verify_all(G, t, seed, level, E)


def _write_reports(reports, G, args, out):
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimate_id", "kind", "passed", "min_ratio", "max_ratio", "n_points",
                    "argmin", "argmax", "failures"])
        for r in reports:
            j = r.to_json()
            w.writerow([r.estimate_id, r.kind, r.passed, fmt(r.min_ratio), fmt(r.max_ratio),
                        r.n_points, json.dumps(j["argmin"], sort_keys=True),
                        json.dumps(j["argmax"], sort_keys=True), len(r.failures)])
        text = buf.getvalue()
    else:
        doc = {
            "group": G.to_json(),
            "config": {"t": args.t, "seed": args.seed, "level": args.level},
            "reports": [r.to_json() for r in reports],
            "passed": all(r.passed for r in reports),
        }
        if not args.no_timestamp:
            doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        for r in reports:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.estimate_id} "
                  f"[{fmt(r.min_ratio)}, {fmt(r.max_ratio)}]", file=out)
    else:
        out.write(text)


def cmd_verify(args, out):
    G = _group(args)
    try:
        reports = _run_check(args.check, G, args)
    except QuadratureFailure as exc:
        print(f"quadrature failure: {exc}", file=sys.stderr)
        return 2
    _write_reports(reports, G, args, out)
    return 0 if all(r.passed for r in reports) else 2


# -- parser -----------------------------------------------------------------

CHECKS = {
    "p1": "p_1 against (1 + d^(2n-m-1)) / (1 + (|x| d)^(n-1/2)) exp(-d^2/4)",
    "gradient": "|grad p_1| and |grad^ p_1| against (1 + d) p_1, |grad_z p_1| against p_1",
    "jacobian": "A(r, rho) against r^(2m) rho^(2(m+n)) (2 pi - rho)^(2n-1)",
    "lemma": "int_1^(2pi/|eta|) p_1(u, t eta) A(u, t|eta|) t^q dt against p_1 A / (|u||eta|)^2",
    "projection": "T(x) grad p_1 = (grad - grad^) p_1 / 2",
    "commutation": "grad^ P_t f(0) = P_t(grad^ f)(0)",
    "byparts": "int (grad f) p_1 = -int (grad p_1) f and the grad^ version",
    "scan": "|grad P_t f(0)| <= K P_t(|grad f|)(0) over random polynomials",
    "optimal": "maximum of k_2(t) for f = x1 + z1 x2",
    "all": "every check above",
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="htype", description="Heat kernel and gradient estimates on H-type groups.")
    areas = p.add_subparsers(dest="area", parser_class=_Parser, required=True)

    def group_opt(sp, required=True):
        sp.add_argument("--group", required=required,
                        help="heisenberg:N, quaternionic:K or a JSON file with n, m, J")

    def quad_opts(sp):
        sp.add_argument("--rel-tol", type=float, help="relative kernel quadrature tolerance")
        sp.add_argument("--abs-tol", type=float,
                        help="absolute tolerance in units of the kernel peak t^(-Q/2)")

    g = areas.add_parser("group", help="build and check structure matrices")
    ga = g.add_subparsers(dest="action", parser_class=_Parser, required=True)
    sp = ga.add_parser("validate", help="check J_j skew, J_j^2 = -I and J_i J_j + J_j J_i = 0")
    group_opt(sp, required=False)
    sp.add_argument("--file", help="JSON file with n, m and the list J")
    sp.set_defaults(func=cmd_group_validate)
    sp = ga.add_parser("export", help="print the group as JSON")
    group_opt(sp)
    sp.set_defaults(func=cmd_group_export)

    k = areas.add_parser("kernel", help="subelliptic heat kernel p_t")
    ka = k.add_subparsers(dest="action", parser_class=_Parser, required=True)
    sp = ka.add_parser("eval", help="p_t(x, z) from the Bessel-reduced lambda integral")
    group_opt(sp)
    sp.add_argument("--t", type=float, required=True)
    sp.add_argument("--x", required=True, help="comma separated horizontal coordinates")
    sp.add_argument("--z", required=True, help="comma separated center coordinates")
    sp.add_argument("--verbose", action="store_true", help="also print error and gradients")
    quad_opts(sp)
    sp.set_defaults(func=cmd_kernel_eval)
    sp = ka.add_parser("mass", help="int p_t dm in geodesic coordinates (should be 1)")
    group_opt(sp)
    sp.add_argument("--t", type=float, default=1.0)
    quad_opts(sp)
    sp.set_defaults(func=cmd_kernel_mass)
    sp = ka.add_parser("grid", help="CSV table of p_t and gradient norms over (d, rho)")
    group_opt(sp)
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--d-max", type=float, default=4.0)
    sp.add_argument("--n", type=int, default=16, help="points per axis")
    quad_opts(sp)
    sp.set_defaults(func=cmd_kernel_grid)

    geo = areas.add_parser("geodesy", help="geodesic coordinates and distance")
    gea = geo.add_subparsers(dest="action", parser_class=_Parser, required=True)
    sp = gea.add_parser("dist", help="d(0, (x, z)) = |u||eta| through the inverse chart")
    group_opt(sp)
    sp.add_argument("--x", required=True)
    sp.add_argument("--z", required=True)
    sp.set_defaults(func=cmd_geodesy_dist)
    sp = gea.add_parser("phi", help="x = (I - exp(J_eta)) u, z = |u|^2/2 (1 - sin|eta|/|eta|) eta")
    group_opt(sp)
    sp.add_argument("--u", required=True)
    sp.add_argument("--eta", required=True)
    sp.set_defaults(func=cmd_geodesy_phi)
    sp = gea.add_parser("phi-inv", help="inverse chart; needs x != 0 and z != 0")
    group_opt(sp)
    sp.add_argument("--x", required=True)
    sp.add_argument("--z", required=True)
    sp.set_defaults(func=cmd_geodesy_phi_inv)
    sp = gea.add_parser("jacobian", help="Haar density A(r, rho) in geodesic coordinates")
    group_opt(sp)
    sp.add_argument("--r", type=float, required=True, help="|u|")
    sp.add_argument("--rho", type=float, required=True, help="|eta|, in (0, 2 pi)")
    sp.set_defaults(func=cmd_geodesy_jacobian)

    poly = areas.add_parser("poly", help="exact polynomial heat semigroup")
    pa = poly.add_subparsers(dest="action", parser_class=_Parser, required=True)
    sp = pa.add_parser("k2", help="k_2(t) = |grad P_t f(0)|^2 / P_t(|grad f|^2)(0), "
                                  "f = x1 + z1 x2, in exact arithmetic")
    group_opt(sp)
    sp.add_argument("--t", required=True, help="rational time(s) such as 1/3 or 0,1/3,1")
    sp.add_argument("--format", choices=("text", "csv"), default="text")
    sp.set_defaults(func=cmd_poly_k2)

    ver = areas.add_parser("verify", help="estimate and identity suites",
                           description="\n".join(f"{k}: {v}" for k, v in CHECKS.items()),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    ver.add_argument("check", choices=list(CHECKS), help="which check to run")
    group_opt(ver)
    ver.add_argument("--t", type=float, default=1.0, help="semigroup time for P_t checks")
    ver.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ver.add_argument("--level", type=int, default=0, help="grid refinement level")
    ver.add_argument("--size", type=int, default=20, help="test family size for scan")
    ver.add_argument("--format", choices=("json", "csv"), default="json")
    ver.add_argument("--out", help="write the report here and print a summary")
    ver.add_argument("--no-timestamp", action="store_true",
                     help="omit the timestamp so identical runs give identical files")
    quad_opts(ver)
    ver.set_defaults(func=cmd_verify, action=None)
    return p


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, out)
    except UsageError as exc:
        print(f"htype: error: {exc}", file=sys.stderr)
        return 1
    except AxiomViolation as exc:
        print(f"htype: invalid group: {exc}", file=sys.stderr)
        return 1
    except (DomainError, ValueError, ZeroDivisionError) as exc:
        print(f"htype: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
