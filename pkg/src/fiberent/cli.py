"""``fiberent`` command line: one binary, one subcommand per workflow.

Exit codes: 0 success, 1 usage or input error, 2 infeasible problem or failed diagnostic.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Optional

import numpy as np

from . import aliased, closed_form, constraints, empirical, entropy, geometry, realization, solver
from ._io import dumps
from .core import BlockLaw, SupportFace, context_marginal, kernel_of

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2


class InputError(Exception):
    pass


class Infeasible(Exception):
    pass


# -- input --------------------------------------------------------------------

def _read_json(path: str, what: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"{what}: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what}: {path} is not valid JSON ({exc.msg}, line {exc.lineno})") from None


def _load(path: str, what: str, parse):
    data = _read_json(path, what)
    try:
        return parse(data)
    except (KeyError, TypeError, ValueError) as exc:
        msg = exc.args[0] if exc.args else str(exc)
        if isinstance(exc, KeyError):
            msg = f"missing field {msg!r}"
        raise InputError(f"{what}: {msg}") from None


def _features(args) -> constraints.FeatureSet:
    if not args.features:
        raise InputError("--features: a feature file is required")
    return _load(args.features, "--features", constraints.FeatureSet.from_dict)


def _face(args, n_coords: int) -> Optional[SupportFace]:
    if not getattr(args, "face", None):
        return None

    def parse(d):
        mask = d["mask"] if isinstance(d, dict) else d
        if len(mask) != n_coords:
            raise ValueError(f"field 'mask' must have {n_coords} entries, got {len(mask)}")
        return SupportFace(np.asarray(mask, dtype=bool))
    return _load(args.face, "--face", parse)


def _config(args) -> solver.SolverConfig:
    fields = {f.name for f in dataclasses.fields(solver.SolverConfig)}
    data = {}
    if getattr(args, "config", None):
        data = _read_json(args.config, "--config")
        if not isinstance(data, dict):
            raise InputError("--config: expected a JSON object")
        data = data.get("solver", data)
        unknown = sorted(set(data) - fields)
        if unknown:
            raise InputError(f"--config: unknown field {unknown[0]!r}")
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    try:
        return solver.SolverConfig(**data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"--config: {exc}") from None


def _law(path: str, what: str) -> BlockLaw:
    return _load(path, what, BlockLaw.from_dict)


def _floats(text: str, what: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from None


# -- output -------------------------------------------------------------------

def _emit(args, name: str, payload: dict, summary: str, csv: Optional[str] = None, text: Optional[str] = None):
    fmt = args.format
    if fmt == "json":
        body, ext = dumps(payload), "json"
    elif fmt == "csv":
        if csv is None:
            raise InputError(f"--format: csv is not available for {name}")
        body, ext = csv, "csv"
    else:
        body, ext = (text if text is not None else summary.rstrip("\n") + "\n"), "txt"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{name}.{ext}"), "w") as fh:
            fh.write(body if body.endswith("\n") else body + "\n")
        print(summary.rstrip("\n"))
    else:
        sys.stdout.write(body if body.endswith("\n") else body + "\n")
        if fmt != "text":
            print(summary.rstrip("\n"), file=sys.stderr)


def _law_csv(law: BlockLaw) -> str:
    return law.to_csv()


def _solve_summary(res: solver.SolveResult) -> str:
    if res.u_star is None:
        return f"status: {res.status}"
    probs = " ".join(f"{p:.6g}" for p in res.u_star.probs)
    return (f"status: {res.status} after {res.iterations} iterations\n"
            f"entropy rate: {res.value:.12g} nats\nu*: {probs}\n"
            f"projected gradient norm: {res.grad_norm:.3g}")


# -- subcommands --------------------------------------------------------------

def cmd_solve(args) -> int:
    feats = _features(args)
    system = constraints.build_constraint_system(feats, _face(args, feats.n_coords))
    res = solver.maximize(system, _config(args))
    payload = res.to_dict()
    payload["constraints"] = system.report(res.u_star) if res.u_star is not None else None
    summary = _solve_summary(res)
    if args.oracle and res.u_star is not None:
        try:
            bf = solver.brute_force_maximizer(system)
        except solver.OracleScopeError as exc:
            payload["oracle"] = {"error": str(exc)}
            summary += f"\noracle: {exc}"
        else:
            bv = entropy.entropy_rate_value(bf.probs, bf.n_symbols)
            payload["oracle"] = {"u_brute": bf.to_dict(), "value_brute": bv, "value_difference": res.value - bv}
            summary += f"\noracle value: {bv:.12g} (difference {res.value - bv:.3g})"
    _emit(args, "solve", payload, summary, csv=None if res.u_star is None else _law_csv(res.u_star))
    return EXIT_INFEASIBLE if res.status == "infeasible" else EXIT_OK


def cmd_closed_form(args) -> int:
    given = [x is not None for x in (args.pi, args.mu, args.mean)]
    if sum(given) != 1:
        raise InputError("closed-form: give exactly one of --pi, --mu, --mean")
    try:
        if args.pi is not None:
            law, kind = closed_form.iid_maximizer(_floats(args.pi, "--pi")), "iid"
        elif args.mean is not None:
            law, kind = closed_form.binary_fixed_mean_maximizer(args.mean)[0], "binary-fixed-mean"
        else:
            mu = _load(args.mu, "--mu", closed_form.RBlockLaw.from_dict)
            law, kind = closed_form.markov_extension(mu, reproject=args.reproject), "markov-extension"
    except closed_form.NotStationaryError as exc:
        raise InputError(f"--mu: {exc}") from None
    except ValueError as exc:
        raise InputError(str(exc)) from None
    value = entropy.entropy_rate(law).value_nats
    _emit(args, "closed_form", {"kind": kind, "u_star": law.to_dict(), "value_nats": value},
          f"{kind}: entropy rate {value:.12g} nats", csv=_law_csv(law))
    return EXIT_OK


def cmd_gap(args) -> int:
    mu = _load(args.mu, "--mu", closed_form.RBlockLaw.from_dict)
    u = _law(args.law, "--law")
    try:
        gap = entropy.gap_fixed_r_block(mu, u)
        star = closed_form.markov_extension(mu)
    except (ValueError, closed_form.NotStationaryError) as exc:
        raise InputError(str(exc)) from None
    cmi = entropy.conditional_mutual_information(u)
    payload = {"gap": gap, "cmi": cmi, "cmi_kl": entropy.conditional_mutual_information_kl(u),
               "u_star": star.to_dict(), "distance_to_u_star": float(np.max(np.abs(u.probs - star.probs)))}
    _emit(args, "gap", payload, f"gap {gap:.12g} nats, CMI {cmi:.12g} nats")
    return EXIT_OK


def cmd_geometry(args) -> int:
    feats = _features(args)
    system = constraints.build_constraint_system(feats, _face(args, feats.n_coords))
    res = solver.maximize(system, _config(args))
    if res.u_star is None:
        _emit(args, "geometry", {"status": res.status}, "infeasible")
        return EXIT_INFEASIBLE
    try:
        chart = geometry.canonical_chart(system, res.u_star)
        sel = geometry.selector_jacobian(chart)
        env = geometry.envelope_check(chart)
        k = chart.xi_directions.shape[0]
        gap = geometry.gap_quadratic_expansion_check(chart, [1e-2, 1e-3]) if k else None
    except geometry.NotDifferentiableError as exc:
        _emit(args, "geometry", {"status": "not differentiable", "error": str(exc)}, str(exc))
        return EXIT_INFEASIBLE
    basis = constraints.tangent_space_basis(system.with_face(SupportFace(res.u_star.probs > 0)))
    nulls = geometry.null_directions(res.u_star, basis)
    payload = {
        "u_star": res.u_star.to_dict(), "value_nats": res.value,
        "tangent_dimension": basis.dimension, "hessian_null_dimension": nulls.dimension,
        "selector_jacobian": sel.matrix, "selector_jacobian_fd": sel.finite_difference,
        "selector_discrepancy": sel.max_discrepancy,
        "DV": env.dv, "DV_fd": env.dv_fd, "D2V": env.d2v, "D2V_fd": env.d2v_fd,
        "envelope_passed": env.passed(),
        "gap_K": None if gap is None else gap.K, "gap_ratios": None if gap is None else gap.ratios,
    }
    summary = (f"tangent dimension {basis.dimension}, Hessian null dimension {nulls.dimension}\n"
               f"selector Jacobian discrepancy {sel.max_discrepancy:.3g}\n"
               f"envelope errors DV {env.dv_error:.3g}, D2V {env.d2v_error:.3g}")
    _emit(args, "geometry", payload, summary)
    return EXIT_OK if env.passed() else EXIT_INFEASIBLE


def _selected_law(args) -> BlockLaw:
    if args.law:
        return _law(args.law, "--law")
    feats = _features(args)
    res = solver.maximize(constraints.build_constraint_system(feats, _face(args, feats.n_coords)), _config(args))
    if res.u_star is None:
        raise Infeasible("feature constraints are infeasible")
    return res.u_star


def cmd_simulate(args) -> int:
    law = _selected_law(args)
    p = kernel_of(law)
    F = realization.build_random_mapping(p)
    eta = context_marginal(law)
    seed = 0 if args.seed is None else args.seed
    if args.thetas:
        hidden = realization.HiddenAction.iid(_floats(args.thetas, "--thetas"))
        path, _ = realization.simulate_with_hidden_action(F, eta, hidden, args.n, seed)
    else:
        path = realization.simulate(F, eta, args.n, seed)
    est = empirical.empirical_block_law(path, law.r)
    counts = est.counts.reshape(-1, law.n_symbols)
    rows = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1)
    dev = float(np.max(np.abs(rows - p.matrix(np.zeros(law.n_symbols)))[p.active])) if p.active.any() else 0.0
    payload = {"header": path.header(), "row_deviation": dev, "symbols": path.symbols}
    text = path.dumps("text" if path.n_symbols <= 10 else "csv")
    _emit(args, "path", payload, f"simulated {len(path)} symbols; max row deviation from p* {dev:.3g}",
          csv=path.dumps("csv"), text=text)
    return EXIT_OK


def cmd_estimate(args) -> int:
    try:
        with open(args.path) as fh:
            path = realization.SamplePath.loads(fh.read())
    except OSError as exc:
        raise InputError(f"--path: cannot read {args.path}: {exc.strerror}") from None
    except (ValueError, KeyError) as exc:
        raise InputError(f"--path: malformed sample path ({exc})") from None
    feats = _features(args)
    if feats.n_symbols != path.n_symbols:
        raise InputError("--features: alphabet does not match the sample path")
    face = _face(args, feats.n_coords)
    try:
        est = empirical.empirical_block_law(path, feats.r)
    except ValueError as exc:
        raise InputError(f"--path: {exc}") from None
    b_hat = empirical.empirical_targets(est, feats)
    if args.reference:
        ref = _law(args.reference, "--reference")
        res = empirical.empirical_maximizer(path, feats, ref, face, args.radius, _config(args))
    else:
        res = solver.maximize(constraints.build_constraint_system(feats.with_targets(b_hat), face), _config(args))
    payload = {"u_hat": est.u_hat, "windows": est.windows, "b_hat": b_hat,
               "stationarity_residual": est.stationarity_residual(), "result": res.to_dict()}
    _emit(args, "estimate", payload, _solve_summary(res),
          csv=None if res.u_star is None else _law_csv(res.u_star))
    return EXIT_INFEASIBLE if res.status == "infeasible" else EXIT_OK


DEFAULT_EXPERIMENT = {"a": 0.2, "b": 0.2, "n_grid": [1000, 10000, 100000, 1000000], "seeds": 20, "radius": 0.2}


def cmd_experiment(args) -> int:
    spec = dict(DEFAULT_EXPERIMENT)
    if args.config:
        data = _read_json(args.config, "--config")
        data = data.get("experiment", data) if isinstance(data, dict) else data
        if not isinstance(data, dict):
            raise InputError("--config: expected a JSON object")
        unknown = sorted(set(data) - set(spec))
        if unknown:
            raise InputError(f"--config: unknown field {unknown[0]!r}")
        spec.update(data)
    try:
        a, b = float(spec["a"]), float(spec["b"])
        kernel, eta = empirical.binary_chain(a, b)
        n_grid = [int(n) for n in spec["n_grid"]]
        seeds = spec["seeds"]
        seeds = list(range(int(seeds))) if isinstance(seeds, (int, float)) else [int(s) for s in seeds]
    except (TypeError, ValueError) as exc:
        raise InputError(f"--config: {exc}") from None
    if args.seed is not None:
        seeds = [args.seed + s for s in seeds]
    feats = constraints.mean_features(a / (a + b))
    report = empirical.consistency_experiment(kernel, eta, feats, n_grid, seeds, radius=float(spec["radius"]))
    payload = {"spec": {**spec, "seeds": seeds}, "summary": report.summary(),
               "cells": [list(row) for row in report.rows]}
    if len(report.rows) == 1:
        path = realization.simulate(realization.build_random_mapping(kernel), eta, n_grid[0], seeds[0])
        payload["result"] = empirical.empirical_maximizer(path, feats, report.u_star,
                                                          radius=float(spec["radius"])).to_dict()
    med = report.medians()
    lines = ["n        median sup error"] + [f"{n:<8d} {v:.6g}" for n, v in med.items()]
    lines.append(f"log-log slope {report.slope():.4g}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "experiment.csv"), "w") as fh:
            fh.write(report.to_csv())
    _emit(args, "experiment", payload, "\n".join(lines), csv=report.to_csv())
    return EXIT_OK


def cmd_alias_demo(args) -> int:
    m = args.m
    if not 0.0 < m < 1.0:
        raise InputError(f"--m: mean must lie in (0, 1), got {m!r}")
    report = aliased.demo_report(m)
    res = solver.maximize(constraints.build_constraint_system(constraints.mean_features(m)), _config(args))
    report["solver_q"] = float(res.u_star.probs[1])
    report["solver_discrepancy"] = abs(report["solver_q"] - report["q_star"])
    fib = report["fiber"]
    summary = "\n".join([
        f"fixed-mean family at m={m:g}: a(q) = q/(1-m), b(q) = q/m, 0 < q < {min(m, 1 - m):g}",
        "h(q) samples: " + ", ".join(f"{row['q']:.4g}:{row['h']:.6g}" for row in report["family"]),
        f"q* = m(1-m) = {report['q_star']:.12g}; a* = {report['a_star']:.12g}, b* = {report['b_star']:.12g}",
        f"h(q*) = {report['h_star']:.12g} nats",
        f"solver q = {report['solver_q']:.12g} (discrepancy {report['solver_discrepancy']:.3g})",
        f"hidden entropy (1/2,1/2) = {fib['hidden_entropy_half']:.12g}, (1/4,1/4) = {fib['hidden_entropy_quarter']:.12g}",
        f"difference {fib['difference']:.12g} nats; identical visible kernel: {fib['kernels_identical']}",
    ])
    curve = None
    if args.plot:
        qs = np.linspace(0, min(m, 1 - m), 202)[1:-1]
        curve = "q,h\n" + "".join(f"{q:.17g},{aliased.visible_entropy_h(m, q):.17g}\n" for q in qs)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            with open(os.path.join(args.out, "alias_curve.csv"), "w") as fh:
                fh.write(curve)
    _emit(args, "alias_demo", report, summary, csv=curve)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="JSON configuration")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--out", metavar="DIR", help="write results into DIR")
    common.add_argument("--format", choices=("json", "csv", "text"), default="json")

    feat = argparse.ArgumentParser(add_help=False)
    feat.add_argument("--features", metavar="FILE", help="FeatureSet JSON")
    feat.add_argument("--face", metavar="FILE", help="support face JSON ({\"mask\": [...]})")

    p = argparse.ArgumentParser(prog="fiberent", description="Entropy-rate maximization on stationary block laws.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common, feat], help="maximize the entropy rate")
    s.add_argument("--oracle", action="store_true", help="compare with the brute-force oracle")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("closed-form", parents=[common], help="closed-form maximizers")
    s.add_argument("--pi", help="one-point marginal, comma separated")
    s.add_argument("--mu", metavar="FILE", help="r-block law JSON")
    s.add_argument("--mean", type=float, help="binary mean")
    s.add_argument("--reproject", action="store_true", help="project mu to shift invariance first")
    s.set_defaults(func=cmd_closed_form)

    s = sub.add_parser("gap", parents=[common], help="gap and conditional mutual information")
    s.add_argument("--mu", metavar="FILE", required=True)
    s.add_argument("--law", metavar="FILE", required=True)
    s.set_defaults(func=cmd_gap)

    s = sub.add_parser("geometry", parents=[common, feat], help="local geometry diagnostics at the maximizer")
    s.set_defaults(func=cmd_geometry)

    s = sub.add_parser("simulate", parents=[common, feat], help="simulate the selected law")
    s.add_argument("--law", metavar="FILE", help="block law JSON (otherwise solve --features)")
    s.add_argument("--n", type=int, default=10000, help="path length")
    s.add_argument("--thetas", help="rotation angles of an i.i.d. uniform hidden action")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate", parents=[common, feat], help="empirical maximizer from a sample path")
    s.add_argument("--path", metavar="FILE", required=True)
    s.add_argument("--reference", metavar="FILE", help="reference block law for the local ball")
    s.add_argument("--radius", type=float, default=0.2)
    s.set_defaults(func=cmd_estimate)

    for name in ("experiment", "pipeline"):
        s = sub.add_parser(name, parents=[common], help="simulate, estimate and solve over an (n, seed) grid")
        s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("alias-demo", parents=[common], help="aliased hidden-state example")
    s.add_argument("--m", type=float, default=0.5)
    s.add_argument("--plot", action="store_true", help="emit the (q, h(q)) curve as CSV")
    s.set_defaults(func=cmd_alias_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
