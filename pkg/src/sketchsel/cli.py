"""``sketchsel`` command line.

Exit status: 0 on success, 1 for user errors (bad flags, missing or malformed
files, invalid models), 2 for numeric failures.  Outputs are written through
a temp file and renamed, so a failed command leaves nothing behind.
"""
import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__, graphs, harness, lmi, signals
from .errors import GenerationError, ModelError, NumericError
from .matrix_io import atomic_write, read_matrix, write_matrix
from .samplers import METHODS, RelaxParams, select
from .sketch import (DIRECT, INVERSE, Selection, make_problem, objective_direct,
                     relaxed_objective, sketch_direct_noiseless, sketch_inverse_noiseless)

log = logging.getLogger("sketchsel")

LARGE_N = 2000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Provenance
# ---------------------------------------------------------------------------

_NON_CONFIG = {"out", "func", "verbose", "record_time"}


def config_hash(args):
    items = {k: v for k, v in sorted(vars(args).items()) if k not in _NON_CONFIG}
    for key, val in list(items.items()):
        if isinstance(val, str) and os.path.isfile(val):
            with open(val, "rb") as fh:
                items[key] = [val, hashlib.sha256(fh.read()).hexdigest()]
    blob = json.dumps(items, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def header(args, what):
    return (f"sketchsel {__version__} {what}\n"
            f"seed: {getattr(args, 'seed', None)}\n"
            f"config_hash: {config_hash(args)}")


def _write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    with atomic_write(path) as fh:
        fh.write(text)


def _require_files(*paths):
    for p in paths:
        if p is not None and not os.path.isfile(p):
            raise ModelError(f"no such file: {p}")


# ---------------------------------------------------------------------------
# Problem construction shared by design and export-sdp
# ---------------------------------------------------------------------------

def _graph_from_args(args, seed):
    if args.model == "sbm":
        sizes = args.communities or [args.n // 4] * 3 + [args.n - 3 * (args.n // 4)]
        return graphs.gen_sbm(args.n, sizes, args.p_in, args.p_out, seed)
    if args.model == "er":
        return graphs.gen_er(args.n, args.p_edge, seed)
    if args.model == "sw":
        return graphs.gen_smallworld(args.n, args.p_e, args.p_r, seed)
    if args.model == "sensor":
        return graphs.gen_sensor_knn(args.n, args.knn, seed)
    raise ModelError(f"unknown model {args.model!r}")


def builtin_instance(name, n=96, k=10, m=12, seed=0, order="desc"):
    """``(H, R_x, V_k, direction)`` for the named built-in instance."""
    if name == "sensor":
        g = graphs.gen_sensor_knn(n, 4, seed)
        basis = graphs.spectral_basis(g.adjacency, k, order)
        H = harness.sensor_operator(n, m, seed)
        direction = INVERSE
    elif name in ("sbm-gft", "er-gft"):
        if name == "sbm-gft":
            g = graphs.gen_sbm(n, [n // 4] * 3 + [n - 3 * (n // 4)], 0.8, 0.2, seed)
        else:
            g = graphs.gen_er(n, 0.1, seed)
        basis = graphs.spectral_basis(g.adjacency, k, order)
        H = basis.V_k.T.copy()
        direction = INVERSE
    else:
        raise ModelError(f"unknown instance {name!r}")
    R_x = signals.covariance_from_model(signals.BandlimitedModel.white(basis))
    return H, R_x, basis.V_k, direction


def _problem_from_args(args):
    if args.instance:
        H, R_x, V_k, default_dir = builtin_instance(args.instance, args.n or 96, args.k, args.m, args.instance_seed)
    else:
        if args.H is None or args.Rx is None:
            raise ModelError("either --instance or both --H and --Rx are required")
        _require_files(args.H, args.Rx, args.Rw)
        H, R_x = read_matrix(args.H), read_matrix(args.Rx)
        V_k, default_dir = None, DIRECT
    n = R_x.shape[0]
    if args.Rw is not None:
        _require_files(args.Rw)
        R_w = read_matrix(args.Rw)
    elif args.sigma2 is not None:
        R_w = args.sigma2 * np.eye(n)
    elif args.instance:
        R_w = 1e-3 * np.eye(n)
    else:
        raise ModelError("give the noise covariance with --Rw or --sigma2")
    direction = args.direction or default_dir
    problem = make_problem(direction, H, R_x, R_w, args.p, args.constrained, args.ridge, V_k)
    return problem


def _add_problem_flags(sp):
    g = sp.add_argument_group("problem")
    g.add_argument("--instance", choices=["sensor", "sbm-gft", "er-gft"],
                   help="built-in instance instead of matrix files")
    g.add_argument("--n", type=int, help="instance size (default 96)")
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--m", type=int, default=12, help="rows of the sensor operator")
    g.add_argument("--instance-seed", type=int, default=0)
    g.add_argument("--H", help="operator CSV (m x n)")
    g.add_argument("--Rx", help="signal covariance CSV")
    g.add_argument("--Rw", help="noise covariance CSV")
    g.add_argument("--sigma2", type=float, help="white noise power when --Rw is absent")
    g.add_argument("--ridge", type=float, default=0.0, help="add ridge*I to R_w")
    g.add_argument("--direction", choices=[DIRECT, INVERSE])
    g.add_argument("--constrained", action="store_true", help="column-sampling sketch H C^T")
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_graph(args):
    if args.edge_list:
        _require_files(args.edge_list)
        g = graphs.read_edge_list(args.edge_list, args.n)
    else:
        if args.n is None:
            raise ModelError("--n is required")
        g = _graph_from_args(args, args.seed)
    write_matrix(args.out, g.weights, header(args, "graph"))
    log.info("graph n=%d edges=%d connected=%s", g.n, g.edge_count(), g.is_connected())


def cmd_gen_signals(args):
    _require_files(args.graph, args.template_file)
    W = read_matrix(args.graph)
    g = graphs.Graph(W)
    shift = g.laplacian() if args.shift == "laplacian" else g.adjacency
    basis = graphs.spectral_basis(shift, args.k, args.order)
    if args.template == "white":
        model = signals.BandlimitedModel.white(basis)
    else:
        if args.template_file is None:
            raise ModelError("--template file needs --template-file")
        model = signals.BandlimitedModel(basis, read_matrix(args.template_file))
    X = signals.sample_signals(model, args.count, args.seed)
    if args.sigma2:
        X = signals.add_noise(X, signals.NoiseModel.white(g.n, args.sigma2), args.seed)
    write_matrix(args.out, X, header(args, "signals"))


def cmd_design(args):
    problem = _problem_from_args(args)
    params = RelaxParams(args.max_iters, args.step_init, args.tol, args.alpha)
    outcome = select(problem, args.method, args.p, seed=args.seed, params=params)
    d = outcome.to_dict()
    if not args.record_time:
        d["wall_time_s"] = None
    d["provenance"] = {"version": __version__, "seed": args.seed, "config_hash": config_hash(args)}
    _write_json(args.out, d)
    print(f"{outcome.method}: objective {outcome.objective:.6g}, indices {list(outcome.selection.indices)}")


def cmd_evaluate(args):
    _require_files(args.outcome, args.signals, args.H, args.noisy)
    with open(args.outcome) as fh:
        try:
            outcome = harness_outcome(json.load(fh), os.path.dirname(args.outcome))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ModelError(f"{args.outcome}: malformed outcome ({exc})") from exc
    H = read_matrix(args.H)
    X = read_matrix(args.signals)
    if args.noisy:
        Xn = read_matrix(args.noisy)
    elif args.sigma2:
        Xn = signals.add_noise(X, signals.NoiseModel.white(X.shape[0], args.sigma2), args.seed)
    else:
        Xn = X
    from .sketch import ls_operator

    ref = H if outcome.direction == DIRECT else ls_operator(H)
    res = harness.run_stream(outcome, ref, X, Xn)
    out = {"rel_mse": res["rel_mse"], "err_energy": res["err_energy"],
           "ref_energy": res["ref_energy"], "count": res["count"],
           "provenance": {"version": __version__, "seed": args.seed, "config_hash": config_hash(args)}}
    if args.record_time:
        out["timings"] = {"sketch_time_s": res["sketch_time_s"], "full_time_s": res["full_time_s"]}
    if args.out:
        _write_json(args.out, out)
    print(f"rel_mse {res['rel_mse']:.6g} over {res['count']} signals")


def harness_outcome(d, base_dir):
    from .sketch import DesignOutcome

    return DesignOutcome.from_dict(d, base_dir)


def cmd_sweep(args):
    _require_files(args.config)
    try:
        config = harness.ExperimentConfig.from_json(args.config)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ModelError(f"{args.config}: {exc}") from exc
    if args.seed is not None:
        config.seed = args.seed
    n = int(config.graph.get("n", 0))
    if n > LARGE_N and not args.large:
        raise ModelError(f"graph n={n} exceeds {LARGE_N}; pass --large to allow it")
    table = harness.run_experiment(config)
    text = table.to_csv()
    json_path = os.path.splitext(args.out)[0] + ".json"
    with atomic_write(json_path) as fh:
        fh.write(table.to_json() + "\n")
    with atomic_write(args.out) as fh:
        fh.write(text)
    failed = [r for r in table.rows if r["status"] != "ok"]
    for r in failed:
        print(f"cell {r['method']} p={r['p']} sigma={r['sigma_coeff']}: {r['status']}", file=sys.stderr)
    print(f"{len(table.rows)} rows written to {args.out}")


def cmd_export_sdp(args):
    problem = _problem_from_args(args)
    prob = lmi.build_lmi(problem, args.alpha, args.variant)
    prob.meta.update({"version": __version__, "seed": args.seed, "config_hash": config_hash(args)})
    lmi.write_sdpa(prob, args.out)
    print(f"{prob.n_vars} variables, blocks {[b.size for b in prob.blocks]}")


def selftest_residuals():
    """Residuals of the three exactness identities on built-in instances."""
    from .rng import substream
    from .sketch import ls_operator

    # noiseless direct sketch on an SBM graph with H = V_k^T
    H, _, V_k, _ = builtin_instance("sbm-gft", 96, 10)
    gen = substream(0, "selftest")
    sel = Selection(96, tuple(sorted(gen.choice(96, 10, replace=False).tolist())))
    X = V_k @ gen.standard_normal((10, 200))
    Hs = sketch_direct_noiseless(H, V_k, sel)
    r_direct = np.linalg.norm(Hs @ X[sel.array] - H @ X) / np.linalg.norm(H @ X)

    # noiseless inverse sketch on the sensor instance
    H, _, V_k, _ = builtin_instance("sensor", 96, 10, 12)
    Hs = sketch_inverse_noiseless(H, V_k, sel)
    X = V_k @ gen.standard_normal((10, 200))
    ref = ls_operator(H) @ X
    r_inverse = np.linalg.norm(Hs @ X[sel.array] - ref) / np.linalg.norm(ref)

    # relaxed objective at a binary point against the exact objective
    n = 10
    A = gen.standard_normal((n, n))
    R_x, R_w = A @ A.T / n, 0.1 * np.eye(n)
    Hm = gen.standard_normal((3, n))
    problem = make_problem(DIRECT, Hm, R_x, R_w, 4)
    s = Selection(n, (1, 4, 6, 9))
    exact = objective_direct(Hm, R_x, R_w, s)
    r_wood = abs(relaxed_objective(problem, s.mask) - exact) / exact
    return {"direct_noiseless": float(r_direct), "inverse_noiseless": float(r_inverse),
            "relaxation_identity": float(r_wood)}


def cmd_selftest(args):
    res = selftest_residuals()
    for name, val in res.items():
        print(f"{name:22s} {val:.3e}")
    if max(res.values()) > 1e-8:
        raise NumericError("selftest residual above 1e-8")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="sketchsel", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sketchsel {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sp = sub.add_parser("gen-graph", help="generate a random graph weight matrix")
    sp.add_argument("--model", choices=["sbm", "er", "sw", "sensor"], default="sbm")
    sp.add_argument("--n", type=int)
    sp.add_argument("--communities", type=lambda s: [int(v) for v in s.split(",")])
    sp.add_argument("--p-in", type=float, default=0.8)
    sp.add_argument("--p-out", type=float, default=0.2)
    sp.add_argument("--p-edge", type=float, default=0.1)
    sp.add_argument("--p-e", type=float, default=0.2)
    sp.add_argument("--p-r", type=float, default=0.7)
    sp.add_argument("--knn", type=int, default=4)
    sp.add_argument("--edge-list", help="read i,j,w lines instead of generating")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_graph)

    sp = sub.add_parser("gen-signals", help="draw bandlimited signals on a graph")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--template", choices=["white", "file"], default="white")
    sp.add_argument("--template-file")
    sp.add_argument("--shift", choices=["adjacency", "laplacian"], default="adjacency")
    sp.add_argument("--order", choices=["desc", "asc", "abs-desc"], default="desc")
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--sigma2", type=float, default=0.0, help="add white noise of this power")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_signals)

    sp = sub.add_parser("design", help="select samples and build the sketch")
    _add_problem_flags(sp)
    sp.add_argument("--method", choices=METHODS, required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--max-iters", type=int, default=500)
    sp.add_argument("--step-init", type=float, default=1.0)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--record-time", action="store_true", help="store wall time in the outcome")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_design)

    sp = sub.add_parser("evaluate", help="relative MSE of a design on a signal file")
    sp.add_argument("--outcome", required=True)
    sp.add_argument("--signals", required=True, help="clean signals CSV (n x count)")
    sp.add_argument("--H", required=True)
    sp.add_argument("--noisy", help="observed signals CSV; default adds --sigma2 noise")
    sp.add_argument("--sigma2", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--record-time", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="run an experiment grid from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, help="override the config master seed")
    sp.add_argument("--large", action="store_true", help=f"allow graphs above n={LARGE_N}")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("export-sdp", help="write the selection LMI in SDPA sparse format")
    _add_problem_flags(sp)
    sp.add_argument("--variant", choices=lmi.VARIANTS)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_sdp)

    sp = sub.add_parser("selftest", help="check the exactness identities")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return 0 if not exc.code else 1
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (ModelError, GenerationError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ArithmeticError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
