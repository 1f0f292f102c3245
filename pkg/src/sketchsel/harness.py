"""Streaming evaluation, experiment sweeps and timing."""
import csv
import hashlib
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, graphs, rng
from .errors import ModelError, SketchError
from .linalg import as_matrix
from .matrix_io import read_matrix
from .samplers import METHODS, RANDOMIZED, RelaxParams, select
from .signals import BandlimitedModel, NoiseModel, add_noise, empirical_covariance, sample_signals
from .signals import covariance_from_model
from .sketch import DIRECT, INVERSE, Selection, apply_sketch, make_problem

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Single stream
# ---------------------------------------------------------------------------

def run_stream(outcome, reference_op, batch_clean, batch_noisy):
    """Apply a designed sketch to a batch and compare with the full operator.

    Returns a dict with ``rel_mse``, the two energies it is built from, and
    wall times of the sketched path and of the full ``reference_op`` applied
    to the noisy batch.
    """
    ref = as_matrix(reference_op, "reference_op")
    X = np.ascontiguousarray(batch_clean, dtype=np.float64)
    Xn = np.ascontiguousarray(batch_noisy, dtype=np.float64)
    if X.shape != Xn.shape or ref.shape[1] != X.shape[0] or outcome.H_s.shape[0] != ref.shape[0]:
        raise ModelError("run_stream: operator, sketch and batch dimensions disagree")
    t0 = time.perf_counter()
    y_hat = apply_sketch(outcome.H_s, outcome.selection, Xn)
    t1 = time.perf_counter()
    ref @ Xn
    t2 = time.perf_counter()
    y = ref @ X
    err = float(np.sum((y_hat - y) ** 2))
    energy = float(np.sum(y * y))
    if energy <= 0:
        raise ModelError("reference output has zero energy; relative MSE undefined")
    return {
        "rel_mse": err / energy,
        "err_energy": err,
        "ref_energy": energy,
        "sketch_time_s": t1 - t0,
        "full_time_s": t2 - t1,
        "count": X.shape[1],
    }


def predicted_mse(H_s, sel, reference_op, R_x, R_w):
    """Analytic ``E||H_s C (x + w) - reference_op x||^2`` for a fixed design."""
    idx = sel.array
    E = -np.array(reference_op, dtype=np.float64)
    E[:, idx] += H_s
    return float(np.sum((E @ R_x) * E) + np.sum((H_s @ R_w[np.ix_(idx, idx)]) * H_s))


def jackknife_ratio(num, den):
    """Ratio ``sum(num)/sum(den)`` and its leave-one-out jackknife standard error."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    total = num.sum() / den.sum()
    g = num.size
    if g < 2:
        return float(total), 0.0
    loo = (num.sum() - num) / (den.sum() - den)
    se = math.sqrt((g - 1) / g * np.sum((loo - loo.mean()) ** 2))
    return float(total), se


def measure_speedup(n, p, m, batch_size, seed=0, min_time=0.02, repeats=3):
    """Wall-time ratio of ``H @ X`` (m x n) to the p-sample sketched apply."""
    if not p <= n:
        raise ModelError("measure_speedup needs p <= n")
    gen = rng.substream(seed, "speedup")
    H = gen.standard_normal((m, n))
    H_s = np.ascontiguousarray(gen.standard_normal((m, p)))
    sel = Selection(n, tuple(sorted(gen.choice(n, p, replace=False).tolist())))
    apply_sketch(H_s, sel, np.zeros((n, 1)))  # warm the compiled kernel

    def best(fn, X):
        out = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn(X)
            out = min(out, time.perf_counter() - t0)
        return out

    while True:
        X = gen.standard_normal((n, batch_size))
        t_sketch = best(lambda Z: apply_sketch(H_s, sel, Z), X)
        t_full = best(lambda Z: H @ Z, X)
        if t_sketch >= min_time / 1000 or batch_size >= 10**7:
            break
        batch_size *= 4
    return t_full / t_sketch


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class Trials:
    n_graphs: int = 5
    n_signal_batches: int = 10
    signals_per_batch: int = 100
    n_selection_draws: int = 10
    n_training: int = 500


@dataclass
class ExperimentConfig:
    graph: dict
    k: int
    direction: str
    operator: dict
    p_list: list
    sigma_coeffs: list
    methods: list
    trials: Trials = field(default_factory=Trials)
    seed: int = 0
    constrained: bool = False
    covariance: str = "empirical"
    order: str = "desc"
    relax: RelaxParams = field(default_factory=RelaxParams)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if isinstance(self.trials, dict):
            self.trials = Trials(**self.trials)
        if isinstance(self.relax, dict):
            self.relax = RelaxParams(**self.relax)
        if self.schema_version != SCHEMA_VERSION:
            raise ModelError(f"unsupported schema_version {self.schema_version}; expected {SCHEMA_VERSION}")
        for name in ("p_list", "sigma_coeffs", "methods"):
            if not getattr(self, name):
                raise ModelError(f"config field {name!r} must be a nonempty list")
        for m in self.methods:
            if m not in METHODS:
                raise ModelError(f"unknown method {m!r}")
        if self.direction not in (DIRECT, INVERSE):
            raise ModelError(f"direction must be {DIRECT!r} or {INVERSE!r}")
        if self.covariance not in ("empirical", "model"):
            raise ModelError("covariance must be 'empirical' or 'model'")
        for name, val in asdict(self.trials).items():
            if val < 1:
                raise ModelError(f"trials.{name} must be >= 1")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.setdefault("schema_version", SCHEMA_VERSION)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ModelError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_graph(spec, seed):
    model = spec.get("model")
    n = int(spec["n"])
    if model == "sbm":
        sizes = spec.get("communities") or [n // 4] * 4
        return graphs.gen_sbm(n, sizes, spec.get("p_in", 0.8), spec.get("p_out", 0.2), seed)
    if model == "er":
        return graphs.gen_er(n, spec.get("p_edge", 0.1), seed)
    if model == "sw":
        return graphs.gen_smallworld(n, spec.get("p_e", 0.2), spec.get("p_r", 0.7), seed)
    if model == "sensor":
        return graphs.gen_sensor_knn(n, spec.get("knn", 4), seed)
    if model == "file":
        return graphs.Graph(read_matrix(spec["path"]))
    raise ModelError(f"unknown graph model {model!r}")


def sensor_operator(n, m, seed):
    """``H`` (m x n) whose transpose has i.i.d. N(0, 1/sqrt(n)) entries."""
    gen = rng.substream(seed, "sensor-H")
    return (rng.standard_normal(gen, (n, m)) * n ** -0.25).T.copy()


def build_operator(spec, basis, seed):
    source = spec.get("source", "gft")
    if source == "gft":
        return basis.V_k.T.copy()
    if source == "sensor":
        return sensor_operator(basis.n, int(spec["m"]), seed)
    if source == "file":
        return read_matrix(spec["path"])
    raise ModelError(f"unknown operator source {source!r}")


def _sub_seed(seed, *tags):
    return rng.stream_key(seed, *tags) % (2**63)


@dataclass
class GraphContext:
    index: int
    basis: graphs.SpectralBasis
    H: np.ndarray
    R_x: np.ndarray
    energy: float
    reference: np.ndarray
    clean: list
    noise_unit: list


def prepare_graph(config, g):
    seed = config.seed
    graph = build_graph(config.graph, _sub_seed(seed, "graph", g))
    basis = graphs.spectral_basis(graph.adjacency, config.k, config.order)
    H = build_operator(config.operator, basis, _sub_seed(seed, "operator", g))
    model = BandlimitedModel.white(basis)
    train = sample_signals(model, config.trials.n_training, _sub_seed(seed, "train", g))
    if config.covariance == "empirical":
        R_x = empirical_covariance(train)
    else:
        R_x = covariance_from_model(model)
    energy = float(np.mean(np.sum(train * train, axis=0)))
    probe = make_problem(config.direction, H, R_x, np.eye(basis.n), 1)
    reference = probe.target
    clean, noise_unit = [], []
    unit = NoiseModel(np.eye(basis.n))
    for b in range(config.trials.n_signal_batches):
        X = sample_signals(model, config.trials.signals_per_batch, _sub_seed(seed, "test", g, b))
        clean.append(X)
        noise_unit.append(add_noise(np.zeros_like(X), unit, _sub_seed(seed, "noise", g, b)))
    return GraphContext(g, basis, H, R_x, energy, reference, clean, noise_unit)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

CSV_FIELDS = ("method", "p", "sigma_coeff", "rel_mse_mean", "rel_mse_stderr",
              "predicted_rel_mse", "n_units", "status")
TIMING_FIELDS = ("design_time_s", "apply_time_per_signal_s", "speedup_vs_full")


@dataclass
class ResultTable:
    rows: list
    meta: dict = field(default_factory=dict)

    def row(self, method, p, sigma_coeff):
        for r in self.rows:
            if r["method"] == method and r["p"] == p and r["sigma_coeff"] == sigma_coeff:
                return r
        raise KeyError((method, p, sigma_coeff))

    def to_csv(self):
        buf = io.StringIO()
        for key in ("tool", "version", "seed", "config_hash"):
            if key in self.meta:
                buf.write(f"# {key}: {self.meta[key]}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in self.rows:
            writer.writerow([_fmt(r[f]) for f in CSV_FIELDS])
        return buf.getvalue()

    def to_json(self):
        return json.dumps({"meta": self.meta, "rows": self.rows}, indent=2, default=float)


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _evaluate_cell(config, contexts, method, p, coeff, m_idx):
    errs, refs, preds, design_t, apply_t, full_t, count = [], [], [], 0.0, 0.0, 0.0, 0
    draws = config.trials.n_selection_draws if method in RANDOMIZED else 1
    n_designs = 0
    for ctx in contexts:
        sigma2 = coeff * ctx.energy
        problem = make_problem(config.direction, ctx.H, ctx.R_x, sigma2 * np.eye(ctx.basis.n), p,
                               config.constrained, basis_k=ctx.basis.V_k)
        for d in range(draws):
            seed = _sub_seed(config.seed, "select", method, ctx.index, d, p, m_idx)
            outcome = select(problem, method, p, seed=seed, params=config.relax)
            n_designs += 1
            design_t += outcome.wall_time
            ref_energy = float(np.sum((ctx.reference @ ctx.R_x) * ctx.reference))
            preds.append(predicted_mse(outcome.H_s, outcome.selection, ctx.reference, ctx.R_x,
                                       problem.R_w) / ref_energy)
            for X, W in zip(ctx.clean, ctx.noise_unit):
                res = run_stream(outcome, ctx.reference, X, X + math.sqrt(sigma2) * W)
                errs.append(res["err_energy"])
                refs.append(res["ref_energy"])
                apply_t += res["sketch_time_s"]
                full_t += res["full_time_s"]
                count += res["count"]
    mean, se = jackknife_ratio(errs, refs)
    pred = float(np.mean(preds))
    return {
        "method": method, "p": p, "sigma_coeff": coeff,
        "rel_mse_mean": mean, "rel_mse_stderr": se, "predicted_rel_mse": pred,
        "n_units": len(errs), "status": "ok",
        "design_time_s": design_t / n_designs,
        "apply_time_per_signal_s": apply_t / count,
        "speedup_vs_full": full_t / apply_t if apply_t > 0 else math.nan,
        "unit_err": errs, "unit_ref": refs,
    }


def _workers():
    try:
        return max(1, int(os.environ.get("SKETCHSEL_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(config, keep_units=False):
    """Full factorial sweep over method x p x sigma_coeff.

    Every random quantity is derived from ``config.seed`` and the cell
    coordinates, so the deterministic columns of the table do not depend on
    scheduling.  A failing cell becomes a row with ``status`` set to the
    error and NaN metrics.
    """
    workers = _workers()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        contexts = list(pool.map(lambda g: prepare_graph(config, g), range(config.trials.n_graphs)))
        cells = [(method, int(p), float(coeff), m_idx)
                 for m_idx, method in enumerate(config.methods)
                 for p in config.p_list for coeff in config.sigma_coeffs]

        def run(cell):
            method, p, coeff, m_idx = cell
            try:
                return _evaluate_cell(config, contexts, method, p, coeff, m_idx)
            except (SketchError, ValueError, ArithmeticError) as exc:
                row = {"method": method, "p": p, "sigma_coeff": coeff, "n_units": 0,
                       "status": f"error: {type(exc).__name__}: {exc}".replace("\n", " ")}
                for f in ("rel_mse_mean", "rel_mse_stderr", "predicted_rel_mse") + TIMING_FIELDS:
                    row[f] = math.nan
                return row

        rows = list(pool.map(run, cells))
    order = {m: i for i, m in enumerate(config.methods)}
    rows.sort(key=lambda r: (order[r["method"]], r["p"], r["sigma_coeff"]))
    if not keep_units:
        for r in rows:
            r.pop("unit_err", None)
            r.pop("unit_ref", None)
    meta = {"tool": "sketchsel", "version": __version__, "seed": config.seed,
            "config_hash": config.digest()}
    return ResultTable(rows, meta)
