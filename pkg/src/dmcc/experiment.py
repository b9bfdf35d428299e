"""Monte Carlo harness: configs, paired runs, MSD metrics, sweeps and result files."""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .diffusion import AlgorithmConfig, DivergenceError, init_state, run_iteration
from .network import NetworkTopology, build_combination_matrix, generate_topology, read_topology_csv
from .signal import AlphaStableParams, MeasurementModel, NoiseModel, generate_stream, init_true_weights

log = logging.getLogger(__name__)

MSD_FLOOR = 1e-30
DIVERGENCE_LIMIT = 1e12
DIVERGED_MSD = 1e10  # +100 dB sentinel
SWEEP_KEYS = ("sigma", "c", "alpha", "p", "L", "eta")


class ConfigError(ValueError):
    pass


class UnknownParameterError(ConfigError):
    pass


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class TopologySpec:
    n: int = 20
    region: float = 1.2
    radius: float = 0.45
    seed: int = 1
    file: str | None = None


@dataclass(frozen=True)
class ModelSpec:
    m: int = 10
    seed: int = 2
    regressor_variance: float | tuple = 1.0
    regenerate_per_run: bool = False


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "impulsive"
    gaussian_variance: float = 0.0
    arrival_probability: float = 0.2
    alpha: float = 1.2
    beta: float = 0.0
    dispersion: float = 1.0
    location: float = 0.0

    def build(self) -> NoiseModel:
        return NoiseModel(self.kind, self.gaussian_variance, self.arrival_probability,
                          AlphaStableParams(self.alpha, self.beta, self.dispersion, self.location))


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    criterion: str = "mcc"
    mode: str = "atc"
    eta: float | tuple = 0.06
    sigma: float | tuple = 1.0
    p: float | tuple = 1.2
    window: int = 8
    combiner: str = "metropolis"
    pre_combiner: str | None = None
    data_combiner: str | None = None
    post_combiner: str | None = None

    def build(self, topology: NetworkTopology) -> AlgorithmConfig:
        def mat(rule):
            return None if rule in (None, "identity") else build_combination_matrix(topology, rule).entries

        if self.mode == "atc":
            pre, data, post = None, None, mat(self.combiner)
        elif self.mode == "cta":
            pre, data, post = mat(self.combiner), None, None
        elif self.mode == "general":
            pre, data, post = mat(self.pre_combiner), mat(self.data_combiner), mat(self.post_combiner)
        else:
            pre = data = post = None
        arr = lambda v: np.asarray(v, dtype=float) if isinstance(v, (list, tuple)) else v
        return AlgorithmConfig(self.criterion, self.mode, arr(self.eta), arr(self.sigma), arr(self.p),
                               self.window, pre, data, post)


@dataclass(frozen=True)
class RunSpec:
    iterations: int = 500
    monte_carlo_runs: int = 50
    seed: int = 0
    steady_window: int = 100


@dataclass(frozen=True)
class ExperimentConfig:
    topology: TopologySpec = TopologySpec()
    model: ModelSpec = ModelSpec()
    noise: NoiseSpec = NoiseSpec()
    algorithms: tuple[AlgorithmSpec, ...] = ()
    run: RunSpec = RunSpec()
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.run.monte_carlo_runs < 1:
            raise ConfigError("monte_carlo_runs must be >= 1")
        if not self.run.iterations >= self.run.steady_window >= 1:
            raise ConfigError("need iterations >= steady_window >= 1")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate algorithm names in {names}")
        for key in self.sweep:
            if key not in SWEEP_KEYS:
                raise UnknownParameterError(f"unknown sweep parameter {key!r}; expected one of {SWEEP_KEYS}")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, run=dataclasses.replace(self.run, seed=seed))

    def select(self, names) -> "ExperimentConfig":
        names = list(names)
        known = {a.name for a in self.algorithms}
        missing = [n for n in names if n not in known]
        if missing:
            raise ConfigError(f"unknown algorithm(s) {missing}; configured: {sorted(known)}")
        return dataclasses.replace(self, algorithms=tuple(a for a in self.algorithms if a.name in names))

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(names)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}; allowed: {sorted(allowed)}")
    algos = data.get("algorithms", [])
    if not isinstance(algos, list):
        raise ConfigError("algorithms must be a list")
    sweep = data.get("sweep", {})
    if not isinstance(sweep, dict) or not all(isinstance(v, list) for v in sweep.values()):
        raise ConfigError("sweep must map parameter names to lists of values")
    cfg = ExperimentConfig(
        topology=_build(TopologySpec, data.get("topology", {}), "topology"),
        model=_build(ModelSpec, data.get("model", {}), "model"),
        noise=_build(NoiseSpec, data.get("noise", {}), "noise"),
        algorithms=tuple(_build(AlgorithmSpec, a, f"algorithms[{i}]") for i, a in enumerate(algos)),
        run=_build(RunSpec, data.get("run", {}), "run"),
        sweep=dict(sweep),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Build every component once so bad values surface as ConfigError."""
    try:
        cfg.noise.build()
        topo = build_topology(cfg.topology)
        for a in cfg.algorithms:
            a.build(topo)
        if cfg.model.m < 1:
            raise ValueError("model.m must be >= 1")
    except ConfigError:
        raise
    except (ValueError, TypeError, RuntimeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc})") from None
    return config_from_dict(data)


def default_config(**run) -> ExperimentConfig:
    """Desk-scale impulsive-noise comparison (N=20, M=10, I=500, 50 runs)."""
    algos = (
        AlgorithmSpec("ATC-DMCC", "mcc", "atc", eta=0.06, sigma=1.0),
        AlgorithmSpec("CTA-DMCC", "mcc", "cta", eta=0.06, sigma=1.0),
        AlgorithmSpec("ATC-DLMP", "lmp", "atc", eta=0.03, p=1.2),
        AlgorithmSpec("CTA-DLMP", "lmp", "cta", eta=0.03, p=1.2),
        AlgorithmSpec("ATC-DLMS", "lms", "atc", eta=0.03),
        AlgorithmSpec("CTA-DLMS", "lms", "cta", eta=0.03),
        AlgorithmSpec("NonCoop-LMS", "lms", "noncoop", eta=0.03),
        AlgorithmSpec("ATC-DMEE", "mee", "atc", eta=0.06, sigma=1.0, window=8),
    )
    return ExperimentConfig(algorithms=algos, run=dataclasses.replace(RunSpec(), **run))


def build_topology(spec: TopologySpec) -> NetworkTopology:
    if spec.file:
        topo = read_topology_csv(spec.file, spec.radius, spec.region)
        if topo.n != spec.n:
            raise ConfigError(f"topology file has {topo.n} nodes, config says {spec.n}")
        return topo
    return generate_topology(spec.n, spec.region, spec.radius, spec.seed)


def true_weights(spec: ModelSpec, run: int | None = None) -> np.ndarray:
    if spec.regenerate_per_run and run is not None:
        return init_true_weights(spec.m, np.random.SeedSequence(spec.seed, spawn_key=(run,)))
    return init_true_weights(spec.m, spec.seed)


# ----------------------------------------------------------------- metrics

def to_db(linear):
    out = 10 * np.log10(np.maximum(np.asarray(linear, dtype=float), MSD_FLOOR))
    return float(out) if out.ndim == 0 else out


def network_msd(weights, w_o) -> tuple[float, float]:
    """``(1/N) sum_k ||w_o - w_k||^2`` and its dB value."""
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    lin = float(np.mean(np.sum((w - np.asarray(w_o, dtype=float)) ** 2, axis=1)))
    return lin, to_db(lin)


def steady_state_msd(trajectory, window: int):
    """Mean of the last ``window`` linear MSD values, in dB.

    A 2-D ``(I, N)`` trajectory gives one value per node.
    """
    t = np.asarray(trajectory, dtype=float)
    if window < 1 or window > t.shape[0]:
        raise ValueError(f"window {window} outside 1..{t.shape[0]}")
    return to_db(t[-window:].mean(axis=0))


# -------------------------------------------------------------- simulation

@dataclass
class RunResult:
    names: list[str]
    msd: dict[str, np.ndarray]            # ensemble network MSD, linear, length I
    node_msd: dict[str, np.ndarray]       # ensemble per-node steady-state MSD, linear, length N
    steady_window: int
    diverged: dict[str, list[tuple[int, int]]]
    seeds: dict
    config: dict
    runs: int
    wall_time: float = 0.0

    def msd_db(self, name) -> np.ndarray:
        return to_db(self.msd[name])

    def node_steady_db(self, name) -> np.ndarray:
        return to_db(self.node_msd[name])

    def steady_db(self, name) -> float:
        return steady_state_msd(self.msd[name], self.steady_window)

    def all_diverged(self) -> bool:
        return bool(self.names) and all(len(self.diverged[n]) == self.runs for n in self.names)


def simulate(config: AlgorithmConfig, regressors, measurements, w_o):
    """One run of one algorithm from zero initial weights.

    Returns per-node squared deviation ``(I, N)`` and the iteration at which
    the run diverged (or None); diverged iterations hold the sentinel.
    """
    n_iter, n, m = regressors.shape
    dev = np.empty((n_iter, n))
    state = init_state(n, m)
    for i in range(n_iter):
        try:
            state = run_iteration(state, regressors[i], measurements[i], config)
        except DivergenceError:
            dev[i:] = DIVERGED_MSD
            return dev, i
        w = state.weights
        if not np.all(np.abs(w) <= DIVERGENCE_LIMIT):
            dev[i:] = DIVERGED_MSD
            return dev, i
        dev[i] = np.sum((w - w_o) ** 2, axis=1)
    return dev, None


def run_monte_carlo(config: ExperimentConfig) -> RunResult:
    """Ensemble-average every configured algorithm over paired data streams.

    Run ``r`` draws its data from seed ``(run.seed, r, node, purpose)``, so
    results do not depend on the run count or on which algorithms are listed.
    """
    t0 = time.perf_counter()
    topo = build_topology(config.topology)
    n, rs = topo.n, config.run
    algos = [(a.name, a.build(topo)) for a in config.algorithms]
    noise = config.noise.build()
    w_fixed = true_weights(config.model)
    net = {name: np.zeros(rs.iterations) for name, _ in algos}
    node = {name: np.zeros(n) for name, _ in algos}
    diverged = {name: [] for name, _ in algos}
    for r in range(rs.monte_carlo_runs):
        w_o = true_weights(config.model, r) if config.model.regenerate_per_run else w_fixed
        model = MeasurementModel(w_o, np.asarray(config.model.regressor_variance, dtype=float))
        stream = generate_stream(model, noise, n, rs.iterations, rs.seed, r)
        for name, algo in algos:
            dev, at = simulate(algo, stream.regressors, stream.measurements, w_o)
            if at is not None:
                diverged[name].append((r, at))
                log.info("%s diverged in run %d at iteration %d", name, r, at)
            net[name] += dev.mean(axis=1)
            node[name] += dev[-rs.steady_window:].mean(axis=0)
    runs = rs.monte_carlo_runs
    return RunResult(
        names=[name for name, _ in algos],
        msd={k: v / runs for k, v in net.items()},
        node_msd={k: v / runs for k, v in node.items()},
        steady_window=rs.steady_window,
        diverged=diverged,
        seeds={"master": rs.seed, "topology": config.topology.seed, "model": config.model.seed,
               "run_streams": "SeedSequence(master, spawn_key=(run, node, purpose))"},
        config=config.to_dict(),
        runs=runs,
        wall_time=time.perf_counter() - t0,
    )


# ------------------------------------------------------------------ sweeps

def apply_parameter(config: ExperimentConfig, key: str, value) -> ExperimentConfig:
    rep = dataclasses.replace
    if key == "c":
        return rep(config, noise=rep(config.noise, arrival_probability=value))
    if key == "alpha":
        return rep(config, noise=rep(config.noise, alpha=value))
    field_for = {"sigma": ("sigma", ("mcc", "mee")), "p": ("p", ("lmp",)),
                 "L": ("window", ("mee",)), "eta": ("eta", ("mcc", "lms", "lmp", "mee"))}
    if key not in field_for:
        raise UnknownParameterError(f"unknown sweep parameter {key!r}; expected one of {SWEEP_KEYS}")
    attr, criteria = field_for[key]
    algos = tuple(rep(a, **{attr: value}) if a.criterion in criteria else a for a in config.algorithms)
    return rep(config, algorithms=algos)


@dataclass
class SweepResult:
    keys: list[str]
    rows: list[tuple[tuple, str, float]]    # (parameter values, algorithm, steady MSD dB)

    def column(self, algo: str) -> list[float]:
        return [v for _, a, v in self.rows if a == algo]


def parameter_sweep(base: ExperimentConfig, grid: dict | None = None) -> SweepResult:
    """One Monte Carlo ensemble per point of the Cartesian product of ``grid``."""
    grid = dict(base.sweep if grid is None else grid)
    for key in grid:
        if key not in SWEEP_KEYS:
            raise UnknownParameterError(f"unknown sweep parameter {key!r}; expected one of {SWEEP_KEYS}")
    keys = list(grid)
    rows = []
    for values in itertools.product(*(grid[k] for k in keys)):
        cfg = base
        for k, v in zip(keys, values):
            cfg = apply_parameter(cfg, k, v)
        res = run_monte_carlo(cfg)
        rows.extend((tuple(values), name, res.steady_db(name)) for name in res.names)
    return SweepResult(keys, rows)


# ------------------------------------------------------------------ output

def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_curves_csv(result: RunResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration"] + [f"{n}_msd_db" for n in result.names])
        cols = [result.msd_db(n) for n in result.names]
        for i in range(len(cols[0]) if cols else 0):
            w.writerow([i + 1] + [_fmt(c[i]) for c in cols])


def write_steady_csv(result: RunResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node"] + [f"{n}_msd_db" for n in result.names])
        cols = [result.node_steady_db(n) for n in result.names]
        for k in range(len(cols[0]) if cols else 0):
            w.writerow([k] + [_fmt(c[k]) for c in cols])


def write_sweep_csv(sweep: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(sweep.keys + ["algo", "msd_db"])
        for values, algo, db in sweep.rows:
            w.writerow([repr(v) for v in values] + [algo, _fmt(db)])


def write_manifest(config: ExperimentConfig, path, seeds: dict | None = None, extra: dict | None = None) -> None:
    doc = {"artifact": "dmcc", "version": __version__, "config": config.to_dict(),
           "seeds": seeds or {"master": config.run.seed, "topology": config.topology.seed,
                              "model": config.model.seed}}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
