"""
Experiment harness: build an instance, sweep methods and step sizes, write
CSV and gnuplot-ready data.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .algorithms import DivergenceError, StepConfig, WOverAlphaB, ZeroB, parse_b_spec, run
from .errordyn import theory_constants
from .netgraph import GraphError, connected_random_geometric, is_connected, metropolis_weights, read_edge_list
from .objectives import (LogisticProblem, generate_logistic_data, random_quadratic, read_dataset_csv,
                         solve_reference)

logger = logging.getLogger(__name__)

THRESHOLDS = (1e-2, 1e-4, 1e-6)
FIT_FLOOR = 1e-10


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one figure.

    Methods are ``dgm``, ``extra``, ``harnessing`` or ``generalized:<B spec>``.
    Step sizes are numbers or ``"1/(cL)"`` strings resolved once ``L`` is
    known; ``"theorem4"`` picks 0.99 of the provable bound per method.
    """

    n: int = 30
    radius: object = "auto"
    seed: int = 0
    graph_file: str = ""
    problem: str = "logistic"
    J: int = 2
    d: int = 6
    R: float = 0.03
    noise_variance: float = 0.4
    data_seed: int = 0
    data_file: str = ""
    mu: float = 1.0
    lip: float = 10.0
    methods: list = field(default_factory=lambda: ["harnessing", "extra", "generalized:bI:auto", "generalized:bW:L"])
    steps: list = field(default_factory=lambda: ["1/(3L)", "1/(9L)", "1/(15L)"])
    iters: int = 5000
    out: str = "results"

    @classmethod
    def from_dict(cls, data: dict):
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def validate(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        if self.iters < 1:
            raise ConfigError("iteration budget must be at least 1")
        if self.problem not in ("logistic", "quadratic"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.n < 1 or self.d < 2:
            raise ConfigError("need n >= 1 and d >= 2")
        for m in self.methods:
            name = m.split(":", 1)[0]
            if name not in ("dgm", "extra", "harnessing", "generalized"):
                raise ConfigError(f"unknown method {m!r}")
        for s in self.steps:
            if s != "theorem4":
                try:
                    val = resolve_step(s, 1.0)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc
                if not (val > 0 and math.isfinite(val)):
                    raise ConfigError(f"step size {s!r} must be positive")

    def to_toml(self) -> str:
        lines = []
        for key, val in asdict(self).items():
            lines.append(f"{key} = {_toml_value(val)}")
        return "\n".join(lines) + "\n"


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


_STEP_RE = re.compile(r"^\s*([0-9.eE+-]*)\s*/\s*\(?\s*([0-9.eE+-]*)\s*\*?\s*L\s*\)?\s*$")


def resolve_step(text, lip) -> float:
    """Turn ``"1/(3L)"``, ``"2/L"`` or a plain number into a step size."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _STEP_RE.match(str(text))
    if m:
        num = float(m.group(1) or 1.0)
        den = float(m.group(2) or 1.0)
        return num / (den * lip)
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"cannot parse step size {text!r}") from None


@dataclass
class Instance:
    graph: object
    weight: object
    problem: object
    x_star: np.ndarray
    graph_seed: int


def build_instance(cfg: ExperimentConfig) -> Instance:
    if cfg.graph_file:
        g = read_edge_list(cfg.graph_file)
        if not is_connected(g):
            raise ConfigError(f"graph in {cfg.graph_file} is disconnected")
        used = cfg.seed
    else:
        radius = math.sqrt(math.log(cfg.n) / cfg.n) if cfg.radius == "auto" else float(cfg.radius)
        try:
            g, used = connected_random_geometric(cfg.n, radius, cfg.seed)
        except GraphError as exc:
            raise ConfigError(str(exc)) from exc
    weight = metropolis_weights(g)
    if cfg.problem == "logistic":
        if cfg.data_file:
            spec = read_dataset_csv(cfg.data_file, reg=cfg.R, n=g.n)
        else:
            spec, _ = generate_logistic_data(g.n, cfg.J, cfg.d, cfg.noise_variance, cfg.data_seed, reg=cfg.R)
        if spec.n != g.n:
            raise ConfigError(f"data has {spec.n} nodes but the graph has {g.n}")
        problem = LogisticProblem(spec)
    else:
        problem = random_quadratic(g.n, cfg.d, cfg.mu, cfg.lip, seed=cfg.data_seed)
    x_star = solve_reference(problem)
    return Instance(g, weight, problem, x_star, used)


@dataclass
class CellResult:
    method: str
    alpha: float
    step: str
    errors: np.ndarray
    consensus: np.ndarray
    diverged: bool = False
    message: str = ""

    def iterations_to(self, threshold):
        hits = np.flatnonzero(self.errors <= threshold)
        return int(hits[0]) if hits.size else None

    @property
    def terminal_error(self):
        return float(self.errors[-1])

    def fitted_slope(self):
        """Least-squares slope of ``log(error)`` over the second half of the
        points above the round-off floor."""
        idx = np.flatnonzero(np.isfinite(self.errors) & (self.errors > FIT_FLOOR))
        if idx.size < 4:
            return float("nan")
        idx = idx[idx.size // 2:]
        return float(np.polyfit(idx, np.log(self.errors[idx]), 1)[0])

    def summary(self):
        row = {"method": self.method, "alpha": self.alpha, "step": self.step}
        for t in THRESHOLDS:
            k = self.iterations_to(t)
            row[f"iters_to_{t:g}"] = "not reached" if k is None else k
        row["terminal_error"] = self.terminal_error
        row["slope"] = self.fitted_slope()
        row["diverged"] = self.diverged
        return row


@dataclass
class ResultTable:
    cells: dict = field(default_factory=dict)
    lip: float = float("nan")
    mu: float = float("nan")
    sigma: float = float("nan")
    graph_seed: int = 0
    num_edges: int = 0

    def steps(self):
        return list(dict.fromkeys(step for _, step in self.cells))

    def methods(self):
        return list(dict.fromkeys(m for m, _ in self.cells))

    def get(self, method, step) -> CellResult:
        return self.cells[(method, step)]

    @property
    def all_diverged(self):
        return bool(self.cells) and all(c.diverged for c in self.cells.values())


def _bspec_for(method, problem, weight):
    name, _, spec = method.partition(":")
    if name == "generalized":
        return parse_b_spec(spec or "bI:auto", problem.mu, problem.lip, weight.lambda_min)
    if name == "extra":
        return WOverAlphaB()
    return ZeroB()


def run_experiment(cfg: ExperimentConfig, instance: Instance = None, write=True) -> ResultTable:
    """Run every (method, step) cell from the zero start.

    A diverging cell is recorded and the sweep continues.
    """
    cfg.validate()
    inst = instance or build_instance(cfg)
    prob, weight = inst.problem, inst.weight
    table = ResultTable(lip=prob.lip, mu=prob.mu, sigma=weight.sigma, graph_seed=inst.graph_seed,
                        num_edges=inst.graph.num_edges)
    x0 = np.zeros(prob.d)
    for method in cfg.methods:
        name = method.split(":", 1)[0]
        b_spec = _bspec_for(method, prob, weight)
        for step in cfg.steps:
            if step == "theorem4":
                theory_b = b_spec if name == "generalized" else ZeroB()
                alpha = 0.99 * theory_constants(theory_b, prob.mu, prob.lip_local, weight, prob.d, 1.0)[0]
            else:
                alpha = resolve_step(step, prob.lip)
            step_cfg = StepConfig(alpha=alpha, weight=weight, b_spec=b_spec)
            try:
                traj = run(name, step_cfg, prob, x0, cfg.iters, inst.x_star)
                cell = CellResult(method, alpha, str(step), traj.errors, np.asarray(traj.consensus))
            except DivergenceError as exc:
                traj = exc.trajectory
                logger.warning("%s", exc)
                cell = CellResult(method, alpha, str(step), traj.errors, np.asarray(traj.consensus),
                                  diverged=True, message=str(exc))
            table.cells[(method, str(step))] = cell
    if write:
        write_results(table, cfg.out)
    return table


def write_results(table: ResultTable, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "method", "alpha", "relative_error", "consensus_residual"])
        for (method, _), cell in table.cells.items():
            for k, (e, c) in enumerate(zip(cell.errors, cell.consensus)):
                w.writerow([k, method, repr(cell.alpha), repr(float(e)), repr(float(c))])
    rows = [cell.summary() for cell in table.cells.values()]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    for idx, step in enumerate(table.steps()):
        blocks = []
        for method in table.methods():
            cell = table.cells.get((method, step))
            if cell is None:
                continue
            body = "\n".join(f"{k} {e!r}" for k, e in enumerate(cell.errors.tolist()))
            blocks.append(f"# method: {method}\n# alpha: {cell.alpha!r}\n{body}")
        (out / f"plot_step{idx}.dat").write_text("\n\n\n".join(blocks) + "\n")


@dataclass
class OrderingReport:
    rankings: dict
    verdict: str
    threshold: float

    def text(self):
        lines = []
        for step, ranking in self.rankings.items():
            parts = [f"{m} ({'not reached' if k is None else k})" for m, k in ranking]
            lines.append(f"alpha={step}: " + " < ".join(parts))
        lines.append(f"extra vs harnessing ordering: {self.verdict}")
        return "\n".join(lines)


def ordering_report(table: ResultTable, threshold=1e-4, tie_tol=0.05) -> OrderingReport:
    """Rank methods by iterations to `threshold` per step size and compare
    the Extra/harnessing ordering at the largest and smallest step."""
    rankings = {}
    for step in table.steps():
        entries = []
        for method in table.methods():
            cell = table.cells.get((method, step))
            if cell is not None:
                entries.append((method, cell.iterations_to(threshold)))
        entries.sort(key=lambda e: (math.inf if e[1] is None else e[1]))
        rankings[step] = entries
    steps = sorted(table.steps(), key=lambda s: table.cells[next(k for k in table.cells if k[1] == s)].alpha)
    methods = table.methods()
    if len(steps) < 2 or "extra" not in methods or "harnessing" not in methods:
        return OrderingReport(rankings, "indeterminate", threshold)

    def gap(step):
        e = table.get("extra", step).iterations_to(threshold)
        h = table.get("harnessing", step).iterations_to(threshold)
        if e is None or h is None:
            return None, None
        return e - h, abs(e - h) / max(e, h)

    large, small = steps[-1], steps[0]
    d_large, _ = gap(large)
    d_small, rel_small = gap(small)
    if d_large is None or d_small is None or d_large == 0:
        verdict = "indeterminate"
    elif np.sign(d_large) != np.sign(d_small):
        verdict = "flipped"
    elif rel_small <= tie_tol:
        verdict = f"within {tie_tol:.0%} at the smallest step"
    else:
        verdict = "not flipped"
    return OrderingReport(rankings, verdict, threshold)
