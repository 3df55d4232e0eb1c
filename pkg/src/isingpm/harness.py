"""Experiment orchestration: synthetic data generation, binary-matrix
ingestion, configuration files, seeded replications, and CSV/JSON outputs.

Output layout per replication (``<out_dir>/run_<r>/``):

* ``samples.csv``  — header ``iter,sign,theta_1_1,theta_1_2,...``; one row per
  kept iteration, free coordinates upper-triangle row-major, floats written
  with round-trip precision.
* ``trace.csv``    — header ``iter,log_post,accepted``.
* ``diagnostics.json`` — DiagnosticsReport fields plus the exact config used
  and the code version.
* ``theta0.csv`` / ``data.csv`` — the synthetic truth and dataset, when data
  were simulated.
* ``oracle_summary.json`` — exact-MH posterior moments, when oracle
  comparisons are enabled and the dimension permits enumeration.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import build_report
from .estimators import EstimatorConfig
from .ising import BinaryDataset, IsingParams, draw_independence_matrix, gibbs_sweep_batch
from .priors import LaplacePrior
from .samplers import ChainOutput, ProposalSpec, run_chain

REGIMES = {"dense": (-1.0, 0.9), "sparse": (-3.0, 0.02)}


class DataFormatError(ValueError):
    """A data file failed to parse; the message carries the offending location."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, mirrored one-to-one by the config file
    sections [experiment], [proposal], [estimator], [prior], [data]."""

    kernel: str = "pm"
    iterations: int = 5000
    burn_in: int = 2000
    seed: int = 0
    replications: int = 1
    out_dir: str = "runs"
    oracle_diagnostics: bool = False
    workers: int = 1
    inner_sweeps: int = 50

    proposal: ProposalSpec = field(default_factory=ProposalSpec)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    prior_rate: float = 1.0

    source: str = "synthetic"
    p: int = 3
    n: int = 100
    regime: str = "dense"
    warmup_sweeps: int = 500
    thin_sweeps: int = 0
    diag_zero: bool = False
    fix_theta0: bool = False
    data_path: str | None = None
    has_header: bool = False

    def __post_init__(self):
        if self.kernel not in ("pm", "noisy", "exchange", "exact"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.iterations < 1 or self.replications < 1 or self.workers < 1:
            raise ValueError("iterations, replications and workers must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.source not in ("synthetic", "file"):
            raise ValueError(f"data source must be 'synthetic' or 'file', got {self.source!r}")
        if self.source == "file" and not self.data_path:
            raise ValueError("source 'file' requires data_path")
        if self.source == "synthetic":
            if self.data_path:
                raise ValueError("synthetic source must not set data_path")
            if self.p < 1 or self.n < 1:
                raise ValueError("p and n must be positive")
            if self.regime not in REGIMES:
                raise ValueError(f"unknown regime {self.regime!r}")
            if self.warmup_sweeps < 1:
                raise ValueError("warmup_sweeps must be >= 1")
        if not self.prior_rate > 0:
            raise ValueError("prior_rate must be positive")

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        """Read an INI config; any entry in ``overrides`` (flat field names)
        wins over the file.  Unknown keys are rejected."""
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise FileNotFoundError(f"config file not found: {path}")
        values: dict = {}
        section_map = {
            "experiment": ("kernel", "iterations", "burn_in", "seed", "replications",
                           "out_dir", "oracle_diagnostics", "workers", "inner_sweeps"),
            "prior": ("rate",),
            "data": ("source", "p", "n", "regime", "warmup_sweeps", "thin_sweeps",
                     "diag_zero", "fix_theta0", "path", "has_header"),
        }
        rename = {("prior", "rate"): "prior_rate", ("data", "path"): "data_path"}
        for section, keys in section_map.items():
            if not parser.has_section(section):
                continue
            for key in parser[section]:
                if key not in keys:
                    raise ValueError(f"unknown config key [{section}] {key}")
                values[rename.get((section, key), key)] = parser[section][key]
        proposal_kw: dict = {}
        if parser.has_section("proposal"):
            for key in parser["proposal"]:
                if key not in ("kind", "step_rw", "step_langevin", "grad_samples",
                               "diagonal_only"):
                    raise ValueError(f"unknown config key [proposal] {key}")
                proposal_kw[key] = parser["proposal"][key]
        estimator_kw: dict = {}
        if parser.has_section("estimator"):
            for key in parser["estimator"]:
                if key not in ("n_samples", "pilot_replicates", "alpha", "geom_p",
                               "enumeration_cap"):
                    raise ValueError(f"unknown config key [estimator] {key}")
                estimator_kw[key] = parser["estimator"][key]
        known = {"proposal", "estimator"}
        for key, val in (overrides or {}).items():
            if val is None:
                continue
            if key.startswith("proposal."):
                proposal_kw[key.split(".", 1)[1]] = val
            elif key.startswith("estimator."):
                estimator_kw[key.split(".", 1)[1]] = val
            else:
                values[key] = val
        return cls._build(values, proposal_kw, estimator_kw, known)

    @classmethod
    def from_values(cls, values: dict, proposal_kw: dict | None = None,
                    estimator_kw: dict | None = None) -> "ExperimentConfig":
        return cls._build(dict(values), dict(proposal_kw or {}),
                          dict(estimator_kw or {}), set())

    @classmethod
    def _build(cls, values: dict, proposal_kw: dict, estimator_kw: dict,
               _known) -> "ExperimentConfig":
        bools = {"oracle_diagnostics", "diag_zero", "fix_theta0", "has_header"}
        ints = {"iterations", "burn_in", "seed", "replications", "workers",
                "inner_sweeps", "p", "n", "warmup_sweeps", "thin_sweeps"}
        floats = {"prior_rate"}
        parsed: dict = {}
        for key, val in values.items():
            if key in bools:
                parsed[key] = _as_bool(val)
            elif key in ints:
                parsed[key] = int(val)
            elif key in floats:
                parsed[key] = float(val)
            else:
                parsed[key] = val
        if "data_path" in parsed and parsed["data_path"] == "":
            parsed["data_path"] = None
        prop = _coerce_kwargs(proposal_kw,
                              ints={"grad_samples"},
                              floats={"step_rw", "step_langevin"},
                              bools={"diagonal_only"})
        est = _coerce_kwargs(estimator_kw,
                             ints={"n_samples", "pilot_replicates", "enumeration_cap"},
                             floats={"alpha", "geom_p"}, bools=set())
        if prop:
            parsed["proposal"] = ProposalSpec(**{**dataclasses.asdict(ProposalSpec()), **prop})
        if est:
            parsed["estimator"] = EstimatorConfig(**{**dataclasses.asdict(EstimatorConfig()), **est})
        return cls(**parsed)

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out


def _as_bool(val) -> bool:
    if isinstance(val, bool):
        return val
    text = str(val).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"cannot interpret {val!r} as a boolean")


def _coerce_kwargs(kw: dict, ints: set, floats: set, bools: set) -> dict:
    out = {}
    for key, val in kw.items():
        if key in ints:
            out[key] = int(val)
        elif key in floats:
            out[key] = float(val)
        elif key in bools:
            out[key] = _as_bool(val)
        else:
            out[key] = val
    return out


def generate_true_theta(p: int, regime: str, rng: np.random.Generator, *,
                        diag_zero: bool = False) -> IsingParams:
    """Draw a ground-truth interaction matrix: each free coordinate takes the
    regime value with the regime probability and is zero otherwise.

    Regimes: dense = value -1 with probability 0.9; sparse = value -3 with
    probability 0.02.  ``diag_zero`` forces a zero diagonal after drawing.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    value, prob = REGIMES[regime]
    n_free = p * (p + 1) // 2
    free = np.where(rng.random(n_free) < prob, value, 0.0)
    theta = IsingParams.from_free_vector(free, p).theta.copy()
    if diag_zero:
        np.fill_diagonal(theta, 0.0)
    return IsingParams(theta)


def simulate_dataset(theta0: IsingParams, n: int, warmup_sweeps: int,
                     thin_sweeps: int, rng: np.random.Generator) -> BinaryDataset:
    """Simulate n independent rows from the model at theta0.

    Each row is its own Gibbs chain, initialized from the independence model
    of theta0 and advanced warmup_sweeps sweeps (plus thin_sweeps extra
    sweeps, kept as a separate knob so configs can distinguish warmup from
    decorrelation).  All n chains run vectorized in lockstep.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if warmup_sweeps < 1:
        raise ValueError("warmup_sweeps must be >= 1")
    if thin_sweeps < 0:
        raise ValueError("thin_sweeps must be >= 0")
    rows = draw_independence_matrix(theta0.diagonal_model(), n, rng)
    rows = gibbs_sweep_batch(rows, theta0, rng, sweeps=warmup_sweeps + thin_sweeps)
    return BinaryDataset(rows, validate=False)


def load_binary_csv(path, has_header: bool = False) -> BinaryDataset:
    """Read a comma-separated 0/1 matrix.

    Rows must be rectangular and every entry exactly 0 or 1; violations raise
    :class:`DataFormatError` naming the offending row and column (1-based,
    counted after any header).
    """
    path = Path(path)
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if has_header:
        if not lines:
            raise DataFormatError(f"{path}: empty file, expected a header")
        lines = lines[1:]
    for i, line in enumerate(lines, start=1):
        if line.strip() == "":
            continue
        tokens = [tok.strip() for tok in line.split(",")]
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise DataFormatError(
                f"{path}: row {i} has {len(tokens)} columns, expected {width}")
        row = []
        for j, tok in enumerate(tokens, start=1):
            if tok == "0":
                row.append(0.0)
            elif tok == "1":
                row.append(1.0)
            else:
                raise DataFormatError(
                    f"{path}: row {i}, column {j}: {tok!r} is not 0 or 1")
        rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return BinaryDataset(np.array(rows), validate=False)


def write_binary_csv(path, data: BinaryDataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in data.rows:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def write_theta_csv(path, params: IsingParams) -> None:
    """Full symmetric matrix, one row per line, round-trip floats, no header."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in params.theta:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_theta_csv(path) -> IsingParams:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh.read().splitlines():
            if line.strip():
                rows.append([float(tok) for tok in line.split(",")])
    return IsingParams(np.array(rows))


def _coordinate_names(p: int) -> list[str]:
    iu, ju = np.triu_indices(p)
    return [f"theta_{j + 1}_{k + 1}" for j, k in zip(iu, ju)]


def write_samples_csv(path, output: ChainOutput, burn_in: int) -> None:
    names = _coordinate_names(output.p)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,sign," + ",".join(names) + "\n")
        for i in range(output.samples.shape[0]):
            row = ",".join(repr(float(v)) for v in output.samples[i])
            fh.write(f"{burn_in + i + 1},{output.signs[i]},{row}\n")


def read_samples_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Returns (iteration numbers, signs, packed samples, p)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty samples file")
    header = lines[0].split(",")
    d = len(header) - 2
    p = int((np.sqrt(8 * d + 1) - 1) / 2)
    if p * (p + 1) // 2 != d:
        raise DataFormatError(f"{path}: {d} coordinate columns is not a triangle number")
    iters, signs, rows = [], [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        iters.append(int(parts[0]))
        signs.append(int(parts[1]))
        rows.append([float(tok) for tok in parts[2:]])
    return (np.array(iters, dtype=int), np.array(signs, dtype=int),
            np.array(rows), p)


def write_trace_csv(path, output: ChainOutput, burn_in: int) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,log_post,accepted\n")
        for i in range(len(output.log_post_trace)):
            fh.write(f"{burn_in + i + 1},{repr(float(output.log_post_trace[i]))},"
                     f"{int(output.accept_flags[i])}\n")


def read_trace_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    iters, log_post, accepted = [], [], []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        iters.append(int(parts[0]))
        log_post.append(float(parts[1]))
        accepted.append(bool(int(parts[2])))
    return np.array(iters, dtype=int), np.array(log_post), np.array(accepted, dtype=bool)


def _replication_data(cfg: ExperimentConfig, rep: int,
                      rng: np.random.Generator,
                      theta0_shared: IsingParams | None):
    if cfg.source == "file":
        return load_binary_csv(cfg.data_path, cfg.has_header), None
    theta0 = theta0_shared
    if theta0 is None:
        theta0 = generate_true_theta(cfg.p, cfg.regime, rng, diag_zero=cfg.diag_zero)
    data = simulate_dataset(theta0, cfg.n, cfg.warmup_sweeps, cfg.thin_sweeps, rng)
    return data, theta0


def _run_replication(cfg: ExperimentConfig, rep: int) -> str:
    base = np.random.SeedSequence(cfg.seed)
    shared_ss, *rep_seeds = base.spawn(cfg.replications + 1)
    theta0_shared = None
    if cfg.source == "synthetic" and cfg.fix_theta0:
        theta0_shared = generate_true_theta(
            cfg.p, cfg.regime, np.random.default_rng(shared_ss),
            diag_zero=cfg.diag_zero)
    chain_ss, oracle_ss = rep_seeds[rep].spawn(2)
    rng = np.random.default_rng(chain_ss)

    data, theta0 = _replication_data(cfg, rep, rng, theta0_shared)
    if cfg.kernel == "exact" and data.p > cfg.estimator.enumeration_cap:
        raise ValueError(
            f"exact kernel refused: p={data.p} exceeds enumeration cap "
            f"{cfg.estimator.enumeration_cap}")
    prior = LaplacePrior(cfg.prior_rate)
    init = IsingParams(np.zeros((data.p, data.p)))
    output = run_chain(cfg.kernel, init, cfg.iterations, cfg.burn_in,
                       cfg.proposal, data, cfg.estimator, prior, rng,
                       inner_sweeps=cfg.inner_sweeps)

    run_dir = Path(cfg.out_dir) / f"run_{rep}"
    run_dir.mkdir(parents=True, exist_ok=True)
    write_samples_csv(run_dir / "samples.csv", output, cfg.burn_in)
    write_trace_csv(run_dir / "trace.csv", output, cfg.burn_in)
    if theta0 is not None:
        write_theta_csv(run_dir / "theta0.csv", theta0)
        write_binary_csv(run_dir / "data.csv", data)

    report = build_report(output, theta_true=theta0)
    payload = {
        "replication": rep,
        "code_version": __version__,
        "config": cfg.as_dict(),
        "warnings": output.warnings,
        **report.as_dict(),
    }
    with open(run_dir / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2)
        fh.write("\n")

    if (cfg.oracle_diagnostics and data.p <= cfg.estimator.enumeration_cap
            and cfg.kernel != "exact"):
        oracle_rng = np.random.default_rng(oracle_ss)
        oracle_out = run_chain("exact", init, cfg.iterations, cfg.burn_in,
                               cfg.proposal, data, cfg.estimator, prior,
                               oracle_rng, inner_sweeps=cfg.inner_sweeps)
        summary = {
            "posterior_mean": [float(v) for v in oracle_out.samples.mean(axis=0)],
            "posterior_std": [float(v) for v in oracle_out.samples.std(axis=0)],
            "acceptance_rate": float(oracle_out.accept_flags.mean()),
            "iterations": cfg.iterations,
            "burn_in": cfg.burn_in,
        }
        with open(run_dir / "oracle_summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    return str(run_dir)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def run_experiment(cfg: ExperimentConfig) -> list[str]:
    """Run all replications (a process pool when cfg.workers > 1) and return
    the per-replication output directories."""
    if cfg.kernel == "exact" and cfg.source == "synthetic" \
            and cfg.p > cfg.estimator.enumeration_cap:
        raise ValueError(
            f"exact kernel refused: p={cfg.p} exceeds enumeration cap "
            f"{cfg.estimator.enumeration_cap}")
    reps = range(cfg.replications)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_run_replication, [cfg] * cfg.replications, reps))
    return [_run_replication(cfg, rep) for rep in reps]


def posterior_mean_from_samples(path) -> IsingParams:
    """Sign-weighted posterior mean reconstructed from a samples CSV."""
    _, signs, samples, p = read_samples_csv(path)
    sign_sum = signs.sum()
    if sign_sum == 0:
        raise ValueError(f"{path}: signs cancel exactly")
    mean = (signs[:, None] * samples).sum(axis=0) / sign_sum
    return IsingParams.from_free_vector(mean, p)
