"""Task generation, end-to-end episodes, risk estimation, and sweeps."""
from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import itertools
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import features as feat
from . import lasso
from . import transformer as tr
from .errors import ConfigError, UnsupportedClass

SCHEMA_VERSION = 1
X_DISTS = ("ball", "sphere", "gaussian")
NOISES = ("gaussian", "uniform")
SWEEP_AXES = ("N", "L", "n", "tau", "lambda")
ORACLE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    spec: feat.ClassSpec
    d: int
    n: int = 64
    N: int = 128
    L: int = 41
    sigma: float = 0.1
    tau: float = 1e6
    tau_ff: float = 100.0
    eta: float = None  # None means 1 / (2 (n + 1))
    lam: object = "auto"
    c1: float = 1.0
    eps_dis: float = 0.0
    eps_hat: float = 0.0
    log_cover: float = 0.0
    seeds: tuple = tuple(range(10))
    member_seed: int = 7
    bank_seed: int = 1000
    test_points: int = 256
    x_dist: str = "ball"
    noise: str = "gaussian"
    workers: int = 1
    output: str = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if not isinstance(self.spec, feat.ClassSpec):
            raise ConfigError("spec must be a ClassSpec")
        for name in ("d", "n", "N", "L", "test_points", "workers", "member_seed", "bank_seed"):
            val = getattr(self, name)
            if isinstance(val, bool) or int(val) != val:
                raise ConfigError(f"{name} must be an integer")
            object.__setattr__(self, name, int(val))
        if self.spec.d != self.d:
            raise ConfigError(f"class dimension {self.spec.d} differs from d = {self.d}")
        if self.L < 3 or self.L % 2 == 0:
            raise ConfigError("L must be odd and >= 3")
        if self.N < 1 or self.n < 1:
            raise ConfigError("N and n must be >= 1")
        if self.test_points < 1 or self.workers < 1:
            raise ConfigError("test_points and workers must be >= 1")
        for name in ("sigma", "tau", "tau_ff", "c1", "eps_dis", "eps_hat", "log_cover"):
            val = float(getattr(self, name))
            if not math.isfinite(val) or val < 0:
                raise ConfigError(f"{name} must be finite and >= 0")
            object.__setattr__(self, name, val)
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.tau_ff <= 4:
            raise ConfigError("tau_ff must exceed 4")
        if self.eta is not None:
            eta = float(self.eta)
            if not (math.isfinite(eta) and eta > 0):
                raise ConfigError("eta must be positive")
            object.__setattr__(self, "eta", eta)
        if self.lam != "auto":
            try:
                lam = float(self.lam)
            except (TypeError, ValueError) as exc:
                raise ConfigError('lambda must be a number or "auto"') from exc
            if not (math.isfinite(lam) and lam >= 0):
                raise ConfigError("lambda must be finite and >= 0")
            object.__setattr__(self, "lam", lam)
        elif self.N < 2:
            raise ConfigError('lambda "auto" needs N >= 2')
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds or any(s < 0 for s in seeds):
            raise ConfigError("seeds must be a nonempty list of nonnegative integers")
        object.__setattr__(self, "seeds", seeds)
        if self.x_dist not in X_DISTS:
            raise ConfigError(f"x_dist must be one of {X_DISTS}")
        if self.noise not in NOISES:
            raise ConfigError(f"noise must be one of {NOISES}")
        if int(self.schema_version) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")

    @property
    def step(self):
        return lasso.default_eta(self.n + 1) if self.eta is None else self.eta

    @property
    def penalty(self):
        if self.lam != "auto":
            return self.lam
        return lasso.default_lambda(
            self.N, self.sigma, feat.barron_parameter(self.spec), self.eps_dis, self.eps_hat, self.c1
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            if f.name == "spec":
                val = val.to_dict()
            elif f.name == "seeds":
                val = list(val)
            out["lambda" if f.name == "lam" else f.name] = val
        return out

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        if "spec" not in data or "d" not in data:
            raise ConfigError("config needs at least spec and d")
        known = {f.name for f in dataclasses.fields(cls)}
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            data["spec"] = feat.ClassSpec.from_dict(data["spec"])
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# tasks


def sample_inputs(rng, m, d, dist="ball"):
    g = rng.normal(size=(m, d))
    if dist == "gaussian":
        out = np.empty((m, d))
        filled = 0
        while filled < m:
            cand = rng.normal(scale=0.5 / math.sqrt(d), size=(m, d))
            cand = cand[np.linalg.norm(cand, axis=1) <= 1.0]
            take = min(m - filled, cand.shape[0])
            out[filled : filled + take] = cand[:take]
            filled += take
        return out
    direction = g / np.linalg.norm(g, axis=1, keepdims=True)
    if dist == "sphere":
        return direction
    return direction * rng.uniform(size=(m, 1)) ** (1.0 / d)


def _streams(data_seed):
    prompt, query = np.random.SeedSequence(int(data_seed)).spawn(2)
    return np.random.default_rng(prompt), np.random.default_rng(query)


def generate_task(spec, member_seed, N, d, sigma, data_seed, x_dist="ball", noise="gaussian"):
    """(f, (X, y), x_query) with y = f(X) + noise. Prompt and query use separate streams."""
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    f = feat.sample_member(spec, np.random.default_rng(int(member_seed)))
    prompt_rng, query_rng = _streams(data_seed)
    X = sample_inputs(prompt_rng, N, d, x_dist)
    y = f(X) + _noise(prompt_rng, N, sigma, noise)
    x_query = sample_inputs(query_rng, 1, d, x_dist)[0]
    return f, (X, y), x_query


def _noise(rng, N, sigma, kind):
    if kind == "uniform":
        return rng.uniform(-sigma, sigma, size=N)
    return sigma * rng.normal(size=N)


def _query_batch(data_seed, m, d, x_dist):
    _, query_rng = _streams(data_seed)
    return sample_inputs(query_rng, m, d, x_dist)


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True)
class EpisodeReport:
    y_hat: float
    truth: float
    squared_error: float
    eps_opt_vs_rho_star: float
    eps_opt_vs_minimizer: float
    l1_of_rho_L: float
    max_emulation_residual: float
    readout_consistency_gap: float
    emulation_bounds_ok: bool
    ista_gap_at_T: float
    penalty: float
    oracle_method: str
    member_seed: int
    data_seed: int

    def __post_init__(self):
        if not self.squared_error >= 0:
            raise ConfigError("squared error must be >= 0")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def _bank(config):
    return feat.make_feature_bank(config.spec, config.n, config.tau_ff, config.bank_seed)


def _weights(config, bank):
    return tr.build_icl_transformer(bank, config.L, config.penalty, config.tau, config.step, config.N)


def _reference_coefficients(f, bank):
    try:
        return feat.oracle_coefficients(f, bank)
    except UnsupportedClass:
        return feat.empirical_oracle(f, bank)


def run_episode(config, member_seed=None, data_seed=None):
    """Build everything, run the traced forward pass, and assemble the report."""
    member_seed = config.member_seed if member_seed is None else member_seed
    data_seed = config.seeds[0] if data_seed is None else data_seed
    bank = _bank(config)
    f, (X, y), xq = generate_task(
        config.spec, member_seed, config.N, config.d, config.sigma, data_seed, config.x_dist, config.noise
    )
    lam, eta = config.penalty, config.step
    weights = _weights(config, bank)
    H_L, trace = tr.forward(weights, tr.init_hidden(X, y, xq, config.n), trace=True)
    problem = tr.problem_from_state(trace[2], eta, lam)
    gaps = tr.emulation_gap(trace, problem, eta, lam, config.tau)
    rho_L, _, _, phi = tr.extract_state(H_L)
    y_hat = tr.readout(H_L)
    truth = float(f(xq))
    ref = _reference_coefficients(f, bank)
    minimizer = lasso.oracle_solve(problem, tol=ORACLE_TOL)
    obj_min = lasso.lasso_objective(problem, minimizer)
    obj_L = lasso.lasso_objective(problem, rho_L)
    T = (config.L - 1) // 2
    exact = lasso.run_ista(problem, T)
    return EpisodeReport(
        y_hat=y_hat,
        truth=truth,
        squared_error=(y_hat - truth) ** 2,
        eps_opt_vs_rho_star=obj_L - lasso.lasso_objective(problem, ref.rho_star),
        eps_opt_vs_minimizer=obj_L - obj_min,
        l1_of_rho_L=float(np.abs(rho_L).sum()),
        max_emulation_residual=gaps.max_e,
        readout_consistency_gap=abs(y_hat - float(phi[:, -1] @ rho_L)),
        emulation_bounds_ok=gaps.all_ok,
        ista_gap_at_T=float(exact.objectives[-1]) - obj_min,
        penalty=lam,
        oracle_method=ref.method,
        member_seed=int(member_seed),
        data_seed=int(data_seed),
    )


def risk_envelope(config):
    """Raw magnitudes of the terms in the risk guarantee (no constants are certified)."""
    N = config.N
    return {
        "sqrt_logN_over_N": math.sqrt(math.log(N) / N) if N >= 2 else None,
        "n_over_L": config.n / config.L,
        "eps_dis": config.eps_dis,
        "eps_hat": config.eps_hat,
        "log_cover": config.log_cover,
        "barron_parameter": feat.barron_parameter(config.spec),
    }


def _seed_mse(config, weights, data_seed, chunk):
    f, (X, y), _ = generate_task(
        config.spec, config.member_seed, config.N, config.d, config.sigma, data_seed, config.x_dist, config.noise
    )
    queries = _query_batch(data_seed, config.test_points, config.d, config.x_dist)
    preds = np.empty(queries.shape[0])
    for lo in range(0, queries.shape[0], chunk):
        H0 = tr.init_hidden_batch(X, y, queries[lo : lo + chunk], config.n)
        H_L, _ = tr.forward(weights, H0)
        preds[lo : lo + chunk] = tr.readout(H_L)
    return float(np.mean((preds - f(queries)) ** 2))


def risk_samples(config, member_seed=None, data_seeds=None, chunk=64):
    """Per-seed test MSE of the transformer prediction, one fresh query batch per seed."""
    if member_seed is not None and member_seed != config.member_seed:
        config = config.replace(member_seed=member_seed)
    data_seeds = config.seeds if data_seeds is None else tuple(data_seeds)
    weights = _weights(config, _bank(config))
    return [_seed_mse(config, weights, s, chunk) for s in data_seeds]


def risk_estimate(config, member_seed=None, data_seeds=None):
    """(mean MSE, standard error) over at least two data seeds."""
    samples = risk_samples(config, member_seed, data_seeds)
    if len(samples) < 2:
        raise ConfigError("risk estimation needs at least two seeds")
    arr = np.array(samples)
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


# ---------------------------------------------------------------------------
# sweeps

SWEEP_COLUMNS = (
    "cell_key",
    "N",
    "L",
    "n",
    "tau",
    "lambda",
    "mean_mse",
    "stderr",
    "seed_mse",
    "error",
    "config",
)


def parse_grid(items):
    """['N=32,128', 'L=5'] -> {'N': [32, 128], 'L': [5]}."""
    grid = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"grid item {item!r} is not axis=v1,v2,...")
        axis, _, values = item.partition("=")
        axis = axis.strip()
        if axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
        vals = []
        for v in values.split(","):
            v = v.strip()
            if not v:
                continue
            if axis in ("N", "L", "n"):
                vals.append(int(v))
            elif axis == "lambda" and v == "auto":
                vals.append("auto")
            else:
                vals.append(float(v))
        if not vals:
            raise ConfigError(f"axis {axis} has no values")
        grid[axis] = vals
    return grid


def _cells(grid):
    axes = list(grid)
    for combo in itertools.product(*(grid[a] for a in axes)):
        yield dict(zip(axes, combo))


def _cell_key(cell):
    return ";".join(f"{k}={v}" for k, v in cell.items())


def _cell_config(config, cell):
    changes = {("lam" if k == "lambda" else k): v for k, v in cell.items()}
    return config.replace(**changes)


def _run_cell(config, cell):
    key = _cell_key(cell)
    try:
        cfg = _cell_config(config, cell)
        samples = risk_samples(cfg)
        arr = np.array(samples)
        stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else float("nan")
        return {
            "cell_key": key,
            "N": cfg.N,
            "L": cfg.L,
            "n": cfg.n,
            "tau": repr(cfg.tau),
            "lambda": repr(cfg.penalty),
            "mean_mse": repr(float(arr.mean())),
            "stderr": repr(stderr),
            "seed_mse": json.dumps(samples),
            "error": "",
            "config": cfg.to_json(),
        }
    except Exception as exc:  # recorded, never aborts the sweep
        row = {c: "" for c in SWEEP_COLUMNS}
        row.update(cell_key=key, error=f"{type(exc).__name__}: {exc}", config=config.to_json())
        for k, v in cell.items():
            row[k] = v
        return row


def _completed_keys(path):
    """Keys of fully written rows; a trailing partial line is cut off."""
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        return set(), False
    with open(path, newline="") as fh:
        text = fh.read()
    if not text.endswith("\n"):
        text = text[: text.rfind("\n") + 1]
        with open(path, "w", newline="") as fh:
            fh.write(text)
    if not text:
        return set(), False
    rows = list(csv.DictReader(io.StringIO(text)))
    return {r["cell_key"] for r in rows if r.get("config")}, True


def sweep(config, grid, out_path=None, stream=None, workers=None):
    """Run one risk estimate per grid cell and write CSV rows (with a config echo per row).

    Rows go to ``out_path`` (cells already in the file are skipped, so an
    interrupted sweep resumes where it stopped) or to the file-like ``stream``.
    Returns the rows produced by this call, in grid order.
    """
    if not grid:
        raise ConfigError("grid must have at least one axis")
    for axis, values in grid.items():
        if axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {axis!r}")
        if not values:
            raise ConfigError(f"axis {axis} has no values")
    cells = list(_cells(grid))
    done, has_header = _completed_keys(out_path) if out_path else (set(), False)
    todo = [c for c in cells if _cell_key(c) not in done]
    workers = config.workers if workers is None else workers

    fh = open(out_path, "a", newline="") if out_path else stream
    writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n") if fh else None
    if writer and not has_header:
        writer.writeheader()
    rows = []
    try:
        if workers > 1 and len(todo) > 1:
            pool = concurrent.futures.ProcessPoolExecutor(max_workers=workers)
            results = pool.map(_run_cell, itertools.repeat(config), todo)
        else:
            pool = None
            results = (_run_cell(config, c) for c in todo)
        # single writer, grid order
        for row in results:
            if writer:
                writer.writerow(row)
                fh.flush()
            rows.append(row)
        if pool:
            pool.shutdown()
    finally:
        if out_path:
            fh.close()
    return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def read_sweep_csv(path_or_text):
    text = path_or_text
    if os.path.exists(str(path_or_text)):
        with open(path_or_text, newline="") as fh:
            text = fh.read()
    return list(csv.DictReader(io.StringIO(text)))
