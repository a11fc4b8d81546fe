"""In-context Lasso: objective, soft-thresholding, (inexact) ISTA, a reference solver, and KKT checks."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionMismatch, NegativeThreshold, NoConvergence, ValidationError

PHI_SLACK = 1e-9


def default_eta(p):
    """Stepsize 1 / (2 p) for p = n + 1 features; makes exact ISTA a descent method."""
    return 1.0 / (2.0 * p)


@dataclass(frozen=True, eq=False)
class LassoProblem:
    """min over rho of (1/N) |y - Phi rho|^2 + lam |rho|_1, solved with stepsize eta."""

    Phi: np.ndarray
    y: np.ndarray
    lam: float
    eta: float = None

    def __post_init__(self):
        Phi = np.array(self.Phi, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64)
        if Phi.ndim != 2 or y.ndim != 1:
            raise DimensionMismatch("Phi must be a matrix and y a vector")
        if Phi.shape[0] != y.shape[0] or Phi.shape[0] < 1:
            raise DimensionMismatch("Phi rows must match the number of labels")
        if Phi.shape[1] < 1:
            raise DimensionMismatch("Phi needs at least the constant column")
        if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(y))):
            raise ValidationError("Phi and y must be finite")
        if Phi.min() < -PHI_SLACK or Phi.max() > 1 + PHI_SLACK:
            raise ValidationError("feature entries must lie in [0, 1]")
        if np.any(np.abs(Phi[:, -1] - 1.0) > PHI_SLACK):
            raise ValidationError("last feature column must be all ones")
        lam = float(self.lam)
        if not (math.isfinite(lam) and lam >= 0):
            raise ValidationError("lambda must be finite and >= 0")
        eta = default_eta(Phi.shape[1]) if self.eta is None else float(self.eta)
        if not (math.isfinite(eta) and eta > 0):
            raise ValidationError("eta must be positive")
        Phi.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "eta", eta)

    @property
    def N(self):
        return self.Phi.shape[0]

    @property
    def p(self):
        """Number of coefficients (n features plus the constant)."""
        return self.Phi.shape[1]

    def to_dict(self):
        return {"Phi": self.Phi.tolist(), "y": self.y.tolist(), "lambda": self.lam, "eta": self.eta}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["Phi"], data["y"], data["lambda"], data.get("eta"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed lasso problem: {exc}") from exc


def _vec(problem, rho, name="rho"):
    rho = np.asarray(rho, dtype=np.float64)
    if rho.shape != (problem.p,):
        raise DimensionMismatch(f"{name} must have length {problem.p}, got shape {rho.shape}")
    return rho


def soft_threshold(z, kappa):
    """sign(z) max(|z| - kappa, 0), entrywise; ties at |z| = kappa give 0."""
    if kappa < 0:
        raise NegativeThreshold(f"threshold must be >= 0, got {kappa}")
    out = kernels.soft_threshold(np.asarray(z, dtype=np.float64), float(kappa))
    return float(out) if np.ndim(out) == 0 else out


def lasso_objective(problem, rho):
    rho = _vec(problem, rho)
    r = problem.y - problem.Phi @ rho
    return float(r @ r / problem.N + problem.lam * np.abs(rho).sum())


def smooth_gradient(problem, rho):
    """Gradient of the squared-loss part: -(2/N) Phi^T (y - Phi rho)."""
    return -(2.0 / problem.N) * (problem.Phi.T @ (problem.y - problem.Phi @ rho))


def ista_step(problem, rho_t, e_next=None):
    """One proximal-gradient step plus an injected residual e_next (zero when omitted)."""
    rho_t = _vec(problem, rho_t, "rho_t")
    z = rho_t - problem.eta * smooth_gradient(problem, rho_t)
    out = kernels.soft_threshold(z, problem.eta * problem.lam)
    if e_next is not None:
        out = out + _vec(problem, e_next, "e_next")
    return out


@dataclass(frozen=True, eq=False)
class LassoTrajectory:
    iterates: np.ndarray  # (T + 1, p), row 0 is the zero vector
    injected_residuals: np.ndarray  # (T, p), row t - 1 holds e_t
    objectives: np.ndarray  # (T + 1,)

    @property
    def T(self):
        return self.iterates.shape[0] - 1

    def to_csv(self, fh=None, reference_objective=None):
        """Write columns t, objective, gap_vs_oracle, l1_norm, injected_residual_l1.

        ``gap_vs_oracle`` is blank when no reference objective is given.
        Returns the CSV text when ``fh`` is None.
        """
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "objective", "gap_vs_oracle", "l1_norm", "injected_residual_l1"])
        for t in range(self.T + 1):
            obj = float(self.objectives[t])
            gap = "" if reference_objective is None else repr(obj - reference_objective)
            inj = 0.0 if t == 0 else float(np.abs(self.injected_residuals[t - 1]).sum())
            w.writerow([t, repr(obj), gap, repr(float(np.abs(self.iterates[t]).sum())), repr(inj)])
        return buf.getvalue() if fh is None else None


def read_trajectory_csv(text):
    """Parse the CSV written by :meth:`LassoTrajectory.to_csv` into a list of row dicts."""
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for r in rows:
        out.append(
            {
                "t": int(r["t"]),
                "objective": float(r["objective"]),
                "gap_vs_oracle": float(r["gap_vs_oracle"]) if r["gap_vs_oracle"] else None,
                "l1_norm": float(r["l1_norm"]),
                "injected_residual_l1": float(r["injected_residual_l1"]),
            }
        )
    return out


def run_ista(problem, T, residual_source=None):
    """T proximal-gradient steps from zero.

    ``residual_source`` may be None (exact steps), a (T, p) array whose row
    t - 1 is e_t, or a callable ``(t, rho_prev) -> e_t``.
    """
    if int(T) != T or T < 0:
        raise ValidationError("T must be a nonnegative integer")
    T = int(T)
    p = problem.p
    residuals = np.zeros((T, p))
    if residual_source is None:
        iterates = kernels.ista_path(problem.Phi, problem.y, problem.lam, problem.eta, T)
    else:
        table = None if callable(residual_source) else np.asarray(residual_source, dtype=np.float64)
        if table is not None and table.shape != (T, p):
            raise DimensionMismatch(f"residual table must have shape {(T, p)}")
        iterates = np.zeros((T + 1, p))
        for t in range(1, T + 1):
            e = table[t - 1] if table is not None else _vec(problem, residual_source(t, iterates[t - 1]), "e_t")
            residuals[t - 1] = e
            iterates[t] = ista_step(problem, iterates[t - 1], e)
    objectives = np.array([lasso_objective(problem, r) for r in iterates])
    for arr in (iterates, residuals, objectives):
        arr.setflags(write=False)
    return LassoTrajectory(iterates, residuals, objectives)


def kkt_residual(problem, rho):
    """Largest violation of the Lasso optimality conditions (0 at a minimizer)."""
    rho = _vec(problem, rho)
    g = smooth_gradient(problem, rho)
    active = rho != 0
    viol = np.where(
        active,
        np.abs(g + problem.lam * np.sign(rho)),
        np.maximum(np.abs(g) - problem.lam, 0.0),
    )
    return float(viol.max())


def _polish(problem, rho):
    """Solve the stationarity equations on the current support with fixed signs."""
    support = np.flatnonzero(rho)
    if support.size == 0:
        return None
    A = problem.Phi[:, support]
    signs = np.sign(rho[support])
    gram = (2.0 / problem.N) * (A.T @ A)
    rhs = (2.0 / problem.N) * (A.T @ problem.y) - problem.lam * signs
    sol = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    if np.any(np.sign(sol) != signs):
        return None
    out = np.zeros(problem.p)
    out[support] = sol
    return out


def oracle_solve(problem, tol=1e-8, max_iter=10**6, check_every=50):
    """High-accuracy minimizer with kkt_residual <= tol.

    Accelerated proximal gradient with adaptive restart and a backtracking
    safeguard on the stepsize, plus periodic fixed-sign polishing on the support.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    Phi, y, N, lam = problem.Phi, problem.y, problem.N, problem.lam
    lip = 2.0 * np.linalg.norm(Phi, 2) ** 2 / N
    step = 1.0 / max(lip, 1e-300)

    def smooth(r):
        res = y - Phi @ r
        return res @ res / N

    x = np.zeros(problem.p)
    z, s = x.copy(), 1.0
    best, best_kkt = x.copy(), kkt_residual(problem, x)
    if best_kkt <= tol:
        return best
    for it in range(1, max_iter + 1):
        g = smooth_gradient(problem, z)
        fz = smooth(z)
        while True:
            x_new = kernels.soft_threshold(z - step * g, step * lam)
            diff = x_new - z
            if smooth(x_new) <= fz + g @ diff + (diff @ diff) / (2 * step) + 1e-15 * abs(fz):
                break
            step *= 0.5
        s_new = 0.5 * (1 + math.sqrt(1 + 4 * s * s))
        if (z - x_new) @ (x_new - x) > 0:
            z, s_new = x_new.copy(), 1.0
        else:
            z = x_new + ((s - 1) / s_new) * (x_new - x)
        x, s = x_new, s_new
        if it % check_every == 0:
            for cand in (x, _polish(problem, x)):
                if cand is None:
                    continue
                k = kkt_residual(problem, cand)
                if k < best_kkt:
                    best, best_kkt = cand.copy(), k
            if best_kkt <= tol:
                return best
    raise NoConvergence(
        f"oracle_solve stopped at kkt residual {best_kkt:.3g} after {max_iter} steps (tol {tol:g})",
        max_iter=max_iter,
        tol=tol,
    )


def ista_gap_bound(problem, rho_ref, T):
    """Exact-ISTA guarantee |rho_ref|^2 / (2 eta T) on the objective gap after T steps from zero."""
    rho_ref = _vec(problem, rho_ref, "rho_ref")
    if T < 1:
        raise ValidationError("T must be >= 1")
    return float(rho_ref @ rho_ref / (2.0 * problem.eta * T))


def default_lambda(N, sigma_hat, C_F, eps_dis, eps_hat, c1=1.0):
    """Penalty level c1 [(log N/N)^(1/6) C_F^(-1/3) eps_hat^(2/3) + sqrt(log N/N)(C_F + sigma) + eps_dis^2 / C_F].

    Terms carrying negative powers of C_F are dropped when C_F = 0.
    """
    for name, val in (("sigma_hat", sigma_hat), ("C_F", C_F), ("eps_dis", eps_dis), ("eps_hat", eps_hat), ("c1", c1)):
        if not (math.isfinite(val) and val >= 0):
            raise ValidationError(f"{name} must be finite and >= 0")
    if N < 2:
        raise ValidationError("N must be >= 2")
    rate = math.log(N) / N
    out = math.sqrt(rate) * (C_F + sigma_hat)
    if C_F > 0:
        out += rate ** (1 / 6) * C_F ** (-1 / 3) * eps_hat ** (2 / 3) + eps_dis**2 / C_F
    return c1 * out
