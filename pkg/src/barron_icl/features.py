"""Synthetic Barron classes, the universal ramp feature bank, and oracle coefficients.

Every class member is written in a one-sided cosine form

    f(x) - f(0) = sum over frequencies w of |F_f(w)| (cos(w.x + theta_f(w)) - cos theta_f(w)),

which is what the feature sampler and the closed-form coefficients consume.
Finite-spectrum classes carry it directly; the discretized logistic network
uses sigma(v) - 1/2 = int_0^inf sin(xi v) / sinh(pi xi) d xi along each direction.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats
from scipy.special import expit

from .errors import (
    DegenerateMeasure,
    DimensionMismatch,
    EmptyGrid,
    InputOutsideBall,
    UnsupportedClass,
    ValidationError,
)

KINDS = ("FiniteSpectrum", "TwoLayerLogistic", "Linear", "LinearCombination")
T_LOW, T_HIGH = -2.0, 1.0
BALL_SLACK = 1e-12  # rounding allowance for points generated on the unit sphere
_BOUND_RTOL = 1e-12
_MATCH_TOL = 1e-12


def _frozen(a, ndim=None, name="array"):
    arr = np.array(a, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        if arr.size == 0:
            arr = arr.reshape((0,) * ndim) if ndim == 1 else arr.reshape(0, 0)
        else:
            raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _within(value, bound):
    return abs(value) <= bound * (1.0 + _BOUND_RTOL) + 1e-300


# ---------------------------------------------------------------------------
# ramp


def ramp(z):
    """Clipped linear ramp: 0 below -1/2, 1 above 1/2, z + 1/2 in between.

    Equal to relu(z + 1/2) - relu(z - 1/2). Accepts scalars or arrays.
    """
    out = np.clip(np.asarray(z, dtype=np.float64) + 0.5, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def relu(z):
    return np.maximum(z, 0.0)


# ---------------------------------------------------------------------------
# class specification


@dataclass(frozen=True, eq=False)
class ClassSpec:
    """A synthetic Barron function class.

    Only the fields that belong to ``kind`` are meaningful; use the helper
    constructors (:func:`finite_spectrum`, :func:`two_layer_logistic`,
    :func:`linear_class`, :func:`linear_combination`) rather than filling them
    by hand.
    """

    kind: str
    d: int
    atom_omegas: np.ndarray = None
    atom_bounds: np.ndarray = None
    b_max: float = 0.0
    directions: np.ndarray = None
    rho_max: np.ndarray = None
    cell_weights: np.ndarray = None
    C_a: float = 0.0
    C_b: float = 0.0
    children: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown class kind {self.kind!r}")
        d = int(self.d)
        if d < 1:
            raise ValidationError("d must be >= 1")
        object.__setattr__(self, "d", d)
        empty = np.zeros((0, d))
        omegas = _frozen(empty if self.atom_omegas is None else self.atom_omegas, 2, "atom omegas")
        if omegas.shape[0] == 0:
            omegas = _frozen(empty, 2)
        bounds = _frozen([] if self.atom_bounds is None else self.atom_bounds, 1, "atom bounds")
        dirs = _frozen(empty if self.directions is None else self.directions, 2, "directions")
        if dirs.shape[0] == 0:
            dirs = _frozen(empty, 2)
        rmax = _frozen([] if self.rho_max is None else self.rho_max, 1, "rho_max")
        weights = self.cell_weights
        if weights is None:
            weights = np.ones(dirs.shape[0])
        weights = _frozen(weights, 1, "cell weights")
        for name, val in (("atom omegas", omegas), ("directions", dirs)):
            if val.shape[1] != d:
                raise DimensionMismatch(f"{name} have dimension {val.shape[1]}, expected {d}")
        object.__setattr__(self, "atom_omegas", omegas)
        object.__setattr__(self, "atom_bounds", bounds)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "rho_max", rmax)
        object.__setattr__(self, "cell_weights", weights)
        for name in ("b_max", "C_a", "C_b"):
            val = float(getattr(self, name))
            if not math.isfinite(val) or val < 0:
                raise ValidationError(f"{name} must be finite and >= 0")
            object.__setattr__(self, name, val)
        object.__setattr__(self, "children", tuple(self.children))
        getattr(self, "_check_" + self.kind)()

    def _check_FiniteSpectrum(self):
        k = self.atom_omegas.shape[0]
        if self.atom_bounds.shape != (k,):
            raise DimensionMismatch("one amplitude bound per atom is required")
        if np.any(self.atom_bounds < 0):
            raise ValidationError("amplitude bounds must be >= 0")
        if np.any(np.linalg.norm(self.atom_omegas, axis=1) == 0):
            raise ValidationError("atom frequencies must be nonzero")
        if k > 1 and np.unique(self.atom_omegas, axis=0).shape[0] != k:
            raise ValidationError("atom frequencies must be distinct")

    def _check_TwoLayerLogistic(self):
        j = self.directions.shape[0]
        if self.rho_max.shape != (j,) or self.cell_weights.shape != (j,):
            raise DimensionMismatch("rho_max and cell weights need one entry per direction")
        if np.any(self.rho_max < 0) or np.any(self.cell_weights < 0):
            raise ValidationError("rho_max and cell weights must be >= 0")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(norms == 0):
            raise ValidationError("directions must be nonzero")
        if j > 1:
            units = self.directions / norms[:, None]
            gram = units @ units.T - np.eye(j)
            if np.any(gram > 1 - 1e-12):
                raise ValidationError("directions must point along distinct rays")

    def _check_Linear(self):
        pass

    def _check_LinearCombination(self):
        if not self.children:
            raise ValidationError("a combination needs at least one child class")
        for child in self.children:
            if not isinstance(child, ClassSpec):
                raise ValidationError("children must be ClassSpec instances")
            if child.d != self.d:
                raise DimensionMismatch("child dimension differs from parent")

    # serialization -------------------------------------------------------

    def to_dict(self):
        out = {"kind": self.kind, "d": self.d}
        if self.kind == "FiniteSpectrum":
            out["atoms"] = [
                {"omega": w.tolist(), "s": float(s)}
                for w, s in zip(self.atom_omegas, self.atom_bounds)
            ]
            out["b_max"] = self.b_max
        elif self.kind == "TwoLayerLogistic":
            out["weights"] = {
                "directions": self.directions.tolist(),
                "rho_max": self.rho_max.tolist(),
                "cell_weights": self.cell_weights.tolist(),
            }
        elif self.kind == "Linear":
            out.update(C_a=self.C_a, C_b=self.C_b)
        else:
            out.update(children=[c.to_dict() for c in self.children], C_a=self.C_a, C_b=self.C_b)
        return out

    @classmethod
    def from_dict(cls, data):
        try:
            kind = data["kind"]
            d = int(data["d"])
            if kind == "FiniteSpectrum":
                atoms = data.get("atoms", [])
                return finite_spectrum(
                    [a["omega"] for a in atoms] if atoms else np.zeros((0, d)),
                    [a["s"] for a in atoms],
                    b_max=data.get("b_max", 0.0),
                    d=d,
                )
            if kind == "TwoLayerLogistic":
                w = data["weights"]
                return two_layer_logistic(w["directions"], w["rho_max"], w.get("cell_weights"))
            if kind == "Linear":
                return linear_class(d, data["C_a"], data["C_b"])
            if kind == "LinearCombination":
                kids = [cls.from_dict(c) for c in data["children"]]
                return linear_combination(kids, data["C_a"], data["C_b"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed class spec: {exc}") from exc
        raise ValidationError(f"unknown class kind {kind!r}")

    def __eq__(self, other):
        return isinstance(other, ClassSpec) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))


def finite_spectrum(omegas, s, b_max=0.0, d=None):
    omegas = np.asarray(omegas, dtype=np.float64)
    if d is None:
        if omegas.ndim != 2 or omegas.shape[0] == 0:
            raise ValidationError("pass d explicitly for an empty spectrum")
        d = omegas.shape[1]
    if omegas.size == 0:
        omegas = np.zeros((0, d))
    return ClassSpec("FiniteSpectrum", d, atom_omegas=omegas, atom_bounds=s, b_max=b_max)


def two_layer_logistic(directions, rho_max, cell_weights=None):
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    return ClassSpec(
        "TwoLayerLogistic",
        directions.shape[1],
        directions=directions,
        rho_max=rho_max,
        cell_weights=cell_weights,
    )


def linear_class(d, C_a, C_b):
    return ClassSpec("Linear", d, C_a=C_a, C_b=C_b)


def linear_combination(children, C_a, C_b):
    children = tuple(children)
    if not children:
        raise ValidationError("a combination needs at least one child class")
    return ClassSpec("LinearCombination", children[0].d, C_a=C_a, C_b=C_b, children=children)


# ---------------------------------------------------------------------------
# members


@dataclass(frozen=True, eq=False)
class FunctionInstance:
    """One member of a class. ``params`` keys depend on the parent kind.

    FiniteSpectrum: alpha, theta, b. TwoLayerLogistic: c (outer weights).
    Linear: a, b. LinearCombination: coef, b, plus ``members`` (one per child).
    """

    parent: ClassSpec
    params: dict
    members: tuple = ()

    def __post_init__(self):
        spec = self.parent
        p = {}
        for key, val in self.params.items():
            arr = np.array(val, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"parameter {key} is not finite")
            arr.setflags(write=False)
            p[key] = arr
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "members", tuple(self.members))
        try:
            getattr(self, "_check_" + spec.kind)(p)
        except KeyError as exc:
            raise ValidationError(f"missing parameter {exc}") from exc

    def _check_FiniteSpectrum(self, p):
        k = self.parent.atom_omegas.shape[0]
        if p["alpha"].shape != (k,) or p["theta"].shape != (k,):
            raise DimensionMismatch("alpha and theta need one entry per atom")
        if not all(_within(a, s) for a, s in zip(p["alpha"], self.parent.atom_bounds)):
            raise ValidationError("amplitude exceeds its atom bound")
        if not _within(float(p["b"]), self.parent.b_max):
            raise ValidationError("offset exceeds b_max")

    def _check_TwoLayerLogistic(self, p):
        spec = self.parent
        caps = spec.rho_max * spec.cell_weights
        if p["c"].shape != caps.shape:
            raise DimensionMismatch("one outer weight per direction is required")
        if not all(_within(c, m) for c, m in zip(p["c"], caps)):
            raise ValidationError("outer weight exceeds rho_max times cell weight")

    def _check_Linear(self, p):
        if p["a"].shape != (self.parent.d,):
            raise DimensionMismatch("slope must be a d-vector")
        if not _within(float(np.linalg.norm(p["a"])), self.parent.C_a):
            raise ValidationError("slope norm exceeds C_a")
        if not _within(float(p["b"]), self.parent.C_b):
            raise ValidationError("offset exceeds C_b")

    def _check_LinearCombination(self, p):
        kids = self.parent.children
        if p["coef"].shape != (len(kids),) or len(self.members) != len(kids):
            raise DimensionMismatch("one coefficient and one member per child class")
        if not _within(float(np.abs(p["coef"]).sum()), self.parent.C_a):
            raise ValidationError("coefficient l1 norm exceeds C_a")
        if not _within(float(p["b"]), self.parent.C_b):
            raise ValidationError("offset exceeds C_b")
        for m, kid in zip(self.members, kids):
            if not isinstance(m, FunctionInstance) or m.parent != kid:
                raise ValidationError("member does not belong to its child class")

    def __call__(self, x):
        """Evaluate at a d-vector (returns float) or an (m, d) batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.parent.d:
            raise DimensionMismatch(f"expected inputs of dimension {self.parent.d}")
        val = self._eval(X)
        return float(val[0]) if single else val

    def _eval(self, X):
        p, spec = self.params, self.parent
        if spec.kind == "FiniteSpectrum":
            return np.cos(X @ spec.atom_omegas.T + p["theta"]) @ p["alpha"] + float(p["b"])
        if spec.kind == "TwoLayerLogistic":
            return expit(X @ spec.directions.T) @ p["c"]
        if spec.kind == "Linear":
            return X @ p["a"] + float(p["b"])
        vals = np.stack([m._eval(X) for m in self.members], axis=1)
        return vals @ p["coef"] + float(p["b"])

    def at_origin(self):
        return float(self._eval(np.zeros((1, self.parent.d)))[0])

    def to_dict(self):
        out = {"parent": self.parent.to_dict(), "params": {k: v.tolist() for k, v in self.params.items()}}
        if self.members:
            out["members"] = [m.to_dict() for m in self.members]
        return out

    @classmethod
    def from_dict(cls, data):
        try:
            parent = ClassSpec.from_dict(data["parent"])
            members = tuple(cls.from_dict(m) for m in data.get("members", []))
            return cls(parent, dict(data["params"]), members)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed function instance: {exc}") from exc

    def __eq__(self, other):
        return isinstance(other, FunctionInstance) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))


def zero_member(spec):
    """The member with every parameter at zero (always inside the class)."""
    kind = spec.kind
    if kind == "FiniteSpectrum":
        k = spec.atom_omegas.shape[0]
        return FunctionInstance(spec, {"alpha": np.zeros(k), "theta": np.zeros(k), "b": 0.0})
    if kind == "TwoLayerLogistic":
        return FunctionInstance(spec, {"c": np.zeros(spec.directions.shape[0])})
    if kind == "Linear":
        return FunctionInstance(spec, {"a": np.zeros(spec.d), "b": 0.0})
    kids = tuple(zero_member(c) for c in spec.children)
    return FunctionInstance(spec, {"coef": np.zeros(len(kids)), "b": 0.0}, kids)


def _uniform_ball(rng, m, d):
    g = rng.normal(size=(m, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.uniform(size=(m, 1)) ** (1.0 / d)


def sample_member(spec, rng):
    """Draw a member with every parameter uniform inside its bound."""
    rng = np.random.default_rng(rng)
    kind = spec.kind
    if kind == "FiniteSpectrum":
        s = spec.atom_bounds
        return FunctionInstance(
            spec,
            {
                "alpha": rng.uniform(-1.0, 1.0, size=s.shape) * s,
                "theta": rng.uniform(0.0, 2 * np.pi, size=s.shape),
                "b": rng.uniform(-1.0, 1.0) * spec.b_max,
            },
        )
    if kind == "TwoLayerLogistic":
        caps = spec.rho_max * spec.cell_weights
        return FunctionInstance(spec, {"c": rng.uniform(-1.0, 1.0, size=caps.shape) * caps})
    if kind == "Linear":
        a = _uniform_ball(rng, 1, spec.d)[0] * spec.C_a
        return FunctionInstance(spec, {"a": a, "b": rng.uniform(-1.0, 1.0) * spec.C_b})
    kids = tuple(sample_member(c, rng) for c in spec.children)
    m = len(kids)
    coef = rng.dirichlet(np.ones(m)) * rng.choice([-1.0, 1.0], size=m)
    coef *= spec.C_a * rng.uniform() ** (1.0 / m)
    return FunctionInstance(spec, {"coef": coef, "b": rng.uniform(-1.0, 1.0) * spec.C_b}, kids)


def linear_as_spectrum(a, b=0.0, scale=0.05):
    """Low-frequency cosine stand-in for x -> a.x + b.

    Uses (|a|/h) cos(h a_hat.x - pi/2) = (|a|/h) sin(h a_hat.x), whose deviation
    from a.x on the unit ball is at most |a| h^2 / 6.
    """
    a = np.asarray(a, dtype=np.float64)
    norm = float(np.linalg.norm(a))
    if norm == 0:
        raise ValidationError("slope must be nonzero")
    if scale <= 0:
        raise ValidationError("scale must be positive")
    spec = finite_spectrum([a / norm * scale], [norm / scale], b_max=abs(b))
    f = FunctionInstance(spec, {"alpha": [norm / scale], "theta": [-np.pi / 2], "b": b})
    return spec, f


# ---------------------------------------------------------------------------
# Fourier data


def _atomic_envelope(spec):
    """Frequencies and envelope bounds for classes with atomic spectra."""
    if spec.kind == "FiniteSpectrum":
        return spec.atom_omegas, spec.atom_bounds
    if spec.kind == "LinearCombination":
        if not all(c.kind == "FiniteSpectrum" for c in spec.children):
            raise UnsupportedClass("combinations are sampled only over finite-spectrum children")
        stacked = np.concatenate([c.atom_omegas for c in spec.children], axis=0)
        if stacked.shape[0] == 0:
            return stacked, np.zeros(0)
        omegas, inverse = np.unique(stacked, axis=0, return_inverse=True)
        env = np.zeros(omegas.shape[0])
        bounds = np.concatenate([c.atom_bounds for c in spec.children])
        np.maximum.at(env, inverse.ravel(), bounds)
        return omegas, spec.C_a * env
    raise UnsupportedClass(f"{spec.kind} has no atomic spectrum")


def _atomic_member_data(f, omegas):
    """Complex amplitudes of member f at the given frequencies (one-sided)."""
    spec = f.parent
    if spec.kind == "FiniteSpectrum":
        p = f.params
        return p["alpha"] * np.exp(1j * p["theta"])
    amp = np.zeros(omegas.shape[0], dtype=complex)
    for coef, child in zip(f.params["coef"], f.members):
        for w, a, th in zip(child.parent.atom_omegas, child.params["alpha"], child.params["theta"]):
            idx = _find_row(omegas, w)
            amp[idx] += coef * a * np.exp(1j * th)
    return amp


def _find_row(table, row):
    hits = np.flatnonzero(np.all(np.abs(table - row) <= _MATCH_TOL * (1 + np.abs(row)), axis=1))
    if hits.size == 0:
        raise UnsupportedClass("bank frequency is not in the support of the class spectrum")
    return int(hits[0])


def fourier_moment(spec):
    """Integral of |w| F^sup(w): the first moment of the sup-envelope."""
    if spec.kind == "Linear":
        return spec.C_a
    if spec.kind == "TwoLayerLogistic":
        norms = np.linalg.norm(spec.directions, axis=1)
        return float(np.sum(spec.rho_max * spec.cell_weights * norms)) / 4.0
    omegas, env = _atomic_envelope(spec)
    return float(np.sum(np.linalg.norm(omegas, axis=1) * env))


def measure_normalizer(spec):
    """Total mass 3 * int |w| F^sup(w) dw of the unnormalized (t, w) law."""
    if spec.kind == "Linear":
        return 0.0
    return 3.0 * fourier_moment(spec)


def barron_parameter(spec):
    """Barron parameter of the class (exact for Linear, an upper bound otherwise)."""
    kind = spec.kind
    if kind == "Linear":
        return spec.C_a + spec.C_b
    if kind == "FiniteSpectrum":
        # sup |f(0)| picks up every cosine amplitude as well as the offset
        moment = float(np.sum(np.linalg.norm(spec.atom_omegas, axis=1) * spec.atom_bounds))
        return spec.b_max + float(np.sum(spec.atom_bounds)) + moment
    if kind == "TwoLayerLogistic":
        norms = np.linalg.norm(spec.directions, axis=1)
        return float(np.sum(spec.rho_max * spec.cell_weights * (norms + 2.0))) / 4.0
    return 2.0 * spec.C_a * max(barron_parameter(c) for c in spec.children) + spec.C_b


def member_barron_value(f):
    """|f(0)| + int |w| |F_f(w)| for a single member (what the class parameter bounds)."""
    spec = f.parent
    origin = abs(f.at_origin())
    if spec.kind == "Linear":
        return origin + float(np.linalg.norm(f.params["a"]))
    if spec.kind == "TwoLayerLogistic":
        norms = np.linalg.norm(spec.directions, axis=1)
        return origin + float(np.sum(np.abs(f.params["c"]) * norms)) / 4.0
    if spec.kind == "LinearCombination" and not all(
        c.kind == "FiniteSpectrum" for c in spec.children
    ):
        raise UnsupportedClass("member value needs finite-spectrum children")
    omegas, _ = _atomic_envelope(spec)
    amp = np.abs(_atomic_member_data(f, omegas))
    return origin + float(np.sum(np.linalg.norm(omegas, axis=1) * amp))


# ---------------------------------------------------------------------------
# sampling from the (t, w) law


@functools.lru_cache(maxsize=None)
def _sinh_table(step=1e-3, floor=1e-12):
    """Inverse-CDF table for the density 4u / sinh(pi u) on (0, inf)."""

    def density(u):
        u = np.asarray(u, dtype=np.float64)
        safe = np.where(u == 0, 1.0, u)
        return np.where(u == 0, 4.0 / np.pi, 4.0 * safe / np.sinh(np.pi * safe))

    upper = step
    while density(upper) >= floor:
        upper += 1.0
    grid = np.arange(0.0, upper + step, step)
    cdf = integrate.cumulative_trapezoid(density(grid), grid, initial=0.0)
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return cdf[keep], grid[keep]


def sample_sinh_magnitude(rng, size=None):
    """Draw u from the density proportional to u / sinh(pi u)."""
    cdf, grid = _sinh_table()
    return np.interp(rng.uniform(size=size), cdf, grid)


def _sample_lambda(spec, rng, n):
    if spec.kind == "Linear":
        raise DegenerateMeasure("linear class: the gradient spectrum sits at the origin")
    gamma = measure_normalizer(spec)
    if not gamma > 0:
        raise DegenerateMeasure("class has no Fourier mass away from the origin")
    if spec.kind == "TwoLayerLogistic":
        norms = np.linalg.norm(spec.directions, axis=1)
        w = spec.rho_max * spec.cell_weights * norms
        idx = rng.choice(len(w), size=n, p=w / w.sum())
        u = sample_sinh_magnitude(rng, size=n)
        omegas = spec.directions[idx] * u[:, None]
    else:
        atoms, env = _atomic_envelope(spec)
        w = np.linalg.norm(atoms, axis=1) * env
        idx = rng.choice(len(w), size=n, p=w / w.sum())
        omegas = atoms[idx]
    t = rng.uniform(T_LOW, T_HIGH, size=n)
    return t, omegas


def sample_lambda_measure(spec, rng):
    """One draw (t, w): t uniform on [-2, 1], w weighted by |w| F^sup(w)."""
    t, omegas = _sample_lambda(spec, np.random.default_rng(rng), 1)
    return float(t[0]), omegas[0].copy()


# ---------------------------------------------------------------------------
# feature bank


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """n sampled thresholds and frequencies plus the ramp sharpness."""

    t: np.ndarray
    omegas: np.ndarray
    tau: float
    seed: int = 0

    def __post_init__(self):
        t = _frozen(self.t, 1, "thresholds")
        omegas = _frozen(self.omegas, 2, "frequencies")
        if t.shape[0] < 1:
            raise ValidationError("a bank needs at least one feature")
        if omegas.shape[0] != t.shape[0]:
            raise DimensionMismatch("one frequency per threshold is required")
        if np.any(t < T_LOW) or np.any(t > T_HIGH):
            raise ValidationError("thresholds must lie in [-2, 1]")
        norms = np.linalg.norm(omegas, axis=1)
        if np.any(norms == 0):
            raise ValidationError("frequencies must be nonzero")
        tau = float(self.tau)
        if not (math.isfinite(tau) and tau > 4):
            raise ValidationError("tau must exceed 4")
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "seed", seed)

    @property
    def n(self):
        return self.t.shape[0]

    @property
    def d(self):
        return self.omegas.shape[1]

    @functools.cached_property
    def unit_omegas(self):
        u = self.omegas / np.linalg.norm(self.omegas, axis=1, keepdims=True)
        u.setflags(write=False)
        return u

    def to_dict(self):
        return {
            "n": self.n,
            "tau": self.tau,
            "seed": self.seed,
            "pairs": [{"t": float(t), "omega": w.tolist()} for t, w in zip(self.t, self.omegas)],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            pairs = data["pairs"]
            if int(data["n"]) != len(pairs):
                raise ValidationError("n does not match the number of pairs")
            return cls(
                t=[p["t"] for p in pairs],
                omegas=[p["omega"] for p in pairs],
                tau=data["tau"],
                seed=data.get("seed", 0),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed feature bank: {exc}") from exc

    def __eq__(self, other):
        return isinstance(other, FeatureBank) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))


def make_feature_bank(spec, n, tau, seed):
    """Draw n i.i.d. (t, w) pairs; deterministic in ``seed``."""
    if int(n) != n or n < 1:
        raise ValidationError("n must be a positive integer")
    if not tau > 4:
        raise ValidationError("tau must exceed 4")
    rng = np.random.default_rng(int(seed))
    t, omegas = _sample_lambda(spec, rng, int(n))
    return FeatureBank(t=t, omegas=omegas, tau=tau, seed=int(seed))


def check_ball(X):
    norms = np.linalg.norm(np.atleast_2d(X), axis=1)
    if np.any(norms > 1.0 + BALL_SLACK):
        raise InputOutsideBall(f"input norm {norms.max():.6g} exceeds 1")


def eval_features(bank, x):
    """Feature vector [ramp features..., 1] for a point, or one row per point for a batch."""
    x = np.asarray(x, dtype=np.float64)
    X = np.atleast_2d(x)
    if X.shape[1] != bank.d:
        raise DimensionMismatch(f"expected inputs of dimension {bank.d}")
    check_ball(X)
    z = bank.tau * (X @ bank.unit_omegas.T - bank.t)
    out = np.empty((X.shape[0], bank.n + 1))
    out[:, :-1] = ramp(z)
    out[:, -1] = 1.0
    return out[0] if x.ndim == 1 else out


def feature_matrix(bank, X):
    return eval_features(bank, np.atleast_2d(X))


# ---------------------------------------------------------------------------
# oracle coefficients


def gamma_coefficient(norm_omega, theta, t):
    """Density whose step-function integral reproduces g(z) = (cos(|w| z + theta) - cos theta) / |w|.

    Returns g'(t) on [-1, 1], sign(g(-1)) on [-1 - |g(-1)|, -1), zero elsewhere.
    Broadcasts over array inputs.
    """
    norm_omega = np.asarray(norm_omega, dtype=np.float64)
    if np.any(norm_omega <= 0):
        raise ValidationError("frequency norm must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    g_left = (np.cos(theta - norm_omega) - np.cos(theta)) / norm_omega
    inside = (t >= -1.0) & (t <= 1.0)
    tail = (t < -1.0) & (t >= -1.0 - np.abs(g_left))
    out = np.where(inside, -np.sin(norm_omega * t + theta), 0.0)
    out = np.where(tail, np.sign(g_left), out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class OracleCoefficients:
    """Stored layout: rho_star[:n] holds the per-feature weights divided by n; rho_star[n] is f(0)."""

    rho_star: np.ndarray
    certified_error: float
    method: str = "closed_form"

    def __post_init__(self):
        object.__setattr__(self, "rho_star", _frozen(self.rho_star, 1, "rho_star"))
        object.__setattr__(self, "certified_error", float(self.certified_error))
        if self.method not in ("closed_form", "empirical"):
            raise ValidationError("method must be closed_form or empirical")

    def l1_budget(self):
        """|f(0)| + (1/n) sum |rho*_i|, the quantity held below four times the Barron parameter."""
        return float(abs(self.rho_star[-1]) + np.abs(self.rho_star[:-1]).sum())

    def to_dict(self):
        return {
            "rho_star": self.rho_star.tolist(),
            "certified_error": self.certified_error,
            "method": self.method,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["rho_star"], data["certified_error"], data.get("method", "closed_form"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed oracle coefficients: {exc}") from exc


def _per_feature_phase_ratio(f, bank):
    """For each bank frequency: (|w|, theta_f(w), |F_f(w)| / F^sup(w))."""
    spec = f.parent
    norms = np.linalg.norm(bank.omegas, axis=1)
    if spec.kind == "TwoLayerLogistic":
        dir_norms = np.linalg.norm(spec.directions, axis=1)
        units = spec.directions / dir_norms[:, None]
        caps = spec.rho_max * spec.cell_weights
        idx = np.empty(bank.n, dtype=int)
        for i, u in enumerate(bank.unit_omegas):
            hits = np.flatnonzero(units @ u >= 1.0 - 1e-12)
            if hits.size == 0:
                raise UnsupportedClass("bank frequency is not along any class direction")
            idx[i] = hits[0]
        c = f.params["c"][idx]
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(caps[idx] > 0, np.abs(c) / caps[idx], 0.0)
        theta = -0.5 * np.pi * np.sign(c)
        return norms, theta, ratio
    atoms, env = _atomic_envelope(spec)
    amp = _atomic_member_data(f, atoms)
    idx = np.array([_find_row(atoms, w) for w in bank.omegas], dtype=int)
    a = amp[idx]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(env[idx] > 0, np.abs(a) / env[idx], 0.0)
    return norms, np.angle(a), ratio


def closed_form_coefficients(f, bank):
    """Raw per-feature weights rho*_i (before the 1/n scaling)."""
    spec = f.parent
    if spec.kind == "Linear":
        raise UnsupportedClass("linear class has no Fourier density away from the origin")
    gamma_total = measure_normalizer(spec)
    norms, theta, ratio = _per_feature_phase_ratio(f, bank)
    return gamma_total * gamma_coefficient(norms, theta, bank.t) * ratio


def ball_grid(d, m=1000, seed=0):
    """m quasi-uniform points in the unit d-ball from a scrambled Halton sequence."""
    if m < 1:
        raise EmptyGrid("grid needs at least one point")
    cube = stats.qmc.Halton(d=d + 1, scramble=True, seed=seed).random(m)
    cube = np.clip(cube, 1e-12, 1 - 1e-12)
    if d == 1:
        direction = np.where(cube[:, :1] < 0.5, -1.0, 1.0)
    else:
        g = stats.norm.ppf(cube[:, :d])
        direction = g / np.linalg.norm(g, axis=1, keepdims=True)
    radius = cube[:, d] ** (1.0 / d)
    return direction * radius[:, None]


def approximation_error(f, bank, rho_star, grid):
    """Largest deviation of f - f(0) from the scaled feature expansion over ``grid``."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise EmptyGrid("approximation grid is empty")
    grid = np.atleast_2d(grid)
    rho_star = np.asarray(rho_star, dtype=np.float64)
    if rho_star.shape != (bank.n + 1,):
        raise DimensionMismatch("coefficient vector must have length n + 1")
    feats = eval_features(bank, grid)[:, :-1]
    resid = f(grid) - f.at_origin() - feats @ rho_star[:-1]
    return float(np.max(np.abs(resid)))


def oracle_coefficients(f, bank, grid=None):
    """Closed-form coefficients in the stored layout, with the measured grid error."""
    raw = closed_form_coefficients(f, bank)
    rho = np.append(raw / bank.n, f.at_origin())
    if grid is None:
        grid = ball_grid(bank.d)
    return OracleCoefficients(rho, approximation_error(f, bank, rho, grid), "closed_form")


def _project_l1(v, radius):
    if radius <= 0:
        return np.zeros_like(v)
    a = np.abs(v)
    if a.sum() <= radius:
        return v
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.nonzero(u * np.arange(1, len(u) + 1) > css - radius)[0][-1]
    shift = (css[k] - radius) / (k + 1.0)
    return np.sign(v) * np.maximum(a - shift, 0.0)


def empirical_oracle(f, bank, grid=None, l1_cap=None, iters=3000):
    """Least-squares fit of f - f(0) on a grid with an l1 cap (default 4 C_F - |f(0)|).

    Used for classes without closed-form Fourier data; tagged ``empirical``.
    """
    if grid is None:
        grid = ball_grid(bank.d, m=max(1000, 4 * bank.n))
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    if grid.shape[0] == 0:
        raise EmptyGrid("fit grid is empty")
    origin = f.at_origin()
    if l1_cap is None:
        l1_cap = max(4.0 * barron_parameter(f.parent) - abs(origin), 0.0) * (1 - 1e-9)
    A = eval_features(bank, grid)[:, :-1]
    target = f(grid) - origin
    step = 1.0 / max(np.linalg.norm(A, 2) ** 2, 1e-300)
    x = np.zeros(bank.n)
    z, s = x.copy(), 1.0
    for _ in range(iters):
        x_new = _project_l1(z - step * (A.T @ (A @ z - target)), l1_cap)
        s_new = 0.5 * (1 + math.sqrt(1 + 4 * s * s))
        z = x_new + ((s - 1) / s_new) * (x_new - x)
        x, s = x_new, s_new
    rho = np.append(x, origin)
    return OracleCoefficients(rho, approximation_error(f, bank, rho, grid), "empirical")


def ramp_offset_bound(tau, resolution=1e-6):
    """Grid minimum of 2e + max(1/2 - tau e, 0) over e in (0, 1/2]; equals 1/tau for tau >= 2."""
    e = np.arange(resolution, 0.5 + resolution / 2, resolution)
    return float(np.min(2 * e + np.maximum(0.5 - tau * e, 0.0)))
