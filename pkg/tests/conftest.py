import pathlib

import numpy as np
import pytest

from barron_icl import features as feat
from barron_icl import harness

ROOT = pathlib.Path(__file__).resolve().parents[1]
DEFAULT_CONFIG = ROOT / "configs" / "default.json"


def four_atom_spec(d=4):
    rng = np.random.default_rng(0)
    om = rng.normal(size=(4, d))
    om = om / np.linalg.norm(om, axis=1, keepdims=True) * np.array([0.5, 1.0, 1.5, 2.0])[:, None]
    return feat.finite_spectrum(om, [0.25] * 4, b_max=0.25)


def unit_ball(rng, m, d):
    g = rng.normal(size=(m, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.uniform(size=(m, 1)) ** (1.0 / d)


@pytest.fixture(scope="session")
def spec4():
    return four_atom_spec()


@pytest.fixture(scope="session")
def default_config():
    return harness.load_config(DEFAULT_CONFIG)


def emulation_instance(tau, L=21, n=16, N=64):
    """Seeded episode (d=4) used for the transformer/ISTA equivalence checks."""
    from barron_icl import lasso
    from barron_icl import transformer as tr

    rng = np.random.default_rng(0)
    spec = four_atom_spec()
    f = feat.sample_member(spec, 1)
    bank = feat.make_feature_bank(spec, n, 100.0, 3)
    X = unit_ball(rng, N, 4)
    y = f(X) + 0.1 * rng.normal(size=N)
    xq = unit_ball(rng, 1, 4)[0]
    eta = lasso.default_eta(n + 1)
    lam = lasso.default_lambda(N, 0.1, feat.barron_parameter(spec), 0.0, 0.0)
    weights = tr.build_icl_transformer(bank, L, lam, tau, eta, N)
    H0 = tr.init_hidden(X, y, xq, n)
    return weights, H0, eta, lam
