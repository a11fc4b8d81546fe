"""Pure numpy implementations of the hot kernels (reference + fallback)."""
import numpy as np


def logistic(x):
    """Entrywise e^x / (e^x + 1), evaluated without overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logistic_attention(vh, qh, kh):
    """Return ``vh @ logistic(qh.T @ kh)`` for 2-D float64 arrays."""
    return np.asarray(vh, dtype=np.float64) @ logistic(np.asarray(qh).T @ np.asarray(kh))


def soft_threshold(z, kappa):
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.maximum(np.abs(z) - kappa, 0.0)


def ista_path(phi, y, lam, eta, n_steps, rho0=None):
    """Exact proximal-gradient iterates, shape (n_steps + 1, p)."""
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n_obs, p = phi.shape
    out = np.empty((n_steps + 1, p))
    rho = np.zeros(p) if rho0 is None else np.array(rho0, dtype=np.float64)
    out[0] = rho
    scale = 2.0 * eta / n_obs
    kappa = eta * lam
    for t in range(n_steps):
        z = rho + scale * (phi.T @ (y - phi @ rho))
        rho = soft_threshold(z, kappa)
        out[t + 1] = rho
    return out
