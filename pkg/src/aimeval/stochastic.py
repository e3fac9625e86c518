"""Fractional Gaussian noise, fractional Brownian motion, and bridges.

fGn is synthesised by circulant embedding (Davies-Harte): the autocovariance
is embedded in a circulant of size 2n whose FFT gives the eigenvalues; a
complex Gaussian vector shaped by sqrt(eigenvalues) transforms back to a real
sample with exactly the target covariance. When the embedding has negative
eigenvalues beyond tolerance the generator falls back to a dense Cholesky
factorisation of the Toeplitz covariance, which is exact for any admissible
Hurst index. The multipoint bridge conditions an FBM path on anchor values by
Gaussian conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EIG_TOL = 1e-8


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0x666d62]))


def _check_hurst(hurst: float) -> float:
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"Hurst index must be in (0, 1), got {hurst}")
    return float(hurst)


def fbm_covariance(t1, t2, hurst: float) -> np.ndarray | float:
    """Cov(B(t1), B(t2)) = (|t1|^2H + |t2|^2H - |t1-t2|^2H) / 2."""
    h2 = 2.0 * _check_hurst(hurst)
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    out = 0.5 * (np.abs(t1) ** h2 + np.abs(t2) ** h2 - np.abs(t1 - t2) ** h2)
    return float(out) if out.ndim == 0 else out


def fgn_autocov(lags, hurst: float) -> np.ndarray:
    """Autocovariance of unit-variance fGn at integer lags."""
    h2 = 2.0 * _check_hurst(hurst)
    k = np.abs(np.asarray(lags, dtype=np.float64))
    return 0.5 * (np.abs(k + 1) ** h2 - 2.0 * k ** h2 + np.abs(k - 1) ** h2)


def _fgn_cholesky(n: int, hurst: float, rng: np.random.Generator) -> np.ndarray:
    lags = np.arange(n)
    cov = fgn_autocov(np.abs(lags[:, None] - lags[None, :]), hurst)
    # tiny jitter keeps the factorisation alive at extreme H
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(n))
    return chol @ rng.standard_normal(n)


def fgn_davies_harte(n: int, hurst: float, seed=0) -> np.ndarray:
    """n unit-variance fGn increments, exact in distribution.

    Deterministic per seed. Falls back to the Cholesky route when the
    circulant embedding is not nonnegative definite within tolerance.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    hurst = _check_hurst(hurst)
    rng = _as_rng(seed)
    if n == 1:
        return rng.standard_normal(1)

    gamma = fgn_autocov(np.arange(n + 1), hurst)
    row = np.concatenate([gamma[:n], [gamma[n]], gamma[n - 1:0:-1]])
    eigs = np.fft.fft(row).real
    if eigs.min() < -EIG_TOL * max(1.0, eigs.max()):
        return _fgn_cholesky(n, hurst, rng)
    eigs = np.clip(eigs, 0.0, None)

    m = 2 * n
    z = np.empty(m, dtype=np.complex128)
    z[0] = rng.standard_normal()
    z[n] = rng.standard_normal()
    halves = rng.standard_normal((n - 1, 2)) / np.sqrt(2.0)
    z[1:n] = halves[:, 0] + 1j * halves[:, 1]
    z[n + 1:] = np.conj(z[1:n][::-1])
    return np.sqrt(m) * np.fft.ifft(np.sqrt(eigs) * z).real[:n]


def fbm_path(n: int, hurst: float, seed=0) -> np.ndarray:
    """FBM sampled at integer times 0..n-1 with B(0) = 0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return np.zeros(1)
    return np.concatenate([[0.0], np.cumsum(fgn_davies_harte(n - 1, hurst, seed))])


# ---------------------------------------------------------------------------
# multipoint bridge
# ---------------------------------------------------------------------------

@dataclass
class BridgeAnchors:
    """Anchor times in [0, 1], target values, and their FBM covariance."""

    times: np.ndarray
    values: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_points(cls, times, values, hurst: float) -> "BridgeAnchors":
        times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be 1-D of equal length")
        if np.any(times < 0) or np.any(times > 1):
            raise ValueError("anchor times must lie in [0, 1]")
        if len(np.unique(times)) != len(times):
            raise ValueError("anchor times must be distinct")
        cov = fbm_covariance(times[:, None], times[None, :], hurst)
        return cls(times, values, np.atleast_2d(cov))


def mfbb(interval_length: int, anchors: BridgeAnchors, hurst: float = 1e-5,
         seed=0, scale: float = 1.0) -> np.ndarray:
    """Multipoint fractional Brownian bridge on an evenly spaced grid.

    Draws an FBM path B on grid times t_j = (j+1)/L in (0, 1] (so no grid
    point sits at the degenerate time 0) and returns

        x'(t) = B(t) - (B(t_i) - G_i) [sigma^-1]_ij <B(t), B(t_j)>

    which is B conditioned on hitting the anchor values G_i at the anchor
    times. ``scale`` multiplies the fluctuation part only; the anchor
    conditioning is scale-consistent, so anchors are hit exactly for any
    scale, and scale -> 0 degenerates to the conditional mean through the
    anchors.
    """
    length = int(interval_length)
    if length < 1:
        raise ValueError("interval_length must be >= 1")
    hurst = _check_hurst(hurst)
    rng = _as_rng(seed)

    grid = (np.arange(length) + 1.0) / length
    # unit-spaced fGn cumsum, rescaled to the normalised grid by self-similarity
    path = scale * np.cumsum(fgn_davies_harte(length, hurst, rng)) * length ** (-hurst)

    t = np.asarray(anchors.times, dtype=np.float64)
    g = np.asarray(anchors.values, dtype=np.float64)
    sigma = np.array(anchors.cov, dtype=np.float64, copy=True)

    # path value at each anchor time; B(0) = 0 by definition
    idx = np.rint(t * length - 1.0).astype(int)
    b_at = np.where(idx >= 0, path[np.clip(idx, 0, length - 1)], 0.0)

    # the scale factor cancels between sigma^-1 and the cross covariance,
    # so conditioning with the unscaled matrices stays exact as scale -> 0
    cross = np.atleast_2d(fbm_covariance(grid[:, None], t[None, :], hurst))

    d = b_at - g
    try:
        weights = np.linalg.solve(sigma, d)
    except np.linalg.LinAlgError:
        weights = None
    if (weights is None or not np.all(np.isfinite(weights))
            or not np.allclose(sigma @ weights, d, atol=1e-9)):
        weights = np.linalg.solve(sigma + 1e-10 * np.eye(len(t)), d)
    return path - cross @ weights
