"""Spectral shape descriptors computed from a truncated LBO spectrum.

Four descriptors are provided: the eigenvalue sequence itself (a global
descriptor), the heat kernel signature, its scale-invariant log-Fourier
variant, and the wave kernel signature (per-vertex signatures).

The constant zero mode is excluded from the heat and wave signatures: it
carries no shape information and its zero eigenvalue has no logarithm. The
one exception is the scale-invariant signature, whose construction needs
the large-time heat plateau ``1/area`` contributed by the zero mode --
without it the log-heat derivative diverges at the end of the sampling
window and scale invariance is lost.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .spectral import Spectrum
from .validation import readonly

LOG_TIME_WINDOW = 4.0 * np.log(10.0)


@dataclass(frozen=True)
class GlobalDescriptor:
    """Whole-shape descriptor vector (currently only ``shapedna``)."""

    values: np.ndarray
    kind: str = "shapedna"

    def __post_init__(self):
        values = readonly(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ValueError("global descriptor must be a flat vector")
        if self.kind == "shapedna":
            if values[0] != 1.0:
                raise ValueError("shapedna must be normalized so values[0] == 1")
            if np.any(values < 0) or np.any(np.diff(values) < 0):
                raise ValueError("shapedna values must be nonnegative and non-decreasing")


@dataclass(frozen=True)
class PointSignatureField:
    """Per-vertex signature matrix with the sampling grid that produced it.

    ``signatures`` has one row per vertex; ``params`` records the time /
    frequency / energy grid so encodings are reproducible.
    """

    signatures: np.ndarray
    kind: str
    params: dict

    EXPECTED_DIM = {"hks": 50, "sihks": 50, "wks": 100}

    def __post_init__(self):
        sig = readonly(np.asarray(self.signatures, dtype=np.float64))
        object.__setattr__(self, "signatures", sig)
        if sig.ndim != 2:
            raise ValueError("signatures must be an (N, D) matrix")
        if not np.all(np.isfinite(sig)):
            raise ValueError(f"{self.kind} signatures contain NaN or Inf")
        if self.kind == "hks" and np.any(sig <= 0):
            raise ValueError("hks signatures must be strictly positive")

    @property
    def dim(self) -> int:
        return self.signatures.shape[1]


def _positive_modes(spec: Spectrum):
    """Eigenpairs with significantly positive eigenvalues (zero mode dropped)."""
    lam = spec.eigenvalues
    keep = lam > 1e-8 * abs(lam[-1])
    if not keep.any():
        raise ValueError("spectrum has no positive eigenvalues")
    return lam[keep], spec.eigenfunctions[:, keep]


def shape_dna(spec: Spectrum, m: int = 35) -> GlobalDescriptor:
    """First ``m`` nonzero eigenvalues, normalized by the first.

    Requires at least ``m + 1`` eigenvalues (the zero mode is skipped).
    """
    if spec.k < m + 1:
        raise ValueError(f"need at least {m + 1} eigenvalues, spectrum has {spec.k}")
    lam = spec.eigenvalues[1 : m + 1]
    if lam[0] <= 0:
        raise ValueError("first nonzero eigenvalue must be positive")
    return GlobalDescriptor(values=lam / lam[0], kind="shapedna")


def _hks_matrix(eigenvalues, eigenfunctions, times):
    # signatures[x, j] = sum_i exp(-lambda_i t_j) phi_i(x)^2
    decay = np.exp(-np.outer(eigenvalues, times))
    return (eigenfunctions**2) @ decay


def hks(spec: Spectrum, n_times: int = 50, times=None) -> PointSignatureField:
    """Heat kernel signature: remaining heat at each vertex over time.

    The default time grid is log-uniform on
    ``[4 ln 10 / lambda_max, 4 ln 10 / lambda_1]``.
    """
    lam, phi = _positive_modes(spec)
    if times is None:
        times = np.geomspace(LOG_TIME_WINDOW / lam[-1], LOG_TIME_WINDOW / lam[0], n_times)
    else:
        times = np.asarray(times, dtype=np.float64)
    sig = _hks_matrix(lam, phi, times)
    return PointSignatureField(sig, kind="hks", params={"times": times.tolist()})


def sihks(spec: Spectrum, n_freq: int = 50, alpha: float = 2.0,
          tau_min: float = 1.0, tau_max: float = 25.0,
          tau_step: float = 1.0 / 16.0) -> PointSignatureField:
    """Scale-invariant heat signature via the log-heat Fourier magnitude.

    Heat is sampled at times ``alpha**tau`` on a fixed tau grid; mesh
    scaling then acts as a pure shift in tau plus a gain. Taking the
    discrete derivative of the log kills the gain and the Fourier magnitude
    quotients out the shift, leaving the first ``n_freq`` low-frequency
    magnitudes per vertex.

    Raises
    ------
    ValueError
        If any heat sample underflows to zero (mesh too small for the tau
        window), reported with the vertex and tau.
    """
    n_tau = int(round((tau_max - tau_min) / tau_step)) + 1
    tau = tau_min + tau_step * np.arange(n_tau)
    times = np.power(alpha, tau)

    # All modes, including the constant one: its plateau keeps the log-heat
    # derivative bounded at large tau, which the construction relies on.
    heat = _hks_matrix(spec.eigenvalues, spec.eigenfunctions, times)
    if np.any(heat <= 0.0):
        x, j = np.argwhere(heat <= 0.0)[0]
        raise ValueError(
            f"heat sample underflowed to zero at vertex {int(x)}, tau = {tau[j]:.4f}; "
            "the mesh is too small for the tau window"
        )

    log_heat = np.log(heat)
    deriv = np.diff(log_heat, axis=1)

    # Direct DFT of the derivative sequence; only n_freq low bins are kept.
    n = deriv.shape[1]
    freqs = np.arange(n_freq)
    fourier = np.exp(-2j * np.pi * np.outer(freqs, np.arange(n)) / n)
    sig = np.abs(deriv @ fourier.T)

    params = {
        "alpha": alpha,
        "tau_min": tau_min,
        "tau_max": tau_max,
        "tau_step": tau_step,
        "n_freq": n_freq,
    }
    return PointSignatureField(sig, kind="sihks", params=params)


def wks(spec: Spectrum, n_energies: int = 100, sigma_scale: float = 7.0) -> PointSignatureField:
    """Wave kernel signature: energy-band presence probability per vertex.

    Energies are linear on ``[log lambda_1, log lambda_max]``; each band is
    a Gaussian of width ``sigma_scale`` grid spacings, normalized so its
    eigenvalue weights sum to one.
    """
    lam, phi = _positive_modes(spec)
    log_lam = np.log(lam)
    energies = np.linspace(log_lam[0], log_lam[-1], n_energies)
    spacing = (log_lam[-1] - log_lam[0]) / (n_energies - 1) if n_energies > 1 else 0.0
    sigma = sigma_scale * spacing
    if sigma <= 0.0:
        sigma = 1.0  # degenerate single-band grid

    weights = np.exp(-((energies[None, :] - log_lam[:, None]) ** 2) / (2.0 * sigma**2))
    norm = weights.sum(axis=0)
    sig = ((phi**2) @ weights) / norm[None, :]

    params = {"energies": energies.tolist(), "sigma": sigma}
    return PointSignatureField(sig, kind="wks", params=params)


def save_signatures(field: PointSignatureField, directory) -> None:
    """Write ``signatures_<kind>.csv`` and ``params_<kind>.json``."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    np.savetxt(os.path.join(directory, f"signatures_{field.kind}.csv"),
               field.signatures, delimiter=",")
    with open(os.path.join(directory, f"params_{field.kind}.json"), "w", encoding="utf-8") as fh:
        json.dump(field.params, fh, indent=2, sort_keys=True)


def load_signatures(directory, kind: str) -> PointSignatureField:
    directory = os.fspath(directory)
    sig = np.loadtxt(os.path.join(directory, f"signatures_{kind}.csv"),
                     delimiter=",", ndmin=2)
    with open(os.path.join(directory, f"params_{kind}.json"), "r", encoding="utf-8") as fh:
        params = json.load(fh)
    return PointSignatureField(sig, kind=kind, params=params)


def save_shape_dna(desc: GlobalDescriptor, directory) -> None:
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    np.savetxt(os.path.join(directory, "shapedna.csv"),
               desc.values[None, :], delimiter=",")


def load_shape_dna(directory) -> GlobalDescriptor:
    values = np.loadtxt(os.path.join(os.fspath(directory), "shapedna.csv"),
                        delimiter=",", ndmin=1)
    return GlobalDescriptor(values=values, kind="shapedna")
