"""Graph Fourier transform and Meyer spectral graph wavelets."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    IndexOutOfRange,
    NonpositiveLambdaMax,
    TooLarge,
    ValidationError,
)
from .proxy import Laplacian

DEFAULT_CAP = 3000
N_SCALES = 7
SCALE_RATIO = 20.0  # lambda_max / lambda_min swept by the scale grid
PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])


@dataclass(frozen=True)
class WaveletFeature:
    node_index: int
    coefficients: tuple


def eigendecompose(L, cap: int = DEFAULT_CAP) -> SpectralBasis:
    M = L.matrix if isinstance(L, Laplacian) else np.asarray(L, dtype=float)
    n = M.shape[0]
    if n > cap:
        raise TooLarge(f"{n} nodes exceeds the dense eigensolver cap of {cap}")
    try:
        w, U = sla.eigh(M, check_finite=True)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise ConvergenceFailure(str(exc)) from None
    if w[0] < -PSD_TOL * max(1.0, abs(w[-1])):
        raise ValidationError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3g})")
    w = np.where(w < 0.0, 0.0, w)
    w.setflags(write=False)
    U.setflags(write=False)
    return SpectralBasis(w, U)


def gft(basis: SpectralBasis, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape[0] != basis.n:
        raise DimensionMismatch(f"signal has {f.shape[0]} entries, graph has {basis.n} nodes")
    return basis.eigenvectors.T @ f


def igft(basis: SpectralBasis, F) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    if F.shape[0] != basis.n:
        raise DimensionMismatch(f"spectrum has {F.shape[0]} entries, graph has {basis.n} nodes")
    return basis.eigenvectors @ F


def _nu(t):
    return t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


def meyer_kernel(x):
    """Band-pass Meyer wavelet kernel; nonzero only on (2/3, 8/3), peak 1 at 4/3."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    rise = (x >= 2.0 / 3.0) & (x < 4.0 / 3.0)
    fall = (x >= 4.0 / 3.0) & (x < 8.0 / 3.0)
    out[rise] = np.sin(0.5 * np.pi * _nu(1.5 * x[rise] - 1.0))
    out[fall] = np.cos(0.5 * np.pi * _nu(0.75 * x[fall] - 1.0))
    return out if out.ndim else float(out)


def meyer_scaling(x):
    """Low-pass companion of ``meyer_kernel`` (1 below 2/3, zero from 4/3)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[x < 2.0 / 3.0] = 1.0
    band = (x >= 2.0 / 3.0) & (x < 4.0 / 3.0)
    out[band] = np.cos(0.5 * np.pi * _nu(1.5 * x[band] - 1.0))
    return out if out.ndim else float(out)


def scale_grid(lambda_max: float, s_max: int = N_SCALES, ratio: float = SCALE_RATIO) -> np.ndarray:
    """Log-spaced scales, largest first.

    The smallest scale puts the kernel peak (x = 4/3) at ``lambda_max`` and the
    largest puts it at ``lambda_max / ratio``.
    """
    if not lambda_max > 0:
        raise NonpositiveLambdaMax(f"lambda_max must be positive, got {lambda_max}")
    if s_max < 2:
        raise ValidationError("need at least two scales")
    s_min = (4.0 / 3.0) / lambda_max
    s_top = ratio * s_min
    j = np.arange(s_max)
    return s_min * (s_top / s_min) ** (1.0 - j / (s_max - 1))


@dataclass(frozen=True, eq=False)
class FilterBank:
    kernel: Callable
    scales: tuple
    name: str = "meyer"
    lowpass: Callable | None = field(default=None)

    def __post_init__(self):
        s = np.asarray(self.scales, dtype=float)
        if s.ndim != 1 or len(s) == 0 or np.any(s <= 0) or np.any(np.diff(s) >= 0):
            raise ValidationError("scales must be positive and strictly decreasing")
        object.__setattr__(self, "scales", tuple(float(v) for v in s))

    @classmethod
    def meyer(cls, lambda_max: float, n_scales: int = N_SCALES, with_lowpass: bool = False) -> "FilterBank":
        return cls(meyer_kernel, tuple(scale_grid(lambda_max, n_scales)), "meyer",
                   meyer_scaling if with_lowpass else None)

    @property
    def n_channels(self) -> int:
        return len(self.scales) + (1 if self.lowpass is not None else 0)

    def responses(self, eigenvalues) -> np.ndarray:
        """Filter responses, one row per channel (wavelet scales, then low-pass)."""
        lam = np.asarray(eigenvalues, dtype=float)
        rows = [np.asarray(self.kernel(s * lam), dtype=float) * np.ones_like(lam) for s in self.scales]
        if self.lowpass is not None:
            rows.append(np.asarray(self.lowpass(self.scales[0] * lam), dtype=float) * np.ones_like(lam))
        return np.vstack(rows)

    def scale_index(self, s: float) -> int:
        for k, v in enumerate(self.scales):
            if np.isclose(v, s, rtol=1e-12, atol=0.0):
                return k
        raise ValidationError(f"scale {s} is not in the filter bank")


def wavelet_operator(basis: SpectralBasis, bank: FilterBank, s: float) -> np.ndarray:
    g = np.asarray(bank.kernel(s * basis.eigenvalues), dtype=float) * np.ones(basis.n)
    U = basis.eigenvectors
    return (U * g) @ U.T


def wavelet_atom(basis: SpectralBasis, bank: FilterBank, s: float, n: int) -> np.ndarray:
    bank.scale_index(s)
    if not 0 <= n < basis.n:
        raise IndexOutOfRange(f"node {n} outside 0..{basis.n - 1}")
    g = np.asarray(bank.kernel(s * basis.eigenvalues), dtype=float) * np.ones(basis.n)
    U = basis.eigenvectors
    return U @ (g * U[n, :])


def wavelet_coefficients(basis: SpectralBasis, bank: FilterBank, f) -> np.ndarray:
    """(N, channels) coefficient matrix; column j is U G_j U^T f."""
    F = gft(basis, f)
    G = bank.responses(basis.eigenvalues)
    return basis.eigenvectors @ (G * F).T


def wavelet_features(basis: SpectralBasis, bank: FilterBank, f) -> list:
    W = wavelet_coefficients(basis, bank, f)
    return [WaveletFeature(n, tuple(W[n])) for n in range(basis.n)]


def chebyshev_wavelet_coefficients(L, bank: FilterBank, f, lambda_max: float, order: int = 200) -> np.ndarray:
    """Polynomial approximation of ``wavelet_coefficients`` without eigenvectors."""
    M = L.matrix if isinstance(L, Laplacian) else np.asarray(L, dtype=float)
    f = np.asarray(f, dtype=float)
    if f.shape[0] != M.shape[0]:
        raise DimensionMismatch("signal length does not match the Laplacian")
    a = 0.5 * lambda_max
    # Chebyshev coefficients on [0, lambda_max] by Gauss-Chebyshev quadrature
    k = np.arange(order + 1)
    theta = np.pi * (k + 0.5) / (order + 1)
    x = a * (np.cos(theta) + 1.0)
    channels = [lambda v, s=s: bank.kernel(s * v) for s in bank.scales]
    if bank.lowpass is not None:
        channels.append(lambda v: bank.lowpass(bank.scales[0] * v))
    coeffs = []
    for g in channels:
        gv = np.asarray(g(x), dtype=float)
        coeffs.append(2.0 / (order + 1) * np.cos(np.outer(k, theta)) @ gv)
    C = np.array(coeffs)
    T_prev = f
    T_cur = (M @ f - a * f) / a
    out = 0.5 * np.outer(T_prev, C[:, 0]) + np.outer(T_cur, C[:, 1])
    for j in range(2, order + 1):
        T_next = 2.0 * (M @ T_cur - a * T_cur) / a - T_prev
        out += np.outer(T_next, C[:, j])
        T_prev, T_cur = T_cur, T_next
    return out


def spectrum_csv(basis: SpectralBasis, bank: FilterBank) -> str:
    buf = io.StringIO()
    G = bank.responses(basis.eigenvalues)
    head = ["index", "eigenvalue"] + [f"g_s{j}" for j in range(len(bank.scales))]
    if bank.lowpass is not None:
        head.append("h_lowpass")
    buf.write(",".join(head) + "\n")
    for l, lam in enumerate(basis.eigenvalues):
        buf.write(",".join([str(l), format(lam, ".12g")] + [format(v, ".12g") for v in G[:, l]]) + "\n")
    return buf.getvalue()
