"""Local (eigenvalue) and string (frequency-domain) stability analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class StabilityError(RuntimeError):
    """Eigensolver failure or ill-posed conversion/transfer query."""


@dataclass
class EigenReport:
    eigenvalues: np.ndarray  # complex, sorted by descending magnitude
    magnitudes: np.ndarray
    max_magnitude: float
    verdict: str  # asymptotically_stable | marginally_stable | unstable
    distinct_count: int
    repeated_unit_eigenvalue: bool  # boundedness caveat for marginal verdicts


@dataclass
class ContinuousSystem:
    A_c: np.ndarray
    B_c: np.ndarray
    dt_source: float


@dataclass
class FrequencyResponse:
    frequencies: np.ndarray  # Hz (or rad/s when angular=True was used)
    gains: np.ndarray
    peak_gain: float
    peak_frequency: float
    string_stable: bool
    skipped_frequencies: list[float] = field(default_factory=list)


def local_stability(A: np.ndarray, tol: float = 1e-9) -> EigenReport:
    """Classify the discrete system z' = A z by the eigenvalue magnitudes of A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("A must be finite")
    try:
        eigvals = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise StabilityError(f"eigensolver failed: {exc}") from None
    order = np.argsort(-np.abs(eigvals))
    eigvals = eigvals[order]
    mags = np.abs(eigvals)
    max_mag = float(mags[0])
    if abs(max_mag - 1.0) <= tol:
        verdict = "marginally_stable"
    elif max_mag < 1.0 - tol:
        verdict = "asymptotically_stable"
    else:
        verdict = "unstable"
    distinct = _count_distinct(eigvals)
    on_circle = np.abs(mags - 1.0) <= tol
    repeated_unit = bool(np.count_nonzero(on_circle) > _count_distinct(eigvals[on_circle]))
    return EigenReport(
        eigenvalues=eigvals,
        magnitudes=mags,
        max_magnitude=max_mag,
        verdict=verdict,
        distinct_count=distinct,
        repeated_unit_eigenvalue=repeated_unit,
    )


def _count_distinct(eigvals: np.ndarray, tol: float = 1e-8) -> int:
    """Count eigenvalues that are pairwise separated by more than tol (absolute)."""
    distinct: list[complex] = []
    for lam in eigvals:
        if all(abs(lam - mu) > tol for mu in distinct):
            distinct.append(lam)
    return len(distinct)


def _phi(x: np.ndarray) -> np.ndarray:
    """(e^x - 1) / x with the removable singularity phi(0) = 1."""
    x = np.asarray(x, dtype=complex)
    out = np.ones_like(x)
    small = np.abs(x) < 1e-8
    xs = x[~small]
    out[~small] = (np.exp(xs) - 1.0) / xs
    # second-order series keeps ~1e-16 accuracy for |x| < 1e-8
    out[small] = 1.0 + x[small] / 2.0
    return out


def d2c_zoh(A: np.ndarray, B: np.ndarray, dt: float) -> ContinuousSystem:
    """Invert zero-order-hold discretization via the eigendecomposition logarithm.

    A_c = log(A)/dt on the principal branch; B_c solves Psi B_c = B where
    Psi = integral_0^dt exp(A_c tau) dtau. Requires A diagonalizable with no
    eigenvalue at 0 or on the negative real axis.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(-1)
    if dt <= 0:
        raise ValueError("dt must be positive")
    eigvals, V = np.linalg.eig(A)
    if np.any(np.abs(eigvals) < 1e-12):
        raise StabilityError("no principal logarithm: eigenvalue at 0")
    neg_real = (np.abs(eigvals.imag) < 1e-14) & (eigvals.real < 0)
    if np.any(neg_real):
        raise StabilityError("no principal logarithm: eigenvalue on the negative real axis")
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > 1e12:
        raise StabilityError("A is defective or near-defective; eigenvector basis ill-conditioned")

    lam_c = np.log(eigvals.astype(complex)) / dt
    A_c = V @ np.diag(lam_c) @ np.linalg.inv(V)
    psi = V @ np.diag(_phi(lam_c * dt) * dt) @ np.linalg.inv(V)
    try:
        B_c = np.linalg.solve(psi, B.astype(complex))
    except np.linalg.LinAlgError:
        raise StabilityError("ZOH input map is singular") from None

    A_c = _real_part(A_c)
    B_c = _real_part(B_c)
    return ContinuousSystem(A_c=A_c, B_c=B_c, dt_source=dt)


def _real_part(M: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    scale = max(float(np.max(np.abs(M))), 1.0)
    if np.max(np.abs(M.imag)) > tol * scale:
        raise StabilityError("reconstruction produced a significantly complex matrix")
    return M.real.copy()


def velocity_output_index(n_followers: int, follower_index: int) -> int:
    """Lifted-state coordinate holding follower i's velocity under [s; v; dv] ordering."""
    if not 1 <= follower_index <= n_followers:
        raise ValueError(f"follower_index must be in [1, {n_followers}]")
    return n_followers + follower_index - 1


def transfer_gain(
    sys: ContinuousSystem,
    output_index: int,
    f: float,
    angular: bool = False,
) -> float:
    """|s C (sI - A_c)^{-1} B_c| at s = j 2 pi f: leader-accel to output-accel gain.

    C is the selector of the lifted coordinate holding the output velocity
    (see velocity_output_index for the platoon layout); multiplying by s turns
    the velocity response into acceleration. With angular=True, f is taken as
    omega in rad/s (s = j omega).
    """
    if f <= 0:
        raise ValueError("frequency must be positive")
    omega = f if angular else 2.0 * math.pi * f
    s = 1j * omega
    idx = output_index
    m = sys.A_c.shape[0]
    if not 0 <= idx < m:
        raise ValueError(f"output_index {idx} out of range for dimension {m}")
    lhs = s * np.eye(m) - sys.A_c
    try:
        x = np.linalg.solve(lhs, sys.B_c.astype(complex))
    except np.linalg.LinAlgError:
        raise StabilityError(f"pole on imaginary axis at f={f}") from None
    if not np.all(np.isfinite(x)):
        raise StabilityError(f"pole on imaginary axis at f={f}")
    return float(abs(s * x[idx]))


def default_frequency_grid(n_points: int = 400, f_min: float = 1e-3, f_max: float = 5.0) -> np.ndarray:
    return np.logspace(math.log10(f_min), math.log10(f_max), n_points)


def string_stability_sweep(
    sys: ContinuousSystem,
    output_index: int,
    f_grid: np.ndarray | None = None,
    tol: float = 1e-6,
    angular: bool = False,
) -> FrequencyResponse:
    """Evaluate the head-to-tail gain over a frequency grid; stable iff sup <= 1."""
    grid = default_frequency_grid() if f_grid is None else np.asarray(f_grid, dtype=float)
    if len(grid) == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("f_grid must be strictly positive and sorted ascending")
    freqs, gains, skipped = [], [], []
    for f in grid:
        try:
            gains.append(transfer_gain(sys, output_index, f, angular=angular))
            freqs.append(f)
        except StabilityError:
            skipped.append(float(f))
    if not gains:
        raise StabilityError("all grid points hit poles")
    gains = np.asarray(gains)
    freqs = np.asarray(freqs)
    peak = int(np.argmax(gains))
    return FrequencyResponse(
        frequencies=freqs,
        gains=gains,
        peak_gain=float(gains[peak]),
        peak_frequency=float(freqs[peak]),
        string_stable=bool(gains[peak] <= 1.0 + tol),
        skipped_frequencies=skipped,
    )
