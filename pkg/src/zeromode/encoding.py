"""Image-to-pump encoding and threshold scaling.

An input image I becomes a pump pattern through a trainable linear transform,
P = |M I| (entrywise absolute value, so gains stay nonnegative).  The pump is
then rescaled, P -> alpha P, so that exactly one array mode sits at the lasing
threshold max Im(eps) = 0; finding alpha is a scalar root-finding problem in
which every function evaluation is an eigendecomposition.

Two threshold criteria are available:

* ``exact_max``: the literal condition f(alpha) = max_i Im(eps_i(alpha)) = 0.
  This is the default.  f is continuous in alpha and the root is refined with
  a bracketed secant / inverse-quadratic scheme, so no derivative (and hence
  no softening of the max) is ever needed.
* ``lse(beta)``: a tempered log-sum-exp stand-in for the max,
  f(alpha) = (1/beta) log sum_i exp(beta Im(eps_i(alpha))).  Because every
  Im(eps_i) >= -gamma, f >= log(N)/beta - gamma for all alpha: with beta at or
  below log(N)/gamma the function has no root at all, and the solver reports
  BracketExhausted.  With large beta (default 200) the criterion approaches
  exact_max with a worst-case bias of log(N)/beta.

Root bracketing uses two rigorous spectral bounds instead of blind expansion:
every Im(eps_i) lies within [min(g) - gamma, max(g) - gamma] (Bendixson), so
f < 0 strictly below alpha = gamma/max(g); and the trace identity forces
max Im(eps) >= mean Im(eps) = alpha mean(g) - gamma, so f >= 0 at
alpha = gamma/mean(g).  All threshold crossings therefore live inside
[gamma/max(g), gamma/mean(g)], and the refinement starts on that interval.
A doubling expansion above the analytic interval is kept as a fallback and
raises BracketExhausted at alpha > 2^40 times the upper bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .lattice import ArrayParams, build_hamiltonian, coupling_matrix, validate_pump
from .spectra import Spectrum, eigendecompose

DEFAULT_FTOL = 1e-10           # |f(alpha)| at the accepted root
CONTRACT_TOL = 1e-9            # advertised exact_max postcondition
DEFAULT_LSE_BETA = 200.0
MAX_REFINE_ITER = 200
EXPANSION_LIMIT = 2.0**40


class NoThresholdReachable(RuntimeError):
    """Pump carries no gain anywhere; no scaling can reach threshold."""


class BracketExhausted(RuntimeError):
    """No sign change found; the threshold criterion has no root here."""


class RootRefinementError(RuntimeError):
    """Bracketed refinement failed to converge within the iteration cap."""


@dataclass(frozen=True)
class TransformMatrix:
    """Trainable encoding matrix.

    ``matrix8`` acts on the image by an 8x8 (rows x rows) left matrix
    product; ``flat64`` acts on the flattened image with an NxN matrix.
    """

    entries: np.ndarray
    encoding_mode: str = "matrix8"

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", entries)
        if self.encoding_mode not in ("matrix8", "flat64"):
            raise ValueError(f"unknown encoding_mode {self.encoding_mode!r}")
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"transform must be square, got {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("transform entries must be finite")

    @property
    def n_parameters(self) -> int:
        return self.entries.size


@dataclass(frozen=True)
class ThresholdResult:
    alpha: float
    scaled_pump: np.ndarray
    spectrum_at_threshold: Spectrum | None
    method: str
    lse_beta: float | None = None
    eigenvalues_at_threshold: np.ndarray | None = None
    n_evaluations: int = 0


def encode(image: np.ndarray, transform: TransformMatrix) -> np.ndarray:
    """Pump pattern P = |M I| (matrix8) or |M vec(I)| reshaped (flat64)."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {img.shape}")
    m = transform.entries
    if transform.encoding_mode == "matrix8":
        if m.shape[0] != img.shape[0]:
            raise ValueError(
                f"matrix8 transform {m.shape} does not act on image {img.shape}"
            )
        return np.abs(m @ img)
    if m.shape[0] != img.size:
        raise ValueError(
            f"flat64 transform {m.shape} does not act on flattened image "
            f"of size {img.size}"
        )
    return np.abs(m @ img.ravel()).reshape(img.shape)


def _eigvals(base: np.ndarray, diag: np.ndarray) -> np.ndarray:
    """Eigenvalues of base with its diagonal replaced by 1j*diag."""
    h = base.copy()
    n = h.shape[0]
    h[np.arange(n), np.arange(n)] = 1j * diag
    w, _, _, info = lapack.zgeev(h, compute_vl=0, compute_vr=0, overwrite_a=1)
    if info != 0:
        raise RootRefinementError(f"zgeev failed with info={info}")
    return w


class _ThresholdObjective:
    """f(alpha) for one pump, counting eigendecompositions as it goes."""

    def __init__(self, gains, params, method, beta):
        self.gains = gains
        self.gamma = params.gamma
        self.base = coupling_matrix(params).astype(complex)
        self.method = method
        self.beta = beta
        self.n_evals = 0
        self.last = None           # (alpha, eigenvalues)

    def value_at_zero(self) -> float:
        # At alpha = 0 every mode has Im(eps) = -gamma exactly.
        if self.method == "exact_max":
            return -self.gamma
        n = len(self.gains)
        return np.log(n) / self.beta - self.gamma

    def __call__(self, alpha: float) -> float:
        self.n_evals += 1
        w = _eigvals(self.base, alpha * self.gains - self.gamma)
        self.last = (alpha, w)
        im = w.imag
        if self.method == "exact_max":
            return float(im.max())
        scaled = self.beta * im
        peak = scaled.max()
        return float((peak + np.log(np.exp(scaled - peak).sum())) / self.beta)


def _refine(f, x0: float, lo: float, hi: float, ftol: float) -> float:
    """Find f = 0 on (0, hi] to |f| <= ftol, starting the search at x0.

    Keeps a list of evaluated points and proposes the next abscissa by
    inverse quadratic interpolation through the three smallest-|f| points
    (secant when degenerate), with bisection whenever a proposal leaves the
    tightest known sign-change bracket.  The analytic anchor f(0) is known
    without an eigendecomposition and seeds the first secant.
    """
    pts = [(0.0, f.value_at_zero())]
    blo, bhi = 0.0, None           # tightest known f<0 / f>0 abscissae
    width_history = []
    x = x0
    for _ in range(MAX_REFINE_ITER):
        fx = f(x)
        if abs(fx) <= ftol:
            return x
        pts.append((x, fx))
        if fx < 0:
            blo = max(blo, x)
        else:
            bhi = x if bhi is None else min(bhi, x)

        best = sorted(pts, key=lambda p: abs(p[1]))[:3]
        nx = None
        if len(best) == 3:
            (xa, fa), (xb, fb), (xc, fc) = best
            if fa != fb and fa != fc and fb != fc:
                nx = (
                    xa * fb * fc / ((fa - fb) * (fa - fc))
                    + xb * fa * fc / ((fb - fa) * (fb - fc))
                    + xc * fa * fb / ((fc - fa) * (fc - fb))
                )
        if nx is None and len(best) >= 2:
            (xa, fa), (xb, fb) = best[0], best[1]
            if fa != fb:
                nx = xa - fa * (xb - xa) / (fb - fa)

        if nx is not None and not np.isfinite(nx):
            nx = None
        if bhi is not None:
            # bracketed: proposals must fall strictly inside, and the bracket
            # must keep shrinking, else bisect
            width = bhi - blo
            width_history.append(width)
            stalled = len(width_history) >= 6 and width > 0.5 * width_history[-6]
            if nx is None or not (blo < nx < bhi) or stalled:
                nx = 0.5 * (blo + bhi)
        else:
            # still searching for a positive value above blo
            if nx is None or nx <= blo:
                nx = min(hi, 2.0 * max(blo, lo))
            nx = min(nx, hi)
            if x >= hi and fx < 0:
                # theoretically impossible below hi; expand per fallback
                return _refine_by_expansion(f, hi, ftol)
        x = nx
    raise RootRefinementError(
        f"threshold refinement did not reach |f|<={ftol:g} "
        f"in {MAX_REFINE_ITER} iterations"
    )


def _refine_by_expansion(f, hi: float, ftol: float) -> float:
    """Fallback: double the upper end until a sign change appears."""
    a, fa = hi, f(hi)
    if abs(fa) <= ftol:
        return a
    b = hi
    while True:
        b *= 2.0
        if b > EXPANSION_LIMIT * hi:
            raise BracketExhausted(
                "no threshold crossing found below the expansion limit; "
                "for the lse method this usually means beta is too small "
                "for any root to exist"
            )
        fb = f(b)
        if abs(fb) <= ftol:
            return b
        if fb > 0:
            break
        a, fa = b, fb
    # plain bisection with a secant nudge on the fresh bracket
    for _ in range(MAX_REFINE_ITER):
        x = a - fa * (b - a) / (fb - fa)
        if not (a < x < b):
            x = 0.5 * (a + b)
        fx = f(x)
        if abs(fx) <= ftol:
            return x
        if fx < 0:
            a, fa = x, fx
        else:
            b, fb = x, fx
    raise RootRefinementError("expansion-bracket refinement did not converge")


def solve_threshold_alpha(
    gains: np.ndarray,
    params: ArrayParams,
    method: str = "exact_max",
    lse_beta: float = DEFAULT_LSE_BETA,
    ftol: float = DEFAULT_FTOL,
    warm_alpha: float | None = None,
) -> tuple[float, np.ndarray, int]:
    """Root-find the pump scale; returns (alpha, eigenvalues at alpha, n_evals).

    This is the lean core of threshold_scale: it works on flattened gains and
    skips eigenvector computation entirely, which is what training loops need.
    ``warm_alpha`` seeds the search near a previously found root for the same
    image; correctness does not depend on it since every accepted root is
    still verified to |f| <= ftol.
    """
    if method not in ("exact_max", "lse"):
        raise ValueError(f"unknown threshold method {method!r}")
    gains = np.asarray(gains, dtype=float).ravel()
    gmax = gains.max() if gains.size else 0.0
    if gmax <= 0.0:
        raise NoThresholdReachable("pump pattern has no positive gain")
    gamma = params.gamma
    n = gains.size

    if method == "lse":
        if lse_beta <= 0:
            raise ValueError("lse_beta must be positive")
        if np.log(n) / lse_beta - gamma >= 0:
            raise BracketExhausted(
                f"lse threshold with beta={lse_beta:g} has no root: "
                f"log(N)/beta = {np.log(n) / lse_beta:.4g} >= gamma = {gamma:g}; "
                "increase beta"
            )
        lo = max(0.0, (gamma - np.log(n) / lse_beta) / gmax)
    else:
        lo = gamma / gmax
    hi = gamma / gains.mean()

    f = _ThresholdObjective(gains, params, method, lse_beta)
    x0 = warm_alpha if warm_alpha is not None and 0.0 < warm_alpha <= hi else lo
    alpha = _refine(f, x0, lo, hi, ftol)
    last_alpha, w = f.last
    if last_alpha != alpha:          # accepted point is always the last evaluated
        w = _eigvals(f.base, alpha * gains - gamma)
        f.n_evals += 1
    return alpha, w, f.n_evals


def threshold_scale(
    pump: np.ndarray,
    params: ArrayParams,
    method: str = "exact_max",
    lse_beta: float = DEFAULT_LSE_BETA,
    ftol: float = DEFAULT_FTOL,
    warm_alpha: float | None = None,
    want_spectrum: bool = True,
) -> ThresholdResult:
    """Scale the pump so the leading mode sits exactly at threshold.

    Returns the scale alpha, the scaled pump, and (by default) the full
    residual-checked spectrum of the Hamiltonian at that pump.  For the
    exact_max method the result satisfies |max Im(eps)| <= 1e-9.

    Raises NoThresholdReachable for an all-dark pump and BracketExhausted
    when the criterion has no root (possible for lse with small beta).
    """
    pump = validate_pump(pump, params)
    alpha, w, n_evals = solve_threshold_alpha(
        pump.ravel(), params, method=method, lse_beta=lse_beta, ftol=ftol,
        warm_alpha=warm_alpha,
    )
    scaled = alpha * pump
    spectrum = None
    if want_spectrum:
        spectrum = eigendecompose(build_hamiltonian(scaled, params))
        w = spectrum.eigenvalues
    if method == "exact_max" and abs(w.imag.max()) > CONTRACT_TOL:
        raise RootRefinementError(
            f"threshold postcondition violated: |max Im| = {abs(w.imag.max()):.3e}"
        )
    return ThresholdResult(
        alpha=alpha,
        scaled_pump=scaled,
        spectrum_at_threshold=spectrum,
        method=method,
        lse_beta=lse_beta if method == "lse" else None,
        eigenvalues_at_threshold=w,
        n_evaluations=n_evals,
    )
