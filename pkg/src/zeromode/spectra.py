"""Eigendecomposition of the array Hamiltonian and the spectral-gap statistic.

The pump-dependent Hamiltonian is non-Hermitian but carries particle-hole
symmetry (real couplings, purely imaginary diagonal, bipartite lattice), so
its eigenvalue multiset is closed under eps -> -conj(eps).  Modes with
|Re(eps)| <= delta are the "selected" modes, the ones an optical bandpass
filter of half-width delta would pass; the classifier's decision statistic is
the gap between the largest imaginary parts on either side of that cut.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Reporting cutoff for "strictly zero" real parts.  Distinct from the
# selection cutoff delta: this one only feeds mode-statistics reports.
STRICT_ZERO_TOL = 1e-12

DEFAULT_RESIDUAL_TOL = 1e-8


class EigendecompositionError(RuntimeError):
    """Dense eigensolver failed to converge or returned poor residuals."""


@dataclass(frozen=True)
class Spectrum:
    """All eigenpairs of one Hamiltonian, canonically ordered and phase-fixed.

    Eigenvalues are sorted by (Re, Im); eigenvectors are unit-norm columns
    with their largest-magnitude component rotated to the positive real axis.
    residuals[i] = ||H v_i - eps_i v_i|| / ||H||_F.
    """

    eigenvalues: np.ndarray    # (N,) complex
    eigenvectors: np.ndarray   # (N, N) complex, column i pairs with eigenvalue i
    residuals: np.ndarray      # (N,) float

    def __len__(self) -> int:
        return len(self.eigenvalues)


@dataclass(frozen=True)
class ModeSelection:
    delta: float
    selected: np.ndarray       # indices with |Re eps| <= delta
    nonselected: np.ndarray


@dataclass(frozen=True)
class GapResult:
    gap: float
    lasing_index: int
    lasing_eigenvalue: complex
    selected_empty: bool
    nonselected_empty: bool


def _as_matrix(h) -> np.ndarray:
    return np.asarray(getattr(h, "matrix", h), dtype=complex)


def eigendecompose(h, residual_tol: float = DEFAULT_RESIDUAL_TOL) -> Spectrum:
    """Full dense eigendecomposition (LAPACK zgeev) with a residual check."""
    m = _as_matrix(h)
    if not np.all(np.isfinite(m)):
        raise ValueError("Hamiltonian contains non-finite entries")
    try:
        w, v = np.linalg.eig(m)
    except np.linalg.LinAlgError as err:
        raise EigendecompositionError(f"eigensolver did not converge: {err}") from err

    order = np.lexsort((w.imag, w.real))
    w, v = w[order], v[:, order]

    # unit norm, then largest-magnitude component made real positive
    v = v / np.linalg.norm(v, axis=0, keepdims=True)
    lead = np.argmax(np.abs(v), axis=0)
    lead_vals = v[lead, np.arange(v.shape[1])]
    v = v * np.conj(lead_vals / np.abs(lead_vals))

    h_norm = np.linalg.norm(m)
    res = np.linalg.norm(m @ v - v * w, axis=0) / h_norm
    if res.max() > residual_tol:
        raise EigendecompositionError(
            f"max eigenpair residual {res.max():.3e} exceeds {residual_tol:.1e}"
        )
    return Spectrum(eigenvalues=w, eigenvectors=v, residuals=res)


def nhph_defect(spec) -> float:
    """Distance of the eigenvalue multiset from particle-hole closure.

    Greedily matches each eigenvalue to its nearest unused candidate in
    {-conj(eps_j)} and returns the largest matching distance; 0 means the
    multiset maps onto itself under eps -> -conj(eps).
    """
    w = spec.eigenvalues if hasattr(spec, "eigenvalues") else np.asarray(spec)
    cand = -np.conj(w)
    used = np.zeros(len(w), dtype=bool)
    worst = 0.0
    for wi in w:
        d = np.abs(cand - wi)
        d[used] = np.inf
        j = int(np.argmin(d))
        used[j] = True
        worst = max(worst, float(d[j]))
    return worst


def select_modes(spec: Spectrum, delta: float) -> ModeSelection:
    """Partition mode indices by |Re eps| <= delta (boundary inclusive)."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    re = np.abs(spec.eigenvalues.real)
    sel = np.flatnonzero(re <= delta)
    non = np.flatnonzero(re > delta)
    return ModeSelection(delta=delta, selected=sel, nonselected=non)


def lasing_index(spec) -> int:
    """Index of the mode closest to threshold: argmax Im(eps).

    Ties go to the smallest |Re(eps)|, then to the lowest index, so the
    answer is deterministic even for exactly degenerate spectra.
    """
    w = spec.eigenvalues if hasattr(spec, "eigenvalues") else np.asarray(spec)
    if len(w) == 0:
        raise ValueError("empty spectrum")
    n = len(w)
    order = np.lexsort((np.arange(n), np.abs(w.real), -w.imag))
    return int(order[0])


def gap_from_eigvals(
    w: np.ndarray, delta: float, gamma: float
) -> tuple[float, int, bool, bool]:
    """Spectral gap from raw eigenvalues; shared by Spectrum and hot paths.

    gap = max Im over selected minus max Im over non-selected.  An empty
    side contributes the sentinel -2*gamma, strictly below the -gamma floor
    every true mode obeys, which keeps the value finite and the sign of the
    decision unchanged.
    """
    sel = np.abs(w.real) <= delta
    sel_empty = bool(not sel.any())
    nonsel_empty = bool(sel.all())
    max_sel = float(w.imag[sel].max()) if not sel_empty else -2.0 * gamma
    max_non = float(w.imag[~sel].max()) if not nonsel_empty else -2.0 * gamma
    return max_sel - max_non, lasing_index(w), sel_empty, nonsel_empty


def spectral_gap(spec: Spectrum, delta: float, gamma: float = 0.2) -> GapResult:
    """Decision statistic of the classifier: positive iff a selected mode lases."""
    if len(spec) == 0:
        raise ValueError("empty spectrum")
    gap, li, sel_empty, nonsel_empty = gap_from_eigvals(spec.eigenvalues, delta, gamma)
    return GapResult(
        gap=gap,
        lasing_index=li,
        lasing_eigenvalue=complex(spec.eigenvalues[li]),
        selected_empty=sel_empty,
        nonselected_empty=nonsel_empty,
    )


def spectrum_rows(spec: Spectrum, delta: float) -> list[tuple]:
    """Rows (index, re, im, residual, selected, is_lasing) for CSV dumps."""
    sel = np.abs(spec.eigenvalues.real) <= delta
    li = lasing_index(spec)
    return [
        (
            i,
            float(spec.eigenvalues[i].real),
            float(spec.eigenvalues[i].imag),
            float(spec.residuals[i]),
            int(sel[i]),
            int(i == li),
        )
        for i in range(len(spec))
    ]


def neighbor_phase_differences(
    vector: np.ndarray, rows: int, cols: int
) -> list[tuple[int, int, float]]:
    """Phase difference across every nearest-neighbour bond of one eigenvector.

    Reported rather than asserted: zero-mode eigenstates are expected to show
    a characteristic phase step between neighbouring cavities, and dumping the
    distribution lets that be inspected without baking in a value.
    """
    v = np.asarray(vector).reshape(rows, cols)
    out = []
    for i in range(rows):
        for j in range(cols):
            k = i * cols + j
            for di, dj in ((1, 0), (0, 1)):
                i2, j2 = i + di, j + dj
                if i2 < rows and j2 < cols:
                    k2 = i2 * cols + j2
                    a, b = v[i, j], v[i2, j2]
                    if abs(a) > 0 and abs(b) > 0:
                        out.append((k, k2, float(np.angle(b / a))))
    return out
