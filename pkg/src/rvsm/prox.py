"""Sparsity penalties and their exact thresholding (proximal) operators.

Three penalties are supported: ``l0`` (count of nonzeros), ``l1`` (sum of
magnitudes) and the transformed-l1 family

    rho_a(x) = (a + 1) |x| / (a + |x|),    a > 0,

which interpolates between the l0 indicator (a -> 0) and |x| (a -> inf).
For each penalty the map

    w  ->  argmin_x  gamma * p(x) + (x - w)^2 / 2

has a closed form: hard thresholding for l0, soft thresholding for l1 and
a trigonometric cubic-root formula for transformed-l1.  All operators act
elementwise and accept scalars or arrays.  ``prox_oracle`` is a brute-force
grid minimizer kept deliberately independent of the closed forms so the two
can be checked against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PENALTY_KINDS = ("l0", "l1", "tl1")

# Tolerated floating-point drift of the arccos argument outside [-1, 1].
# Larger excursions indicate misuse rather than roundoff.
ARCCOS_DRIFT_TOL = 1e-12


@dataclass(frozen=True)
class PenaltySpec:
    """Selects a penalty family and its weight.

    ``lam`` is the penalty weight (lambda >= 0).  ``a`` is the
    transformed-l1 shape parameter and must be given iff kind == "tl1".
    """

    kind: str
    lam: float
    a: float | None = None

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty kind {self.kind!r}, expected one of {PENALTY_KINDS}")
        if self.lam < 0:
            raise ValueError(f"penalty weight lam must be >= 0, got {self.lam}")
        if self.kind == "tl1":
            if self.a is None or self.a <= 0:
                raise ValueError(f"tl1 requires shape parameter a > 0, got {self.a}")
        elif self.a is not None:
            raise ValueError(f"shape parameter a is only meaningful for tl1, got kind {self.kind!r}")


@dataclass(frozen=True)
class ThresholdContext:
    """Splitting weight beta and the derived threshold weight gamma = lam / beta.

    gamma is always recomputed from its parents, never stored.
    """

    lam: float
    beta: float

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")

    @property
    def gamma(self) -> float:
        return self.lam / self.beta


def _as_finite_array(v, name):
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _match_input(result, like):
    if np.isscalar(like) or getattr(like, "ndim", None) == 0:
        return float(result)
    return result


def rho_a(a: float, x):
    """Transformed-l1 penalty of a single magnitude: (a+1)|x| / (a+|x|)."""
    if a <= 0:
        raise ValueError(f"transformed-l1 parameter a must be > 0, got {a}")
    ax = np.abs(_as_finite_array(x, "x"))
    return _match_input((a + 1.0) * ax / (a + ax), x)


def penalty_value(spec: PenaltySpec, v) -> float:
    """Weighted penalty lam * P(v) for the given spec.

    P counts nonzeros (l0), sums magnitudes (l1) or sums rho_a (tl1).
    """
    arr = _as_finite_array(v, "v")
    if spec.kind == "l0":
        p = float(np.count_nonzero(arr))
    elif spec.kind == "l1":
        p = float(np.sum(np.abs(arr)))
    else:
        p = float(np.sum(rho_a(spec.a, arr)))
    return spec.lam * p


def hard_threshold(gamma: float, w):
    """Zero out entries with |w| <= sqrt(2*gamma), keep the rest unchanged."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    arr = _as_finite_array(w, "w")
    level = np.sqrt(2.0 * gamma)
    return _match_input(np.where(np.abs(arr) <= level, 0.0, arr), w)


def soft_threshold(gamma: float, w):
    """Shrink |w| by gamma, zeroing the band [-gamma, gamma]."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    arr = _as_finite_array(w, "w")
    return _match_input(np.sign(arr) * np.maximum(np.abs(arr) - gamma, 0.0), w)


def tl1_threshold_level(a: float, gamma: float) -> float:
    """Magnitude t below which the transformed-l1 operator returns exactly 0.

    Piecewise in gamma with a continuous switch at gamma = a^2 / (2(a+1)).
    """
    if a <= 0:
        raise ValueError(f"transformed-l1 parameter a must be > 0, got {a}")
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if gamma <= a * a / (2.0 * (a + 1.0)):
        return gamma * (a + 1.0) / a
    return float(np.sqrt(2.0 * gamma * (a + 1.0)) - a / 2.0)


def tl1_threshold(a: float, gamma: float, w):
    """Exact minimizer of gamma * rho_a(x) + (x - w)^2 / 2, elementwise.

    Entries with |w| <= t vanish; survivors solve the cubic stationarity
    condition, expressed through the trigonometric root

        g(w) = sgn(w) * ( (2/3)(a+|w|) cos(phi/3) - 2a/3 + |w|/3 ),
        phi  = arccos(1 - 27 gamma a (a+1) / (2 (a+|w|)^3)).
    """
    t = tl1_threshold_level(a, gamma)
    arr = _as_finite_array(w, "w")
    flat = np.atleast_1d(arr)
    aw = np.abs(flat)
    keep = aw > t
    out = np.zeros_like(flat)
    if np.any(keep):
        awk = aw[keep]
        arg = 1.0 - 27.0 * gamma * a * (a + 1.0) / (2.0 * (a + awk) ** 3)
        drift = np.max(np.abs(arg)) - 1.0
        if drift > ARCCOS_DRIFT_TOL:
            raise ValueError(
                f"arccos argument leaves [-1, 1] by {drift:.3e} (a={a}, gamma={gamma}); "
                "this exceeds roundoff and indicates invalid parameters"
            )
        phi = np.arccos(np.clip(arg, -1.0, 1.0))
        g = (2.0 / 3.0) * (a + awk) * np.cos(phi / 3.0) - 2.0 * a / 3.0 + awk / 3.0
        out[keep] = np.sign(flat[keep]) * g
    return _match_input(out.reshape(arr.shape), w)


def threshold(spec: PenaltySpec, gamma: float, w):
    """Apply the thresholding operator matching spec.kind at level gamma."""
    if spec.kind == "l0":
        return hard_threshold(gamma, w)
    if spec.kind == "l1":
        return soft_threshold(gamma, w)
    return tl1_threshold(spec.a, gamma, w)


def _unit_penalty_on_grid(spec: PenaltySpec, grid: np.ndarray) -> np.ndarray:
    if spec.kind == "l0":
        return (grid != 0.0).astype(np.float64)
    if spec.kind == "l1":
        return np.abs(grid)
    return (spec.a + 1.0) * np.abs(grid) / (spec.a + np.abs(grid))


def _oracle_grid(lo: float, hi: float, step: float) -> np.ndarray:
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    grid = np.arange(lo, hi + step / 2.0, step)
    if grid.size == 0:
        raise ValueError(f"empty oracle grid for lo={lo}, hi={hi}, step={step}")
    return np.concatenate([grid, [0.0]])


def _argmin_with_ties(obj: np.ndarray, grid: np.ndarray) -> float:
    best = obj.min()
    tied = obj == best
    idx = np.argmin(np.where(tied, np.abs(grid), np.inf))
    return float(grid[idx])


def prox_oracle(spec: PenaltySpec, gamma: float, w: float,
                lo: float = -1.0, hi: float = 1.0, step: float = 1e-6) -> float:
    """Brute-force minimizer of gamma * p(x) + (x - w)^2 / 2 over a grid.

    The grid is {lo, lo+step, ...} with 0 appended as an explicit
    candidate; p is the unit-weight penalty of ``spec`` (lam ignored).
    Exact objective ties resolve toward the candidate of smaller |x|.
    Independent of the closed-form operators by construction.
    """
    if not (lo < w < hi):
        raise ValueError(f"w must lie strictly inside [{lo}, {hi}], got {w}")
    grid = _oracle_grid(lo, hi, step)
    obj = gamma * _unit_penalty_on_grid(spec, grid) + 0.5 * (grid - w) ** 2
    return _argmin_with_ties(obj, grid)


def prox_oracle_batch(spec: PenaltySpec, gamma: float, ws,
                      lo: float = -1.0, hi: float = 1.0, step: float = 1e-6) -> np.ndarray:
    """prox_oracle for many w values, sharing one penalty evaluation.

    Semantically identical to calling prox_oracle per entry; only the
    penalty vector over the grid is computed once.
    """
    grid = _oracle_grid(lo, hi, step)
    pen = gamma * _unit_penalty_on_grid(spec, grid)
    out = np.empty(len(ws), dtype=np.float64)
    for i, w in enumerate(ws):
        if not (lo < w < hi):
            raise ValueError(f"w must lie strictly inside [{lo}, {hi}], got {w}")
        obj = pen + 0.5 * (grid - w) ** 2
        out[i] = _argmin_with_ties(obj, grid)
    return out
