"""Accuracy and diversity measurements for fitted models and synthetic populations."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EnumerationInfeasibleError, InvalidInputError

MRE_FLOOR = 1e-9


def mre(estimated, targets, floor: float = MRE_FLOOR) -> float:
    """Mean of ``|est_j - alpha_j| / alpha_j`` over atoms with ``alpha_j > floor``.

    Raises InvalidInputError when every atom falls at or below the floor.
    """
    est = np.asarray(estimated, dtype=np.float64)
    alpha = np.asarray(targets, dtype=np.float64)
    if est.shape != alpha.shape:
        raise InvalidInputError(f"shape mismatch: {est.shape} vs {alpha.shape}")
    keep = alpha > floor
    if not np.any(keep):
        raise InvalidInputError("MRE undefined: every target is at or below the floor")
    return float(np.mean(np.abs(est[keep] - alpha[keep]) / alpha[keep]))


def excluded_count(targets, floor: float = MRE_FLOOR) -> int:
    """Number of atoms ``mre`` leaves out."""
    return int(np.count_nonzero(np.asarray(targets) <= floor))


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))


def gini(weights) -> float:
    w = np.sort(np.asarray(weights, dtype=np.float64))
    n = w.size
    ranks = 2.0 * np.arange(1, n + 1) - n - 1
    return max(float(np.dot(ranks, w) / (n * w.sum())), 0.0)


def lorenz_curve(weights) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative population share vs cumulative weight share, with (0, 0)."""
    w = np.sort(np.asarray(weights, dtype=np.float64))
    n = w.size
    x = np.arange(n + 1) / n
    y = np.concatenate([[0.0], np.cumsum(w) / w.sum()])
    y[-1] = 1.0
    return x, y


@dataclass
class DiversityReport:
    n: int
    n_eff: float
    n_eff_ratio: float
    entropy: float
    unique_profiles: int
    unique_support: int
    unique_eps_support: int
    gini: float

    def as_dict(self) -> dict:
        return asdict(self)


def diversity(states, weights=None) -> DiversityReport:
    """Diversity of a population; ``weights=None`` means uniform (a PCD pool).

    ``unique_profiles`` counts distinct tuples carrying positive weight,
    ``unique_support`` every distinct row, ``unique_eps_support`` those whose
    aggregated weight exceeds ``1/N**2``.
    """
    states = np.asarray(states)
    if states.ndim != 2 or states.shape[0] == 0:
        raise InvalidInputError("diversity needs a non-empty (N, K) state matrix")
    n = states.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,) or np.any(w < 0):
            raise InvalidInputError("weights must be a nonnegative vector with one entry per row")
        if abs(w.sum() - 1.0) > 1e-9:
            raise InvalidInputError("weights must be normalised to sum 1")
    _, inverse = np.unique(states, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mass = np.bincount(inverse, weights=w)
    pos = mass[mass > 0]
    entropy = float(-np.sum(pos * np.log(pos)))
    # an unweighted pool has N_eff = N by definition; skip the rounding of sum(w**2)
    n_eff = float(n) if weights is None else effective_sample_size(w)
    return DiversityReport(
        n=n,
        n_eff=n_eff,
        n_eff_ratio=n_eff / n,
        entropy=max(entropy, 0.0),
        unique_profiles=int(np.count_nonzero(mass > 0)),
        unique_support=int(mass.size),
        unique_eps_support=int(np.count_nonzero(mass > 1.0 / n**2)),
        gini=gini(w),
    )


def kl_to_truth(truth, fitted_lam, fitted_cs=None) -> float | None:
    """``KL(p_truth || p_fitted)``, or None when the space is not enumerable."""
    from .exact import EnumeratedModel, exact_kl

    cs = truth.cs if fitted_cs is None else fitted_cs
    try:
        fitted = EnumeratedModel(cs, fitted_lam, truth.max_enum)
    except EnumerationInfeasibleError:
        return None
    return exact_kl(truth, fitted)


def heldout_mre(states, heldout_cs, weights=None) -> dict[str, float]:
    """Per-group MRE of a population against held-out atoms (e.g. T1, T2, T3)."""
    from .model import feature_frequencies

    est = feature_frequencies(np.asarray(states), heldout_cs, weights)
    out = {}
    for name, idx in heldout_cs.groups.items():
        out[name] = mre(est[idx], heldout_cs.targets[idx])
    return out
