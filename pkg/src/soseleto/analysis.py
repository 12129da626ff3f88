"""Training diagnostics and weight-threshold analyses.

``first_order_delta`` models the per-iteration change of the target loss
under the coupled update (weight step folded into the representation step)
to first order in the learning rates; its ``term_outer`` and ``term_head``
components are nonpositive by construction, so a large enough weight
learning rate guarantees first-order descent.  ``sufficient_lambda_alpha``
returns the threshold at which that guarantee kicks in.

The threshold sweep and separation metrics quantify how well the learned
weights split a source set into its clean and corrupted parts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeError


@dataclass(frozen=True)
class FirstOrderDelta:
    """First-order decomposition of one iteration's target-loss change."""

    term_align: float   # -lambda_p * g_theta' Q alpha_prev
    term_outer: float   # -lambda_alpha * lambda_p^2 * ||Q' g_theta||^2, <= 0
    term_head: float    # -lambda_p * ||g_phi_t||^2, <= 0
    total: float


def first_order_delta(Q, alpha_prev, target_grad_theta, target_grad_phi_t,
                      lambda_p: float, lambda_alpha: float) -> FirstOrderDelta:
    """Evaluate the three first-order terms for one iteration's quantities."""
    Q = np.asarray(Q, dtype=np.float64)
    alpha_prev = np.asarray(alpha_prev, dtype=np.float64)
    g_theta = np.asarray(target_grad_theta, dtype=np.float64)
    g_phi = np.asarray(target_grad_phi_t, dtype=np.float64)
    if Q.ndim != 2:
        raise ShapeError(f"Q must be 2-D, got shape {Q.shape}")
    if alpha_prev.shape != (Q.shape[1],):
        raise ShapeError(f"alpha has shape {alpha_prev.shape}, Q has {Q.shape[1]} columns")
    if g_theta.shape != (Q.shape[0],):
        raise ShapeError(f"theta gradient has shape {g_theta.shape}, Q has {Q.shape[0]} rows")
    v = Q.T @ g_theta
    term_align = -lambda_p * float(v @ alpha_prev)
    term_outer = -lambda_alpha * lambda_p ** 2 * float(v @ v)
    term_head = -lambda_p * float(g_phi @ g_phi)
    return FirstOrderDelta(term_align, term_outer, term_head,
                           term_align + term_outer + term_head)


def sufficient_lambda_alpha(n_source: int, lambda_p: float, v_norm: float) -> float:
    """Weight learning rate above which the first-order change is <= 0.

    Returns sqrt(n_source) / (lambda_p * v_norm), where v_norm is
    ||Q' dL_t/dtheta||.  A zero v_norm means the weights feel no update
    pressure at all; the bound is then +inf by convention.
    """
    if lambda_p <= 0:
        raise ValueError(f"lambda_p must be positive, got {lambda_p}")
    if v_norm < 0:
        raise ValueError(f"v_norm must be nonnegative, got {v_norm}")
    if v_norm == 0.0:
        return math.inf
    return math.sqrt(n_source) / (lambda_p * v_norm)


@dataclass(frozen=True)
class ThresholdSweep:
    """Per-threshold retention and noise statistics.

    A sample is kept at threshold t when its weight is strictly above t.
    ``effective_noise_level`` is corrupted-kept / kept, defined as 0.0 when
    nothing is kept (``kept_empty`` flags those rows).  Cohort fractions are
    NaN when the cohort itself is empty.
    """

    thresholds: np.ndarray
    kept_count: np.ndarray
    clean_kept_fraction: np.ndarray
    noisy_kept_fraction: np.ndarray
    effective_noise_level: np.ndarray
    kept_empty: np.ndarray

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["threshold", "kept_count", "clean_kept_fraction",
                             "noisy_kept_fraction", "effective_noise_level", "kept_empty"])
            for i in range(len(self.thresholds)):
                writer.writerow([
                    repr(float(self.thresholds[i])),
                    int(self.kept_count[i]),
                    repr(float(self.clean_kept_fraction[i])),
                    repr(float(self.noisy_kept_fraction[i])),
                    repr(float(self.effective_noise_level[i])),
                    int(self.kept_empty[i]),
                ])


def threshold_sweep(alpha, corruption_mask, thresholds) -> ThresholdSweep:
    """Sweep keep-if-weight-above-t filters over an ascending threshold grid."""
    alpha = np.asarray(alpha, dtype=np.float64)
    mask = np.asarray(corruption_mask, dtype=bool)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if mask.shape != alpha.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match alpha shape {alpha.shape}")
    if thresholds.ndim != 1 or len(thresholds) == 0:
        raise ValueError("thresholds must be a nonempty 1-D list")
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly ascending")
    if thresholds[0] < 0.0 or thresholds[-1] > 1.0:
        raise ValueError("thresholds must lie in [0, 1]")

    n_clean = int((~mask).sum())
    n_noisy = int(mask.sum())
    kept_count = np.zeros(len(thresholds), dtype=np.int64)
    clean_frac = np.zeros(len(thresholds))
    noisy_frac = np.zeros(len(thresholds))
    noise_level = np.zeros(len(thresholds))
    empty = np.zeros(len(thresholds), dtype=bool)
    for i, t in enumerate(thresholds):
        kept = alpha > t
        k = int(kept.sum())
        ck = int((kept & ~mask).sum())
        nk = k - ck
        kept_count[i] = k
        clean_frac[i] = ck / n_clean if n_clean else math.nan
        noisy_frac[i] = nk / n_noisy if n_noisy else math.nan
        noise_level[i] = nk / k if k else 0.0
        empty[i] = k == 0
    return ThresholdSweep(thresholds, kept_count, clean_frac, noisy_frac, noise_level, empty)


class SeparationMetrics(NamedTuple):
    mean_alpha_clean: float
    mean_alpha_noisy: float
    auc: float


def separation_metrics(alpha, corruption_mask) -> SeparationMetrics:
    """Cohort mean weights plus the rank AUC of weight as a cleanness score.

    AUC is the probability that a uniformly random clean sample outweighs a
    uniformly random corrupted one, ties counted half.  Both cohorts must be
    nonempty.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    mask = np.asarray(corruption_mask, dtype=bool)
    if mask.shape != alpha.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match alpha shape {alpha.shape}")
    n_clean = int((~mask).sum())
    n_noisy = int(mask.sum())
    if n_clean == 0 or n_noisy == 0:
        raise ValueError("both clean and noisy cohorts must be nonempty")
    ranks = rankdata(alpha)
    auc = (ranks[~mask].sum() - n_clean * (n_clean + 1) / 2.0) / (n_clean * n_noisy)
    return SeparationMetrics(float(alpha[~mask].mean()), float(alpha[mask].mean()), float(auc))
