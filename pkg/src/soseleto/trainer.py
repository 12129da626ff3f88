"""Bilevel weighted training loop.

Each iteration processes one source mini-batch and one target mini-batch:

1. build the per-example gradient matrices Q (representation) and R (source
   head), columns scaled by 1/n_source regardless of batch size;
2. descend theta and phi_s along Q alpha_b and R alpha_b (interior step);
3. raise or lower the batch's weights by how well each column of Q aligns
   with the target's descent direction, then constrain them to [0, 1];
4. descend the target head phi_t.

The target controls the representation only through the weights: no target
gradient is ever applied to theta.  Within an epoch the source batches are
a non-overlapping partition of a seeded shuffle, so every weight is updated
exactly once per epoch.

Reproducibility: all randomness comes from per-purpose substreams of the
config seed (stream 0: parameter init, stream 1: the epoch shuffle, keyed
by epoch, stream 2: the target batch draw, keyed by iteration).  Substreams
make checkpoint resume exact: replaying iteration k never requires the RNG
state that earlier iterations left behind.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .analysis import FirstOrderDelta, first_order_delta, sufficient_lambda_alpha
from .data import LabeledDataset
from .errors import ConfigError, NumericalError, ShapeError
from .losses import CrossEntropy, target_loss, weighted_source_loss
from .model import ArchDescriptor, ModelParams, batch_grads

MODES = ("transfer", "shared_classifier")
WEIGHT_PATHS = ("clip", "beta")

RUN_CSV_COLUMNS = [
    "iter", "L_s", "L_t", "mean_alpha_clean", "mean_alpha_noisy",
    "dLt_fo", "dLt_term1", "dLt_term2", "dLt_term3", "lambda_alpha_bound",
]


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters and run controls for the bilevel loop.

    ``lambda_alpha_auto`` replaces ``lambda_alpha`` each iteration with the
    sufficient-descent bound sqrt(n_source) / (lambda_p * ||Q' g_theta||),
    capped at ``lambda_alpha_max``.

    ``alpha_uses_prestep_theta`` makes the weight update read the target
    gradient at the representation from *before* this iteration's interior
    step; the default reads it after, matching the update order above.
    """

    lambda_p: float
    lambda_alpha: float
    source_batch: int
    target_batch: int
    epochs: int
    mode: str = "transfer"
    alpha_init: float = 1.0
    rng_seed: int = 0
    weight_path: str = "clip"
    alpha_uses_prestep_theta: bool = False
    lambda_alpha_auto: bool = False
    lambda_alpha_max: float = 1e6

    def __post_init__(self):
        if self.lambda_p <= 0:
            raise ConfigError(f"lambda_p must be positive, got {self.lambda_p}")
        if self.lambda_alpha < 0:
            raise ConfigError(f"lambda_alpha must be nonnegative, got {self.lambda_alpha}")
        if self.source_batch < 1 or self.target_batch < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.alpha_init <= 1.0:
            raise ConfigError(f"alpha_init must lie in [0, 1], got {self.alpha_init}")
        if self.weight_path not in WEIGHT_PATHS:
            raise ConfigError(f"weight_path must be one of {WEIGHT_PATHS}, got {self.weight_path!r}")
        if self.lambda_alpha_max <= 0:
            raise ConfigError("lambda_alpha_max must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        return cls(**d)


def build_Q(params: ModelParams, xs, ys, n_source: int, loss=None) -> np.ndarray:
    """Representation-gradient matrix: column j is the j-th batch example's
    theta gradient scaled by 1/n_source (the full source size, not the
    batch size)."""
    grads = batch_grads(params, "source", xs, ys, loss)
    return np.column_stack([g.d_theta for g in grads]) / n_source


def build_R(params: ModelParams, xs, ys, n_source: int, loss=None) -> np.ndarray:
    """Source-head analogue of Q: scaled per-example phi_s gradients."""
    grads = batch_grads(params, "source", xs, ys, loss)
    return np.column_stack([g.d_phi for g in grads]) / n_source


def target_gradients(params: ModelParams, xs, ys, loss=None) -> tuple[np.ndarray, np.ndarray]:
    """Mean theta- and phi_t-gradients of the target loss over a mini-batch."""
    grads = batch_grads(params, "target", xs, ys, loss)
    g_theta = np.stack([g.d_theta for g in grads]).mean(axis=0)
    g_phi = np.stack([g.d_phi for g in grads]).mean(axis=0)
    return g_theta, g_phi


def interior_step(params: ModelParams, Q: np.ndarray, R: np.ndarray, alpha_b,
                  lambda_p: float) -> ModelParams:
    """Weighted descent on theta and phi_s; phi_t is untouched (unless the
    heads are shared, in which case the shared vector moves with phi_s)."""
    alpha_b = np.asarray(alpha_b, dtype=np.float64)
    if Q.shape != (params.theta.size, alpha_b.size):
        raise ShapeError(f"Q has shape {Q.shape}, expected ({params.theta.size}, {alpha_b.size})")
    if R.shape != (params.phi_s.size, alpha_b.size):
        raise ShapeError(f"R has shape {R.shape}, expected ({params.phi_s.size}, {alpha_b.size})")
    theta = params.theta - lambda_p * (Q @ alpha_b)
    phi_s = params.phi_s - lambda_p * (R @ alpha_b)
    phi_t = phi_s if params.heads_shared else params.phi_t
    return ModelParams(params.arch, theta, phi_s, phi_t)


def _pl_sigmoid(z: np.ndarray) -> np.ndarray:
    """Piecewise-linear sigmoid: 0 below 0, identity on [0, 1], 1 above 1."""
    return np.where(z < 0.0, 0.0, np.where(z > 1.0, 1.0, z))


def _pl_sigmoid_grad(z: np.ndarray) -> np.ndarray:
    return np.where((z >= 0.0) & (z <= 1.0), 1.0, 0.0)


def exterior_step(alpha_b, Q: np.ndarray, target_grad_theta, lambda_alpha: float,
                  lambda_p: float, weight_path: str = "clip") -> np.ndarray:
    """Weight update: alpha + lambda_alpha * lambda_p * Q' g, constrained to [0, 1].

    ``clip`` projects directly.  ``beta`` routes the step through the
    piecewise-linear sigmoid reparameterization: the stored vector is the
    sigmoid's output, so it stays in [0, 1], the Jacobian is the identity
    there, and the two paths produce bitwise-identical trajectories.
    """
    alpha_b = np.asarray(alpha_b, dtype=np.float64)
    g = np.asarray(target_grad_theta, dtype=np.float64)
    if weight_path not in WEIGHT_PATHS:
        raise ConfigError(f"weight_path must be one of {WEIGHT_PATHS}, got {weight_path!r}")
    if g.shape != (Q.shape[0],):
        raise ShapeError(f"target gradient has shape {g.shape}, Q has {Q.shape[0]} rows")
    if alpha_b.shape != (Q.shape[1],):
        raise ShapeError(f"alpha slice has shape {alpha_b.shape}, Q has {Q.shape[1]} columns")
    if not np.isfinite(g).all():
        raise NumericalError("non-finite target gradient")
    step = (lambda_alpha * lambda_p) * (Q.T @ g)
    if weight_path == "clip":
        return np.clip(alpha_b + step, 0.0, 1.0)
    beta = alpha_b  # sigmoid output == stored weights, so beta == alpha
    return _pl_sigmoid(beta + _pl_sigmoid_grad(beta) * step)


def target_step(params: ModelParams, xs, ys, lambda_p: float, loss=None,
                grad_phi_t: np.ndarray | None = None) -> ModelParams:
    """Descend the target head.  theta never moves here, in either mode; with
    shared heads the single head vector is updated in place of phi_t."""
    if grad_phi_t is None:
        _, grad_phi_t = target_gradients(params, xs, ys, loss)
    if grad_phi_t.shape != params.phi_t.shape:
        raise ShapeError(f"phi_t gradient has shape {grad_phi_t.shape}, "
                         f"expected {params.phi_t.shape}")
    phi_t = params.phi_t - lambda_p * grad_phi_t
    phi_s = phi_t if params.heads_shared else params.phi_s
    return ModelParams(params.arch, params.theta, phi_s, phi_t)


@dataclass(frozen=True)
class IterationStats:
    """One row of the run record.  Losses are over the full datasets with
    the current weights; NaN marks quantities with no defined value (empty
    cohort, or the initial row's update diagnostics)."""

    iteration: int
    loss_source: float
    loss_target: float
    mean_alpha_clean: float
    mean_alpha_noisy: float
    delta_fo: float
    delta_align: float
    delta_outer: float
    delta_head: float
    lambda_alpha_bound: float
    alpha_min: float
    alpha_max: float


@dataclass
class RunRecord:
    """Append-only per-iteration metrics plus the run's final state."""

    stats: list[IterationStats] = field(default_factory=list)
    final_params: ModelParams | None = None
    final_alpha: np.ndarray | None = None
    alpha_snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def append(self, row: IterationStats) -> None:
        if self.stats and row.iteration <= self.stats[-1].iteration:
            raise ValueError(
                f"iteration {row.iteration} not after {self.stats[-1].iteration}"
            )
        self.stats.append(row)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RUN_CSV_COLUMNS)
            for s in self.stats:
                writer.writerow([
                    s.iteration,
                    repr(s.loss_source), repr(s.loss_target),
                    repr(s.mean_alpha_clean), repr(s.mean_alpha_noisy),
                    repr(s.delta_fo), repr(s.delta_align),
                    repr(s.delta_outer), repr(s.delta_head),
                    repr(s.lambda_alpha_bound),
                ])


@dataclass
class TrainingState:
    """Everything needed to resume a run: parameters, weights, and how many
    iterations have already been applied."""

    params: ModelParams
    alpha: np.ndarray
    iteration: int

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)


def save_checkpoint(state: TrainingState, path: str | Path) -> None:
    payload = {
        "iteration": state.iteration,
        "alpha": state.alpha.tolist(),
        "params": state.params.to_dict(),
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> TrainingState:
    payload = json.loads(Path(path).read_text())
    return TrainingState(
        params=ModelParams.from_dict(payload["params"]),
        alpha=np.asarray(payload["alpha"], dtype=np.float64),
        iteration=int(payload["iteration"]),
    )


def _substream(seed: int, stream: int, key: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stream, key])


def _cohort_means(alpha: np.ndarray, mask: np.ndarray | None) -> tuple[float, float]:
    if mask is None:
        return float(alpha.mean()), math.nan
    clean = alpha[~mask]
    noisy = alpha[mask]
    return (float(clean.mean()) if clean.size else math.nan,
            float(noisy.mean()) if noisy.size else math.nan)


def _validate_run(source: LabeledDataset, target: LabeledDataset,
                  config: TrainerConfig, arch: ArchDescriptor) -> None:
    if config.source_batch > source.n:
        raise ConfigError(f"source_batch {config.source_batch} exceeds source size {source.n}")
    if config.target_batch > target.n:
        raise ConfigError(f"target_batch {config.target_batch} exceeds target size {target.n}")
    if source.dim != arch.input_dim or target.dim != arch.input_dim:
        raise ConfigError(
            f"feature dims (source {source.dim}, target {target.dim}) "
            f"do not match arch input_dim {arch.input_dim}"
        )
    if source.n_classes != arch.n_classes_source:
        raise ConfigError(
            f"source has {source.n_classes} classes, arch declares {arch.n_classes_source}"
        )
    if target.n_classes != arch.n_classes_target:
        raise ConfigError(
            f"target has {target.n_classes} classes, arch declares {arch.n_classes_target}"
        )
    if config.mode == "shared_classifier" and arch.n_classes_source != arch.n_classes_target:
        raise ConfigError("shared_classifier mode requires equal class counts")


def run_training(
    source: LabeledDataset,
    target: LabeledDataset,
    config: TrainerConfig,
    arch: ArchDescriptor,
    *,
    resume: TrainingState | None = None,
    snapshot_alpha: bool = False,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 0,
    loss=None,
    on_iteration: Callable[[int, ModelParams, np.ndarray], None] | None = None,
) -> RunRecord:
    """Run the full mini-batch loop and record per-iteration diagnostics.

    Per epoch the source set is partitioned into non-overlapping shuffled
    batches (the last one may be short); each source batch is paired with a
    freshly drawn target batch.  Deterministic given the config seed.

    ``resume`` continues a checkpointed run: iterations at or below the
    checkpoint counter are skipped and, because batch schedules are derived
    from stateless substreams, the remaining trajectory is identical to the
    uninterrupted run's.  ``on_iteration`` is a diagnostic hook called after
    every completed iteration with (iteration, params, alpha).
    """
    shared = config.mode == "shared_classifier"
    _validate_run(source, target, config, arch)
    n_s, n_t = source.n, target.n
    seed = config.rng_seed
    eval_loss = loss if loss is not None else CrossEntropy

    if resume is not None:
        if resume.params.arch != arch:
            raise ConfigError("checkpoint architecture does not match the requested arch")
        if resume.alpha.shape != (n_s,):
            raise ConfigError(
                f"checkpoint alpha has length {resume.alpha.size}, source has {n_s} examples"
            )
        params = resume.params.copy()
        alpha = resume.alpha.copy()
        start_iter = resume.iteration
    else:
        params = ModelParams.init(arch, _substream(seed, 0), shared_head=shared)
        alpha = np.full(n_s, float(config.alpha_init))
        start_iter = 0

    mask = source.corruption_mask
    record = RunRecord()

    def record_row(iteration: int, fo: FirstOrderDelta | None, bound: float) -> None:
        mean_clean, mean_noisy = _cohort_means(alpha, mask)
        nan = math.nan
        record.append(IterationStats(
            iteration=iteration,
            loss_source=weighted_source_loss(params, alpha, source, eval_loss),
            loss_target=target_loss(params, target, eval_loss),
            mean_alpha_clean=mean_clean,
            mean_alpha_noisy=mean_noisy,
            delta_fo=fo.total if fo else nan,
            delta_align=fo.term_align if fo else nan,
            delta_outer=fo.term_outer if fo else nan,
            delta_head=fo.term_head if fo else nan,
            lambda_alpha_bound=bound,
            alpha_min=float(alpha.min()),
            alpha_max=float(alpha.max()),
        ))

    if start_iter == 0:
        record_row(0, None, math.nan)

    it = 0
    for epoch in range(config.epochs):
        order = _substream(seed, 1, epoch).permutation(n_s)
        for lo in range(0, n_s, config.source_batch):
            it += 1
            if it <= start_iter:
                continue
            b = order[lo:lo + config.source_batch]
            t_sel = _substream(seed, 2, it).permutation(n_t)[:config.target_batch]
            xs_b, ys_b = source.features[b], source.labels[b]
            xt, yt = target.features[t_sel], target.labels[t_sel]

            try:
                Q = build_Q(params, xs_b, ys_b, n_s, loss)
                R = build_R(params, xs_b, ys_b, n_s, loss)
                alpha_b = alpha[b]
                pre_params = params
                params = interior_step(params, Q, R, alpha_b, config.lambda_p)

                g_theta, g_phi_t = target_gradients(params, xt, yt, loss)
                if config.alpha_uses_prestep_theta:
                    g_theta_for_alpha, _ = target_gradients(pre_params, xt, yt, loss)
                else:
                    g_theta_for_alpha = g_theta

                v_norm = float(np.linalg.norm(Q.T @ g_theta_for_alpha))
                bound = sufficient_lambda_alpha(n_s, config.lambda_p, v_norm)
                if config.lambda_alpha_auto:
                    lam_a = min(bound, config.lambda_alpha_max)
                else:
                    lam_a = config.lambda_alpha

                alpha[b] = exterior_step(alpha_b, Q, g_theta_for_alpha, lam_a,
                                         config.lambda_p, config.weight_path)
                params = target_step(params, xt, yt, config.lambda_p, loss,
                                     grad_phi_t=g_phi_t)
                fo = first_order_delta(Q, alpha_b, g_theta_for_alpha, g_phi_t,
                                       config.lambda_p, lam_a)
            except NumericalError as e:
                raise NumericalError(f"iteration {it} (epoch {epoch}): {e}") from e

            if alpha.min() < 0.0 or alpha.max() > 1.0:
                raise NumericalError(
                    f"iteration {it}: weights left [0, 1] "
                    f"(min {alpha.min()}, max {alpha.max()})"
                )
            record_row(it, fo, bound)
            if on_iteration is not None:
                on_iteration(it, params, alpha)
            if checkpoint_path is not None and checkpoint_every > 0 and it % checkpoint_every == 0:
                save_checkpoint(TrainingState(params, alpha, it), checkpoint_path)
        if snapshot_alpha and it > start_iter:
            record.alpha_snapshots.append((epoch, alpha.copy()))

    record.final_params = params
    record.final_alpha = alpha
    return record
