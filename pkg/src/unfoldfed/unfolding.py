"""Learning per-round aggregation weights by unrolling the federation loop.

Each meta-iteration replays the same T-round horizon from the same initial
model, accumulates an evaluation loss after every round, and applies one SGD
step with weight decay to a T x K matrix of free logits. Row-wise softmax
turns logits into simplex weights; the meta-gradient is truncated to each
round's immediate effect, with a finite-difference oracle alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import ClientProfile, Dataset
from .federation import RoundRecord, aggregate, run_round

NORM_MODES = ("softmax", "sum", "none")


@dataclass(frozen=True)
class Seeds:
    model: int = 1
    data: int = 2
    rounds: int = 3


@dataclass(frozen=True)
class UnfoldConfig:
    K: int
    M: int
    T: int
    model: nn.ModelSpec
    eta_g: float = 1.0
    eta_meta: float = 0.5
    lambda_model: float = 1e-4
    lambda_theta: float = 1e-4
    seeds: Seeds = field(default_factory=Seeds)
    norm: str = "softmax"
    meta_objective: str = "validation"  # or "client"
    threads: int = 1

    def __post_init__(self):
        if min(self.K, self.M, self.T) < 1:
            raise ValueError("K, M, T must all be >= 1")
        if self.eta_g <= 0 or self.eta_meta < 0:
            raise ValueError("eta_g must be positive, eta_meta nonnegative")
        if self.lambda_model < 0 or self.lambda_theta < 0:
            raise ValueError("decay coefficients must be nonnegative")
        if self.norm not in NORM_MODES:
            raise ValueError(f"unknown normalization mode {self.norm!r}")
        if self.meta_objective not in ("validation", "client"):
            raise ValueError(f"unknown meta objective {self.meta_objective!r}")


@dataclass(frozen=True)
class MetaIteration:
    m: int
    meta_loss: float
    logits: np.ndarray          # T x K, as applied this iteration
    records: list[RoundRecord]


@dataclass(frozen=True)
class MetaTrace:
    iterations: list[MetaIteration]

    def meta_losses(self) -> np.ndarray:
        return np.array([it.meta_loss for it in self.iterations])


def softmax_weights(z_row: np.ndarray) -> np.ndarray:
    """Row softmax with max-subtraction; always lands on the simplex."""
    z = np.asarray(z_row, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def weights_from_logits(z_row: np.ndarray, norm: str = "softmax") -> np.ndarray:
    """Map one logits row to aggregation weights under the chosen scheme.

    "sum" divides positive logits by their total (post-hoc normalization);
    "none" uses the logits directly and gives up the simplex guarantee.
    """
    z = np.asarray(z_row, dtype=np.float64)
    if norm == "softmax":
        return softmax_weights(z)
    if norm == "sum":
        if np.any(z <= 0):
            raise ValueError("sum normalization requires strictly positive logits")
        return z / z.sum()
    return z.copy()


def initial_logits(T: int, K: int, norm: str = "softmax") -> np.ndarray:
    """Logits whose induced weights start uniform under each scheme."""
    if norm == "softmax":
        return np.zeros((T, K))
    if norm == "sum":
        return np.ones((T, K))
    return np.full((T, K), 1.0 / K)


def meta_gradient_row(
    spec: nn.ModelSpec,
    z_row: np.ndarray,
    deltas: list[np.ndarray],
    w_next: np.ndarray,
    val: nn.Batch,
    eta_g: float,
    norm: str = "softmax",
) -> np.ndarray:
    """Truncated gradient of the post-round evaluation loss w.r.t. one row.

    With deltas held constant the round map is affine in theta, so with
    g = grad of the loss at w_next and a_k = eta_g * <g, delta_k>, the
    softmax chain rule gives d/dz_j = theta_j * (a_j - sum_k theta_k a_k).
    """
    z = np.asarray(z_row, dtype=np.float64)
    if len(deltas) != len(z):
        raise ValueError(f"{len(deltas)} deltas for {len(z)} logits")
    _, g = nn.loss_and_grad(spec, w_next, val)
    a = np.array([eta_g * float(g @ d) for d in deltas])
    if norm == "softmax":
        theta = softmax_weights(z)
        return theta * (a - float(theta @ a))
    if norm == "sum":
        theta = weights_from_logits(z, "sum")
        return (a - float(theta @ a)) / z.sum()
    return a


def fd_meta_gradient_row(
    spec: nn.ModelSpec,
    z_row: np.ndarray,
    w: np.ndarray,
    deltas: list[np.ndarray],
    val: nn.Batch,
    eta_g: float,
    lambda_model: float,
    eps: float = 1e-3,
    norm: str = "softmax",
) -> np.ndarray:
    """Central-difference oracle for the one-round objective, deltas frozen."""
    if not (1e-6 <= eps <= 1e-2):
        raise ValueError(f"eps {eps} outside [1e-6, 1e-2]")
    z = np.asarray(z_row, dtype=np.float64)

    class _Frozen:
        def __init__(self, delta):
            self.delta = delta
            self.participated = True

    updates = [_Frozen(d) for d in deltas]

    def objective(zq: np.ndarray) -> float:
        theta = weights_from_logits(zq, norm)
        w_next = aggregate(
            w, updates, theta, eta_g, lambda_model,
            require_simplex=(norm != "none"),
        )
        loss, _ = nn.evaluate(spec, w_next, val)
        return loss

    grad = np.empty_like(z)
    for j in range(len(z)):
        zp, zm = z.copy(), z.copy()
        zp[j] += eps
        zm[j] -= eps
        grad[j] = (objective(zp) - objective(zm)) / (2 * eps)
    return grad


def meta_step(
    z: np.ndarray,
    row_grads: np.ndarray,
    eta_meta: float,
    lambda_theta: float,
) -> np.ndarray:
    """One SGD-with-weight-decay update of the whole logits matrix."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != np.shape(row_grads):
        raise ValueError(f"shape mismatch: {z.shape} vs {np.shape(row_grads)}")
    return z - eta_meta * (row_grads + lambda_theta * z)


def _round_seed(seeds: Seeds, m: int, t: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seeds.rounds, m, t])


def unfold_train(
    cfg: UnfoldConfig,
    dataset: Dataset,
    profiles: list[ClientProfile],
    val: nn.Batch,
    test: nn.Batch,
    fixed_theta: np.ndarray | None = None,
    start_logits: np.ndarray | None = None,
    objective_batch: nn.Batch | None = None,
) -> tuple[np.ndarray, MetaTrace]:
    """Run M meta-iterations of T unrolled rounds each.

    Every meta-iteration restarts from the same seeded initial model so the
    round index t of each logits row keeps its meaning. With `fixed_theta`
    the loop degenerates to a fixed-weight baseline (FedAvg, uniform) on the
    exact same seeding path. Per-round stochasticity is derived from
    (seeds.rounds, m, t) only.

    Under softmax normalization the logits rows are kept canonical (row max
    zero). A uniform row shift never changes the weights, and canonical form
    makes that invariance exact in floating point rather than approximate.
    """

    def canonical(zq: np.ndarray) -> np.ndarray:
        if cfg.norm != "softmax":
            return zq
        return zq - zq.max(axis=1, keepdims=True)

    if len(profiles) != cfg.K:
        raise ValueError(f"{len(profiles)} profiles for K={cfg.K}")
    w0 = nn.init_model(cfg.model, cfg.seeds.model)
    z = initial_logits(cfg.T, cfg.K, cfg.norm) if start_logits is None \
        else np.array(start_logits, dtype=np.float64)
    if z.shape != (cfg.T, cfg.K):
        raise ValueError(f"logits shape {z.shape}, expected {(cfg.T, cfg.K)}")
    z = canonical(z)
    obj_batch = val if objective_batch is None else objective_batch

    iterations: list[MetaIteration] = []
    for m in range(cfg.M):
        w = w0
        row_grads = np.zeros((cfg.T, cfg.K))
        meta_loss = 0.0
        records: list[RoundRecord] = []
        for t in range(cfg.T):
            theta = fixed_theta if fixed_theta is not None \
                else weights_from_logits(z[t], cfg.norm)
            w_next, rec, deltas = run_round(
                t, w, cfg.model, dataset, profiles, theta,
                cfg.eta_g, cfg.lambda_model, _round_seed(cfg.seeds, m, t),
                val, test, threads=cfg.threads,
                require_simplex=(cfg.norm != "none"),
            )
            if obj_batch is val:
                meta_loss += rec.val_loss
            else:
                obj_loss, _ = nn.evaluate(cfg.model, w_next, obj_batch)
                meta_loss += obj_loss
            if fixed_theta is None:
                row_grads[t] = meta_gradient_row(
                    cfg.model, z[t], deltas, w_next, obj_batch,
                    cfg.eta_g, cfg.norm,
                )
            records.append(rec)
            w = w_next
        if not np.isfinite(meta_loss):
            raise FloatingPointError(
                f"meta-loss diverged at meta-iteration {m}: {meta_loss}"
            )
        iterations.append(MetaIteration(m, meta_loss, z.copy(), records))
        if fixed_theta is None:
            z = canonical(meta_step(z, row_grads, cfg.eta_meta, cfg.lambda_theta))
    return z, MetaTrace(iterations)


def trajectory_meta_loss(
    cfg: UnfoldConfig,
    dataset: Dataset,
    profiles: list[ClientProfile],
    val: nn.Batch,
    test: nn.Batch,
    z: np.ndarray,
    m: int = 0,
) -> float:
    """Accumulated meta-loss of one T-round horizon under fixed logits.

    Finite differences over this function give the full (untruncated)
    meta-gradient; slow, used only as a diagnostic for the truncation gap.
    """
    w = nn.init_model(cfg.model, cfg.seeds.model)
    total = 0.0
    for t in range(cfg.T):
        theta = weights_from_logits(z[t], cfg.norm)
        w, rec, _ = run_round(
            t, w, cfg.model, dataset, profiles, theta,
            cfg.eta_g, cfg.lambda_model, _round_seed(cfg.seeds, m, t),
            val, test, threads=cfg.threads,
            require_simplex=(cfg.norm != "none"),
        )
        total += rec.val_loss
    return total
