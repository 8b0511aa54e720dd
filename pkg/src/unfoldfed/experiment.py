"""End-to-end experiment driver shared by the CLI and the test suite."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .config import ExperimentConfig
from .data import (
    Dataset,
    SettingSpec,
    load_dataset,
    make_profiles,
    partition_for_setting,
    split_validation,
)
from .federation import fedavg_weights
from .report import RunHistory
from .unfolding import MetaTrace, unfold_train, weights_from_logits


@dataclass
class Problem:
    """Prepared data and clients for one experiment."""

    train: Dataset
    val_batch: nn.Batch
    test_batch: nn.Batch
    shards: list
    profiles: list
    objective_batch: nn.Batch | None


def setting_spec(cfg: ExperimentConfig) -> SettingSpec:
    return SettingSpec(
        id=cfg.setting,
        K=cfg.K,
        seed=cfg.seeds["data"],
        sizes=tuple(cfg.sizes) if cfg.sizes is not None else None,
        label_map=tuple(tuple(m) for m in cfg.label_map)
        if cfg.label_map is not None else None,
        epoch_list=tuple(cfg.epoch_list) if cfg.epoch_list is not None else None,
        participation_list=tuple(cfg.participation_list)
        if cfg.participation_list is not None else None,
        per_client=cfg.per_client,
        epochs=cfg.epochs,
    )


def _client_probe_batch(train: Dataset, shards, seed: int,
                        per_shard: int = 200) -> nn.Batch:
    """Fixed sample across shards for the client-side meta objective."""
    rng = np.random.default_rng(seed)
    rows = []
    for shard in shards:
        take = min(per_shard, shard.size)
        rows.append(rng.choice(shard.indices, size=take, replace=False))
    rows = np.sort(np.concatenate(rows))
    return nn.Batch(train.images[rows], train.labels[rows])


def prepare_problem(cfg: ExperimentConfig) -> Problem:
    full_train = load_dataset(cfg.train_images, cfg.train_labels, "train")
    test = load_dataset(cfg.test_images, cfg.test_labels, "test")
    train, val = split_validation(full_train, cfg.val_size, cfg.seeds["data"])
    shards = partition_for_setting(train, setting_spec(cfg))
    profiles = make_profiles(setting_spec(cfg), shards, cfg.local_lr, cfg.batch_size)
    objective = None
    if cfg.meta_objective == "client":
        objective = _client_probe_batch(train, shards, cfg.seeds["data"])
    return Problem(
        train=train,
        val_batch=nn.Batch(val.images, val.labels),
        test_batch=nn.Batch(test.images, test.labels),
        shards=shards,
        profiles=profiles,
        objective_batch=objective,
    )


def run_experiment(cfg: ExperimentConfig, problem: Problem | None = None):
    """Run the configured mode; returns (history, logits, theta_matrix).

    For the baseline modes `logits` and `theta_matrix` are None.
    """
    t0 = time.perf_counter()
    if problem is None:
        problem = prepare_problem(cfg)
    ucfg = cfg.unfold_config()
    fixed_theta = None
    if cfg.mode == "fedavg":
        fixed_theta = fedavg_weights(problem.shards)
    elif cfg.mode == "fixed-uniform":
        fixed_theta = np.full(cfg.K, 1.0 / cfg.K)
    logits, trace = unfold_train(
        ucfg, problem.train, problem.profiles,
        problem.val_batch, problem.test_batch,
        fixed_theta=fixed_theta,
        objective_batch=problem.objective_batch,
    )
    elapsed = time.perf_counter() - t0
    history = RunHistory.from_trace(
        cfg.echo(), cfg.K, trace, wall_clock={"total_sec": elapsed}
    )
    if fixed_theta is not None:
        return history, None, None
    theta_matrix = np.stack([weights_from_logits(row, cfg.norm) for row in logits])
    return history, logits, theta_matrix


def final_test_accuracy(history: RunHistory) -> float:
    return history.rounds[-1][1].test_acc
