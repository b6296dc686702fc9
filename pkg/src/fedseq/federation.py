"""FedAvg with full participation, plus the per-round metric suite."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import gru, rng
from .batching import STRATEGIES, collate, make_plan, materialize
from .optim import adam_init, adam_step

log = logging.getLogger(__name__)


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class FedConfig:
    n_clients: int = 5
    local_epochs: int = 1
    batch_size: int = 32
    rounds: int = 30
    strategy: str = "vl"
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    hidden: int = 64
    local_steps_cap: Optional[int] = None
    persist_optimizer: bool = False
    clip_norm: Optional[float] = None
    divergence_ref: str = "post"
    threads: int = 1
    eval_batch: int = 256

    def __post_init__(self):
        if self.n_clients < 1 or self.local_epochs < 1 or self.rounds < 1:
            raise ValueError("n_clients, local_epochs and rounds must all be >= 1")
        if self.batch_size < 1 or self.hidden < 1 or self.threads < 1:
            raise ValueError("batch_size, hidden and threads must all be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.divergence_ref not in ("post", "pre"):
            raise ValueError(f"divergence_ref must be 'post' or 'pre', got {self.divergence_ref!r}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.local_steps_cap is not None and self.local_steps_cap < 1:
            raise ValueError("local_steps_cap must be >= 1 when set")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class GlobalState:
    round: int
    params: np.ndarray


@dataclass
class LocalResult:
    params: np.ndarray
    mean_loss: float
    n_examples: int
    steps: int
    adam: object = None


@dataclass
class RoundMetrics:
    round: int
    test_accuracy: float
    avg_train_loss: float
    divergence: list = field(default_factory=list)
    client_losses: list = field(default_factory=list)


def _clip(g, max_norm):
    norm = float(np.linalg.norm(g))
    if norm > max_norm:
        return g * (max_norm / norm)
    return g


def local_train(client, start, dims, cfg, round_seed, adam=None, workspace=None):
    """Train one client from ``start`` for ``cfg.local_epochs`` epochs.

    A fresh Adam state is created unless ``adam`` is given. With ``lr == 0``
    the optimizer is skipped and the returned parameters are ``start``.
    """
    seq_rng = np.random.default_rng(round_seed)
    params = np.array(start, dtype=np.float64, copy=True)
    if cfg.lr > 0 and adam is None:
        adam = adam_init(params.size, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    workspace = workspace or gru.Workspace()
    losses = []
    steps = 0
    for _ in range(cfg.local_epochs):
        plan = make_plan(cfg.strategy, client, cfg.batch_size, seq_rng)
        for idx in plan.batches:
            if cfg.local_steps_cap is not None and steps >= cfg.local_steps_cap:
                break
            batch = materialize(client, idx)
            loss, g = gru.loss_and_grads(batch, gru.GruParams(*dims, params), workspace=workspace)
            losses.append(loss)
            if cfg.lr > 0:
                grad = g.vector if cfg.clip_norm is None else _clip(g.vector, cfg.clip_norm)
                params, adam = adam_step(params, grad, adam)
            steps += 1
    return LocalResult(params, float(np.mean(losses)), len(client), steps, adam)


def aggregate(results):
    """Example-weighted mean of ``(params, m_i)`` pairs, summed in list order."""
    if not results:
        raise ValueError("nothing to aggregate")
    size = np.asarray(results[0][0]).shape
    total = 0
    for vec, m in results:
        if np.asarray(vec).shape != size:
            raise ValueError(f"parameter length mismatch: {np.asarray(vec).shape} vs {size}")
        if m < 1:
            raise ValueError(f"client example count must be >= 1, got {m}")
        total += m
    out = np.zeros(size)
    for vec, m in results:
        out += (m / total) * np.asarray(vec, dtype=np.float64)
    return out


def model_divergence(local, global_):
    local = np.asarray(local, dtype=np.float64)
    global_ = np.asarray(global_, dtype=np.float64)
    if local.shape != global_.shape:
        raise ValueError(f"parameter length mismatch: {local.shape} vs {global_.shape}")
    return float(np.linalg.norm(local - global_))


def evaluate(params, test, dims, batch_size=256):
    """Top-1 accuracy; sequences are evaluated in length-sorted chunks."""
    if len(test) == 0:
        raise ValueError("empty test set")
    p = gru.GruParams(*dims, params)
    order = sorted(range(len(test)), key=lambda i: (test[i].length, i))
    correct = 0
    for lo in range(0, len(order), batch_size):
        chunk = [test[i] for i in order[lo : lo + batch_size]]
        batch = collate(chunk)
        correct += int((gru.predict(batch, p) == batch.labels).sum())
    return correct / len(test)


def _check_finite(result, round_index, client_id):
    if not np.isfinite(result.mean_loss) or not np.isfinite(result.params).all():
        raise NonFiniteError(
            f"non-finite parameters or loss at round {round_index}, client {client_id} "
            f"(mean loss {result.mean_loss})"
        )


def run_federated(data, cfg, on_round=None, checkpoint_dir=None, init=None):
    """Run ``cfg.rounds`` FedAvg rounds; returns one RoundMetrics per round.

    ``on_round(round, global_params, local_results)`` is called after each
    aggregation, with ``global_params`` the new global vector.
    """
    if len(data.clients) != cfg.n_clients:
        raise ValueError(f"config expects {cfg.n_clients} clients, dataset has {len(data.clients)}")
    dims = (data.d, cfg.hidden, data.n_classes)
    if init is None:
        init = gru.flatten(gru.init_params(*dims, seed=rng.init_seed(cfg.seed)))
    state = GlobalState(0, np.array(init, dtype=np.float64))
    adams = [None] * cfg.n_clients
    participation = np.zeros(cfg.n_clients, dtype=np.int64)
    history = []
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)

    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for r in range(1, cfg.rounds + 1):
            def work(c):
                return local_train(
                    data.clients[c], state.params, dims, cfg, rng.client_seed(cfg.seed, r, c),
                    adam=adams[c] if cfg.persist_optimizer else None,
                )

            ids = range(cfg.n_clients)
            results = list(pool.map(work, ids)) if pool else [work(c) for c in ids]
            for c, res in enumerate(results):
                _check_finite(res, r, c)
                participation[c] += 1
                if cfg.persist_optimizer:
                    adams[c] = res.adam

            new_global = aggregate([(res.params, res.n_examples) for res in results])
            ref = new_global if cfg.divergence_ref == "post" else state.params
            divergence = [model_divergence(res.params, ref) for res in results]
            client_losses = [res.mean_loss for res in results]
            acc = evaluate(new_global, data.test_set, dims, cfg.eval_batch)
            metrics = RoundMetrics(r, acc, float(np.mean(client_losses)), divergence, client_losses)
            history.append(metrics)
            log.info("round %d: acc=%.4f loss=%.4f", r, acc, metrics.avg_train_loss)
            if on_round is not None:
                on_round(r, new_global, results)
            state = GlobalState(r, new_global)
            if checkpoint_dir is not None:
                gru.save_vector(Path(checkpoint_dir) / f"round_{r:04d}.bin", new_global)
    finally:
        if pool:
            pool.shutdown()
    if not (participation == cfg.rounds).all():
        raise RuntimeError(f"participation counts {participation.tolist()} != {cfg.rounds}")
    return history
