"""Optimization: Adam with bias correction, the warmup-then-decay learning
rate schedule, an exponential moving average of weights used for evaluation,
early stopping on dev accuracy, and the multi-seed protocol.

One run is a single serialized stream: shuffle, forward, backward, clip,
step, EMA update. Everything is seeded, so two runs with the same seed,
config, and data produce byte-identical metrics files.
"""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import ModelConfig, TrainConfig
from .data import Vocabulary, make_batch
from .decode import evaluate
from .model import Model
from .objective import LossBreakdown, answer_loss, supervision_loss, total_loss
from .params import ParameterStore


@dataclass
class SchedulerState:
    d_model: int
    warmup: int
    step: int = 0


def noam_lr(state: SchedulerState) -> float:
    """d_model^-0.5 * min(step^-0.5, step * warmup^-1.5).

    Rises linearly through the warmup, peaks exactly at step == warmup, then
    decays as step^-0.5.
    """
    if state.step < 1:
        raise ValueError(f"noam_lr: step must be >= 1, got {state.step}")
    s = float(state.step)
    return state.d_model ** -0.5 * min(s ** -0.5, s * state.warmup ** -1.5)


class NonFiniteGradient(RuntimeError):
    def __init__(self, path):
        super().__init__(f"non-finite gradient at {path!r}")
        self.path = path


def adam_step(params: ParameterStore, moments: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Standard Adam with bias correction, applied in place.

    The whole step is rejected (no parameter touched) when any gradient is
    non-finite; the caller logs the incident and moves on.
    """
    grads = {}
    for path, t in params.items():
        if t.grad is None:
            continue
        if not np.all(np.isfinite(t.grad)):
            raise NonFiniteGradient(path)
        grads[path] = t.grad
    t_step = moments.get("t", 0) + 1
    moments["t"] = t_step
    bc1 = 1.0 - beta1 ** t_step
    bc2 = 1.0 - beta2 ** t_step
    for path, g in grads.items():
        m, v = moments.get(path, (np.zeros_like(g), np.zeros_like(g)))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        moments[path] = (m, v)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        params[path].data -= lr * update


def clip_gradients(params: ParameterStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    sq = 0.0
    for _path, t in params.items():
        if t.grad is not None:
            sq += float((t.grad * t.grad).sum())
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for _path, t in params.items():
            if t.grad is not None:
                t.grad *= factor
    return norm


class EmaState:
    """Exponential moving average of all trainable weights.

    shadow <- decay * shadow + (1 - decay) * weight after every step;
    evaluation swaps the shadow in and restores the raw weights after.
    """

    def __init__(self, decay: float, params: ParameterStore):
        self.decay = float(decay)
        self.shadow = {p: t.data.copy() for p, t in params.items()}

    def _check_paths(self, params: ParameterStore):
        if set(self.shadow) != set(dict(params.items())):
            raise ValueError("EMA shadow paths do not match parameter paths")

    def update(self, params: ParameterStore):
        self._check_paths(params)
        d = self.decay
        for path, t in params.items():
            self.shadow[path] = d * self.shadow[path] + (1.0 - d) * t.data

    @contextlib.contextmanager
    def applied(self, params: ParameterStore):
        self._check_paths(params)
        saved = {p: t.data for p, t in params.items()}
        for path, t in params.items():
            t.data = self.shadow[path].copy()
        try:
            yield
        finally:
            for path, t in params.items():
                t.data = saved[path]


class EarlyStopper:
    """Stop when dev accuracy has not strictly increased for `patience`
    consecutive epochs; remembers the best epoch."""

    def __init__(self, patience: int = 2):
        self.patience = patience
        self.best = -float("inf")
        self.best_epoch = None
        self.stale = 0

    def update(self, epoch: int, value: float):
        """Returns (improved, should_stop)."""
        if value > self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
            return True, False
        self.stale += 1
        return False, self.stale >= self.patience


def compute_loss(model: Model, batch, mode: str = "train", rng=None):
    """Forward plus the combined objective for one batch.

    Returns (scalar loss Tensor, LossBreakdown, ForwardOutput).
    """
    out = model.forward(batch, mode=mode, rng=rng)
    ans = answer_loss(out.answer_probs, batch.answer_positions)
    sup: dict[str, T.Tensor] = {}
    for a in model.config.supervision:
        mats = batch.supervision.get(a.kind)
        if mats is None:
            raise ValueError(
                f"batch carries no {a.kind!r} supervision matrices; "
                "request the kind when batching"
            )
        loss = supervision_loss(
            model.attention_for(out, a), mats,
            unweighted=model.config.unweighted_supervision,
        )
        sup[a.kind] = T.add(sup[a.kind], loss) if a.kind in sup else loss
    total, breakdown = total_loss(ans, sup, model.config.lambda_weight)
    return total, breakdown, out


@dataclass
class TrainResult:
    seed: int
    epochs_run: int
    best_epoch: int | None
    best_dev_accuracy: float
    stopped_early: bool
    aborted: bool
    metrics_path: str
    checkpoint_ema: str | None
    checkpoint_raw: str | None
    step_count: int


def _resolve_lr(train_config: TrainConfig, sched: SchedulerState) -> float:
    if train_config.scheduler == "noam":
        return noam_lr(sched)
    return train_config.optimizer_lr


def train_loop(train_instances, dev_instances, vocab: Vocabulary,
               model_config: ModelConfig, train_config: TrainConfig,
               seed: int, out_dir, log=None) -> TrainResult:
    """One full training run; returns the result with checkpoint paths.

    Per epoch: shuffle, optimize over batches, then evaluate dev accuracy
    with the EMA weights swapped in. The best epoch's EMA and raw weights are
    both checkpointed. A non-finite loss aborts the run, keeping the last
    good checkpoint.
    """
    model_config.validate()
    train_config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = log or (lambda msg: None)

    model = Model(model_config, vocab.size, vocab.char_size, seed=seed)
    moments: dict = {}
    ema = EmaState(train_config.ema_decay, model.store)
    sched = SchedulerState(d_model=model_config.d_model, warmup=train_config.warmup)
    stopper = EarlyStopper(train_config.patience)
    rng = np.random.default_rng([seed, 0xC0FE])
    kinds = tuple(sorted({a.kind for a in model_config.supervision}))

    metrics_path = out_dir / f"metrics-seed{seed}.jsonl"
    ema_path = out_dir / f"checkpoint-seed{seed}-ema.npz"
    raw_path = out_dir / f"checkpoint-seed{seed}-raw.npz"
    saved_any = False
    aborted = False
    stopped = False
    order = np.arange(len(train_instances))

    with open(metrics_path, "w") as metrics:
        def emit(record):
            metrics.write(json.dumps(record, sort_keys=True))
            metrics.write("\n")

        epochs_run = 0
        for epoch in range(1, train_config.epochs + 1):
            rng.shuffle(order)
            epoch_abort = False
            for lo in range(0, len(order), train_config.batch_size):
                group = [train_instances[i] for i in order[lo : lo + train_config.batch_size]]
                batch = make_batch(group, vocab, kinds=kinds)
                sched.step += 1
                lr = _resolve_lr(train_config, sched)
                model.store.zero_grad()
                with T.Tape() as tape:
                    try:
                        loss, breakdown, _ = compute_loss(model, batch, "train", rng)
                    except ValueError as e:
                        if "non-finite" not in str(e):
                            raise
                        log(f"abort: {e}")
                        emit({"type": "abort", "step": sched.step, "reason": str(e)})
                        epoch_abort = True
                        break
                    tape.backward(loss)
                grad_norm = clip_gradients(model.store, train_config.grad_clip)
                try:
                    adam_step(
                        model.store, moments, lr,
                        train_config.adam_beta1, train_config.adam_beta2,
                        train_config.adam_eps,
                    )
                except NonFiniteGradient as e:
                    log(f"step {sched.step} rejected: {e}")
                    emit({"type": "incident", "step": sched.step, "reason": str(e)})
                    continue
                ema.update(model.store)
                record = {"type": "step", "step": sched.step, "epoch": epoch, "lr": lr,
                          "grad_norm": grad_norm}
                record.update(breakdown.to_obj())
                emit(record)
            if epoch_abort:
                aborted = True
                break
            epochs_run = epoch
            with ema.applied(model.store):
                report, _ = evaluate(model, dev_instances, vocab,
                                     train_config.eval_batch_size)
            improved, stop = stopper.update(epoch, report.accuracy)
            if improved:
                with ema.applied(model.store):
                    model.store.save(ema_path)
                model.store.save(raw_path)
                saved_any = True
            emit({
                "type": "epoch", "epoch": epoch, "dev_accuracy": report.accuracy,
                "improved": improved, "stopped": stop,
            })
            log(f"epoch {epoch}: dev accuracy {report.accuracy:.4f}"
                f"{' (best)' if improved else ''}")
            if stop:
                stopped = True
                break

    return TrainResult(
        seed=seed,
        epochs_run=epochs_run,
        best_epoch=stopper.best_epoch,
        best_dev_accuracy=stopper.best if stopper.best_epoch is not None else 0.0,
        stopped_early=stopped,
        aborted=aborted,
        metrics_path=str(metrics_path),
        checkpoint_ema=str(ema_path) if saved_any else None,
        checkpoint_raw=str(raw_path) if saved_any else None,
        step_count=sched.step,
    )


def multi_seed(train_instances, dev_instances, vocab: Vocabulary,
               model_config: ModelConfig, train_config: TrainConfig,
               seeds, out_dir, test_instances=None, log=None):
    """Independent runs per seed; reports mean, max, and standard deviation
    of the final accuracy (test set when given, otherwise best dev).

    Aborted runs are excluded from the aggregates and reported by seed.
    """
    if not seeds:
        raise ValueError("multi_seed: need at least one seed")
    results = []
    accuracies = []
    for seed in seeds:
        result = train_loop(train_instances, dev_instances, vocab,
                            model_config, train_config, seed, out_dir, log=log)
        results.append(result)
        if result.aborted or result.checkpoint_ema is None:
            continue
        if test_instances is not None:
            model = Model(model_config, vocab.size, vocab.char_size, seed=seed)
            model.store.load(result.checkpoint_ema)
            report, _ = evaluate(model, test_instances, vocab,
                                 train_config.eval_batch_size)
            accuracies.append(report.accuracy)
        else:
            accuracies.append(result.best_dev_accuracy)
    summary = {
        "seeds": list(seeds),
        "aborted_seeds": [r.seed for r in results if r.aborted],
        "accuracies": accuracies,
        "mean": float(np.mean(accuracies)) if accuracies else None,
        "max": float(np.max(accuracies)) if accuracies else None,
        "std": float(np.std(accuracies)) if accuracies else None,
    }
    return summary, results
