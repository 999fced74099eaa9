"""Loss, Adam optimizer, learning-rate schedule, and the training loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import Pose, pose_error, relative_label
from .model import SiameseModel, save_checkpoint
from .tensor import Tensor


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {value}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    halving_epochs: tuple = (4, 6, 8)
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 32
    loss_weight: float = 0.99
    pairs_per_epoch: int = 25600
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.loss_weight < 1.0):
            raise ValueError("loss weight must be in (0, 1)")
        if min(self.learning_rate, self.epochs, self.batch_size, self.pairs_per_epoch) <= 0:
            raise ValueError("rates and counts must be positive")

    def lr_for_epoch(self, epoch: int) -> float:
        """1-based epoch; the rate halves after each listed epoch."""
        halvings = sum(1 for e in self.halving_epochs if epoch > e)
        return self.learning_rate * (0.5**halvings)

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["halving_epochs"] = list(self.halving_epochs)
        return d

    @staticmethod
    def from_json(d: dict) -> "TrainConfig":
        d = dict(d)
        d["halving_epochs"] = tuple(d.get("halving_epochs", (4, 6, 8)))
        return TrainConfig(**d)


def pose_batch_to_labels(poses) -> np.ndarray:
    """[B, 7] label matrix (t, then canonical unit quaternion)."""
    return np.array([p.to_list() for p in poses])


def loss(pred: Tensor, labels: np.ndarray, w: float) -> Tensor:
    """Mean over the batch of w*RMS(t) + (1-w)*RMS(q).

    RMS is the root of the mean squared component error: m = 3 for the
    translation block, m = 4 for the quaternion block. Label quaternions
    are already sign-canonical; the predicted quaternion is used raw.
    """
    target = Tensor(labels)
    diff_t = pred.slice_cols(0, 3) - target.slice_cols(0, 3)
    diff_q = pred.slice_cols(3, 7) - target.slice_cols(3, 7)
    rms_t = diff_t.square().mean(axis=1).sqrt()
    rms_q = diff_q.square().mean(axis=1).sqrt()
    return (rms_t.scale(w) + rms_q.scale(1.0 - w)).mean()


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params, state: AdamState, lr: float, config: TrainConfig) -> None:
    """Standard bias-corrected Adam update in place; grads are read from params."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for i, p in enumerate(params):
        g = p.grad
        if g is None:
            continue
        if config.weight_decay:
            g = g + config.weight_decay * p.data
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + config.eps)


def _stack_pairs(pairs):
    a = np.stack([p.image_a.pixels for p in pairs])[:, None, :, :]
    b = np.stack([p.image_b.pixels for p in pairs])[:, None, :, :]
    labels = pose_batch_to_labels([p.label for p in pairs])
    return a, b, labels


def evaluate_mean_errors(model: SiameseModel, samples, pairs_idx, batch_size: int = 64):
    """Mean per-axis absolute errors over the given (i, j) sample pairs.

    Returns a dict with keys e_x, e_y, e_z (mm) and e_roll, e_pitch,
    e_yaw (degrees).
    """
    errs = np.zeros(6)
    count = 0
    for start in range(0, len(pairs_idx), batch_size):
        chunk = pairs_idx[start : start + batch_size]
        a = np.stack([samples[i].image.pixels for i, _ in chunk])[:, None]
        b = np.stack([samples[j].image.pixels for _, j in chunk])[:, None]
        out = model.forward(a, b).data
        for row, (i, j) in zip(out, chunk):
            truth = relative_label(samples[i].t_d2e, samples[j].t_d2e)
            pred = Pose.from_list(row)
            e = pose_error(truth, pred)
            errs += [e.e_x, e.e_y, e.e_z, e.e_roll, e.e_pitch, e.e_yaw]
            count += 1
    errs /= max(count, 1)
    return {
        "e_x": errs[0], "e_y": errs[1], "e_z": errs[2],
        "e_roll": errs[3], "e_pitch": errs[4], "e_yaw": errs[5],
    }


def identity_baseline_errors(samples, pairs_idx):
    """Errors of always predicting the identity relative pose."""
    errs = np.zeros(6)
    for i, j in pairs_idx:
        truth = relative_label(samples[i].t_d2e, samples[j].t_d2e)
        e = pose_error(truth, Pose.identity())
        errs += [e.e_x, e.e_y, e.e_z, e.e_roll, e.e_pitch, e.e_yaw]
    errs /= max(len(pairs_idx), 1)
    return {
        "e_x": errs[0], "e_y": errs[1], "e_z": errs[2],
        "e_roll": errs[3], "e_pitch": errs[4], "e_yaw": errs[5],
    }


def all_pairs(indices):
    return [(i, j) for i in indices for j in indices]


def _val_score(errors: dict) -> float:
    # mm and degrees are comparable magnitudes at desk scale
    return (errors["e_x"] + errors["e_y"] + errors["e_z"]
            + errors["e_roll"] + errors["e_pitch"] + errors["e_yaw"])


def _as_sets(samples):
    """Accept one sample list or a list of per-connector sample lists."""
    if samples and isinstance(samples[0], list):
        return samples
    return [samples]


def _multi_pair_stream(sets, count, rng):
    """Pairs drawn within a set; sets weighted by their n^2 pair counts."""
    from ..sampler import pair_stream

    if len(sets) == 1:
        yield from pair_stream(sets[0], count, rng)
        return
    weights = np.array([len(s) ** 2 for s in sets], dtype=float)
    weights /= weights.sum()
    for _ in range(count):
        k = int(rng.choice(len(sets), p=weights))
        yield next(pair_stream(sets[k], 1, rng))


def train(model: SiameseModel, train_samples, val_samples, config: TrainConfig,
          checkpoint_path: str = None, start_epoch: int = 0, log=None):
    """Train in place; returns per-epoch metric dicts.

    Accepts one sample list or per-connector lists; pairs are drawn on the
    fly per epoch within a connector. Validation uses all n^2 pairs of each
    validation set, averaged. The best-validation parameters are written to
    checkpoint_path when given.
    """
    train_sets = _as_sets(train_samples)
    val_sets = _as_sets(val_samples)

    state = AdamState(model.params)
    metrics = []
    best_score = float("inf")

    def validate():
        keys = ("e_x", "e_y", "e_z", "e_roll", "e_pitch", "e_yaw")
        acc = dict.fromkeys(keys, 0.0)
        for vs in val_sets:
            errs = evaluate_mean_errors(model, vs, all_pairs(range(len(vs))))
            for k in keys:
                acc[k] += errs[k] / len(val_sets)
        return acc

    for epoch in range(start_epoch + 1, start_epoch + config.epochs + 1):
        lr = config.lr_for_epoch(epoch)
        rng = np.random.default_rng([config.seed, 101, epoch])
        stream = _multi_pair_stream(train_sets, config.pairs_per_epoch, rng)
        epoch_loss = 0.0
        batches = 0
        batch = []
        batch_index = 0
        for pair in stream:
            batch.append(pair)
            if len(batch) < config.batch_size:
                continue
            a, b, labels = _stack_pairs(batch)
            batch = []
            model.zero_grad()
            out = model.forward(a, b)
            l = loss(out, labels, config.loss_weight)
            value = float(l.data)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, batch_index, value)
            l.backward()
            adam_step(model.params, state, lr, config)
            epoch_loss += value
            batches += 1
            batch_index += 1
        val_errors = validate()
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": epoch_loss / max(batches, 1),
            **{f"val_{k}": v for k, v in val_errors.items()},
        }
        metrics.append(record)
        if log is not None:
            log(record)
        score = _val_score(val_errors)
        if score < best_score:
            best_score = score
            if checkpoint_path:
                save_checkpoint(checkpoint_path, model, epoch=epoch,
                                metrics=record, seed=config.seed)
    return metrics
