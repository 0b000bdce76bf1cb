"""Learned combiner: an MLP over stacked per-model confidence vectors.

The input is the concatenation of every member's probability vector, hidden
layers use sigmoid activations, and the output layer applies softmax over
the answer slots; training minimizes cross-entropy. For open-ended tasks
the network is sized for K output slots and episodes with a smaller shared
solution set zero-pad the input and mask the unused slots out of the
softmax, so parameter shapes stay fixed across episodes.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from collections.abc import Sequence

import numpy as np

from .answers import (
    assemble_mcq_distributions,
    build_final_solution_set,
    concat_features,
    model_distribution,
    parsed_answers,
)
from .corpus import EpisodeRecord

log = logging.getLogger(__name__)

PARAMS_FORMAT_VERSION = 1


@dataclass
class FusionParameters:
    """Weight stack (W_1, b_1), ..., (W_H, b_H); W_l maps dims[l-1] -> dims[l]."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    dims: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.layers) != len(self.dims) - 1:
            raise ValueError("layer count does not match dims")
        for l, (w, b) in enumerate(self.layers):
            if w.shape != (self.dims[l + 1], self.dims[l]) or b.shape != (self.dims[l + 1],):
                raise ValueError(f"layer {l}: shape {w.shape} does not chain with dims")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {l}: non-finite entries")

    def copy(self) -> "FusionParameters":
        return FusionParameters(
            layers=[(w.copy(), b.copy()) for w, b in self.layers], dims=self.dims
        )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"  # adam | sgd
    early_stop_patience: int = 20

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def init_params(dims: Sequence[int], seed: int = 0) -> FusionParameters:
    """Xavier-uniform weights, zero biases, deterministic per seed."""
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid dim chain {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append((w, np.zeros(fan_out)))
    return FusionParameters(layers=layers, dims=dims)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _as_batch(features: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _active_array(active, batch: int, out_dim: int) -> np.ndarray:
    if active is None:
        return np.full(batch, out_dim, dtype=np.intp)
    arr = np.broadcast_to(np.asarray(active, dtype=np.intp), (batch,)).copy()
    if np.any(arr < 1) or np.any(arr > out_dim):
        raise ValueError("active slot counts must lie in [1, output dim]")
    return arr


def _forward_pass(
    params: FusionParameters, x: np.ndarray, active: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    activations = [x]
    a = x
    for w, b in params.layers[:-1]:
        a = _sigmoid(a @ w.T + b)
        activations.append(a)
    w, b = params.layers[-1]
    z = a @ w.T + b
    slot = np.arange(params.dims[-1])[None, :]
    live = slot < active[:, None]
    z = np.where(live, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs, activations


def forward(params: FusionParameters, features, active=None) -> np.ndarray:
    """Output probability vector(s); rows sum to 1 over the active slots."""
    x, single = _as_batch(features)
    if x.shape[1] != params.dims[0]:
        raise ValueError(f"feature length {x.shape[1]} != input dim {params.dims[0]}")
    act = _active_array(active, x.shape[0], params.dims[-1])
    probs, _ = _forward_pass(params, x, act)
    return probs[0] if single else probs


def loss_and_grad(
    params: FusionParameters, features, targets, active=None
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    x, _ = _as_batch(features)
    y = np.atleast_1d(np.asarray(targets, dtype=np.intp))
    if x.shape[0] != y.shape[0]:
        raise ValueError("features and targets disagree on batch size")
    act = _active_array(active, x.shape[0], params.dims[-1])
    if np.any(y < 0) or np.any(y >= act):
        raise ValueError("target index outside the active slots")
    probs, activations = _forward_pass(params, x, act)
    batch = x.shape[0]
    loss = float(-np.log(probs[np.arange(batch), y]).mean())

    delta = probs.copy()
    delta[np.arange(batch), y] -= 1.0
    delta /= batch
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for l in range(len(params.layers) - 1, -1, -1):
        a_prev = activations[l]
        grads.append((delta.T @ a_prev, delta.sum(axis=0)))
        if l > 0:
            w, _ = params.layers[l]
            da = delta @ w
            delta = da * a_prev * (1.0 - a_prev)
    grads.reverse()
    return loss, grads


class _Adam:
    def __init__(self, params: FusionParameters, lr: float) -> None:
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]
        self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers]

    def step(self, params: FusionParameters, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for l, (gw, gb) in enumerate(grads):
            for slot, g in ((0, gw), (1, gb)):
                m = self.m[l][slot]
                v = self.v[l][slot]
                m *= self.beta1
                m += (1 - self.beta1) * g
                v *= self.beta2
                v += (1 - self.beta2) * g * g
                target = params.layers[l][slot]
                target -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _Sgd:
    def __init__(self, params: FusionParameters, lr: float) -> None:
        self.lr = lr

    def step(self, params: FusionParameters, grads) -> None:
        for l, (gw, gb) in enumerate(grads):
            params.layers[l][0][...] -= self.lr * gw
            params.layers[l][1][...] -= self.lr * gb


@dataclass
class FusionData:
    """Assembled training examples: features, target slot, active slot count."""

    features: np.ndarray
    targets: np.ndarray
    active: np.ndarray
    episode_ids: list[str]

    def __len__(self) -> int:
        return len(self.episode_ids)

    def subset(self, idx: np.ndarray) -> "FusionData":
        return FusionData(
            features=self.features[idx],
            targets=self.targets[idx],
            active=self.active[idx],
            episode_ids=[self.episode_ids[i] for i in idx],
        )


def _mean_loss(params: FusionParameters, data: FusionData) -> float:
    loss, _ = loss_and_grad(params, data.features, data.targets, data.active)
    return loss


def train(
    train_data: FusionData,
    val_data: FusionData | None,
    dims: Sequence[int],
    config: TrainConfig = TrainConfig(),
) -> FusionParameters:
    """Minibatch training; returns the parameters with the best validation loss.

    With no validation examples the training loss is tracked instead.
    """
    if len(train_data) == 0:
        raise ValueError("training set is empty")
    params = init_params(dims, seed=config.seed)
    opt = _Adam(params, config.learning_rate) if config.optimizer == "adam" else _Sgd(
        params, config.learning_rate
    )
    held_out = val_data if val_data is not None and len(val_data) > 0 else train_data
    best = params.copy()
    best_loss = _mean_loss(params, held_out)
    since_best = 0
    rng = np.random.default_rng(config.seed)
    n = len(train_data)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, grads = loss_and_grad(
                params,
                train_data.features[idx],
                train_data.targets[idx],
                train_data.active[idx],
            )
            opt.step(params, grads)
        val_loss = _mean_loss(params, held_out)
        if val_loss < best_loss:
            best_loss = val_loss
            best = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                log.info("early stop at epoch %d (best held-out loss %.6f)", epoch + 1, best_loss)
                break
    return best


def fusion_dims(
    task_kind: str, n_members: int, k: int, m: int | None = None,
    hidden: Sequence[int] = (100, 100),
) -> tuple[int, ...]:
    """Dim chain for an ensemble: input m*N or K*N, output m or K."""
    if task_kind == "mcq":
        if m is None or m < 2:
            raise ValueError("mcq dims need the choice count")
        return (m * n_members, *hidden, m)
    if task_kind == "oeq":
        return (k * n_members, *hidden, k)
    raise ValueError("the weighted combiner applies to mcq and oeq tasks only")


def build_training_data(
    records: Sequence[EpisodeRecord], members: list[str], k: int
) -> tuple[FusionData, list[str]]:
    """Feature/target arrays for the fusion net, plus skipped episode ids.

    Episodes are skipped when no member contributed anything usable or, for
    open-ended tasks, when the gold answer fell outside the shared solution
    set (such episodes cannot supply a target slot).
    """
    feats: list[np.ndarray] = []
    targets: list[int] = []
    active: list[int] = []
    ids: list[str] = []
    skipped: list[str] = []
    for rec in records:
        built = _episode_features(rec, members, k)
        if built is None:
            skipped.append(rec.id)
            continue
        values, n_active, extra = built
        if rec.task.is_mcq:
            target = rec.ground_truth
        else:
            target = extra.index_of(rec.ground_truth)
            if target is None:
                skipped.append(rec.id)
                continue
        feats.append(values)
        targets.append(target)
        active.append(n_active)
        ids.append(rec.id)
    if skipped:
        log.info("skipped %d of %d episodes while assembling fusion data",
                 len(skipped), len(records))
    dim = feats[0].shape[0] if feats else 0
    data = FusionData(
        features=np.array(feats, dtype=np.float64).reshape(len(feats), dim),
        targets=np.array(targets, dtype=np.intp),
        active=np.array(active, dtype=np.intp),
        episode_ids=ids,
    )
    return data, skipped


def _episode_features(record: EpisodeRecord, members: list[str], k: int):
    """(feature vector, active slots, solution set or None) for one episode."""
    if record.task.is_mcq:
        dists = assemble_mcq_distributions(record, members, k)
        if dists is None:
            return None
        fv = concat_features(dists, members)
        return fv.values, record.task.num_choices, None
    if record.task.kind != "oeq":
        raise ValueError("the weighted combiner applies to mcq and oeq tasks only")
    per_model = {m: parsed_answers(record, m) for m in members}
    final = build_final_solution_set(per_model, k)
    if len(final) == 0:
        return None
    blocks = []
    for m in members:
        probs = model_distribution(per_model[m], final, k, model_id=m).probs
        blocks.append(np.pad(np.asarray(probs, dtype=np.float64), (0, k - len(probs))))
    return np.concatenate(blocks), len(final), final


def predict(
    params: FusionParameters, record: EpisodeRecord, members: list[str], k: int
):
    """Ensemble answer for one episode: a choice index (MCQ) or an answer
    string (OEQ); None is the abstain marker for unusable episodes."""
    built = _episode_features(record, members, k)
    if built is None:
        return None
    values, n_active, final = built
    probs = forward(params, values, active=n_active)
    slot = int(np.argmax(probs[:n_active]))
    if record.task.is_mcq:
        return slot
    return final.answers[slot]


def save_params(params: FusionParameters, path: str) -> None:
    payload = {
        "format_version": PARAMS_FORMAT_VERSION,
        "dims": list(params.dims),
        "layers": [
            {"weights": w.tolist(), "bias": b.tolist()} for w, b in params.layers
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_params(path: str) -> FusionParameters:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != PARAMS_FORMAT_VERSION:
        raise ValueError(f"unsupported parameter file version {version!r}")
    layers = [
        (np.asarray(layer["weights"], dtype=np.float64),
         np.asarray(layer["bias"], dtype=np.float64))
        for layer in payload["layers"]
    ]
    return FusionParameters(layers=layers, dims=tuple(payload["dims"]))
