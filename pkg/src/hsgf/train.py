"""Adam minibatch training and test-set evaluation."""

import time
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricsReport, confusion_matrix, metrics_from_confusion
from .model import config_hash, model_logits
from .tensor import Tensor, backward, cross_entropy_logits, no_grad


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be at least 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epoch count must be non-negative, got {self.epochs}")


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_params(cls, tensors):
        return cls(m=[np.zeros_like(p.data) for p in tensors],
                   v=[np.zeros_like(p.data) for p in tensors], t=0)


def adam_step(tensors, state, config):
    """One bias-corrected Adam update over the parameter list, in place."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t
    for i, p in enumerate(tensors):
        if p.grad is None:
            raise RuntimeError("adam_step called with an unpopulated gradient")
        g = p.grad.astype(np.float64)
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        step = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        p.data = (p.data.astype(np.float64) - step).astype(p.data.dtype)


def train_loop(params, model_config, train_set, config, progress=None):
    """Seeded-shuffle minibatch epochs of forward / loss / backward / Adam.

    The last partial batch is trained, not dropped. Returns a history dict
    with per-epoch mean loss and training accuracy. `progress`, if given, is
    called as progress(epoch, mean_loss, accuracy) after each epoch.
    """
    count = len(train_set)
    if count == 0:
        raise ValueError("training set is empty")
    tensors = params.tensors()
    state = AdamState.for_params(tensors)
    history = {"loss": [], "accuracy": []}
    patches = train_set.patches.astype(tensors[0].data.dtype)
    labels = train_set.labels
    for epoch in range(config.epochs):
        # fresh generator per epoch keyed by (seed, epoch): restartable order
        order = (np.random.default_rng((config.seed, epoch)).permutation(count)
                 if config.shuffle else np.arange(count))
        epoch_loss = 0.0
        correct = 0
        for start in range(0, count, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = Tensor(patches[idx])
            params.zero_grads()
            logits = model_logits(batch, params, model_config)
            loss = cross_entropy_logits(logits, labels[idx])
            backward(loss)
            adam_step(tensors, state, config)
            epoch_loss += loss.item() * idx.shape[0]
            correct += int((np.argmax(logits.data, axis=1) + 1 == labels[idx]).sum())
        mean_loss = epoch_loss / count
        accuracy = 100.0 * correct / count
        history["loss"].append(mean_loss)
        history["accuracy"].append(accuracy)
        if progress is not None:
            progress(epoch, mean_loss, accuracy)
    return history


def predict(params, model_config, patches, batch_size=256):
    """Argmax class labels (1-based) for an array of patches; ties -> lowest index."""
    out = np.empty(patches.shape[0], dtype=np.int64)
    dtype = params.tensors()[0].data.dtype
    with no_grad():
        for start in range(0, patches.shape[0], batch_size):
            chunk = Tensor(patches[start:start + batch_size].astype(dtype))
            logits = model_logits(chunk, params, model_config)
            out[start:start + chunk.shape[0]] = np.argmax(logits.data, axis=1) + 1
    return out


def evaluate(params, model_config, test_set, split_info=None, seed=0):
    """Confusion matrix plus OA/AA/kappa report over a labeled patch set."""
    if len(test_set) == 0:
        raise ValueError("evaluation set is empty")
    predicted = predict(params, model_config, test_set.patches)
    m = confusion_matrix(test_set.labels, predicted, test_set.num_classes)
    numbers = metrics_from_confusion(m)
    report = MetricsReport(oa=numbers["oa"], aa=numbers["aa"],
                           kappa_x100=numbers["kappa_x100"],
                           per_class=numbers["per_class"],
                           split=split_info or {}, seed=seed,
                           config_hash=f"{config_hash(model_config):016x}")
    return m, report
