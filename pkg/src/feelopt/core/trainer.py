"""
Quantized federated SGD on l2-regularized logistic regression.

Covers synthetic data generation, the log2-logistic loss and its gradient,
sharding across devices, the round loop in which every device uploads a
quantized mini-batch gradient, and loss-trace bookkeeping.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Final, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from tqdm import tqdm

from .errors import InvalidInputError, TrainingDivergedError
from .quantizer import dequantize, quantize

logger = logging.getLogger(__name__)

LN2: Final[float] = math.log(2.0)
DIVERGENCE_FACTOR: Final[float] = 1e3
REFERENCE_FTOL: Final[float] = 1e-10


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (rows are samples) and labels in {-1, +1}."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise InvalidInputError("features must be 2-D and labels 1-D")

        if self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInputError("features and labels disagree on the number of samples")

        if not np.all(np.isfinite(self.features)):
            raise InvalidInputError("features contain non-finite values")

        if not np.all(np.isin(self.labels, (-1, 1))):
            raise InvalidInputError("labels must be -1 or +1")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: np.ndarray) -> 'Dataset':
        return Dataset(self.features[indices], self.labels[indices])


@dataclass(frozen=True)
class DecayingSchedule:
    """Learning rate eta_n = numerator / (n + offset)."""

    numerator: float = 5.0
    offset: float = 10.0

    def __call__(self, n: int) -> float:
        return self.numerator / (n + self.offset)


@dataclass
class TrainState:
    """Global model and the round it is about to run."""

    model: np.ndarray
    round: int = 0
    schedule: DecayingSchedule = field(default_factory=DecayingSchedule)

    def step(self, update: np.ndarray) -> None:
        self.model = self.model - self.schedule(self.round) * update
        self.round += 1


@dataclass
class LossTrace:
    """
    Global training loss per round.

    losses[n] is F(w^(n)), the loss of the model after n rounds; losses[0]
    is the initial model. accuracy, when present, is validation accuracy for
    the same models.
    """

    losses: List[float]
    q: Optional[int]
    seed: int
    accuracy: Optional[List[float]] = None

    @property
    def rounds(self) -> int:
        return len(self.losses) - 1

    def fit_window(self, n_tilde: Optional[int] = None) -> np.ndarray:
        """Loss samples for rounds 1..n_tilde, the input of the gap fit."""

        window = np.asarray(self.losses[1:], dtype=float)
        if n_tilde is not None:
            window = window[:n_tilde]

        return window


def generate_synthetic(d: int, n_samples: int, delta1: float, delta2: float,
                       rng: np.random.Generator) -> Tuple[Dataset, np.ndarray]:
    """
    Sparse-magnitude synthetic classification data.

    1. Dense features x_bar ~ N(0, 1).
    2. Per-dimension magnitude theta_j ~ U[0, 1], scaled by delta1 when
       theta_j <= delta2.
    3. x = x_bar * theta.
    4. Labels sgn(x_bar . w) for a true model w ~ N(0, I).

    Returns:
        The dataset and the true model used for labelling.
    """

    if d < 1 or n_samples < 1:
        raise InvalidInputError("dimension and sample count must be >= 1")

    if not (0.0 <= delta1 <= 1.0 and 0.0 <= delta2 <= 1.0):
        raise InvalidInputError("delta1 and delta2 must lie in [0, 1]")

    dense = rng.standard_normal((n_samples, d))
    magnitude = rng.uniform(0.0, 1.0, size=d)
    magnitude = np.where(magnitude <= delta2, delta1 * magnitude, magnitude)
    true_model = rng.standard_normal(d)

    labels = np.where(dense @ true_model >= 0.0, 1, -1).astype(np.int8)
    return Dataset(dense * magnitude, labels), true_model


def split_dataset(dataset: Dataset, n_first: int) -> Tuple[Dataset, Dataset]:
    """Split off the first n_first samples (train) from the rest (validation)."""

    if not 0 < n_first <= len(dataset):
        raise InvalidInputError(f"cannot split {len(dataset)} samples at {n_first}")

    head = np.arange(n_first)
    tail = np.arange(n_first, len(dataset))
    return dataset.subset(head), dataset.subset(tail)


def shard_dataset(dataset: Dataset, num_devices: int, rng: np.random.Generator) -> List[Dataset]:
    """Shuffle once, then cut into num_devices equal contiguous shards."""

    if num_devices < 1:
        raise InvalidInputError("need at least one device")

    shard_size = len(dataset) // num_devices
    if shard_size < 1:
        raise InvalidInputError("fewer samples than devices")

    order = rng.permutation(len(dataset))
    if shard_size * num_devices != len(dataset):
        logger.warning("dropping %d samples to keep shards uniform",
                       len(dataset) - shard_size * num_devices)

    return [dataset.subset(order[k * shard_size:(k + 1) * shard_size])
            for k in range(num_devices)]


def _margins(w: np.ndarray, data: Dataset) -> np.ndarray:
    return data.labels * (data.features @ w)


def local_loss(w: np.ndarray, shard: Dataset, lam: float) -> float:
    """Mean of log2(1 + exp(-y x.w)) over the shard plus lam * ||w||^2."""

    if w.shape[0] != shard.dimension:
        raise InvalidInputError("model and features disagree on the dimension")

    data_term = np.mean(np.logaddexp(0.0, -_margins(w, shard))) / LN2
    return float(data_term + lam * float(w @ w))


def local_gradient(w: np.ndarray, minibatch: Dataset, lam: float) -> np.ndarray:
    """
    Gradient of the mini-batch loss.

    Per sample: -(1 / ln 2) * sigmoid(-y x.w) * y * x; plus 2 * lam * w.
    """

    if w.shape[0] != minibatch.dimension:
        raise InvalidInputError("model and features disagree on the dimension")

    weights = -expit(-_margins(w, minibatch)) * minibatch.labels / LN2
    return minibatch.features.T @ weights / len(minibatch) + 2.0 * lam * w


def global_loss(w: np.ndarray, shards: Sequence[Dataset], lam: float) -> float:
    """F(w): the average of the local losses (shards have equal size)."""

    return float(np.mean([local_loss(w, shard, lam) for shard in shards]))


def accuracy(w: np.ndarray, data: Dataset) -> float:
    predictions = np.where(data.features @ w >= 0.0, 1, -1)
    return float(np.mean(predictions == data.labels))


def run_feel(shards: Sequence[Dataset], q: Optional[int], rounds: int,
             schedule: DecayingSchedule, batch_size: int, lam: float, seed: int,
             target_loss: Optional[float] = None,
             validation: Optional[Dataset] = None,
             show_progress: bool = False) -> LossTrace:
    """
    Simulate quantized federated SGD.

    In round n every device draws a mini-batch from its shard, computes its
    gradient and quantizes it with level q; the server averages the
    dequantized gradients and takes a step of size schedule(n).

    Args:
        shards: One dataset per device, all the same size.
        q: Quantization level, or None for unquantized uploads.
        rounds: Maximum number of rounds.
        schedule: Learning rate rule.
        batch_size: Mini-batch size per device per round.
        lam: l2 regularization weight.
        seed: Seed for the mini-batch and quantizer streams.
        target_loss: Stop as soon as F(w^(n)) <= target_loss.
        validation: Optional held-out set for per-round accuracy.
        show_progress: Draw a progress bar.

    Returns:
        LossTrace with F(w^(0)), ..., F(w^(N)).
    """

    if not shards:
        raise InvalidInputError("need at least one device shard")

    if q is not None and q < 1:
        raise InvalidInputError(f"quantization level must be >= 1, got {q}")

    if rounds < 1:
        raise InvalidInputError("need at least one round")

    if batch_size < 1:
        raise InvalidInputError("batch size must be >= 1")

    # per device: one stream for mini-batches, one for the quantizer, so runs
    # at different levels with the same seed draw the same batches
    streams = [tuple(np.random.default_rng(grandchild) for grandchild in child.spawn(2))
               for child in np.random.SeedSequence(seed).spawn(len(shards))]

    state = TrainState(np.zeros(shards[0].dimension), schedule=schedule)
    losses = [global_loss(state.model, shards, lam)]
    scores = [accuracy(state.model, validation)] if validation is not None else None
    limit = DIVERGENCE_FACTOR * losses[0]

    progress = tqdm(total=rounds, desc=f"q={q}", leave=False, disable=not show_progress)
    try:
        for _ in range(rounds):
            if target_loss is not None and losses[-1] <= target_loss:
                break

            update = np.zeros_like(state.model)
            for shard, (batch_stream, quantizer_stream) in zip(shards, streams):
                size = min(batch_size, len(shard))
                batch = shard.subset(batch_stream.choice(len(shard), size=size, replace=False))
                gradient = local_gradient(state.model, batch, lam)
                if q is not None:
                    gradient = dequantize(quantize(gradient, q, quantizer_stream))
                update += gradient

            state.step(update / len(shards))
            loss = global_loss(state.model, shards, lam)

            if not math.isfinite(loss) or loss > limit:
                raise TrainingDivergedError(
                    f"loss {loss:.4g} exceeded {DIVERGENCE_FACTOR:g}x the initial loss "
                    f"at round {state.round}", state.round)

            losses.append(loss)
            if scores is not None:
                scores.append(accuracy(state.model, validation))

            logger.debug("q=%s round %d loss %.6f", q, state.round, loss)
            progress.update(1)
    finally:
        progress.close()

    return LossTrace(losses, q, seed, scores)


def rounds_to_gap(trace: LossTrace, f_star: float, epsilon: float) -> Optional[int]:
    """First round n with F(w^(n)) - f_star <= epsilon, or None if never reached."""

    if epsilon < 0:
        raise InvalidInputError("epsilon must be non-negative")

    for n, loss in enumerate(trace.losses):
        if loss - f_star <= epsilon:
            return n

    return None


def mean_trace(traces: Sequence[LossTrace]) -> LossTrace:
    """Average several traces of the same level, truncated to the shortest."""

    if not traces:
        raise InvalidInputError("need at least one trace to average")

    length = min(len(trace.losses) for trace in traces)
    stacked = np.array([trace.losses[:length] for trace in traces])
    return LossTrace(stacked.mean(axis=0).tolist(), traces[0].q, traces[0].seed)


def reference_optimum(dataset: Dataset, lam: float) -> Tuple[float, np.ndarray]:
    """
    F(w*) on the full training set, by full-batch L-BFGS.

    Stops when the relative loss change drops below 1e-10.
    """

    def objective(w: np.ndarray) -> Tuple[float, np.ndarray]:
        return local_loss(w, dataset, lam), local_gradient(w, dataset, lam)

    result = minimize(objective, np.zeros(dataset.dimension), jac=True, method="L-BFGS-B",
                      options={"ftol": REFERENCE_FTOL, "gtol": 1e-12, "maxiter": 10000})
    if not result.success:
        logger.warning("reference optimum stopped early: %s", result.message)

    return float(result.fun), result.x
