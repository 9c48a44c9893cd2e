"""Charge-state probability vectors: exact oracle and trainable model.

A window of the voltage plane is summarized by the fractions of its
pixels in each coarse state class::

    p = [p_none, p_sd, p_dd]
      = [(N - |SD| - |DD|) / N, |SD| / N, |DD| / N]

where |SD| counts all three single-dot variants (left, central, right)
and |DD| counts double-dot pixels. The oracle computes this directly
from ground-truth labels; the model estimates it from the processed
30x30 gradient image with a small fully connected network (900-128-64-3,
ReLU, softmax) trained against the oracle's soft targets.
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass, field

import numpy as np

from . import device as device_model
from .device import DeviceParams, VariationConfig
from .errors import (
    ConfigurationError,
    ScanFormatError,
    ScanVersionError,
    ShapeError,
    TrainingDivergedError,
)
from .grids import LabelGrid, ScanGrid, SINGLE_DOT_CODES, StateLabel
from .preprocess import IMAGE_SIZE, ProcessedImage, process

MODEL_SCHEMA_VERSION = "1"
DATASET_SCHEMA_VERSION = "1"

LAYER_SIZES = (IMAGE_SIZE * IMAGE_SIZE, 128, 64, 3)

CLASS_NAMES = ("none", "sd", "dd")


@dataclass(frozen=True)
class ProbabilityVector:
    """Point on the 3-class probability simplex."""

    p_none: float
    p_sd: float
    p_dd: float

    def __post_init__(self):
        values = (self.p_none, self.p_sd, self.p_dd)
        if any(v < 0.0 for v in values):
            raise ConfigurationError(f"probabilities must be non-negative, got {values}")
        total = sum(values)
        if abs(total - 1.0) > 1e-12:
            raise ConfigurationError(f"probabilities must sum to 1, got {total!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_none, self.p_sd, self.p_dd])

    @classmethod
    def from_array(cls, arr) -> "ProbabilityVector":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (3,):
            raise ShapeError(f"probability vector must have 3 entries, got shape {arr.shape}")
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    def argmax_class(self) -> int:
        """0 = none, 1 = single dot, 2 = double dot."""
        return int(np.argmax(self.as_array()))


def oracle_probability(labels: LabelGrid) -> ProbabilityVector:
    """Exact probability vector from a ground-truth label raster."""
    codes = labels.labels
    n = codes.size
    if n == 0:
        raise ShapeError("label raster is empty")
    n_sd = int(np.isin(codes, SINGLE_DOT_CODES).sum())
    n_dd = int((codes == int(StateLabel.DOUBLE_DOT)).sum())
    return ProbabilityVector((n - n_sd - n_dd) / n, n_sd / n, n_dd / n)


# --- dataset ---------------------------------------------------------------


@dataclass(eq=False)
class LabeledSample:
    """One processed window plus its oracle target and provenance."""

    image: ProcessedImage
    target: ProbabilityVector
    center: tuple[float, float]
    span: tuple[float, float]
    device_seed: int


def generate_dataset(
    n_devices: int,
    samples_per_device: int,
    seed: int = 0,
    span: tuple[float, float] = (60.0, 60.0),
    resolution: float = 2.0,
    variation: VariationConfig | None = None,
    with_noise: bool = False,
    max_redraws: int = 200,
) -> list[LabeledSample]:
    """Sample random devices and random in-domain windows from each.

    Window centers are drawn uniformly over the device domain; windows
    that stick out are redrawn (up to ``max_redraws`` times each). Every
    sample pairs the processed image with the oracle probability vector
    of the same window.
    """
    if n_devices <= 0 or samples_per_device <= 0:
        raise ConfigurationError("n_devices and samples_per_device must be positive")
    variation = variation or VariationConfig()
    lo, hi = device_model.DOMAIN_MV
    children = np.random.SeedSequence(seed).spawn(n_devices)

    samples: list[LabeledSample] = []
    for child in children:
        rng = np.random.default_rng(child)
        params = device_model.sample_device(int(rng.integers(2**31 - 1)), variation)
        for _ in range(samples_per_device):
            for attempt in range(max_redraws + 1):
                c1 = float(rng.uniform(lo, hi))
                c2 = float(rng.uniform(lo, hi))
                if (
                    c1 - span[0] / 2.0 >= lo
                    and c1 + span[0] / 2.0 <= hi
                    and c2 - span[1] / 2.0 >= lo
                    and c2 + span[1] / 2.0 <= hi
                ):
                    break
            else:
                raise ConfigurationError(
                    f"could not draw an in-domain window after {max_redraws} redraws"
                )
            noise_seed = int(rng.integers(2**31 - 1))
            scan, labels = device_model.render_scan(
                params, (c1, c2), span, resolution, with_noise=with_noise, noise_seed=noise_seed
            )
            samples.append(
                LabeledSample(
                    image=process(scan),
                    target=oracle_probability(labels),
                    center=(c1, c2),
                    span=(float(span[0]), float(span[1])),
                    device_seed=params.seed,
                )
            )
    return samples


def dataset_arrays(samples: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into (N, 900) inputs and (N, 3) soft targets."""
    if not samples:
        raise ConfigurationError("dataset is empty")
    x = np.stack([s.image.values.ravel() for s in samples])
    t = np.stack([s.target.as_array() for s in samples])
    return x, t


# --- model -----------------------------------------------------------------


@dataclass(eq=False)
class ClassifierModel:
    """Fully connected ReLU network with a softmax output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    layer_sizes: tuple[int, ...] = LAYER_SIZES
    activation: str = "relu"
    output: str = "softmax"

    def __post_init__(self):
        expected = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        if len(self.weights) != len(expected) or len(self.biases) != len(expected):
            raise ShapeError("weight/bias count does not match layer_sizes")
        for (n_in, n_out), w, b in zip(expected, self.weights, self.biases):
            if w.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ShapeError(
                    f"layer expects W{(n_in, n_out)} b{(n_out,)}, got W{w.shape} b{b.shape}"
                )
        if self.activation != "relu" or self.output != "softmax":
            raise ConfigurationError("only relu activations with a softmax output are supported")


@dataclass(frozen=True)
class TrainingConfig:
    """Mini-batch Adam settings. Defaults match the experiment setup."""

    learning_rate: float = 0.001
    steps: int = 5000
    batch_size: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.steps <= 0 or self.batch_size <= 0:
            raise ConfigurationError("learning_rate, steps, and batch_size must be positive")


def init_model(seed: int, layer_sizes: tuple[int, ...] = LAYER_SIZES) -> ClassifierModel:
    """Symmetric uniform init scaled by fan-in, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return ClassifierModel(weights=weights, biases=biases, layer_sizes=tuple(layer_sizes))


def _forward(model: ClassifierModel, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Log-softmax outputs plus the post-ReLU activations for backprop."""
    hidden = [x]
    a = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        a = np.maximum(a @ w + b, 0.0)
        hidden.append(a)
    z = a @ model.weights[-1] + model.biases[-1]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return logp, hidden


def loss_and_gradients(
    model: ClassifierModel, x: np.ndarray, targets: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean cross-entropy against soft targets, with exact analytic gradients."""
    n = x.shape[0]
    logp, hidden = _forward(model, x)
    loss = float(-(targets * logp).sum() / n)

    grad_w = [np.empty_like(w) for w in model.weights]
    grad_b = [np.empty_like(b) for b in model.biases]
    delta = (np.exp(logp) - targets) / n
    for layer in range(len(model.weights) - 1, -1, -1):
        grad_w[layer] = hidden[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ model.weights[layer].T
            delta[hidden[layer] <= 0.0] = 0.0
    return loss, grad_w, grad_b


def train(
    samples: list[LabeledSample] | tuple[np.ndarray, np.ndarray],
    config: TrainingConfig | None = None,
) -> tuple[ClassifierModel, np.ndarray]:
    """Train the network; returns the final model and the per-step loss trace."""
    config = config or TrainingConfig()
    x, t = samples if isinstance(samples, tuple) else dataset_arrays(samples)
    if x.ndim != 2 or x.shape[1] != LAYER_SIZES[0] or t.shape != (x.shape[0], 3):
        raise ShapeError(f"expected inputs ({x.shape[0]}, {LAYER_SIZES[0]}) and targets (N, 3)")

    rng = np.random.default_rng(config.seed)
    model = init_model(int(rng.integers(2**31 - 1)))
    params = model.weights + model.biases
    first = [np.zeros_like(p) for p in params]
    second = [np.zeros_like(p) for p in params]

    losses = np.empty(config.steps)
    for step in range(config.steps):
        idx = rng.integers(0, x.shape[0], size=config.batch_size)
        loss, grad_w, grad_b = loss_and_gradients(model, x[idx], t[idx])
        if not np.isfinite(loss):
            raise TrainingDivergedError(step)
        losses[step] = loss

        correction1 = 1.0 - config.beta1 ** (step + 1)
        correction2 = 1.0 - config.beta2 ** (step + 1)
        for p, m, v, g in zip(params, first, second, grad_w + grad_b):
            m *= config.beta1
            m += (1.0 - config.beta1) * g
            v *= config.beta2
            v += (1.0 - config.beta2) * g * g
            p -= config.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + config.epsilon)
    return model, losses


def classify(model: ClassifierModel, image: ProcessedImage) -> ProbabilityVector:
    """Model probability vector for one processed image."""
    logp, _ = _forward(model, image.values.reshape(1, -1))
    p = np.exp(logp[0])
    return ProbabilityVector.from_array(p / p.sum())


@dataclass(eq=False)
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # [true class, predicted class]
    n_samples: int


def evaluate(model, samples: list[LabeledSample]) -> EvalReport:
    """Argmax-class accuracy and 3x3 confusion matrix over a sample list.

    ``model`` may be a ClassifierModel or any callable mapping a
    ProcessedImage to a ProbabilityVector.
    """
    if not samples:
        raise ConfigurationError("evaluation set is empty")
    predict = model if callable(model) else (lambda image: classify(model, image))
    confusion = np.zeros((3, 3), dtype=int)
    for sample in samples:
        true = sample.target.argmax_class()
        pred = predict(sample.image).argmax_class()
        confusion[true, pred] += 1
    accuracy = float(np.trace(confusion) / len(samples))
    return EvalReport(accuracy=accuracy, confusion=confusion, n_samples=len(samples))


# --- classifier front ends for the tuner -----------------------------------


class OracleClassifier:
    """Reads the probability vector straight off the ground-truth labels."""

    def probabilities(self, scan: ScanGrid, labels: LabelGrid | None) -> ProbabilityVector:
        if labels is None:
            raise ConfigurationError("oracle classifier needs a source with ground-truth labels")
        return oracle_probability(labels)


class ModelClassifier:
    """Runs the preprocessing pipeline and the trained network."""

    def __init__(self, model: ClassifierModel):
        self.model = model

    def probabilities(self, scan: ScanGrid, labels: LabelGrid | None = None) -> ProbabilityVector:
        return classify(self.model, process(scan))


# --- file formats -----------------------------------------------------------


def _encode(arr: np.ndarray, dtype: str) -> str:
    return base64.b64encode(np.ascontiguousarray(arr).astype(dtype).tobytes()).decode("ascii")


def _decode(name: str, text, dtype: str, expected: int) -> np.ndarray:
    if not isinstance(text, str):
        raise ScanFormatError(f"field {name!r} must be a base64 string")
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as exc:
        raise ScanFormatError(f"field {name!r} is not valid base64") from exc
    itemsize = np.dtype(dtype).itemsize
    if len(raw) != expected * itemsize:
        raise ScanFormatError(f"field {name!r} holds {len(raw)} bytes, expected {expected * itemsize}")
    return np.frombuffer(raw, dtype=dtype)


def save_model(model: ClassifierModel, path) -> None:
    doc = {
        "format": "qdtune-model",
        "version": MODEL_SCHEMA_VERSION,
        "layer_sizes": list(model.layer_sizes),
        "activation": model.activation,
        "output": model.output,
        "weights": [_encode(w, "<f8") for w in model.weights],
        "biases": [_encode(b, "<f8") for b in model.biases],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> ClassifierModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScanFormatError(f"cannot read model file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScanFormatError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "qdtune-model":
        raise ScanFormatError("file is not a qdtune-model document")
    if doc.get("version") != MODEL_SCHEMA_VERSION:
        raise ScanVersionError(f"model version {doc.get('version')!r} not supported")
    sizes = doc.get("layer_sizes")
    if not isinstance(sizes, list) or len(sizes) < 2:
        raise ScanFormatError("field 'layer_sizes' must list at least two layers")
    sizes = tuple(int(n) for n in sizes)
    pairs = list(zip(sizes[:-1], sizes[1:]))
    raw_w, raw_b = doc.get("weights"), doc.get("biases")
    if not isinstance(raw_w, list) or not isinstance(raw_b, list) or len(raw_w) != len(pairs) or len(raw_b) != len(pairs):
        raise ScanFormatError("fields 'weights'/'biases' must hold one blob per layer")
    weights = [
        _decode(f"weights[{i}]", blob, "<f8", n_in * n_out).reshape(n_in, n_out)
        for i, (blob, (n_in, n_out)) in enumerate(zip(raw_w, pairs))
    ]
    biases = [
        _decode(f"biases[{i}]", blob, "<f8", n_out)
        for i, (blob, (_, n_out)) in enumerate(zip(raw_b, pairs))
    ]
    return ClassifierModel(
        weights=weights,
        biases=biases,
        layer_sizes=sizes,
        activation=doc.get("activation", "relu"),
        output=doc.get("output", "softmax"),
    )


def save_dataset(samples: list[LabeledSample], path) -> None:
    x, t = dataset_arrays(samples)
    centers = np.array([s.center for s in samples])
    spans = np.array([s.span for s in samples])
    seeds = np.array([s.device_seed for s in samples], dtype=np.int64)
    doc = {
        "format": "qdtune-dataset",
        "version": DATASET_SCHEMA_VERSION,
        "count": len(samples),
        "image_shape": [IMAGE_SIZE, IMAGE_SIZE],
        "images": _encode(x, "<f8"),
        "targets": _encode(t, "<f8"),
        "centers": _encode(centers, "<f8"),
        "spans": _encode(spans, "<f8"),
        "device_seeds": _encode(seeds, "<i8"),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> list[LabeledSample]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ScanFormatError(f"cannot read dataset file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScanFormatError(f"dataset file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "qdtune-dataset":
        raise ScanFormatError("file is not a qdtune-dataset document")
    if doc.get("version") != DATASET_SCHEMA_VERSION:
        raise ScanVersionError(f"dataset version {doc.get('version')!r} not supported")
    count = doc.get("count")
    if not isinstance(count, int) or count <= 0:
        raise ScanFormatError("field 'count' must be a positive integer")
    pixels = IMAGE_SIZE * IMAGE_SIZE
    x = _decode("images", doc.get("images"), "<f8", count * pixels).reshape(count, pixels)
    t = _decode("targets", doc.get("targets"), "<f8", count * 3).reshape(count, 3)
    centers = _decode("centers", doc.get("centers"), "<f8", count * 2).reshape(count, 2)
    spans = _decode("spans", doc.get("spans"), "<f8", count * 2).reshape(count, 2)
    seeds = _decode("device_seeds", doc.get("device_seeds"), "<i8", count)
    return [
        LabeledSample(
            image=ProcessedImage(x[i].reshape(IMAGE_SIZE, IMAGE_SIZE)),
            target=ProbabilityVector.from_array(t[i]),
            center=(float(centers[i, 0]), float(centers[i, 1])),
            span=(float(spans[i, 0]), float(spans[i, 1])),
            device_seed=int(seeds[i]),
        )
        for i in range(count)
    ]
