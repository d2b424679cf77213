"""Convolutional character recognizers and the ensemble built from them.

Members are small 3x3-kernel convnets of differing depth: stages of
convolutions (optionally with residual or dense connections) each followed
by a 2x2 max pool, then global average pooling and a linear head.  Training
is mini-batch Adam on mean cross-entropy; the whole pretrain -> fine-tune ->
ensemble-average workflow lives here, as does the semi-automatic labelling
bootstrap (train on a tiny labelled set, emit a confidence-sorted review
manifest for a large unlabelled set).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import (
    AlphabetMismatchError,
    DivergenceError,
    FormatError,
    ShapeMismatchError,
)
from .imagecore import GrayImage
from .rng import Rng
from .synthgen import Dataset

INPUT_SIZE = 64


@dataclass(frozen=True)
class ConvNetSpec:
    """Stages of (channels, conv_count); every kernel is 3x3, each stage ends
    in a 2x2 max pool, and the head is global-average-pool -> linear."""

    blocks: tuple[tuple[int, int], ...]
    num_classes: int
    input_size: int = INPUT_SIZE
    residual: bool = False
    dense: bool = False
    head_init_scale: float = 0.01

    def __post_init__(self):
        size = self.input_size
        for _ in self.blocks:
            if size % 2 != 0:
                raise ShapeMismatchError(f"cannot pool odd size {size}")
            size //= 2
        if size < 1:
            raise ShapeMismatchError("too many pooling stages for input size")

    def conv_layers(self):
        """Yield (name, in_channels, out_channels) for every convolution."""
        c_in = 1
        for bi, (ch, cnt) in enumerate(self.blocks):
            block_in = c_in
            for ci in range(cnt):
                if self.dense:
                    yield f"b{bi}c{ci}", block_in + ci * ch, ch
                else:
                    yield f"b{bi}c{ci}", c_in if ci == 0 else ch, ch
            c_in = block_in + cnt * ch if self.dense else ch
        self_out = c_in
        yield "head", self_out, self.num_classes

    def to_dict(self) -> dict:
        return {
            "blocks": [list(b) for b in self.blocks],
            "num_classes": self.num_classes,
            "input_size": self.input_size,
            "residual": self.residual,
            "dense": self.dense,
            "head_init_scale": self.head_init_scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "ConvNetSpec":
        return ConvNetSpec(
            blocks=tuple(tuple(b) for b in d["blocks"]),
            num_classes=int(d["num_classes"]),
            input_size=int(d.get("input_size", INPUT_SIZE)),
            residual=bool(d.get("residual", False)),
            dense=bool(d.get("dense", False)),
            head_init_scale=float(d.get("head_init_scale", 0.01)),
        )


@dataclass
class ModelParams:
    spec: ConvNetSpec
    alphabet: tuple[str, ...]
    tensors: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, self.alphabet, {k: v.copy() for k, v in self.tensors.items()})


@dataclass(frozen=True)
class Posterior:
    """Per-label probability vector; entries >= 0 and summing to one."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.min() < 0 or abs(p.sum() - 1.0) > 1e-5:
            raise ShapeMismatchError("posterior must be a normalized 1-d vector")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True)
class Ensemble:
    members: tuple[ModelParams, ...]

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        alphabet = self.members[0].alphabet
        for m in self.members[1:]:
            if m.alphabet != alphabet:
                raise AlphabetMismatchError("ensemble members disagree on alphabet")

    @property
    def alphabet(self) -> tuple[str, ...]:
        return self.members[0].alphabet


def default_ensemble_specs(num_classes: int) -> tuple[ConvNetSpec, ...]:
    """Five convnets of depth 4/6/8/10/12 standing in for the published
    five-architecture ensemble: two plain stacks, two residual, one dense
    (deep plain stacks of this size do not train reliably)."""
    shapes = [
        (((8, 1), (16, 1), (32, 1), (32, 1)), False, False),
        (((8, 2), (16, 2), (32, 1), (32, 1)), False, False),
        (((8, 2), (16, 2), (32, 2), (32, 2)), True, False),
        (((8, 2), (16, 2), (32, 3), (32, 3)), True, False),
        (((6, 3), (12, 3), (16, 3), (16, 3)), False, True),
    ]
    return tuple(ConvNetSpec(blocks=s, num_classes=num_classes, residual=r, dense=d)
                 for s, r, d in shapes)


def init_params(spec: ConvNetSpec, alphabet: tuple[str, ...], seed: int,
                dtype=np.float32) -> ModelParams:
    """He-normal convolution weights, zero biases, small-scale linear head."""
    if len(alphabet) != spec.num_classes:
        raise AlphabetMismatchError("alphabet size must equal num_classes")
    rng = Rng(seed).fork("convnet-init")
    tensors: dict[str, np.ndarray] = {}
    for name, c_in, c_out in spec.conv_layers():
        if name == "head":
            w = rng.normal(size=c_in * c_out, std=spec.head_init_scale)
            tensors["head_w"] = w.reshape(c_in, c_out).astype(dtype)
            tensors["head_b"] = np.zeros(c_out, dtype=dtype)
        else:
            std = math.sqrt(2.0 / (c_in * 9))
            w = rng.normal(size=c_out * c_in * 9, std=std)
            tensors[f"{name}_w"] = w.reshape(3, 3, c_in, c_out).astype(dtype)
            tensors[f"{name}_b"] = np.zeros(c_out, dtype=dtype)
    return ModelParams(spec, tuple(alphabet), tensors)


# -- forward / backward -----------------------------------------------------------


def _forward_batch(model: ModelParams, x: np.ndarray, want_cache: bool):
    spec = model.spec
    t = model.tensors
    caches = []
    for bi, (ch, cnt) in enumerate(spec.blocks):
        block_inputs = [x]
        for ci in range(cnt):
            name = f"b{bi}c{ci}"
            conv_in = np.concatenate(block_inputs, axis=-1) if spec.dense else x
            z, conv_cache = nn.conv3x3_forward(conv_in, t[f"{name}_w"], t[f"{name}_b"])
            y, relu_mask = nn.relu_forward(z)
            skip = spec.residual and not spec.dense and conv_in.shape[-1] == ch
            out = y + conv_in if skip else y
            if want_cache:
                caches.append(("conv", name, conv_cache, relu_mask, skip))
            if spec.dense:
                block_inputs.append(out)
            x = out
        if spec.dense:
            x = np.concatenate(block_inputs, axis=-1)
            if want_cache:
                caches.append(("dense_concat", bi, [b.shape[-1] for b in block_inputs]))
        x, pool_cache = nn.maxpool2_forward(x)
        if want_cache:
            caches.append(("pool", bi, pool_cache))
    feat, gap_shape = nn.global_avg_pool_forward(x)
    logits, dense_x = nn.dense_forward(feat, t["head_w"], t["head_b"])
    probs = nn.softmax(logits)
    if want_cache:
        caches.append(("head", gap_shape, dense_x))
    return probs, caches


def _backward_batch(model: ModelParams, caches, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    spec = model.spec
    t = model.tensors
    grads: dict[str, np.ndarray] = {}
    kind, gap_shape, dense_x = caches[-1]
    assert kind == "head"
    dfeat, grads["head_w"], grads["head_b"] = nn.dense_backward(dlogits, t["head_w"], dense_x)
    dx = nn.global_avg_pool_backward(dfeat, gap_shape)
    dense_tail: list[np.ndarray] | None = None
    for item in reversed(caches[:-1]):
        if item[0] == "pool":
            dx = nn.maxpool2_backward(dx, item[2])
        elif item[0] == "dense_concat":
            widths = item[2]
            splits = np.cumsum(widths)[:-1]
            dense_tail = list(np.split(dx, splits, axis=-1))
            dx = dense_tail.pop()  # gradient flowing into the last conv output
        else:
            _, name, conv_cache, relu_mask, skip = item
            first_conv = name == "b0c0"
            if spec.dense:
                dout = dx
                dz = nn.relu_backward(dout, relu_mask)
                dconv_in, dw, db = nn.conv3x3_backward(dz, t[f"{name}_w"], conv_cache)
                grads[f"{name}_w"] = dw
                grads[f"{name}_b"] = db
                # conv input was concat(block inputs so far); fold its gradient
                # into the pending per-input gradients.
                assert dense_tail is not None
                parts = []
                start = 0
                for g in dense_tail:
                    parts.append(dconv_in[..., start : start + g.shape[-1]])
                    start += g.shape[-1]
                dense_tail = [g + p for g, p in zip(dense_tail, parts)]
                dx = dense_tail.pop()
            else:
                dout = dx
                dz = nn.relu_backward(dout, relu_mask)
                # the input gradient of the first convolution is never used
                dxi, dw, db = nn.conv3x3_backward(dz, t[f"{name}_w"], conv_cache,
                                                  need_dx=not first_conv or skip)
                grads[f"{name}_w"] = dw
                grads[f"{name}_b"] = db
                dx = dxi + dout if skip else dxi
    return grads


def _to_float(images: np.ndarray, dtype) -> np.ndarray:
    # Scale to [0,1] with ink mapped to 1: strokes, not paper, carry the
    # activation, which converges far faster than feeding mostly-1.0 paper.
    x = np.asarray(images, dtype=dtype) / 255.0
    if x.ndim == 2:
        x = x[None]
    return (1.0 - x)[:, :, :, None]


def forward(model: ModelParams, image: GrayImage | np.ndarray) -> Posterior:
    """Softmax posterior for one 64x64 image (intensities scaled to [0,1])."""
    px = image.pixels if isinstance(image, GrayImage) else np.asarray(image)
    if px.shape != (model.spec.input_size, model.spec.input_size):
        raise ShapeMismatchError(f"expected {model.spec.input_size}^2 image, got {px.shape}")
    x = _to_float(px, model.tensors["head_w"].dtype)
    probs, _ = _forward_batch(model, x, want_cache=False)
    return Posterior(probs[0])


def predict_batch(model: ModelParams, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Probabilities for a (n, s, s) uint8 stack, processed in batches."""
    dtype = model.tensors["head_w"].dtype
    outs = []
    for i in range(0, len(images), batch_size):
        x = _to_float(images[i : i + batch_size], dtype)
        probs, _ = _forward_batch(model, x, want_cache=False)
        outs.append(probs)
    return np.concatenate(outs, axis=0)


def backward(model: ModelParams, images: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy loss over the batch and gradients for every tensor."""
    x = _to_float(images, model.tensors["head_w"].dtype)
    probs, caches = _forward_batch(model, x, want_cache=True)
    loss, dlogits = nn.cross_entropy(probs, np.asarray(labels))
    grads = _backward_batch(model, caches, dlogits)
    return loss, grads


# -- training -----------------------------------------------------------------------


def _accuracy(model: ModelParams, ds: Dataset) -> float:
    probs = predict_batch(model, ds.images)
    return float((probs.argmax(axis=1) == ds.labels).mean())


def _run_epochs(model: ModelParams, ds: Dataset, optim: nn.AdamConfig, epochs: int,
                seed: int, batch_size: int, val: Dataset | None, state: nn.AdamState,
                history: list) -> ModelParams:
    rng = Rng(seed).fork("train-order")
    n = len(ds)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grads = backward(model, ds.images[idx], ds.labels[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at epoch {epoch}")
            nn.adam_step(model.tensors, grads, state, optim)
            losses.append(loss)
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val is not None:
            record["val_accuracy"] = _accuracy(model, val)
        history.append(record)
    return model


def train(spec: ConvNetSpec, dataset: Dataset, optim: nn.AdamConfig | None = None,
          epochs: int = 4, seed: int = 0, batch_size: int = 32,
          val: Dataset | None = None) -> tuple[ModelParams, list]:
    """Train from scratch; deterministic for fixed (spec, dataset, seed)."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    optim = optim or nn.AdamConfig()
    model = init_params(spec, dataset.alphabet, seed)
    history: list = []
    _run_epochs(model, dataset, optim, epochs, seed, batch_size, val, nn.AdamState(), history)
    return model, history


def fine_tune(pretrained: ModelParams, exam_dataset: Dataset,
              optim: nn.AdamConfig | None = None, epochs: int = 5, seed: int = 1,
              batch_size: int = 32, val: Dataset | None = None) -> tuple[ModelParams, list]:
    """Continue training all layers from pretrained weights on the exam domain."""
    if exam_dataset.alphabet != pretrained.alphabet:
        raise AlphabetMismatchError("fine-tune dataset alphabet differs from model")
    optim = optim or nn.AdamConfig()
    model = pretrained.copy()
    history: list = []
    _run_epochs(model, exam_dataset, optim, epochs, seed, batch_size, val, nn.AdamState(), history)
    return model, history


# -- ensembling ----------------------------------------------------------------------


def ensemble_predict(ens: Ensemble, image: GrayImage | np.ndarray) -> Posterior:
    """Arithmetic mean of member posterior probability vectors."""
    probs = [forward(m, image).probs for m in ens.members]
    return Posterior(np.mean(probs, axis=0))


def ensemble_predict_batch(ens: Ensemble, images: np.ndarray) -> np.ndarray:
    return np.mean([predict_batch(m, images) for m in ens.members], axis=0)


def top_k(post: Posterior, k: int) -> list[tuple[int, float]]:
    """The k most probable label ids with natural-log probabilities,
    descending; ties break toward the smaller label id."""
    if not 1 <= k <= len(post.probs):
        raise ValueError(f"k={k} out of range")
    order = np.lexsort((np.arange(len(post.probs)), -post.probs))
    tiny = np.finfo(np.float64).tiny
    return [(int(i), float(np.log(max(post.probs[i], tiny)))) for i in order[:k]]


# -- label bootstrap -------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapResult:
    labels: np.ndarray        # predicted label ids for the unlabeled set
    confidence: np.ndarray    # max posterior probability per sample
    manifest: tuple[dict, ...]  # ascending confidence, for human review


def bootstrap_labels(small_labeled: Dataset, unlabeled_images: np.ndarray,
                     spec: ConvNetSpec, optim: nn.AdamConfig | None = None,
                     epochs: int = 15, seed: int = 0,
                     batch_size: int = 8) -> tuple[ModelParams, BootstrapResult]:
    """Train a small model on the labelled seed set and predict the rest.

    The review manifest lists every unlabeled sample sorted by ascending
    confidence so human verification starts with the least certain ones.
    """
    if len(small_labeled) == 0:
        raise ValueError("labelled seed set is empty")
    model, _ = train(spec, small_labeled, optim, epochs=epochs, seed=seed,
                     batch_size=batch_size)
    probs = predict_batch(model, unlabeled_images)
    labels = probs.argmax(axis=1)
    confidence = probs.max(axis=1)
    order = np.lexsort((np.arange(len(labels)), confidence))
    manifest = tuple(
        {
            "index": int(i),
            "label": small_labeled.alphabet[int(labels[i])],
            "confidence": float(confidence[i]),
        }
        for i in order
    )
    return model, BootstrapResult(labels, confidence, manifest)


# -- persistence ------------------------------------------------------------------------


def save_model(model: ModelParams, path) -> None:
    meta = {
        "kind": "recognizer",
        "spec": model.spec.to_dict(),
        "alphabet": list(model.alphabet),
        "dtype": "<f4",
    }
    nn.save_checkpoint(path, meta, model.tensors)


def load_model(path) -> ModelParams:
    meta, tensors = nn.load_checkpoint(path)
    if meta.get("kind") != "recognizer":
        raise FormatError(f"not a recognizer checkpoint: {path}")
    return ModelParams(ConvNetSpec.from_dict(meta["spec"]), tuple(meta["alphabet"]), tensors)
