"""Automatic score classification of answer text.

Character tokens (CLS prepended) feed a small transformer encoder: learned
token + position embeddings, post-norm self-attention blocks with padding
masks, then the CLS hidden states of the final P layers are concatenated
and projected through a linear + softmax head onto score ranks.  Training
is Adam on cross-entropy with the checkpoint chosen by best validation
quadratic weighted kappa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DivergenceError, FormatError, ShapeMismatchError, TooFewItemsError
from .metrics import RatingPair, qwk
from .rng import Rng
from .synthgen import DEFAULT_ALPHABET

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
_SPECIALS = ("[PAD]", "[UNK]", "[CLS]")

DEFAULT_TEXT_VOCAB = tuple(DEFAULT_ALPHABET) + (" ",)


@dataclass(frozen=True)
class ScorerConfig:
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    pooled_layers: int = 0  # 0 = min(4, n_layers)
    max_len: int = 64
    n_ranks: int = 4
    ffn_mult: int = 4
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 5
    seed: int = 0
    vocab: tuple[str, ...] = DEFAULT_TEXT_VOCAB

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ShapeMismatchError("d_model must be divisible by n_heads")
        if self.pooled > self.n_layers:
            raise ShapeMismatchError("cannot pool more layers than exist")

    @property
    def pooled(self) -> int:
        return self.pooled_layers or min(4, self.n_layers)

    @property
    def vocab_size(self) -> int:
        return len(_SPECIALS) + len(self.vocab)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "d_model", "n_layers", "n_heads", "pooled_layers", "max_len",
            "n_ranks", "ffn_mult", "lr", "batch_size", "epochs", "seed")}
        d["vocab"] = list(self.vocab)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ScorerConfig":
        d = dict(d)
        d["vocab"] = tuple(d.get("vocab", DEFAULT_TEXT_VOCAB))
        return ScorerConfig(**d)


@dataclass(frozen=True)
class TokenSequence:
    """Token ids with CLS first; mask flags are False only for padding."""

    ids: tuple[int, ...]
    mask: tuple[bool, ...]

    def __post_init__(self):
        if not self.ids or self.ids[0] != CLS_ID:
            raise ValueError("token sequence must start with CLS")
        if len(self.ids) != len(self.mask):
            raise ValueError("ids and mask must align")


def tokenize(text: str, cfg: ScorerConfig | None = None) -> TokenSequence:
    """Character-level ids, CLS prepended, OOV mapped to UNK, tail truncated
    to max_len tokens."""
    cfg = cfg or ScorerConfig()
    lookup = {ch: i + len(_SPECIALS) for i, ch in enumerate(cfg.vocab)}
    ids = [CLS_ID] + [lookup.get(ch, UNK_ID) for ch in text]
    ids = ids[: cfg.max_len]
    return TokenSequence(tuple(ids), (True,) * len(ids))


@dataclass(frozen=True)
class PooledFeature:
    """d_model x P matrix; column j is the CLS state after layer L-P+1+j."""

    matrix: np.ndarray


@dataclass
class ScorerParams:
    cfg: ScorerConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "ScorerParams":
        return ScorerParams(self.cfg, {k: v.copy() for k, v in self.tensors.items()})


def init_scorer(cfg: ScorerConfig, dtype=np.float32) -> ScorerParams:
    rng = Rng(cfg.seed).fork("scorer-init")
    d, ffn = cfg.d_model, cfg.ffn_mult * cfg.d_model
    t: dict[str, np.ndarray] = {}

    def normal(shape, std=0.02):
        return rng.normal(size=int(np.prod(shape)), std=std).reshape(shape).astype(dtype)

    t["tok_emb"] = normal((cfg.vocab_size, d))
    t["pos_emb"] = normal((cfg.max_len, d))
    for i in range(cfg.n_layers):
        p = f"l{i}_"
        for name in ("wq", "wk", "wv", "wo"):
            t[p + name] = normal((d, d))
            t[p + name.replace("w", "b")] = np.zeros(d, dtype=dtype)
        t[p + "w1"] = normal((d, ffn))
        t[p + "b1"] = np.zeros(ffn, dtype=dtype)
        t[p + "w2"] = normal((ffn, d))
        t[p + "b2"] = np.zeros(d, dtype=dtype)
        t[p + "ln1_g"] = np.ones(d, dtype=dtype)
        t[p + "ln1_b"] = np.zeros(d, dtype=dtype)
        t[p + "ln2_g"] = np.ones(d, dtype=dtype)
        t[p + "ln2_b"] = np.zeros(d, dtype=dtype)
    t["head_w"] = normal((d * cfg.pooled, cfg.n_ranks))
    t["head_b"] = np.zeros(cfg.n_ranks, dtype=dtype)
    return ScorerParams(cfg, t)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _forward(params: ScorerParams, ids: np.ndarray, mask: np.ndarray, want_cache: bool):
    """ids/mask: (B, T).  Returns (probs, feature, caches, attn_maps)."""
    cfg = params.cfg
    t = params.tensors
    b, length = ids.shape
    if length > cfg.max_len:
        raise ShapeMismatchError(f"sequence length {length} exceeds max_len")
    x = t["tok_emb"][ids] + t["pos_emb"][:length]
    key_bias = np.where(mask[:, None, None, :] > 0, 0.0, -1e9)
    scale = 1.0 / math.sqrt(cfg.d_model // cfg.n_heads)
    caches = []
    cls_states = []
    attn_maps = []
    for i in range(cfg.n_layers):
        p = f"l{i}_"
        q = _split_heads(x @ t[p + "wq"] + t[p + "bq"], cfg.n_heads)
        k = _split_heads(x @ t[p + "wk"] + t[p + "bk"], cfg.n_heads)
        v = _split_heads(x @ t[p + "wv"] + t[p + "bv"], cfg.n_heads)
        scores = q @ k.transpose(0, 1, 3, 2) * scale + key_bias
        attn = nn.softmax(scores)
        ctx = _merge_heads(attn @ v)
        attn_out = ctx @ t[p + "wo"] + t[p + "bo"]
        res1 = x + attn_out
        x1, ln1_cache = nn.layernorm_forward(res1, t[p + "ln1_g"], t[p + "ln1_b"])
        h_pre = x1 @ t[p + "w1"] + t[p + "b1"]
        h, relu_mask = nn.relu_forward(h_pre)
        ffn_out = h @ t[p + "w2"] + t[p + "b2"]
        res2 = x1 + ffn_out
        x2, ln2_cache = nn.layernorm_forward(res2, t[p + "ln2_g"], t[p + "ln2_b"])
        if want_cache:
            caches.append({"x": x, "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx,
                           "ln1": ln1_cache, "x1": x1, "relu": relu_mask, "h": h,
                           "ln2": ln2_cache})
        attn_maps.append(attn)
        cls_states.append(x2[:, 0, :])
        x = x2
    pooled = cfg.pooled
    feature = np.concatenate(cls_states[cfg.n_layers - pooled:], axis=-1)
    logits = feature @ t["head_w"] + t["head_b"]
    probs = nn.softmax(logits)
    return probs, feature, caches, attn_maps


def _backward(params: ScorerParams, ids: np.ndarray, caches, feature: np.ndarray,
              dlogits: np.ndarray) -> dict[str, np.ndarray]:
    cfg = params.cfg
    t = params.tensors
    b, length = ids.shape
    scale = 1.0 / math.sqrt(cfg.d_model // cfg.n_heads)
    grads = {name: np.zeros_like(arr) for name, arr in t.items()}
    grads["head_w"] = feature.T @ dlogits
    grads["head_b"] = dlogits.sum(axis=0)
    dfeature = dlogits @ t["head_w"].T
    dcls = np.split(dfeature, cfg.pooled, axis=-1)  # one chunk per pooled layer
    first_pooled = cfg.n_layers - cfg.pooled
    dx = np.zeros((b, length, cfg.d_model), dtype=feature.dtype)
    for i in range(cfg.n_layers - 1, -1, -1):
        p = f"l{i}_"
        c = caches[i]
        if i >= first_pooled:
            dx = dx.copy()
            dx[:, 0, :] += dcls[i - first_pooled]
        dres2, grads[p + "ln2_g"], grads[p + "ln2_b"] = nn.layernorm_backward(dx, c["ln2"])
        dx1 = dres2.copy()
        dh = dres2 @ t[p + "w2"].T
        grads[p + "w2"] = c["h"].reshape(-1, c["h"].shape[-1]).T @ dres2.reshape(-1, cfg.d_model)
        grads[p + "b2"] = dres2.sum(axis=(0, 1))
        dh_pre = dh * c["relu"]
        dx1 += dh_pre @ t[p + "w1"].T
        grads[p + "w1"] = c["x1"].reshape(-1, cfg.d_model).T @ dh_pre.reshape(-1, dh_pre.shape[-1])
        grads[p + "b1"] = dh_pre.sum(axis=(0, 1))
        dres1, grads[p + "ln1_g"], grads[p + "ln1_b"] = nn.layernorm_backward(dx1, c["ln1"])
        dx = dres1.copy()
        dattn_out = dres1
        dctx = dattn_out @ t[p + "wo"].T
        grads[p + "wo"] = c["ctx"].reshape(-1, cfg.d_model).T @ dattn_out.reshape(-1, cfg.d_model)
        grads[p + "bo"] = dattn_out.sum(axis=(0, 1))
        dctx_h = _split_heads(dctx, cfg.n_heads)
        dattn = dctx_h @ c["v"].transpose(0, 1, 3, 2)
        dv = c["attn"].transpose(0, 1, 3, 2) @ dctx_h
        attn = c["attn"]
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dq = dscores @ c["k"] * scale
        dk = dscores.transpose(0, 1, 3, 2) @ c["q"] * scale
        for mat, name in ((dq, "q"), (dk, "k"), (dv, "v")):
            dlin = _merge_heads(mat)
            grads[p + f"w{name}"] = c["x"].reshape(-1, cfg.d_model).T @ dlin.reshape(-1, cfg.d_model)
            grads[p + f"b{name}"] = dlin.sum(axis=(0, 1))
            dx += dlin @ t[p + f"w{name}"].T
    np.add.at(grads["tok_emb"], ids, dx)
    grads["pos_emb"][:length] = dx.sum(axis=0)
    return grads


# -- public inference -----------------------------------------------------------


def encode(params: ScorerParams, seq: TokenSequence) -> PooledFeature:
    """CLS hidden states of the final P layers, as a d_model x P matrix."""
    ids = np.array([seq.ids])
    mask = np.array([seq.mask], dtype=np.float64)
    _, feature, _, _ = _forward(params, ids, mask, want_cache=False)
    pooled = params.cfg.pooled
    return PooledFeature(feature[0].reshape(pooled, params.cfg.d_model).T)


def classify(params: ScorerParams, feature: PooledFeature) -> np.ndarray:
    """Flatten the pooled matrix through the linear head onto rank
    probabilities; predicted rank is the argmax (ties toward lower rank)."""
    flat = feature.matrix.T.reshape(-1)
    logits = flat @ params.tensors["head_w"] + params.tensors["head_b"]
    return nn.softmax(logits)


def attention_maps(params: ScorerParams, seq: TokenSequence) -> list[np.ndarray]:
    ids = np.array([seq.ids])
    mask = np.array([seq.mask], dtype=np.float64)
    _, _, _, maps = _forward(params, ids, mask, want_cache=False)
    return [m[0] for m in maps]


def _batch_arrays(cfg: ScorerConfig, texts) -> tuple[np.ndarray, np.ndarray]:
    seqs = [tokenize(t, cfg) for t in texts]
    length = max(len(s.ids) for s in seqs)
    ids = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), length), dtype=np.float64)
    for i, s in enumerate(seqs):
        ids[i, : len(s.ids)] = s.ids
        mask[i, : len(s.ids)] = 1.0
    return ids, mask


def score_answers(params: ScorerParams, texts) -> list[int]:
    """Predicted rank per text; ties break toward the lower rank."""
    if not len(texts):
        return []
    out = []
    for start in range(0, len(texts), 64):
        ids, mask = _batch_arrays(params.cfg, texts[start : start + 64])
        probs, _, _, _ = _forward(params, ids, mask, want_cache=False)
        out.extend(int(p.argmax()) for p in probs)
    return out


# -- datasets and training ---------------------------------------------------------


@dataclass(frozen=True)
class ScoreDataset:
    """(text, rank) pairs with a 3:1:1 train/val/test assignment."""

    items: tuple[tuple[str, int], ...]
    split: tuple[str, ...]

    def subset(self, name: str) -> list[tuple[str, int]]:
        return [item for item, s in zip(self.items, self.split) if s == name]


def split_dataset(items, seed: int = 0) -> ScoreDataset:
    """Seeded shuffle then 60/20/20 slicing; remainder goes to train."""
    items = [tuple(it) for it in items]
    if len(items) < 5:
        raise TooFewItemsError("need at least 5 items for a 3:1:1 split")
    rng = Rng(seed).fork("score-split")
    order = list(range(len(items)))
    rng.shuffle(order)
    n = len(items)
    n_val = n // 5
    n_test = n // 5
    split = [""] * n
    for pos, idx in enumerate(order):
        if pos < n - n_val - n_test:
            split[idx] = "train"
        elif pos < n - n_test:
            split[idx] = "val"
        else:
            split[idx] = "test"
    return ScoreDataset(tuple(items), tuple(split))


def _loss_and_grads(params: ScorerParams, texts, ranks: np.ndarray):
    ids, mask = _batch_arrays(params.cfg, texts)
    probs, feature, caches, _ = _forward(params, ids, mask, want_cache=True)
    loss, dlogits = nn.cross_entropy(probs, ranks)
    grads = _backward(params, ids, caches, feature, dlogits)
    return loss, grads


def train_scorer(cfg: ScorerConfig, dataset: ScoreDataset) -> tuple[ScorerParams, list]:
    """Adam on the train split; the returned parameters are the epoch
    checkpoint with the best validation QWK."""
    train_items = dataset.subset("train")
    val_items = dataset.subset("val")
    if not train_items:
        raise TooFewItemsError("train split is empty")
    for _, rank in dataset.items:
        if not 0 <= rank < cfg.n_ranks:
            raise ValueError(f"rank {rank} outside [0, {cfg.n_ranks})")
    params = init_scorer(cfg)
    state = nn.AdamState()
    optim = nn.AdamConfig(lr=cfg.lr)
    rng = Rng(cfg.seed).fork("scorer-train")
    history: list = []
    best: tuple[float, ScorerParams] | None = None
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_items))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            chunk = [train_items[i] for i in order[start : start + cfg.batch_size]]
            texts = [t for t, _ in chunk]
            ranks = np.array([r for _, r in chunk])
            loss, grads = _loss_and_grads(params, texts, ranks)
            if not math.isfinite(loss):
                raise DivergenceError(f"scorer loss became {loss} at epoch {epoch}")
            nn.adam_step(params.tensors, grads, state, optim)
            losses.append(loss)
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val_items:
            predicted = score_answers(params, [t for t, _ in val_items])
            truth = [r for _, r in val_items]
            record["val_qwk"] = qwk(RatingPair(tuple(predicted), tuple(truth), cfg.n_ranks))
            if best is None or record["val_qwk"] > best[0]:
                best = (record["val_qwk"], params.copy())
        history.append(record)
    if best is not None:
        params = best[1]
    return params, history


# -- persistence ----------------------------------------------------------------------


def save_scorer(params: ScorerParams, path) -> None:
    nn.save_checkpoint(path, {"kind": "scorer", "cfg": params.cfg.to_dict()}, params.tensors)


def load_scorer(path) -> ScorerParams:
    meta, tensors = nn.load_checkpoint(path)
    if meta.get("kind") != "scorer":
        raise FormatError(f"not a scorer checkpoint: {path}")
    return ScorerParams(ScorerConfig.from_dict(meta["cfg"]), tensors)
