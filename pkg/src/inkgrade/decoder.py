"""Beam-search decoding of per-position recognition candidates with n-gram
language model fusion.

Each lattice position holds the recognizer's top-k (label, log-posterior)
candidates for one character cell.  The decoder walks left to right keeping
the best B hypotheses under

    score = sum(classifier log-posterior) + alpha * sum(LM ln-prob)
          + length_bonus * length

with the LM consulted in natural log (ARPA log10 converted at this
boundary), an <s>-padded start context and a final </s> term.  Space cells
contribute no score and reset the LM context to sentence start.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyLatticeError
from .lm import BOS, EOS, NGramModel, logprob

LN10 = math.log(10.0)


@dataclass(frozen=True)
class DecoderConfig:
    beam_width: int = 8
    lm_weight: float = 0.5
    k: int = 10
    length_bonus: float = 0.0
    blank_label: str = " "

    def __post_init__(self):
        if self.beam_width < 1 or self.k < 1 or self.lm_weight < 0:
            raise ValueError("beam_width >= 1, k >= 1, lm_weight >= 0 required")

    def to_dict(self) -> dict:
        return {"beam_width": self.beam_width, "lm_weight": self.lm_weight,
                "k": self.k, "length_bonus": self.length_bonus,
                "blank_label": self.blank_label}


@dataclass(frozen=True)
class CandidateLattice:
    """positions[i] = ((label, log-posterior), ...) descending by posterior."""

    positions: tuple[tuple[tuple[str, float], ...], ...]

    def __post_init__(self):
        if not self.positions:
            raise EmptyLatticeError("lattice has no positions")
        for pos in self.positions:
            if not pos:
                raise EmptyLatticeError("lattice position with no candidates")
            for label, logp in pos:
                if logp > 1e-9:
                    raise ValueError(f"log-posterior {logp} > 0 for {label!r}")
            if any(pos[i][1] < pos[i + 1][1] for i in range(len(pos) - 1)):
                raise ValueError("candidates must be sorted by descending posterior")


def lattice_from_posteriors(prob_rows, blanks, alphabet, cfg: DecoderConfig) -> CandidateLattice:
    """Build a lattice from per-cell probability vectors; blank cells become
    single-candidate space positions."""
    from .recognizer import Posterior, top_k

    positions = []
    row_iter = iter(prob_rows)
    for is_blank in blanks:
        if is_blank:
            positions.append(((cfg.blank_label, 0.0),))
        else:
            probs = next(row_iter)
            cands = top_k(Posterior(np.asarray(probs)), min(cfg.k, len(alphabet)))
            positions.append(tuple((alphabet[i], lp) for i, lp in cands))
    return CandidateLattice(tuple(positions))


@dataclass(frozen=True)
class DecodeResult:
    tokens: tuple[str, ...]
    score: float
    classifier_score: float
    lm_score: float  # unweighted natural-log LM total


@dataclass(frozen=True)
class _Hyp:
    tokens: tuple[str, ...]
    clf: float
    lm: float
    ctx: tuple[str, ...]


def _start_context(lm_model: NGramModel) -> tuple[str, ...]:
    return (BOS,) * (lm_model.order - 1)


def _beam(lattice: CandidateLattice, lm_model: NGramModel, cfg: DecoderConfig) -> list[_Hyp]:
    start = _start_context(lm_model)
    beam = [_Hyp((), 0.0, 0.0, start)]
    for pos in lattice.positions:
        is_blank = len(pos) == 1 and pos[0][0] == cfg.blank_label
        expanded = []
        for hyp in beam:
            if is_blank:
                label, logp = pos[0]
                expanded.append(_Hyp(hyp.tokens + (label,), hyp.clf + logp, hyp.lm, start))
                continue
            for label, logp in pos:
                lm_term = LN10 * logprob(lm_model, label, hyp.ctx) if cfg.lm_weight > 0 else 0.0
                ctx = (hyp.ctx + (label,))[-(lm_model.order - 1):] if lm_model.order > 1 else ()
                expanded.append(_Hyp(hyp.tokens + (label,), hyp.clf + logp,
                                     hyp.lm + lm_term, ctx))
        expanded.sort(key=lambda h: (-_score(h, cfg), h.tokens))
        beam = expanded[: cfg.beam_width]
    if cfg.lm_weight > 0:
        beam = [_Hyp(h.tokens, h.clf, h.lm + LN10 * logprob(lm_model, EOS, h.ctx), h.ctx)
                for h in beam]
    beam.sort(key=lambda h: (-_score(h, cfg), h.tokens))
    return beam


def _score(h: _Hyp, cfg: DecoderConfig) -> float:
    return h.clf + cfg.lm_weight * h.lm + cfg.length_bonus * len(h.tokens)


def _result(h: _Hyp, cfg: DecoderConfig) -> DecodeResult:
    return DecodeResult(h.tokens, _score(h, cfg), h.clf, h.lm)


def decode(lattice: CandidateLattice, lm_model: NGramModel, cfg: DecoderConfig | None = None) -> DecodeResult:
    """Best hypothesis under the combined classifier + LM score."""
    cfg = cfg or DecoderConfig()
    return _result(_beam(lattice, lm_model, cfg)[0], cfg)


def rescore_nbest(lattice: CandidateLattice, lm_model: NGramModel,
                  cfg: DecoderConfig | None = None, n: int = 1) -> list[DecodeResult]:
    """Final beam contents: descending score, deduplicated token sequences."""
    cfg = cfg or DecoderConfig()
    if n > cfg.beam_width:
        raise ValueError(f"n={n} exceeds beam width {cfg.beam_width}")
    seen = set()
    out = []
    for hyp in _beam(lattice, lm_model, cfg):
        if hyp.tokens in seen:
            continue
        seen.add(hyp.tokens)
        out.append(_result(hyp, cfg))
        if len(out) == n:
            break
    return out


def greedy_tokens(lattice: CandidateLattice) -> tuple[str, ...]:
    """Position-wise argmax (the no-LM baseline)."""
    return tuple(pos[0][0] for pos in lattice.positions)


def nbest_to_jsonl(results: list[DecodeResult]) -> str:
    """One JSON line per hypothesis: rank, tokens, score and its two parts."""
    import json

    lines = []
    for rank, r in enumerate(results):
        lines.append(json.dumps({
            "rank": rank,
            "tokens": list(r.tokens),
            "score": r.score,
            "classifier_score": r.classifier_score,
            "lm_score": r.lm_score,
        }, sort_keys=True))
    return "\n".join(lines)
