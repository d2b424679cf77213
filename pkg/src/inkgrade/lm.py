"""Character n-gram language model with interpolated modified Kneser-Ney
smoothing, ARPA serialization and backoff queries.

Counting convention: each sentence is padded with n-1 <s> tokens and
terminated by </s>; for every order k, all k-gram windows ending at a real
token (including </s>) are counted.  Estimation follows the
count-of-counts-discount formulation with three discounts per order:

    Y = n1 / (n1 + 2 n2)
    D_j = j - (j + 1) * Y * n_{j+1} / n_j   clamped to [0, j],  j = 1, 2, 3+

applied to adjusted counts: raw counts at the highest order and for
<s>-initial n-grams, left-extension type counts elsewhere.  Lower-order
distributions interpolate with the next-lower order, the unigram level with
the uniform distribution over the predicted-token universe (vocabulary
without <s>), which gives <unk> its probability floor.  Probabilities and
backoff weights are stored and serialized in log10 (natural log only at the
decoder boundary).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DegenerateCountsError, EmptyCorpusError, FormatError

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"

LOG10_NEVER = -99.0  # conventional "not a real probability" for <s>-type entries
_DEFAULT_DISCOUNTS = (0.5, 1.0, 1.5)  # fallback when counts-of-counts degenerate


@dataclass(frozen=True)
class Vocabulary:
    """Dense token ids; reserved <s>, </s>, <unk> always present."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary symbols must be unique")
        for reserved in (BOS, EOS, UNK):
            if self.symbols.count(reserved) != 1:
                raise ValueError(f"reserved token {reserved} must appear exactly once")

    @staticmethod
    def from_tokens(tokens: Iterable[str]) -> "Vocabulary":
        real = sorted(set(tokens) - {BOS, EOS, UNK})
        return Vocabulary((BOS, EOS, UNK, *real))

    def __contains__(self, token: str) -> bool:
        return token in self.symbols

    @property
    def predicted(self) -> tuple[str, ...]:
        """Every token a model can emit: the vocabulary without <s>."""
        return tuple(s for s in self.symbols if s != BOS)


@dataclass(frozen=True)
class NGramCounts:
    order: int
    tables: tuple[dict, ...]  # tables[k-1]: k-gram tuple -> raw count


def count_ngrams(corpus: Iterable[Sequence[str]], order: int) -> NGramCounts:
    """Raw counts of all 1..order-gram windows ending at a real token."""
    if order < 1:
        raise ValueError("order must be >= 1")
    tables: tuple[dict, ...] = tuple({} for _ in range(order))
    sentences = 0
    for sentence in corpus:
        sentences += 1
        padded = [BOS] * (order - 1) + list(sentence) + [EOS]
        for i in range(order - 1, len(padded)):
            for k in range(1, order + 1):
                gram = tuple(padded[i - k + 1 : i + 1])
                table = tables[k - 1]
                table[gram] = table.get(gram, 0) + 1
    if sentences == 0:
        raise EmptyCorpusError("corpus has no sentences")
    return NGramCounts(order, tables)


def _adjusted_counts(counts: NGramCounts) -> list[dict]:
    """Left-extension type counts, except raw at top order and for <s>-initial
    grams (which cannot be extended to the left)."""
    order = counts.order
    adjusted: list[dict] = [dict() for _ in range(order)]
    adjusted[order - 1] = dict(counts.tables[order - 1])
    for k in range(order - 1, 0, -1):
        table = adjusted[k - 1]
        for gram, raw in counts.tables[k - 1].items():
            if gram[0] == BOS:
                table[gram] = raw
        for longer in counts.tables[k]:
            suffix = longer[1:]
            if suffix[0] != BOS:
                table[suffix] = table.get(suffix, 0) + 1
        if set(table) != set(counts.tables[k - 1]):
            raise DegenerateCountsError("count tables are not suffix-closed")
    return adjusted


def _estimate_discounts(values) -> tuple[float, float, float]:
    n = [0, 0, 0, 0, 0]
    for v in values:
        if 1 <= v <= 4:
            n[v] += 1
    if n[1] == 0 or n[1] + 2 * n[2] == 0:
        return _DEFAULT_DISCOUNTS
    y = n[1] / (n[1] + 2 * n[2])
    out = []
    for j in (1, 2, 3):
        if n[j] == 0:
            out.append(_DEFAULT_DISCOUNTS[j - 1])
        else:
            d = j - (j + 1) * y * n[j + 1] / n[j]
            out.append(min(float(j), max(0.0, d)))
    return tuple(out)


def _discount_for(count: int, d: tuple[float, float, float]) -> float:
    if count <= 0:
        return 0.0
    return d[min(count, 3) - 1]


@dataclass(frozen=True)
class NGramModel:
    """Per-order tables of (log10 prob, log10 backoff-or-None)."""

    order: int
    tables: tuple[dict, ...]
    vocab: Vocabulary

    def logprob(self, token: str, context: Sequence[str] = ()) -> float:
        return logprob(self, token, context)


def estimate_kn(counts: NGramCounts,
                discounts: Sequence[tuple[float, float, float]] | None = None) -> NGramModel:
    """Interpolated modified Kneser-Ney estimation from raw count tables."""
    order = counts.order
    if not counts.tables[0]:
        raise DegenerateCountsError("no unigrams counted")
    adjusted = _adjusted_counts(counts)
    if discounts is None:
        discounts = [_estimate_discounts(adjusted[k].values()) for k in range(order)]
    elif len(discounts) != order:
        raise ValueError("need one discount triple per order")

    vocab = Vocabulary.from_tokens(w for (w,) in counts.tables[0])
    universe = vocab.predicted
    probs: list[dict] = [dict() for _ in range(order)]  # gram -> linear prob
    bows: dict[tuple, float] = {}  # context gram -> linear backoff weight

    # Unigrams interpolate with the uniform distribution over the universe.
    d1 = discounts[0]
    total = sum(adjusted[0].values())
    gamma_mass = sum(_discount_for(a, d1) for a in adjusted[0].values())
    gamma_uni = gamma_mass / total
    uniform = 1.0 / len(universe)
    for (w,), a in adjusted[0].items():
        probs[0][(w,)] = max(a - _discount_for(a, d1), 0.0) / total + gamma_uni * uniform
    if (UNK,) not in probs[0]:
        probs[0][(UNK,)] = gamma_uni * uniform
    bows[()] = gamma_uni  # kept internal; ARPA has no entry for the empty context

    for k in range(2, order + 1):
        dk = discounts[k - 1]
        by_context: dict[tuple, list] = {}
        for gram, a in adjusted[k - 1].items():
            by_context.setdefault(gram[:-1], []).append((gram, a))
        for context, grams in by_context.items():
            total = sum(a for _, a in grams)
            gamma_mass = sum(_discount_for(a, dk) for _, a in grams)
            gamma = gamma_mass / total
            for gram, a in grams:
                lower = probs[k - 2][gram[1:]]
                probs[k - 1][gram] = max(a - _discount_for(a, dk), 0.0) / total + gamma * lower
            bows[context] = gamma

    # Assemble (log10 prob, log10 bow) tables; contexts that are pure <s>
    # padding are stored with the conventional -99 "never predicted" prob.
    tables: tuple[dict, ...] = tuple({} for _ in range(order))
    for k in range(1, order + 1):
        for gram, p in probs[k - 1].items():
            tables[k - 1][gram] = [math.log10(p), None]
    for context, gamma in bows.items():
        if not context:
            continue
        k = len(context)
        if context not in tables[k - 1]:
            if any(tok != BOS for tok in context):
                raise DegenerateCountsError(f"backoff context {context} missing from tables")
            tables[k - 1][context] = [LOG10_NEVER, None]
        log_bow = math.log10(gamma) if gamma > 0 else LOG10_NEVER
        tables[k - 1][context][1] = log_bow
    if order > 1 and (BOS,) not in tables[0]:
        tables[0][(BOS,)] = [LOG10_NEVER, 0.0]
    return NGramModel(order, tables, vocab)


def logprob(model: NGramModel, token: str, context: Sequence[str] = ()) -> float:
    """log10 P(token | context) with standard longest-match backoff."""
    token = token if token in model.vocab else UNK
    ctx = tuple(t if t in model.vocab else UNK for t in context)[-(model.order - 1):] \
        if model.order > 1 else ()
    for start in range(len(ctx) + 1):
        sub = ctx[start:]
        entry = model.tables[len(sub)].get(sub + (token,))
        if entry is not None:
            backoff = 0.0
            for j in range(start):
                longer = ctx[j:]
                context_entry = model.tables[len(longer) - 1].get(longer)
                if context_entry is not None and context_entry[1] is not None:
                    backoff += context_entry[1]
            return entry[0] + backoff
    raise DegenerateCountsError(f"no unigram entry for {token!r}")  # unreachable: <unk> stored


def sentence_logprob(model: NGramModel, tokens: Sequence[str]) -> float:
    """Sum of per-token log10 probabilities including the </s> term."""
    ctx = (BOS,) * (model.order - 1)
    total = 0.0
    for token in tuple(tokens) + (EOS,):
        total += logprob(model, token, ctx)
        if model.order > 1:
            ctx = (ctx + (token,))[-(model.order - 1):]
    return total


def perplexity(model: NGramModel, heldout: Iterable[Sequence[str]]) -> float:
    """10^(-mean log10 prob per token), </s> counted per sentence."""
    total = 0.0
    n_tokens = 0
    for sentence in heldout:
        total += sentence_logprob(model, sentence)
        n_tokens += len(sentence) + 1
    if n_tokens == 0:
        raise EmptyCorpusError("held-out set is empty")
    return 10.0 ** (-total / n_tokens)


# -- ARPA serialization -----------------------------------------------------------


def write_arpa(model: NGramModel, path) -> None:
    lines = ["\\data\\"]
    for k in range(1, model.order + 1):
        lines.append(f"ngram {k}={len(model.tables[k - 1])}")
    lines.append("")
    for k in range(1, model.order + 1):
        lines.append(f"\\{k}-grams:")
        for gram in sorted(model.tables[k - 1]):
            logp, logbow = model.tables[k - 1][gram]
            line = f"{logp:.7f}\t{' '.join(gram)}"
            if logbow is not None:
                line += f"\t{logbow:.7f}"
            lines.append(line)
        lines.append("")
    lines.append("\\end\\")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_arpa(path) -> NGramModel:
    path = Path(path)
    if not path.is_file():
        raise OSError(f"no such ARPA file: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    it = iter(enumerate(lines, start=1))
    for _, line in it:
        if line.strip() == "\\data\\":
            break
    else:
        raise FormatError("missing \\data\\ header")
    expected: list[int] = []
    for _, line in it:
        line = line.strip()
        if not line:
            break
        if not line.startswith("ngram "):
            raise FormatError(f"bad count line: {line!r}")
        k_part, n_part = line[len("ngram "):].split("=")
        if int(k_part) != len(expected) + 1:
            raise FormatError("non-contiguous n-gram orders")
        expected.append(int(n_part))
    if not expected:
        raise FormatError("no n-gram counts declared")
    order = len(expected)
    tables: tuple[dict, ...] = tuple({} for _ in range(order))
    current = None
    for lineno, line in it:
        stripped = line.strip()
        if not stripped:
            continue
        if stripped == "\\end\\":
            current = "done"
            break
        if stripped.endswith("-grams:") and stripped.startswith("\\"):
            current = int(stripped[1:].split("-")[0])
            continue
        if current is None or current == "done":
            raise FormatError(f"line {lineno}: entry outside any section")
        parts = line.split("\t")
        if len(parts) == 2:
            logp, gram_text = parts
            logbow = None
        elif len(parts) == 3:
            logp, gram_text, logbow = parts
        else:
            raise FormatError(f"line {lineno}: expected 2 or 3 tab-separated fields")
        gram = tuple(gram_text.split(" "))
        if len(gram) != current:
            raise FormatError(f"line {lineno}: {len(gram)}-gram in \\{current}-grams: section")
        tables[current - 1][gram] = [float(logp), None if logbow is None else float(logbow)]
    if current != "done":
        raise FormatError("missing \\end\\ terminator")
    for k, n in enumerate(expected, start=1):
        if len(tables[k - 1]) != n:
            raise FormatError(f"header declares {n} {k}-grams, found {len(tables[k - 1])}")
    vocab = Vocabulary.from_tokens(w for (w,) in tables[0])
    return NGramModel(order, tables, vocab)
