"""Acceptance suite.

One test per acceptance criterion, each printing a PASS/FAIL line (run with
`pytest tests/test_acceptance.py -v -s` to watch them).  Training artifacts
are built once in module fixtures and shared; the whole module is designed
to stay well inside the stated runtime caps on a laptop CPU.
"""

import itertools
import time
from pathlib import Path

import numpy as np
import pytest

from inkgrade import recognizer as rec
from inkgrade import scorer as sc
from inkgrade.decoder import (
    LN10,
    CandidateLattice,
    DecoderConfig,
    decode,
    greedy_tokens,
    lattice_from_posteriors,
)
from inkgrade.lm import BOS, EOS, count_ngrams, estimate_kn, logprob
from inkgrade.metrics import RatingPair, corpus_char_accuracy, qwk
from inkgrade.nn import AdamConfig
from inkgrade.rng import Rng
from inkgrade.segmenter import SegmenterConfig, segment_sheet
from inkgrade.synthgen import (
    AugmentParams,
    BlockSpec,
    SheetSpec,
    default_atlas,
    generate_corpus,
    generate_sheet,
    make_language,
    make_lm_corpus,
    make_rubric_corpus,
)

import kn_reference as ref
from oracles import finite_diff_grads, qwk_double_loop, relative_tensor_error

SEED = 42
PRE_AUG = AugmentParams(rotation=(-8, 8), shear=(-0.08, 0.08), shift=(-2, 2),
                        blur=(0.0, 0.5), noise=(0.0, 0.01), rng_seed=101)
EXAM_AUG = AugmentParams(rotation=(12, 28), shear=(0.15, 0.28), shift=(-3, 3),
                         blur=(0.8, 1.4), noise=(0.02, 0.05), rng_seed=202)
SEG_CFG = SegmenterConfig()
DEC_CFG = DecoderConfig()


def report(criterion, ok, detail):
    print(f"\ncriterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def atlas():
    return default_atlas()


@pytest.fixture(scope="module")
def language():
    return make_language(SEED)


@pytest.fixture(scope="module")
def bundle(atlas):
    return generate_corpus(atlas, PRE_AUG, n_train=1800, n_test=600, seed=SEED,
                           domain_shift=EXAM_AUG, n_exam_train=1200, n_exam_test=400)


@pytest.fixture(scope="module")
def trained(bundle):
    """Pretrained and fine-tuned ensembles plus wall times and histories."""
    specs = rec.default_ensemble_specs(len(bundle.pretrain_train.alphabet))
    t0 = time.monotonic()
    members, histories = [], []
    for i, spec in enumerate(specs):
        model, history = rec.train(spec, bundle.pretrain_train, AdamConfig(lr=3e-3),
                                   epochs=6, seed=i, batch_size=32)
        members.append(model)
        histories.append(history)
    pretrain_wall = time.monotonic() - t0
    t0 = time.monotonic()
    tuned = []
    for i, model in enumerate(members):
        ft, _ = rec.fine_tune(model, bundle.exam_train, AdamConfig(lr=1e-3),
                              epochs=8, seed=100 + i, batch_size=32)
        tuned.append(ft)
    finetune_wall = time.monotonic() - t0
    return {
        "pretrained": rec.Ensemble(tuple(members)),
        "finetuned": rec.Ensemble(tuple(tuned)),
        "histories": histories,
        "pretrain_wall": pretrain_wall,
        "finetune_wall": finetune_wall,
    }


@pytest.fixture(scope="module")
def char_lm(language):
    words = make_lm_corpus(language, 20000, seed=SEED)
    return estimate_kn(count_ngrams([list(w) for w in words], order=5))


def sample_sentence(language, rng, max_chars):
    words = [language.lexicon[rng.randint(0, len(language.lexicon))]
             for _ in range(rng.randint(2, 7))]
    text = " ".join(words)
    while len(text) > max_chars:
        words.pop()
        text = " ".join(words)
    return text


# -- criterion 1: segmentation oracle ------------------------------------------------


def test_criterion_1_segmentation(atlas, language):
    rng = Rng(9001)
    t0 = time.monotonic()
    good = 0
    n_sheets = 200
    for i in range(n_sheets):
        blocks, texts = [], []
        for _ in range(rng.randint(1, 4)):
            rows = rng.randint(2, 7)
            cols = rng.randint(2, 11)
            cell = (64, 80)[rng.randint(0, 2)]
            blocks.append(BlockSpec(rows, cols, cell))
            texts.append(sample_sentence(language, rng, rows * cols))
        spec = SheetSpec(tuple(blocks), tuple(texts))
        sheet, truth = generate_sheet(spec, atlas, EXAM_AUG, seed=10_000 + i)
        try:
            segs = segment_sheet(sheet, SEG_CFG)
        except Exception:
            continue
        if len(segs) != len(truth.blocks):
            continue
        sheet_ok = True
        for seg, tb in zip(segs, truth.blocks):
            if len(seg.cells) != len(tb.cells):
                sheet_ok = False
                break
            truth_by_pos = {c.grid_pos: c for c in tb.cells}
            for cell in seg.cells:
                found = seg.block.box.compose(cell.box)
                expect = tb.box.compose(truth_by_pos[cell.grid_pos].box)
                if found.iou(expect) < 0.9:
                    sheet_ok = False
                    break
            if not sheet_ok:
                break
        good += sheet_ok
    wall = time.monotonic() - t0
    ok = good >= 0.99 * n_sheets and wall < 60
    report(1, ok, f"{good}/{n_sheets} sheets exact (need >=198), wall={wall:.1f}s (cap 60)")


# -- criterion 2: gradient checks ----------------------------------------------------


def _recognizer_gradcheck(spec, seed):
    rng = Rng(seed)
    model = rec.init_params(spec, tuple("ab"), seed=seed)
    model.tensors = {k: v.astype(np.float64) for k, v in model.tensors.items()}
    images = (rng.uniform(0, 256, size=3 * 64) % 256).astype(np.uint8).reshape(3, 8, 8)
    labels = np.array([0, 1, 0])
    _, analytic = rec.backward(model, images, labels)

    def loss():
        return float(rec.backward(model, images, labels)[0])

    numeric = finite_diff_grads(loss, model.tensors, eps=1e-3)
    return max(relative_tensor_error(analytic[k], numeric[k]) for k in model.tensors)


def test_criterion_2_gradient_checks():
    t0 = time.monotonic()
    worst = {}
    worst["plain"] = _recognizer_gradcheck(
        rec.ConvNetSpec(blocks=((3, 1), (4, 1)), num_classes=2, input_size=8), 0)
    worst["residual"] = _recognizer_gradcheck(
        rec.ConvNetSpec(blocks=((3, 2),), num_classes=2, input_size=8, residual=True), 3)
    worst["dense"] = _recognizer_gradcheck(
        rec.ConvNetSpec(blocks=((2, 2), (3, 1)), num_classes=2, input_size=8, dense=True), 5)

    cfg = sc.ScorerConfig(d_model=8, n_layers=2, n_heads=1, max_len=16, n_ranks=3,
                          vocab=("a", "b", "c"), seed=3)
    params = sc.init_scorer(cfg)
    params.tensors = {k: v.astype(np.float64) for k, v in params.tensors.items()}
    ids, mask = sc._batch_arrays(cfg, ["ab", "caa", "b"])
    ranks = np.array([0, 2, 1])
    probs, feature, caches, _ = sc._forward(params, ids, mask, want_cache=True)
    _, dlogits = sc.nn.cross_entropy(probs, ranks)
    analytic = sc._backward(params, ids, caches, feature, dlogits)

    def loss():
        p, _, _, _ = sc._forward(params, ids, mask, want_cache=False)
        return float(sc.nn.cross_entropy(p, ranks)[0])

    numeric = finite_diff_grads(loss, params.tensors, eps=1e-3)
    worst["scorer"] = max(relative_tensor_error(analytic[k], numeric[k])
                          for k in params.tensors)
    wall = time.monotonic() - t0
    ok = max(worst.values()) < 1e-2 and wall < 300
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
    report(2, ok, f"max rel err per model: {detail} (cap 1e-2), wall={wall:.0f}s (cap 300)")


# -- criterion 3: Kneser-Ney correctness ---------------------------------------------


def test_criterion_3_kneser_ney():
    corpus = [list(w) for w in ("parse", "parses", "spare", "spear", "pears",
                                "parse", "rapse", "spars", "press", "asper")]
    order = 5
    model = estimate_kn(count_ngrams(corpus, order))
    tables = ref.raw_counts(corpus, order)
    triples = ref.all_triples(tables, order)
    max_err = 0.0
    checked = 0
    for k in range(1, order + 1):
        for gram, (logp, logbow) in model.tables[k - 1].items():
            if logp <= -98.0:
                continue
            max_err = max(max_err, abs(10 ** logp - ref.prob(tables, order, gram, triples)))
            checked += 1
            if logbow is not None:
                max_err = max(max_err, abs(10 ** logbow - ref.gamma(tables, order, gram, triples)))
    rng = Rng(4)
    stored = [g for table in model.tables for g in table]
    max_sum_err = 0.0
    for i in range(100):
        if i and rng.uniform() < 0.7:
            ctx = stored[rng.randint(0, len(stored))]
        else:
            ctx = tuple(rng.choice("parse z") for _ in range(rng.randint(0, 5)))
        total = sum(10 ** logprob(model, w, ctx) for w in model.vocab.predicted)
        max_sum_err = max(max_sum_err, abs(total - 1.0))
    ok = max_err <= 1e-10 and max_sum_err <= 1e-6
    report(3, ok, f"{checked} probs vs brute force, max |dp|={max_err:.2e} (cap 1e-10); "
                  f"100 contexts, max |sum-1|={max_sum_err:.2e} (cap 1e-6)")


# -- criterion 4: beam-search optimality ----------------------------------------------


def _random_lattice(rng, tokens, t, k):
    positions = []
    for _ in range(t):
        labels = list(tokens)
        rng.shuffle(labels)
        logps = sorted((rng.uniform(-6.0, -0.01) for _ in range(k)), reverse=True)
        positions.append(tuple((labels[i], logps[i]) for i in range(k)))
    return CandidateLattice(tuple(positions))


def _exhaustive_best(lattice, lm_model, cfg):
    best = None
    for path in itertools.product(*lattice.positions):
        tokens = tuple(label for label, _ in path)
        score = sum(lp for _, lp in path)
        ctx = (BOS,) * (lm_model.order - 1)
        lm_total = 0.0
        for label in tokens:
            lm_total += LN10 * logprob(lm_model, label, ctx)
            ctx = (ctx + (label,))[-(lm_model.order - 1):]
        lm_total += LN10 * logprob(lm_model, EOS, ctx)
        score += cfg.lm_weight * lm_total + cfg.length_bonus * len(tokens)
        key = (-score, tokens)
        if best is None or key < best[0]:
            best = (key, tokens)
    return best[1]


def test_criterion_4_beam_optimality(char_lm, language):
    tokens = sorted({t for w in language.lexicon for t in w})[:8]
    rng = Rng(7)
    exhaustive_ok = 0
    for _ in range(500):
        t = rng.randint(1, 5)
        k = rng.randint(1, 6)
        lat = _random_lattice(rng, tokens, t, k)
        cfg = DecoderConfig(beam_width=k**t, lm_weight=0.6, length_bonus=0.05)
        if decode(lat, char_lm, cfg).tokens == _exhaustive_best(lat, char_lm, cfg):
            exhaustive_ok += 1
    greedy_ok = 0
    cfg0 = DecoderConfig(beam_width=8, lm_weight=0.0)
    for _ in range(500):
        lat = _random_lattice(rng, tokens, rng.randint(1, 7), rng.randint(1, 6))
        if decode(lat, char_lm, cfg0).tokens == greedy_tokens(lat):
            greedy_ok += 1
    ok = exhaustive_ok == 500 and greedy_ok == 500
    report(4, ok, f"exhaustive match {exhaustive_ok}/500, alpha=0 greedy match {greedy_ok}/500 (both must be exact)")


# -- criterion 5: QWK correctness ------------------------------------------------------


def test_criterion_5_qwk():
    rng = Rng(11)
    max_err = 0.0
    for _ in range(1000):
        n = rng.randint(2, 7)
        length = rng.randint(2, 50)
        human = tuple(rng.randint(0, n) for _ in range(length))
        system = tuple(rng.randint(0, n) for _ in range(length))
        got = qwk(RatingPair(system, human, n))
        max_err = max(max_err, abs(got - qwk_double_loop(human, system, n)))
    identical = qwk(RatingPair((0, 1, 2, 3), (0, 1, 2, 3), 4))
    ok = max_err <= 1e-12 and identical == 1.0
    report(5, ok, f"1000 random pairs, max |dk|={max_err:.2e} (cap 1e-12); kappa(identical)={identical}")


# -- criterion 6: fine-tuning direction ------------------------------------------------


def test_criterion_6_finetune_direction(bundle, trained):
    labels = bundle.exam_test.labels
    pre = rec.ensemble_predict_batch(trained["pretrained"], bundle.exam_test.images)
    ft = rec.ensemble_predict_batch(trained["finetuned"], bundle.exam_test.images)
    acc_pre = float((pre.argmax(1) == labels).mean())
    acc_ft = float((ft.argmax(1) == labels).mean())
    wall = trained["pretrain_wall"] + trained["finetune_wall"]
    gap = (acc_ft - acc_pre) * 100
    ok = gap >= 10.0 and acc_ft >= 0.95 and wall < 1800
    report(6, ok, f"pre-only={acc_pre:.4f} fine-tuned={acc_ft:.4f} gap={gap:.1f}pts "
                  f"(need >=10 and ft>=0.95), train wall={wall:.0f}s (cap 1800)")
    # The domain shift really is a shift: pretrain-only models score strictly
    # lower on the shifted test set than on their own in-domain test set, and
    # every member individually gains at least 10 points from fine-tuning.
    in_domain = float((rec.ensemble_predict_batch(trained["pretrained"],
                                                  bundle.pretrain_test.images)
                       .argmax(1) == bundle.pretrain_test.labels).mean())
    assert acc_pre < in_domain
    for before, after in zip(trained["pretrained"].members, trained["finetuned"].members):
        acc_b = float((rec.predict_batch(before, bundle.exam_test.images).argmax(1) == labels).mean())
        acc_a = float((rec.predict_batch(after, bundle.exam_test.images).argmax(1) == labels).mean())
        assert acc_a - acc_b >= 0.10, (acc_b, acc_a)


def test_extra_ensemble_not_worse_than_weakest_member(bundle, trained):
    labels = bundle.exam_test.labels
    member_accs = [float((rec.predict_batch(m, bundle.exam_test.images).argmax(1) == labels).mean())
                   for m in trained["finetuned"].members]
    ens = float((rec.ensemble_predict_batch(trained["finetuned"], bundle.exam_test.images)
                 .argmax(1) == labels).mean())
    assert ens >= min(member_accs), (ens, member_accs)


def test_extra_train_loss_decreases_first_three_epochs(trained):
    for history in trained["histories"]:
        losses = [h["train_loss"] for h in history[:3]]
        assert losses[0] > losses[1] > losses[2], losses


def test_extra_translation_robustness(bundle, trained):
    model = trained["finetuned"].members[0]
    images = bundle.exam_test.images
    labels = bundle.exam_test.labels
    probs = rec.predict_batch(model, images)
    correct = np.flatnonzero(probs.argmax(1) == labels)[:200]
    shifted = np.full_like(images[correct], 255)
    shifted[:, :, 1:] = images[correct][:, :, :-1]
    moved = rec.predict_batch(model, shifted)
    stable = float((moved.argmax(1) == labels[correct]).mean())
    assert stable >= 0.9, stable


def test_extra_bootstrap_accuracy(bundle):
    corpus = bundle.pretrain_train
    per_class: dict[int, int] = {}
    seed_idx = []
    for i, label in enumerate(corpus.labels):
        if per_class.get(int(label), 0) < 10:
            per_class[int(label)] = per_class.get(int(label), 0) + 1
            seed_idx.append(i)
    rest = sorted(set(range(len(corpus))) - set(seed_idx))
    from inkgrade.synthgen import Dataset

    small = Dataset(corpus.images[seed_idx], corpus.labels[seed_idx], corpus.alphabet)
    spec = rec.default_ensemble_specs(len(corpus.alphabet))[0]
    _, result = rec.bootstrap_labels(small, corpus.images[rest], spec,
                                     AdamConfig(lr=2e-3), epochs=15, seed=0)
    acc = float((result.labels == corpus.labels[rest]).mean())
    assert acc >= 0.8, acc


# -- criterion 7: LM rescue direction ---------------------------------------------------


def _sheet_lattices(sheet, truth, ensemble, k):
    segs = segment_sheet(sheet, SEG_CFG)
    assert len(segs) == len(truth.blocks)
    out = []
    for seg, tb in zip(segs, truth.blocks):
        filled = [img.pixels for img, blank in zip(seg.line.cells, seg.line.blanks)
                  if not blank]
        probs = rec.ensemble_predict_batch(ensemble, np.stack(filled)) if filled else []
        lattice = lattice_from_posteriors(probs, seg.line.blanks, ensemble.alphabet,
                                          DecoderConfig(k=k))
        out.append((lattice, tb.text))
    return out


def test_criterion_7_lm_rescue(atlas, language, bundle, trained, char_lm):
    rng = Rng(555)
    pairs = []
    for i in range(50):
        text = sample_sentence(language, rng, 58)
        spec = SheetSpec((BlockSpec(6, 10),), (text,))
        sheet, truth = generate_sheet(spec, atlas, EXAM_AUG, seed=70_000 + i)
        pairs.extend(_sheet_lattices(sheet, truth, trained["pretrained"], DEC_CFG.k))
    greedy_pairs = [("".join(greedy_tokens(lat)), text) for lat, text in pairs]
    decoded_pairs = [("".join(decode(lat, char_lm, DEC_CFG).tokens), text)
                     for lat, text in pairs]
    acc_greedy = corpus_char_accuracy(greedy_pairs)
    acc_decoded = corpus_char_accuracy(decoded_pairs)
    gain = (acc_decoded - acc_greedy) * 100
    ok = gain >= 2.0
    report(7, ok, f"greedy={acc_greedy:.4f} beam+LM={acc_decoded:.4f} gain={gain:.1f}pts (need >=2)")


# -- criterion 8: scoring quality and robustness -----------------------------------------


@pytest.fixture(scope="module")
def rubric_split(language):
    items = make_rubric_corpus(language, 2000, seed=SEED)
    return sc.split_dataset(items, seed=SEED)


@pytest.fixture(scope="module")
def scorer_params(rubric_split):
    cfg = sc.ScorerConfig(d_model=64, n_layers=4, n_heads=4, max_len=64, n_ranks=4,
                          lr=2e-3, batch_size=16, epochs=5, seed=SEED)
    params, _ = sc.train_scorer(cfg, rubric_split)
    return params


def test_criterion_8_scoring(atlas, language, rubric_split, scorer_params, trained, char_lm):
    test_items = rubric_split.subset("test")
    truth_ranks = tuple(r for _, r in test_items)
    clean_pred = sc.score_answers(scorer_params, [t for t, _ in test_items])
    clean_qwk = qwk(RatingPair(tuple(clean_pred), truth_ranks, 4))

    recognized = []
    text_pairs = []
    for i, (text, _) in enumerate(test_items):
        spec = SheetSpec((BlockSpec(6, 10),), (text,))
        sheet, truth = generate_sheet(spec, atlas, EXAM_AUG, seed=90_000 + i)
        (lattice, ref_text), = _sheet_lattices(sheet, truth, trained["finetuned"], DEC_CFG.k)
        hyp = "".join(decode(lattice, char_lm, DEC_CFG).tokens)
        recognized.append(hyp)
        text_pairs.append((hyp, ref_text))
    cer = 1.0 - corpus_char_accuracy(text_pairs)
    noisy_pred = sc.score_answers(scorer_params, recognized)
    noisy_qwk = qwk(RatingPair(tuple(noisy_pred), truth_ranks, 4))
    drop = clean_qwk - noisy_qwk
    ok = clean_qwk >= 0.8 and drop <= 0.05 and cer < 0.15
    report(8, ok, f"clean QWK={clean_qwk:.4f} (need >=0.8), pipeline CER={cer*100:.2f}%, "
                  f"pipeline QWK={noisy_qwk:.4f}, degradation={drop:.4f} (cap 0.05)")


# -- criterion 9: reproducibility ---------------------------------------------------------


TINY_CFG = """
[run]
seed = 5
out_dir = "{out}"

[synthgen]
n_train = 60
n_test = 20
n_exam_train = 40
n_exam_test = 20
n_sheets = 2
sheet_rows = 6
sheet_cols = 10
lm_words = 400
rubric_answers = 60

[recognizer]
members = 1
epochs = 1
finetune_epochs = 1

[lm]
order = 3

[scorer]
d_model = 16
n_layers = 1
n_heads = 2
max_len = 48
epochs = 1
"""


def _hash_tree(root: Path) -> dict:
    import hashlib

    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and "manifests" not in p.parts:
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def test_criterion_9_reproducibility(tmp_path):
    from inkgrade.cli import main

    trees = []
    commands = ("generate", "train-recognizer", "finetune", "train-lm",
                "train-scorer", "pipeline")
    for name in ("a", "b"):
        out = tmp_path / name
        cfg_path = tmp_path / f"{name}.toml"
        cfg_path.write_text(TINY_CFG.format(out=str(out)))
        for command in commands:
            code = main([command, "--config", str(cfg_path), "--deterministic"])
            assert code == 0, command
        trees.append(_hash_tree(out))
    same_names = set(trees[0]) == set(trees[1])
    diffs = [k for k in trees[0] if trees[0].get(k) != trees[1].get(k)]
    ok = same_names and not diffs
    report(9, ok, f"{len(trees[0])} result files byte-identical across two runs"
                  + ("" if ok else f"; differing: {diffs[:5]}"))
