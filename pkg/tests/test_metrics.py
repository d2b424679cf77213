import numpy as np
import pytest

from inkgrade.errors import EmptyReferenceError
from inkgrade.metrics import (
    RatingPair,
    agreement_label,
    char_accuracy,
    confusion,
    corpus_char_accuracy,
    levenshtein,
    qwk,
)
from inkgrade.rng import Rng

from oracles import levenshtein_dp, qwk_double_loop


# -- qwk -------------------------------------------------------------------------


def test_qwk_identical_sequences():
    assert qwk(RatingPair((0, 1, 2, 0, 1, 2), (0, 1, 2, 0, 1, 2), 3)) == 1.0


def test_qwk_hand_case_matches_brute_force():
    human = (0, 0, 1, 1, 2, 2)
    system = (0, 1, 1, 2, 2, 0)
    got = qwk(RatingPair(system, human, 3))
    assert got == pytest.approx(qwk_double_loop(human, system, 3), abs=1e-12)


def test_qwk_matches_brute_force_on_random_pairs():
    rng = Rng(11)
    for _ in range(300):
        n = rng.randint(2, 6)
        length = rng.randint(2, 40)
        human = tuple(rng.randint(0, n) for _ in range(length))
        system = tuple(rng.randint(0, n) for _ in range(length))
        got = qwk(RatingPair(system, human, n))
        expect = qwk_double_loop(human, system, n)
        assert got == pytest.approx(expect, abs=1e-12)


def test_qwk_relabel_symmetry():
    rng = Rng(12)
    n = 4
    human = tuple(rng.randint(0, n) for _ in range(60))
    system = tuple(rng.randint(0, n) for _ in range(60))
    direct = qwk(RatingPair(system, human, n))
    flipped = qwk(RatingPair(tuple(n - 1 - s for s in system),
                             tuple(n - 1 - h for h in human), n))
    assert direct == pytest.approx(flipped, abs=1e-12)


def test_qwk_both_raters_constant_equal():
    assert qwk(RatingPair((2, 2, 2), (2, 2, 2), 4)) == 1.0


def test_agreement_labels():
    assert agreement_label(0.95) == "almost perfect"
    assert agreement_label(0.7) == "substantial"


# -- edit distance ------------------------------------------------------------------


def test_levenshtein_trivial_cases():
    assert levenshtein("", "abc") == 3
    assert levenshtein("abc", "") == 3
    assert levenshtein("kitten", "sitting") == 3


def test_levenshtein_matches_dp_oracle_and_symmetry():
    rng = Rng(13)
    alphabet = "abcx"
    for _ in range(100):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 12)))
        d = levenshtein(a, b)
        assert d == levenshtein_dp(a, b)
        assert d == levenshtein(b, a)


def test_levenshtein_triangle_inequality():
    rng = Rng(14)
    for _ in range(50):
        strs = ["".join(rng.choice("abc") for _ in range(rng.randint(0, 8)))
                for _ in range(3)]
        a, b, c = strs
        assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_char_accuracy():
    assert char_accuracy("abc", "abc") == 1.0
    assert char_accuracy("ab", "ac") == 0.5
    assert char_accuracy("xyz", "a") == 0.0  # floored
    with pytest.raises(EmptyReferenceError):
        char_accuracy("a", "")


def test_char_accuracy_is_one_iff_equal():
    rng = Rng(15)
    for _ in range(50):
        a = "".join(rng.choice("ab") for _ in range(rng.randint(1, 6)))
        b = "".join(rng.choice("ab") for _ in range(rng.randint(1, 6)))
        acc = char_accuracy(a, b)
        assert 0.0 <= acc <= 1.0
        assert (acc == 1.0) == (a == b)


def test_corpus_char_accuracy_pools_distances():
    pairs = [("ab", "ac"), ("xy", "xy")]
    # one substitution over 4 reference characters
    assert corpus_char_accuracy(pairs) == 0.75


# -- confusion ---------------------------------------------------------------------


def test_confusion_diagonal_when_all_correct():
    pairs = [(1, 1), (0, 0), (2, 2), (1, 1)]
    m = confusion(pairs, 3)
    assert np.array_equal(m.counts, np.diag([1, 2, 1]))


def test_confusion_empty():
    assert confusion([], 3).counts.sum() == 0


def test_confusion_row_sums_are_reference_counts():
    rng = Rng(16)
    pairs = [(rng.randint(0, 4), rng.randint(0, 4)) for _ in range(100)]
    m = confusion(pairs, 4)
    ref_counts = np.bincount([r for _, r in pairs], minlength=4)
    assert np.array_equal(m.counts.sum(axis=1), ref_counts)
    assert m.total == 100
