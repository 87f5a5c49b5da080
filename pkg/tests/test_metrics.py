import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bleu_oracle, chrf_oracle, spearman_oracle
from sltkit.errors import DataError, DegenerateInput, EmptyCorpus, LengthMismatch
from sltkit.metrics import (
    CSV_HEADER, EvalReport, EvalRow, average_ranks, bleu, chrf, comparison_csv, read_report,
    render_table, spearman, stage_correlations,
)

words = st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=8).map(" ".join)
corpora = st.integers(1, 4).flatmap(lambda n: st.tuples(st.lists(words, min_size=n, max_size=n),
                                                       st.lists(words, min_size=n, max_size=n)))
texts = st.text(alphabet="ab c", max_size=10)
char_corpora = st.integers(1, 4).flatmap(lambda n: st.tuples(st.lists(texts, min_size=n, max_size=n),
                                                            st.lists(texts, min_size=n, max_size=n)))


# -- BLEU ---------------------------------------------------------------------

def test_bleu_identical_corpus_scores_100():
    refs = ["w01 w02 w03", "x04 x05"]
    assert bleu(refs, refs) == 100.0


def test_bleu_short_hypothesis_brevity_penalty():
    assert bleu(["a b c d"], ["a b c d e"]) == pytest.approx(100 * math.exp(-0.25), abs=1e-9)
    assert bleu(["a b c d"], ["a b c d e"]) == pytest.approx(77.88, abs=0.01)


def test_bleu_empty_hypothesis_is_zero():
    assert bleu([""], ["a b"]) == 0.0


def test_bleu_frozen_value():
    # frozen from the brute-force oracle: (5/6 * 3/5 * 2/4 * 1/3) ** (1/4) * 100
    got = bleu(["the cat sat on the mat"], ["the cat sat on mat"])
    assert got == pytest.approx(100 * (1 / 12) ** 0.25, abs=1e-9)
    assert got == pytest.approx(53.7284965911771, abs=1e-9)


def test_bleu_zero_match_order_uses_epsilon():
    # unigram 2/2, bigram 0/1 -> eps 0.1/1; BP 1
    assert bleu(["a b"], ["b a"]) == pytest.approx(100 * math.sqrt(1.0 * 0.1), abs=1e-9)


def test_bleu_rejects_bad_input():
    with pytest.raises(LengthMismatch):
        bleu(["a"], [])
    with pytest.raises(EmptyCorpus):
        bleu([], [])


@settings(max_examples=250, deadline=None)
@given(corpora)
def test_bleu_matches_oracle(pair):
    hyps, refs = pair
    assert bleu(hyps, refs) == pytest.approx(bleu_oracle(hyps, refs), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(corpora)
def test_bleu_in_range(pair):
    assert 0.0 <= bleu(*pair) <= 100.0


# -- ChrF ---------------------------------------------------------------------

def test_chrf_identical_is_100():
    assert chrf(["abc def"], ["abc def"]) == pytest.approx(100.0)


def test_chrf_empty_hypothesis_is_zero():
    assert chrf([""], ["abc"]) == 0.0


def test_chrf_abcd_vs_abce_matches_oracle():
    got = chrf(["abcd"], ["abce"])
    assert got == pytest.approx(chrf_oracle(["abcd"], ["abce"]), abs=1e-9)
    # orders 1..3 present: P = R = (3/4 + 2/3 + 1/2) / 3 + order 4 (0/1), averaged over 4 orders
    p = (3 / 4 + 2 / 3 + 1 / 2 + 0) / 4
    assert got == pytest.approx(100 * p, abs=1e-9)


def test_chrf_collapses_whitespace():
    assert chrf(["a  b"], ["a b"]) == pytest.approx(100.0)


@settings(max_examples=250, deadline=None)
@given(char_corpora)
def test_chrf_matches_oracle(pair):
    hyps, refs = pair
    assert chrf(hyps, refs) == pytest.approx(chrf_oracle(hyps, refs), abs=1e-9)


# -- Spearman -----------------------------------------------------------------

def test_spearman_monotone_and_antitone():
    assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [30, 20, 10]) == pytest.approx(-1.0)


def test_spearman_ties_match_oracle():
    x, y = [1, 2, 2, 4], [1, 3, 2, 4]
    assert spearman(x, y) == pytest.approx(spearman_oracle(x, y), abs=1e-12)
    # ranks x: 1, 2.5, 2.5, 4; y: 1, 3, 2, 4
    assert spearman(x, y) == pytest.approx(4.5 / math.sqrt(4.5 * 5.0), abs=1e-12)


def test_average_ranks_ties():
    assert list(average_ranks([3, 1, 3, 2])) == [3.5, 1.0, 3.5, 2.0]


def test_spearman_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        spearman([1, 2], [1, 2])
    with pytest.raises(DegenerateInput):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(LengthMismatch):
        spearman([1, 2, 3], [1, 2])


@settings(max_examples=250, deadline=None)
@given(st.integers(3, 9).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 5), min_size=n, max_size=n), st.lists(st.integers(0, 5), min_size=n, max_size=n))))
def test_spearman_matches_oracle(pair):
    x, y = pair
    if len(set(x)) == 1 or len(set(y)) == 1:
        with pytest.raises(DegenerateInput):
            spearman(x, y)
        return
    assert spearman(x, y) == pytest.approx(spearman_oracle(x, y), abs=1e-9)


# -- reports ------------------------------------------------------------------

def _rows(stage, scores):
    return [EvalRow("toy", f"sgn->l{i}", stage, 0, s, s) for i, s in enumerate(scores)]


def test_report_csv_round_trip(tmp_path):
    rep = EvalReport(_rows("pretrain", [10.0, 20.5]))
    path = tmp_path / "r.csv"
    rep.write(path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    back = read_report(path)
    assert [(r.direction, r.bleu) for r in back.rows] == [("sgn->l0", 10.0), ("sgn->l1", 20.5)]
    rep.write(path, append=True)
    assert len(read_report(path).rows) == 4


def test_eval_row_validates():
    with pytest.raises(DataError):
        EvalRow("toy", "a->b", "dev", 0, 1.0, 1.0)
    with pytest.raises(DataError):
        EvalRow("toy", "a->b", "pretrain", 0, 101.0, 1.0)


def test_identical_stage_scores_correlate_perfectly():
    rep = EvalReport(_rows("pretrain", [1.0, 5.0, 3.0]) + _rows("finetune", [1.0, 5.0, 3.0]))
    corr = stage_correlations(rep)
    assert [c.rho for c in corr] == [pytest.approx(1.0), pytest.approx(1.0)]


def test_too_few_shared_rows_omits_correlation():
    rep = EvalReport(_rows("pretrain", [1.0, 5.0]) + _rows("finetune", [1.0, 5.0]))
    corr = stage_correlations(rep)
    assert all(c.rho is None for c in corr)
    assert "omitted" in corr[0].render()


def test_constant_scores_give_undefined_correlation():
    rep = EvalReport(_rows("pretrain", [2.0, 2.0, 2.0]) + _rows("finetune", [1.0, 5.0, 3.0]))
    assert all(c.rho is None for c in stage_correlations(rep))


def test_table_has_learned_metric_column():
    rep = EvalReport(_rows("pretrain", [1.0]) + _rows("finetune", [2.0]))
    table = render_table(rep)
    assert "learned-metric" in table.splitlines()[0]
    assert "unavailable" in table.splitlines()[1]
    assert comparison_csv(rep).splitlines()[1] == "toy,sgn->l0,1.0000,2.0000,1.0000,2.0000"
