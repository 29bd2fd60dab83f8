import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oemb.evaluation import (McQuestion, annotation_ranks_from_scores, mc_accuracy, mc_answer,
                             median_rank, rank_annotation, rank_retrieval, recall_at_k,
                             retrieval_ranks_from_scores)
from oemb.model import JointModel, init_params
from oemb.objective import order_scores

import oracles


class TableScorer:
    """Looks scores up in a fixed matrix; captions and videos are row/column indices."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=float)

    def score_matrix(self, captions, videos):
        return self.scores[np.ix_(captions, videos)]


class EmbeddingScorer:
    """Captions and videos are already embeddings."""

    def score_matrix(self, captions, videos):
        return order_scores(np.asarray(captions), np.asarray(videos))


def test_rank_annotation_examples():
    assert rank_annotation(TableScorer([[-0.3]]), [0], [0]).tolist() == [1]
    # column 0 holds video 0's scores over captions 0..2; caption 0 is ground truth
    s = np.array([[-0.1, 0, 0], [-0.5, 0, 0], [-0.05, 0, 0]])
    assert annotation_ranks_from_scores(s)[0] == 2
    same = np.full((4, 4), -0.2)
    assert annotation_ranks_from_scores(same).tolist() == [1, 1, 1, 1]


def test_rank_retrieval_examples():
    assert rank_retrieval(TableScorer([[-0.3]]), [0], [0]).tolist() == [1]
    s = -np.ones((5, 5)) + np.eye(5)
    assert retrieval_ranks_from_scores(s).tolist() == [1] * 5
    with pytest.raises(ValueError):
        rank_retrieval(TableScorer(s), [], [])
    with pytest.raises(ValueError):
        rank_annotation(TableScorer(s), [0, 1], [0])


def test_random_embeddings_mean_rank():
    rng = np.random.default_rng(0)
    means = []
    for _ in range(1000):
        C = rng.random((100, 8))
        V = rng.random((100, 8))
        means.append(retrieval_ranks_from_scores(order_scores(C, V)).mean())
    assert abs(np.mean(means) - 50.5) < 3


def test_ranks_use_caption_as_first_argument():
    C = np.array([[0.8, 0.6], [0.6, 0.8]])
    V = np.array([[1.0, 0.0], [0.0, 1.0]])
    s = order_scores(C, V)
    np.testing.assert_array_equal(rank_retrieval(EmbeddingScorer(), V, C),
                                  retrieval_ranks_from_scores(s))
    np.testing.assert_array_equal(rank_annotation(EmbeddingScorer(), V, C),
                                  annotation_ranks_from_scores(s))


def test_recall_and_median_examples():
    r = [1, 3, 12, 2]
    assert recall_at_k(r, 5) == 75.0
    assert recall_at_k(r, 12) == 100.0
    assert recall_at_k([1, 1, 1], 1) == 100.0
    assert median_rank([7]) == 7
    assert median_rank(r) == 2.5
    assert median_rank([5, 5, 5]) == 5
    for f in (lambda: recall_at_k([], 1), lambda: median_rank([]), lambda: recall_at_k(r, 0)):
        with pytest.raises(ValueError):
            f()


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=40), st.integers(1, 50))
def test_metrics_match_sort_oracle(ranks, k):
    srt = sorted(ranks)
    n = len(srt)
    med = srt[n // 2] if n % 2 else (srt[n // 2 - 1] + srt[n // 2]) / 2
    assert median_rank(ranks) == med
    assert recall_at_k(ranks, k) == pytest.approx(100.0 * sum(1 for x in srt if x <= k) / n)
    assert recall_at_k(ranks, k) <= recall_at_k(ranks, k + 1)
    assert recall_at_k(ranks, max(ranks)) == 100.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 20))
def test_rank_functions_match_full_sort(seed, n):
    s = np.random.default_rng(seed).normal(size=(n, n))
    ann = annotation_ranks_from_scores(s)
    ret = retrieval_ranks_from_scores(s)
    for i in range(n):
        assert ann[i] == oracles.ranks_by_sort(s[:, i].tolist(), i)
        assert ret[i] == oracles.ranks_by_sort(s[i].tolist(), i)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 12))
def test_common_permutation_permutes_ranks(seed, n):
    rng = np.random.default_rng(seed)
    C, V = rng.random((n, 4)), rng.random((n, 4))
    perm = rng.permutation(n)
    m = EmbeddingScorer()
    np.testing.assert_array_equal(rank_annotation(m, V[perm], C[perm]),
                                  rank_annotation(m, V, C)[perm])
    np.testing.assert_array_equal(rank_retrieval(m, V[perm], C[perm]),
                                  rank_retrieval(m, V, C)[perm])


def test_model_ranks_with_real_model():
    rng = np.random.default_rng(0)
    model = JointModel(init_params("m3", 3, 4, 5, 2, rng))
    caps = [rng.normal(size=(2, 3)) for _ in range(6)]
    vids = [rng.normal(size=(3, 4)) for _ in range(6)]
    s = model.score_matrix(caps, vids)
    for i in range(6):
        for j in range(6):
            assert s[i, j] == pytest.approx(model.score_matrix([caps[i]], [vids[j]])[0, 0])
    assert rank_annotation(model, vids, caps).shape == (6,)


# multiple choice ---------------------------------------------------------

class ChoiceScorer:
    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=float)

    def score_matrix(self, captions, videos):
        return self.scores[list(captions)][:, None]


def test_mc_answer_examples():
    assert mc_answer(ChoiceScorer([-0.2, -0.01, -3, -1, -0.5]), "v", range(5)) == 1
    assert mc_answer(ChoiceScorer([-1.0] * 5), "v", range(5)) == 0
    with pytest.raises(ValueError):
        mc_answer(ChoiceScorer([0.0] * 4), "v", range(4))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-1000, 0), min_size=5, max_size=5))
def test_mc_answer_monotone_invariant(raw):
    scores = np.array(raw) / 100.0
    a = mc_answer(ChoiceScorer(scores), "v", range(5))
    b = mc_answer(ChoiceScorer(np.exp(scores) * 3 + 1), "v", range(5))
    assert a == b


def test_mc_accuracy():
    q = McQuestion("v", ("a", "b", "c", "d", "e"), 2)
    caps = {k: np.eye(3)[[i % 3]] for i, k in enumerate("abcde")}

    class Fixed:
        def score_matrix(self, captions, videos):
            return np.array([[-1.0], [-1.0], [0.0], [-1.0], [-2.0]])

    assert mc_accuracy(Fixed(), [q], {"v": np.ones((1, 3))}, caps) == 100.0
    with pytest.raises(ValueError):
        mc_accuracy(Fixed(), [], {}, {})


def test_random_scorer_on_large_test():
    """Uniformly random choice over 10053 questions lands near 20%."""
    rng = np.random.default_rng(0)
    answers = rng.integers(5, size=10053)
    picks = rng.integers(5, size=10053)
    acc = 100.0 * np.mean(answers == picks)
    assert abs(acc - 20.0) <= 1.2
    # always picking index 0 against uniformly shuffled answers
    assert abs(100.0 * np.mean(answers == 0) - 20.0) <= 1.2
