import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fxfusion.synth import gen_topic_corpus
from fxfusion.topics import (
    TopicModel, TopicModelError, coherence, fit_lda, select_topic_count, tokenize, tokenize_corpus, topic_purity,
)


def test_tokenize():
    assert tokenize("The EUR, rose!  sharply", stopwords=["the"]) == ["eur", "rose", "sharply"]


def test_tokenize_corpus_min_count():
    bags = tokenize_corpus(["a b c", "a b", "a"], min_count=2)
    assert bags == [["a", "b"], ["a", "b"], ["a"]]


@pytest.fixture(scope="module")
def planted():
    bags, labels = gen_topic_corpus(300, 3, seed=11)
    return bags, labels


def test_planted_topics_recovered(planted):
    bags, labels = planted
    model = fit_lda(bags, 3, iterations=150, seed=0)
    assert topic_purity(model.assignment, labels) > 0.8


def test_model_invariants(planted):
    bags, _ = planted
    model = fit_lda(bags, 4, iterations=5, seed=3)
    assert np.allclose(model.phi.sum(axis=1), 1.0, atol=1e-9)
    assert np.allclose(model.theta.sum(axis=1), 1.0, atol=1e-9)
    assert set(model.assignment.tolist()) <= {1, 2, 3, 4}
    assert model.alpha == 50.0 / 4 and model.beta == 0.01
    assert model.word_counts.sum() == sum(len(b) for b in bags)


@settings(max_examples=20)
@given(st.integers(2, 6), st.integers(1, 8), st.integers(0, 2**16))
def test_rows_sum_to_one_any_iterations(K, iters, seed):
    bags, _ = gen_topic_corpus(20, 2, seed=seed, doc_length=(3, 8))
    model = fit_lda(bags, K, iterations=iters, seed=seed)
    assert np.all(np.abs(model.phi.sum(axis=1) - 1) <= 1e-9)
    assert np.all(np.abs(model.theta.sum(axis=1) - 1) <= 1e-9)


def test_fit_is_deterministic(planted):
    bags, _ = planted
    a = fit_lda(bags, 3, iterations=20, seed=5)
    b = fit_lda(bags, 3, iterations=20, seed=5)
    assert np.array_equal(a.phi, b.phi) and np.array_equal(a.assignment, b.assignment)


def test_fit_errors():
    with pytest.raises(TopicModelError):
        fit_lda([["a"]], 1)
    with pytest.raises(TopicModelError):
        fit_lda([], 2)
    with pytest.raises(TopicModelError):
        fit_lda([[], []], 2)


def test_planted_coherence_beats_random(planted):
    bags, labels = planted
    model = fit_lda(bags, 3, iterations=100, seed=0)
    rng = np.random.default_rng(0)
    shuffled = TopicModel(3, rng.dirichlet(np.ones(len(model.vocab)), 3), model.theta, model.assignment,
                          model.vocab, rng.integers(1, 5, model.word_counts.shape), model.alpha, model.beta)
    assert coherence(model, bags)[1] > coherence(shuffled, bags)[1]


def test_coherence_single_topic_finite():
    bags = [["a", "b"], ["a", "c"], ["b", "c", "a"]]
    model = fit_lda(bags, 2, iterations=10, seed=0)
    scores, mean = coherence(model, bags, top_n=3)
    assert np.all(np.isfinite(scores)) and np.isfinite(mean)


def test_coherence_hand_example():
    # topic 1 top words by phi: x then y; D(x)=2, D(x,y)=1 -> log(2/2) = 0
    vocab = ["x", "y"]
    phi = np.array([[0.7, 0.3], [0.4, 0.6]])
    counts = np.array([[3, 1], [1, 2]])
    m = TopicModel(2, phi, np.full((3, 2), 0.5), np.array([1, 1, 2]), vocab, counts, 25.0, 0.01)
    scores, _ = coherence(m, [["x"], ["x", "y"], ["y"]], top_n=2)
    assert scores[0] == pytest.approx(np.log(2 / 2))
    assert scores[1] == pytest.approx(np.log(2 / 2))


def test_select_topic_count_ties_and_range(planted):
    bags, _ = planted
    K, curve = select_topic_count(bags, [3], iterations=10)
    assert K == 3 and list(curve) == [3]
    with pytest.raises(TopicModelError):
        select_topic_count(bags, [1, 2])


def test_topic_purity_permutation():
    assert topic_purity([2, 2, 1, 1], [1, 1, 2, 2]) == 1.0
    assert topic_purity([1, 1, 1, 1], [1, 1, 2, 2]) == 0.5
