import math
from math import comb

import numpy as np
import pytest

from pairvae import tasks
from pairvae.errors import ContractError
from pairvae.model import Arch, init_model
from pairvae.synthdata import SynthConfig, generate_dataset
from pairvae.tasks import (
    CmlQuery,
    RetrievalItem,
    best_window_start,
    build_retrieval_database,
    cml_distance,
    evaluate_cml,
    evaluate_retrieval,
    localize,
    make_cml_queries,
    mean_paired_posterior_w2,
    pca_power_iteration,
    random_ranking_mrr,
)

ARCH = Arch(audio_dim=2, visual_dim=3, latent_dim=2, hidden_dim=4)


def _stub_model(mu_a, lv_a, mu_v, lv_v):
    """Zero-weight model whose posteriors come entirely from the head biases;
    the zeroed decoder generates the same (zero) pair from any latent."""
    params = init_model(ARCH, seed=0)
    for tape in (params.audio_encoder, params.visual_encoder, params.decoder):
        for _, tensor in tape.items():
            tensor.data[:] = 0.0
    params.audio_encoder["b1"].data[:] = np.concatenate([mu_a, lv_a])
    params.visual_encoder["b1"].data[:] = np.concatenate([mu_v, lv_v])
    return params


# ---- segment distance ---------------------------------------------------------


def test_cml_distance_zero_for_identical_posteriors_and_generations():
    params = _stub_model(np.array([0.5, -0.2]), np.zeros(2), np.array([0.5, -0.2]), np.zeros(2))
    assert cml_distance(params, np.zeros(2), np.zeros(3)) == 0.0


def test_cml_distance_stub_matches_hand_computed_w2():
    mu_a, mu_v = np.array([1.0, 0.0]), np.array([0.0, 0.0])
    lv_a, lv_v = np.zeros(2), np.array([2.0 * math.log(2.0), 0.0])
    params = _stub_model(mu_a, lv_a, mu_v, lv_v)
    # decoder is zero, so the distance is the W2 term alone:
    # sqrt(|mu_a - mu_v|^2 + (sigma diffs)^2) = sqrt(1 + 1) with sigma = (1,1) vs (2,1)
    assert math.isclose(cml_distance(params, np.ones(2), np.ones(3)), math.sqrt(2.0), rel_tol=1e-12)


def test_cml_distance_symmetric_under_swapped_stub_posteriors():
    mu1, lv1 = np.array([0.7, -0.1]), np.array([0.3, 0.0])
    mu2, lv2 = np.array([-0.4, 0.2]), np.array([0.0, -0.5])
    d12 = cml_distance(_stub_model(mu1, lv1, mu2, lv2), np.ones(2), np.ones(3))
    d21 = cml_distance(_stub_model(mu2, lv2, mu1, lv1), np.ones(2), np.ones(3))
    assert math.isclose(d12, d21, rel_tol=1e-12)


def test_cml_distance_matches_straight_line_oracle():
    params = init_model(ARCH, seed=13)
    rng = np.random.default_rng(14)
    a, v = rng.standard_normal(2), rng.standard_normal(3)

    def enc(tape, x):
        h = np.tanh(x @ tape["W0"].data + tape["b0"].data)
        out = h @ tape["W1"].data + tape["b1"].data
        return out[:2], np.clip(out[2:], -10.0, 10.0)

    def dec(z):
        tape = params.decoder
        h = np.tanh(z @ tape["W0"].data + tape["b0"].data)
        return h @ tape["W1"].data + tape["b1"].data

    mean_a, lv_a = enc(params.audio_encoder, a)
    mean_v, lv_v = enc(params.visual_encoder, v)
    w2 = math.sqrt(
        np.sum((mean_a - mean_v) ** 2) + np.sum((np.exp(lv_a / 2) - np.exp(lv_v / 2)) ** 2)
    )
    expected = w2 + np.linalg.norm(dec(mean_a) - dec(mean_v))
    assert math.isclose(cml_distance(params, a, v), expected, rel_tol=1e-12)


def test_distance_table_agrees_with_scalar_distance():
    params = init_model(ARCH, seed=3)
    rng = np.random.default_rng(4)
    query = CmlQuery(
        direction="A2V",
        query_segments=rng.standard_normal((3, 2)),
        target_sequence=rng.standard_normal((6, 3)),
        true_start=1,
    )
    table = tasks._distance_table(params, query, use_sigma=True)
    for t in range(6):
        for s in range(3):
            expected = cml_distance(params, query.query_segments[s], query.target_sequence[t])
            assert math.isclose(table[t, s], expected, rel_tol=1e-10)


# ---- localization -------------------------------------------------------------


def _index_query(direction, l, t_total, true_start=0):
    # segment vectors carry their own index so a stub distance can look up a table
    return CmlQuery(
        direction=direction,
        query_segments=np.arange(l, dtype=float).reshape(-1, 1),
        target_sequence=np.arange(t_total, dtype=float).reshape(-1, 1),
        true_start=true_start,
    )


def test_full_length_query_has_single_window():
    query = _index_query("A2V", l=7, t_total=7)
    assert localize(None, query, distance_fn=lambda q, t: 1.0) == 0


def test_localize_finds_unique_minimum():
    rng = np.random.default_rng(5)
    table = rng.uniform(1.0, 2.0, size=(8, 3))
    for s in range(3):
        table[2 + s, s] = 0.0  # plant the optimum at start 2
    query = _index_query("A2V", l=3, t_total=8)
    predicted = localize(None, query, distance_fn=lambda q, t: table[int(t[0]), int(q[0])])
    assert predicted == 2


def test_localize_breaks_ties_toward_smallest_start():
    query = _index_query("A2V", l=3, t_total=9)
    assert localize(None, query, distance_fn=lambda q, t: 0.5) == 0


def test_localize_agrees_with_exhaustive_oracle_on_random_tables():
    rng = np.random.default_rng(6)
    for trial in range(30):
        t_total = int(rng.integers(2, 10))
        l = int(rng.integers(1, t_total + 1))
        # quantized values produce frequent exact ties
        table = rng.integers(0, 4, size=(t_total, l)).astype(float)

        best, best_score = None, None
        for t in range(t_total - l + 1):
            score = sum(table[t + s, s] for s in range(l))
            if best_score is None or score < best_score:
                best, best_score = t, score

        query = _index_query("A2V", l=l, t_total=t_total)
        predicted = localize(None, query, distance_fn=lambda q, t: table[int(t[0]), int(q[0])])
        assert predicted == best
        assert 0 <= predicted <= t_total - l


def test_accuracy_invariant_under_positive_affine_distance_transform():
    rng = np.random.default_rng(7)
    table = rng.uniform(0.0, 3.0, size=(9, 4))
    query = _index_query("A2V", l=4, t_total=9)
    base = localize(None, query, distance_fn=lambda q, t: table[int(t[0]), int(q[0])])
    scaled = localize(None, query, distance_fn=lambda q, t: 2.5 * table[int(t[0]), int(q[0])] + 7.0)
    assert base == scaled


def test_accuracy_invariant_under_monotone_transform_for_unit_queries():
    rng = np.random.default_rng(8)
    table = rng.uniform(0.1, 3.0, size=(6, 1))
    query = _index_query("A2V", l=1, t_total=6)
    base = localize(None, query, distance_fn=lambda q, t: table[int(t[0]), 0])
    warped = localize(None, query, distance_fn=lambda q, t: math.exp(table[int(t[0]), 0] ** 3))
    assert base == warped


def test_evaluate_cml_accuracy_arithmetic(monkeypatch):
    dataset = generate_dataset(
        SynthConfig(num_videos=10, categories=2, audio_dim=2, visual_dim=3, concept_dim=2, seed=9)
    )
    truth = {vid: dataset.videos[vid].event_start for vid in dataset.test_ids}

    monkeypatch.setattr(tasks, "localize", lambda params, query, **kw: query.true_start)
    report = evaluate_cml(None, dataset, "A2V")
    assert report.value == 1.0
    assert report.metric == "accuracy"
    assert len(report.per_query) == len(truth)

    # half right: miss every second query
    flips = {vid: i % 2 == 1 for i, vid in enumerate(sorted(truth))}
    calls = iter(sorted(truth))

    def half(params, query, **kw):
        vid = next(calls)
        return query.true_start + (1 if flips[vid] and query.true_start == 0 else -1 if flips[vid] else 0)

    monkeypatch.setattr(tasks, "localize", half)
    report = evaluate_cml(None, dataset, "A2V")
    expected = 1.0 - sum(flips.values()) / len(flips)
    assert math.isclose(report.value, expected, rel_tol=1e-12)


def test_query_len_fixed_truncates_to_event(monkeypatch):
    dataset = generate_dataset(
        SynthConfig(num_videos=6, categories=2, audio_dim=2, visual_dim=3, concept_dim=2, seed=10)
    )
    queries = make_cml_queries(dataset, "A2V", split="test", query_len="fixed:2")
    for vid, query in queries:
        assert len(query.query_segments) == min(2, dataset.videos[vid].event_length)


def test_cml_query_validation():
    with pytest.raises(ContractError):
        CmlQuery("A2V", np.ones((5, 2)), np.ones((3, 4)), true_start=0)  # l > T
    with pytest.raises(ContractError):
        CmlQuery("A2V", np.ones((2, 2)), np.ones((4, 3)), true_start=3)  # start + l > T
    with pytest.raises(ContractError):
        CmlQuery("sideways", np.ones((2, 2)), np.ones((4, 3)), true_start=0)


# ---- retrieval ----------------------------------------------------------------


def _database(categories):
    rng = np.random.default_rng(11)
    return [
        RetrievalItem(video_id=i, category=c, audio=rng.standard_normal(2), visual=rng.standard_normal(3))
        for i, c in enumerate(categories)
    ]


def test_mrr_of_engineered_ranks():
    # self is the only relevant item; plant it at ranks 1, 2, 4, 1, 1
    database = _database([0, 1, 2, 3, 4])
    scores = np.full((5, 5), 10.0)
    np.fill_diagonal(scores, [0.0, 1.0, 3.0, 0.0, 0.0])
    scores[1, 0] = 0.5  # one candidate beats query 1's self
    scores[2, 0], scores[2, 1], scores[2, 3] = 0.5, 1.0, 2.0  # three beat query 2's self
    report = evaluate_retrieval(None, database, "a-v", scores=scores)
    ranks = [q["first_relevant_rank"] for q in report.per_query]
    assert ranks == [1, 2, 4, 1, 1]
    assert math.isclose(report.value, (1.0 + 0.5 + 0.25 + 1.0 + 1.0) / 5.0, rel_tol=1e-12)
    # the documented three-query slice of the same arithmetic
    assert math.isclose(sum(1.0 / r for r in [1, 2, 4]) / 3.0, 0.5833, abs_tol=1e-4)


def test_mrr_is_one_when_nearest_neighbors_share_category():
    database = _database([0, 0, 1, 1, 2, 2])
    categories = np.array([item.category for item in database])
    scores = np.where(categories[:, None] == categories[None, :], 0.0, 1.0)
    for mode in ("a-a", "a-v", "v-a", "v-v"):
        report = evaluate_retrieval(None, database, mode, scores=scores)
        assert report.value == 1.0


def test_intra_modal_excludes_the_query_itself():
    database = _database([0, 0, 1, 1])
    scores = np.full((4, 4), 5.0)
    np.fill_diagonal(scores, 0.0)  # the query itself would always win
    scores[0, 2] = 1.0  # next-best for query 0 is the wrong category
    report = evaluate_retrieval(None, database, "a-a", scores=scores)
    assert report.per_query[0]["first_relevant_rank"] == 2


def test_singleton_category_is_flagged_in_intra_mode():
    database = _database([0, 0, 7])
    scores = np.zeros((3, 3))
    report = evaluate_retrieval(None, database, "v-v", scores=scores)
    flagged = [q for q in report.per_query if q["flagged"]]
    assert len(flagged) == 1
    assert flagged[0]["category"] == 7
    assert flagged[0]["reciprocal_rank"] == 0.0


def _exact_expected_mrr(n_candidates, m_relevant):
    def p_all_irrelevant(r):
        if r > n_candidates - m_relevant:
            return 0.0
        return comb(n_candidates - m_relevant, r) / comb(n_candidates, r)

    return sum(
        (p_all_irrelevant(r - 1) - p_all_irrelevant(r)) / r
        for r in range(1, n_candidates - m_relevant + 2)
    )


def test_random_ranking_mrr_matches_exact_expectation():
    categories = [c for c in range(8) for _ in range(5)]  # 40 items, balanced
    mc_cross = random_ranking_mrr(categories, intra=False, trials=1000, seed=12)
    assert abs(mc_cross - _exact_expected_mrr(40, 5)) < 0.02
    mc_intra = random_ranking_mrr(categories, intra=True, trials=1000, seed=13)
    assert abs(mc_intra - _exact_expected_mrr(39, 4)) < 0.02


def test_database_sampling_is_event_relevant_and_seeded():
    dataset = generate_dataset(
        SynthConfig(num_videos=10, categories=2, audio_dim=2, visual_dim=3, concept_dim=2, seed=15)
    )
    db1 = build_retrieval_database(dataset, "test", seed=3)
    db2 = build_retrieval_database(dataset, "test", seed=3)
    assert len(db1) == len(dataset.test_ids)
    for a, b in zip(db1, db2):
        assert a.video_id == b.video_id
        assert np.array_equal(a.audio, b.audio)
        video = dataset.videos[a.video_id]
        found = any(
            np.array_equal(a.audio, seg.audio) and seg.is_event for seg in video.segments
        )
        assert found


def test_small_database_rejected():
    with pytest.raises(ContractError):
        evaluate_retrieval(None, _database([0]), "a-v", scores=np.zeros((1, 1)))


# ---- PCA and exports -------------------------------------------------------------


def test_power_iteration_matches_2x2_eigendecomposition():
    rng = np.random.default_rng(16)
    for _ in range(10):
        a, b, c = rng.uniform(0.5, 3.0), rng.uniform(-1.0, 1.0), rng.uniform(0.5, 3.0)
        cov = np.array([[a, b], [b, c]])
        x = rng.multivariate_normal(np.zeros(2), cov, size=4000)

        _, components = pca_power_iteration(x, n_components=2, seed=1)
        sample_cov = (x - x.mean(0)).T @ (x - x.mean(0)) / x.shape[0]
        values, vectors = np.linalg.eigh(sample_cov)
        leading = vectors[:, np.argmax(values)]
        trailing = vectors[:, np.argmin(values)]
        assert min(np.linalg.norm(components[0] - leading), np.linalg.norm(components[0] + leading)) < 1e-6
        assert min(np.linalg.norm(components[1] - trailing), np.linalg.norm(components[1] + trailing)) < 1e-6


def test_pca_on_collinear_points_kills_second_component():
    rng = np.random.default_rng(17)
    direction = np.array([3.0, 4.0]) / 5.0
    x = np.outer(rng.standard_normal(200), direction)
    mean, components = pca_power_iteration(x, n_components=2, seed=2)
    projections = (x - mean) @ components.T
    assert projections[:, 1].var() < 1e-18
    assert abs(components[0] @ components[1]) < 1e-9


def test_export_latents_rows_and_format(tmp_path):
    dataset = generate_dataset(
        SynthConfig(num_videos=8, categories=2, audio_dim=2, visual_dim=3, concept_dim=2, seed=20)
    )
    params = init_model(ARCH, seed=21)
    path = tmp_path / "latents.csv"
    count = tasks.export_latents(params, dataset, path, split="test")

    n_event = sum(dataset.videos[vid].event_length for vid in dataset.test_ids)
    assert count == 2 * n_event

    text = path.read_text(encoding="utf-8")
    assert "\r" not in text
    lines = text.strip().split("\n")
    assert len(lines) == count + 1
    header = lines[0].split(",")
    assert header == [
        "video_id", "segment_index", "modality", "category", "is_event",
        "mean_1", "mean_2", "pca_x", "pca_y",
    ]
    first = lines[1].split(",")
    assert first[2] == "audio"
    float(first[5]); float(first[-1])  # numeric columns parse

    # repeated export is byte-identical
    tasks.export_latents(params, dataset, tmp_path / "again.csv", split="test")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_mean_paired_posterior_w2_matches_scalar_route():
    from pairvae.losses import gaussian_w2_closed_form
    from pairvae.model import encode

    dataset = generate_dataset(
        SynthConfig(num_videos=8, categories=2, audio_dim=2, visual_dim=3, concept_dim=2, seed=18)
    )
    params = init_model(ARCH, seed=19)
    value = mean_paired_posterior_w2(params, dataset, "test")

    per_pair = []
    for vid in dataset.test_ids:
        for seg in dataset.videos[vid].segments:
            if seg.is_event:
                per_pair.append(
                    gaussian_w2_closed_form(
                        encode(params, "audio", seg.audio), encode(params, "visual", seg.visual)
                    )
                )
    assert math.isclose(value, float(np.mean(per_pair)), rel_tol=1e-12)
