"""Downstream evaluation on a trained model.

Cross-modal localization slides a query of one modality over the other
modality's sequence and picks the start minimizing the cumulative segment
distance; retrieval ranks a database of event pairs by the same two-term
score; the latent export writes posterior means with a 2-D PCA projection
for inspection.  All inference here is deterministic: posteriors enter
through their (mean, sigma) closed form, never through samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError
from .losses import gaussian_w2_closed_form, kl_standard_normal
from .model import ModelParams, decode_full, encode
from .synthdata import Dataset

RETRIEVAL_MODES = ("a-a", "a-v", "v-a", "v-v")


@dataclass
class CmlQuery:
    direction: str  # "A2V": audio query against the visual sequence; "V2A" reverse
    query_segments: np.ndarray  # (l, d_query)
    target_sequence: np.ndarray  # (T, d_target)
    true_start: int

    def __post_init__(self):
        if self.direction not in ("A2V", "V2A"):
            raise ContractError(f"direction must be A2V or V2A, got {self.direction!r}")
        self.query_segments = np.atleast_2d(np.asarray(self.query_segments, dtype=np.float64))
        self.target_sequence = np.atleast_2d(np.asarray(self.target_sequence, dtype=np.float64))
        l, t = len(self.query_segments), len(self.target_sequence)
        if not 1 <= l <= t:
            raise ContractError(f"query length {l} must be in [1, {t}]")
        if not 0 <= self.true_start <= t - l:
            raise ContractError(f"true_start {self.true_start} outside [0, {t - l}]")


@dataclass
class RetrievalItem:
    video_id: int
    category: int
    audio: np.ndarray
    visual: np.ndarray


@dataclass
class TaskReport:
    task: str
    metric: str
    value: float
    per_query: List[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ContractError(f"{self.metric} must lie in [0, 1], got {self.value}")

    def to_json_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric,
            "value": self.value,
            "per_query": self.per_query,
            "config": self.config,
        }


# ---- segment distances --------------------------------------------------------


def _posterior_arrays(params: ModelParams, modality: str, x: np.ndarray):
    g = encode(params, modality, x)
    return g.mean_array, g.sigma_array


def _generation_arrays(params: ModelParams, means: np.ndarray) -> np.ndarray:
    from .nd import Tensor

    return decode_full(params, Tensor(means)).concat_array()


def cml_distance(params: ModelParams, audio_seg, visual_seg, use_sigma: bool = True) -> float:
    """Two-term segment distance: closed-form W2 between the posteriors plus
    the Euclidean distance between the pairs generated from each posterior
    mean."""
    g_a = encode(params, "audio", np.asarray(audio_seg, dtype=np.float64))
    g_v = encode(params, "visual", np.asarray(visual_seg, dtype=np.float64))
    w = gaussian_w2_closed_form(g_a, g_v, use_sigma=use_sigma)
    gen_a = decode_full(params, g_a.mean).concat_array()
    gen_v = decode_full(params, g_v.mean).concat_array()
    return w + float(np.linalg.norm(gen_a - gen_v))


def _distance_table(params: ModelParams, query: CmlQuery, use_sigma: bool) -> np.ndarray:
    """(T, l) table of segment distances, computed with batched encodes."""
    if query.direction == "A2V":
        q_mod, t_mod = "audio", "visual"
    else:
        q_mod, t_mod = "visual", "audio"
    mean_q, sigma_q = _posterior_arrays(params, q_mod, query.query_segments)
    mean_t, sigma_t = _posterior_arrays(params, t_mod, query.target_sequence)

    sq = np.sum((mean_t[:, None, :] - mean_q[None, :, :]) ** 2, axis=2)
    if use_sigma:
        sq = sq + np.sum((sigma_t[:, None, :] - sigma_q[None, :, :]) ** 2, axis=2)
    w2 = np.sqrt(sq)

    gen_q = _generation_arrays(params, mean_q)
    gen_t = _generation_arrays(params, mean_t)
    d_gen = np.sqrt(np.sum((gen_t[:, None, :] - gen_q[None, :, :]) ** 2, axis=2))
    return w2 + d_gen


def best_window_start(table: np.ndarray) -> int:
    """argmin over window starts of the cumulative distance; ties go to the
    smallest start.  ``table[t, s]`` is the distance between target position
    t and query position s."""
    t_total, l = table.shape
    scores = np.array([np.trace(table[t : t + l, :]) for t in range(t_total - l + 1)])
    return int(np.argmin(scores))


def localize(
    params: Optional[ModelParams],
    query: CmlQuery,
    distance_fn: Optional[Callable[[np.ndarray, np.ndarray], float]] = None,
    use_sigma: bool = True,
) -> int:
    """Predicted start index (0-based, matching the ground-truth labels).

    ``distance_fn(query_seg, target_seg)`` overrides the model distance;
    with the default, segments are scored by ``cml_distance`` with the
    modalities assigned per the query direction.
    """
    if distance_fn is None:
        table = _distance_table(params, query, use_sigma)
    else:
        table = np.array(
            [
                [float(distance_fn(q, t)) for q in query.query_segments]
                for t in query.target_sequence
            ]
        )
    return best_window_start(table)


def make_cml_queries(dataset: Dataset, direction: str, split: str = "test", query_len: str = "event"):
    """(video_id, CmlQuery) list for a split; the query is the labeled event
    span (optionally truncated to ``fixed:N``) of the query modality."""
    queries = []
    for vid in dataset.split_ids(split):
        video = dataset.videos[vid]
        length = video.event_length
        if query_len != "event":
            if not query_len.startswith("fixed:"):
                raise ContractError(f"query_len must be 'event' or 'fixed:N', got {query_len!r}")
            length = min(int(query_len.split(":", 1)[1]), video.event_length)
            if length < 1:
                raise ContractError("fixed query length must be >= 1")
        span = slice(video.event_start, video.event_start + length)
        audio = np.stack([seg.audio for seg in video.segments])
        visual = np.stack([seg.visual for seg in video.segments])
        if direction == "A2V":
            query_segments, target = audio[span], visual
        elif direction == "V2A":
            query_segments, target = visual[span], audio
        else:
            raise ContractError(f"direction must be A2V or V2A, got {direction!r}")
        queries.append(
            (vid, CmlQuery(direction=direction, query_segments=query_segments, target_sequence=target, true_start=video.event_start))
        )
    return queries


def evaluate_cml(
    params: ModelParams,
    dataset: Dataset,
    direction: str,
    split: str = "test",
    query_len: str = "event",
    use_sigma: bool = True,
) -> TaskReport:
    """Exact-match localization accuracy over a split."""
    queries = make_cml_queries(dataset, direction, split, query_len)
    if not queries:
        raise ContractError(f"split {split!r} is empty")
    per_query = []
    hits = 0
    for vid, query in queries:
        predicted = localize(params, query, use_sigma=use_sigma)
        correct = predicted == query.true_start
        hits += int(correct)
        per_query.append(
            {
                "video_id": vid,
                "true_start": int(query.true_start),
                "predicted_start": int(predicted),
                "query_length": int(len(query.query_segments)),
                "correct": bool(correct),
            }
        )
    return TaskReport(
        task=f"cml_{direction.lower()}",
        metric="accuracy",
        value=hits / len(queries),
        per_query=per_query,
        config={"direction": direction, "split": split, "query_len": query_len, "use_sigma": use_sigma},
    )


# ---- retrieval ---------------------------------------------------------------


def build_retrieval_database(dataset: Dataset, split: str = "test", seed: int = 0) -> List[RetrievalItem]:
    """One randomly sampled event-relevant pair per video in the split."""
    rng = np.random.default_rng(seed)
    items = []
    for vid in dataset.split_ids(split):
        video = dataset.videos[vid]
        t = video.event_start + int(rng.integers(video.event_length))
        seg = video.segments[t]
        items.append(RetrievalItem(video_id=vid, category=video.category, audio=seg.audio, visual=seg.visual))
    return items


def _retrieval_modalities(mode: str):
    mode = mode.lower()
    if mode not in RETRIEVAL_MODES:
        raise ContractError(f"mode must be one of {RETRIEVAL_MODES}, got {mode!r}")
    names = {"a": "audio", "v": "visual"}
    return names[mode[0]], names[mode[-1]]


def retrieval_scores(
    params: ModelParams,
    database: Sequence[RetrievalItem],
    mode: str,
    use_sigma: bool = True,
) -> np.ndarray:
    """(n, n) matrix of query-to-candidate scores: posterior W2 plus the
    distance between the pairs generated from each posterior mean."""
    query_mod, db_mod = _retrieval_modalities(mode)
    feats = {
        m: np.stack([np.asarray(getattr(item, m), dtype=np.float64) for item in database])
        for m in {query_mod, db_mod}
    }
    posteriors = {m: _posterior_arrays(params, m, feats[m]) for m in feats}
    generations = {m: _generation_arrays(params, posteriors[m][0]) for m in feats}

    mean_q, sigma_q = posteriors[query_mod]
    mean_c, sigma_c = posteriors[db_mod]
    sq = np.sum((mean_q[:, None, :] - mean_c[None, :, :]) ** 2, axis=2)
    if use_sigma:
        sq = sq + np.sum((sigma_q[:, None, :] - sigma_c[None, :, :]) ** 2, axis=2)
    return np.sqrt(sq) + np.sqrt(
        np.sum((generations[query_mod][:, None, :] - generations[db_mod][None, :, :]) ** 2, axis=2)
    )


def evaluate_retrieval(
    params: Optional[ModelParams],
    database: Sequence[RetrievalItem],
    mode: str,
    use_sigma: bool = True,
    scores: Optional[np.ndarray] = None,
) -> TaskReport:
    """Mean reciprocal rank of the first same-category item.

    Every item queries the whole database; for intra-modal modes the query
    item itself is excluded from its own candidate list.  Queries with no
    same-category candidate score 0 and are flagged.  ``scores`` overrides
    the model-derived matrix (rows are queries, columns candidates).
    """
    if len(database) < 2:
        raise ContractError("retrieval database needs at least 2 items")
    query_mod, db_mod = _retrieval_modalities(mode)
    intra = query_mod == db_mod
    if scores is None:
        scores = retrieval_scores(params, database, mode, use_sigma)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(database), len(database)):
        raise ShapeError(f"scores must be {(len(database), len(database))}, got {scores.shape}")

    categories = np.array([item.category for item in database])
    per_query = []
    total = 0.0
    for i, item in enumerate(database):
        candidates = np.arange(len(database))
        if intra:
            candidates = candidates[candidates != i]
        order = candidates[np.argsort(scores[i, candidates], kind="stable")]
        relevant = np.nonzero(categories[order] == item.category)[0]
        if relevant.size:
            rank = int(relevant[0]) + 1
            rr = 1.0 / rank
            flagged = False
        else:
            rank = 0
            rr = 0.0
            flagged = True
        total += rr
        per_query.append(
            {
                "video_id": item.video_id,
                "category": int(item.category),
                "first_relevant_rank": rank,
                "reciprocal_rank": rr,
                "flagged": flagged,
            }
        )
    return TaskReport(
        task=f"retrieval_{mode.lower()}",
        metric="mrr",
        value=total / len(database),
        per_query=per_query,
        config={"mode": mode.lower(), "use_sigma": use_sigma, "database_size": len(database)},
    )


def random_ranking_mrr(categories: Sequence[int], intra: bool, trials: int = 1000, seed: int = 0) -> float:
    """Monte-Carlo MRR of uniformly random rankings over the same database."""
    categories = np.asarray(categories)
    rng = np.random.default_rng(seed)
    n = len(categories)
    total = 0.0
    for _ in range(trials):
        for i in range(n):
            candidates = np.delete(np.arange(n), i) if intra else np.arange(n)
            order = rng.permutation(candidates)
            relevant = np.nonzero(categories[order] == categories[i])[0]
            if relevant.size:
                total += 1.0 / (relevant[0] + 1)
    return total / (trials * n)


# ---- latent export -----------------------------------------------------------------


def pca_power_iteration(
    x: np.ndarray,
    n_components: int = 2,
    iterations: int = 100,
    tol: float = 1e-9,
    seed: int = 0,
):
    """Leading principal directions by power iteration with deflation.

    Returns (mean, components) with components of shape (n_components, dim);
    each component's largest-magnitude entry is made positive so the result
    is sign-deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeError("PCA needs a (rows, dim) matrix with at least 2 rows")
    if n_components > x.shape[1]:
        raise ContractError(f"cannot extract {n_components} components from dim {x.shape[1]}")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / x.shape[0]
    rng = np.random.default_rng(seed)

    components = []
    for _ in range(n_components):
        v = rng.standard_normal(x.shape[1])
        for prev in components:
            v -= (v @ prev) * prev
        v /= np.linalg.norm(v)
        for _ in range(iterations):
            w = cov @ v
            for prev in components:
                w -= (w @ prev) * prev
            norm = np.linalg.norm(w)
            if norm < 1e-30:
                break  # deflated space is (numerically) null; keep the seed vector
            w /= norm
            if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
                v = w
                break
            v = w
        pivot = int(np.argmax(np.abs(v)))
        if v[pivot] < 0:
            v = -v
        components.append(v)
        lam = v @ cov @ v
        cov = cov - lam * np.outer(v, v)
    return mean, np.stack(components)


def export_latents(
    params: ModelParams,
    dataset: Dataset,
    path,
    split: str = "test",
    event_only: bool = True,
    pca_seed: int = 0,
) -> int:
    """Write one CSV row per (segment, modality) with the posterior mean and
    its 2-D PCA projection; returns the number of data rows written."""
    rows_meta = []
    audio_feats = []
    visual_feats = []
    for vid in dataset.split_ids(split):
        video = dataset.videos[vid]
        for t, seg in enumerate(video.segments):
            if event_only and not seg.is_event:
                continue
            rows_meta.append((vid, t, video.category, seg.is_event))
            audio_feats.append(seg.audio)
            visual_feats.append(seg.visual)
    if not rows_meta:
        raise ContractError(f"no segments selected from split {split!r}")

    mean_a, _ = _posterior_arrays(params, "audio", np.stack(audio_feats))
    mean_v, _ = _posterior_arrays(params, "visual", np.stack(visual_feats))
    pooled = np.concatenate([mean_a, mean_v], axis=0)
    center, components = pca_power_iteration(pooled, n_components=2, seed=pca_seed)
    projections = (pooled - center) @ components.T

    latent_dim = params.arch.latent_dim
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["video_id", "segment_index", "modality", "category", "is_event"]
        header += [f"mean_{d + 1}" for d in range(latent_dim)]
        header += ["pca_x", "pca_y"]
        writer.writerow(header)
        count = 0
        for block, means, modality in ((0, mean_a, "audio"), (1, mean_v, "visual")):
            for i, (vid, t, category, is_event) in enumerate(rows_meta):
                proj = projections[block * len(rows_meta) + i]
                row = [vid, t, modality, category, is_event]
                row += [f"{value:.9g}" for value in means[i]]
                row += [f"{proj[0]:.9g}", f"{proj[1]:.9g}"]
                writer.writerow(row)
                count += 1
    return count


# ---- posterior diagnostics ------------------------------------------------------------


def mean_visual_kl_per_dim(params: ModelParams, dataset: Dataset, split: str = "test") -> float:
    """Mean per-dimension KL of the visual posterior over event segments."""
    feats = [seg.visual for vid in dataset.split_ids(split) for seg in dataset.videos[vid].segments if seg.is_event]
    g = encode(params, "visual", np.stack(feats))
    return kl_standard_normal(g).item() / params.arch.latent_dim


def mean_paired_posterior_w2(params: ModelParams, dataset: Dataset, split: str = "test", use_sigma: bool = True) -> float:
    """Mean closed-form W2 between paired (audio, visual) posteriors on event
    segments; the trainer's alignment diagnostic."""
    pairs = [
        (seg.audio, seg.visual)
        for vid in dataset.split_ids(split)
        for seg in dataset.videos[vid].segments
        if seg.is_event
    ]
    mean_a, sigma_a = _posterior_arrays(params, "audio", np.stack([a for a, _ in pairs]))
    mean_v, sigma_v = _posterior_arrays(params, "visual", np.stack([v for _, v in pairs]))
    sq = np.sum((mean_a - mean_v) ** 2, axis=1)
    if use_sigma:
        sq = sq + np.sum((sigma_a - sigma_v) ** 2, axis=1)
    return float(np.mean(np.sqrt(sq)))


def degeneration_probe(
    shared_params: ModelParams,
    separate_params: ModelParams,
    dataset: Dataset,
    split: str = "test",
    threshold: float = 0.01,
) -> dict:
    """Check whether the separate-decoder run collapsed its visual posterior
    toward the prior while the shared-decoder run did not.

    The collapse is a qualitative failure mode; when it does not manifest the
    probe reports 'inconclusive' rather than failing.
    """
    shared_kl = mean_visual_kl_per_dim(shared_params, dataset, split)
    separate_kl = mean_visual_kl_per_dim(separate_params, dataset, split)
    collapsed = separate_kl < threshold < shared_kl
    return {
        "shared_visual_kl_per_dim": shared_kl,
        "separate_visual_kl_per_dim": separate_kl,
        "threshold": threshold,
        "collapse_detected": collapsed,
        "verdict": "collapse" if collapsed else "inconclusive",
    }
