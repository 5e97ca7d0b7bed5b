"""Member/non-member pool construction and draws.

A MixturePools value holds K disjoint sample pools; one pool is designated
as the member component. Pools are built from a dataset by clustering,
by biasing an attribute's frequency, or by splitting on an attribute value
(data source). draw() then produces seeded member/non-member sets plus the
leftover shadow pool, and iid_counterfactual() re-partitions a draw to
destroy the dependency between the two sides.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import Dataset, Sample
from .errors import SplitError
from .rngs import as_generator, subseed


@dataclass(frozen=True)
class BiasInfo:
    """How a biased member pool was built, plus leftover samples per side
    so that equally biased validation sets can be drawn later."""

    attribute_value: str
    p: float
    reserve_with: tuple[Sample, ...]
    reserve_without: tuple[Sample, ...]


@dataclass(frozen=True)
class MixturePools:
    pools: tuple[tuple[Sample, ...], ...]
    k_member: int = 0
    labels_of_pools: "tuple[str, ...] | None" = None
    shadow_reserve: "tuple[Sample, ...] | None" = None
    bias: "BiasInfo | None" = None

    def __post_init__(self):
        if len(self.pools) < 2:
            raise SplitError(f"need at least 2 pools, got {len(self.pools)}")
        if not 0 <= self.k_member < len(self.pools):
            raise SplitError(f"k_member {self.k_member} out of range")
        seen: dict[tuple, int] = {}
        for k, pool in enumerate(self.pools):
            for s in pool:
                other = seen.get(s.key())
                if other is not None and other != k:
                    raise SplitError(f"pools {other} and {k} share a sample")
                seen[s.key()] = k

    @property
    def n_pools(self) -> int:
        return len(self.pools)

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(p) for p in self.pools)

    def with_member(self, k_member: int) -> "MixturePools":
        return MixturePools(
            pools=self.pools,
            k_member=k_member,
            labels_of_pools=self.labels_of_pools,
            shadow_reserve=self.shadow_reserve,
            bias=self.bias,
        )

    def flatten(self) -> list[Sample]:
        return [s for pool in self.pools for s in pool]


@dataclass(frozen=True)
class SplitDraw:
    members: tuple[Sample, ...]
    nonmembers: tuple[Sample, ...]
    shadow_pool: tuple[Sample, ...] = ()


@dataclass(frozen=True)
class KmeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    sse: float
    sse_history: tuple[float, ...]
    n_iter: int


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # All remaining mass sits on already-chosen centroids; place the
            # rest uniformly (only distinct-point preconditions reach here).
            centroids[j] = points[rng.integers(n)]
            continue
        probs = d2 / total
        centroids[j] = points[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int):
    k = centroids.shape[0]
    labels = None
    history = []
    for it in range(max_iter):
        dist2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dist2, axis=1)
        history.append(float(dist2[np.arange(len(points)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
        taken: set[int] = set()
        for j in range(k):
            mask = labels == j
            if mask.any():
                centroids[j] = points[mask].mean(axis=0)
        own = np.sum((points - centroids[labels]) ** 2, axis=1)
        for j in range(k):
            if not (labels == j).any():
                # Empty cluster: reseed at the point farthest from its centroid.
                order = np.argsort(-own)
                pick = next(int(i) for i in order if int(i) not in taken)
                taken.add(pick)
                centroids[j] = points[pick]
                labels[pick] = j
    sse = float(np.sum((points - centroids[labels]) ** 2))
    return labels, centroids, sse, tuple(history), len(history)


def _exact_two_means(pts: np.ndarray) -> KmeansResult:
    """Exhaustive optimal 2-partition for tiny inputs.

    Lloyd restarts can sit in a local optimum even on a handful of points;
    below _EXACT_TWO_MEANS_LIMIT distinct points enumeration is cheap and
    the result is a Lloyd fixed point anyway (the optimal partition is the
    Voronoi split of its own means).
    """
    distinct, inverse, counts = np.unique(
        pts, axis=0, return_inverse=True, return_counts=True
    )
    m = distinct.shape[0]
    w = counts.astype(np.float64)
    best_sse, best_side = math.inf, None
    for mask in range(1, 2 ** (m - 1)):
        side = np.zeros(m, dtype=bool)
        for i in range(m - 1):
            if (mask >> i) & 1:
                side[i + 1] = True
        sse = 0.0
        for sel in (side, ~side):
            ww = w[sel]
            mean = (distinct[sel] * ww[:, None]).sum(axis=0) / ww.sum()
            sse += float((((distinct[sel] - mean) ** 2).sum(axis=1) * ww).sum())
        if sse < best_sse:
            best_sse, best_side = sse, side.copy()
    labels = best_side[inverse].astype(np.int64)
    centroids = np.stack(
        [pts[labels == 0].mean(axis=0), pts[labels == 1].mean(axis=0)]
    )
    return KmeansResult(labels, centroids, best_sse, (best_sse,), 1)


_EXACT_TWO_MEANS_LIMIT = 16


def kmeans(points, k: int, seed, n_init: int = 10, max_iter: int = 300) -> KmeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Runs n_init independent seeded initializations and keeps the lowest
    within-cluster SSE. Iterates to an assignment fixed point or max_iter.
    k=2 instances with at most 16 distinct points are solved exactly by
    enumeration instead.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.size == 0:
        raise SplitError("kmeans called with no points")
    if k < 1:
        raise SplitError(f"k must be >= 1, got {k}")
    n_distinct = np.unique(pts, axis=0).shape[0]
    if k > n_distinct:
        raise SplitError(f"k={k} exceeds the {n_distinct} distinct points")
    if k == 2 and n_distinct <= _EXACT_TWO_MEANS_LIMIT:
        return _exact_two_means(pts)
    rng = as_generator(seed)
    best = None
    for _ in range(n_init):
        centroids = _plusplus_init(pts, k, rng)
        labels, centroids, sse, history, n_iter = _lloyd(pts, centroids, max_iter)
        if best is None or sse < best.sse:
            best = KmeansResult(labels, centroids, sse, history, n_iter)
    return best


def _canonical_order(centroids: np.ndarray) -> np.ndarray:
    # Lexicographic by coordinates: smaller first coordinate wins, then the
    # second, and so on; keeps "cluster 1" reproducible across runs.
    return np.lexsort(centroids.T[::-1])


def cluster_split(data: Dataset, seed: int, k: int = 2) -> MixturePools:
    """Cluster each class's samples independently and pool cluster i of
    every class into pool i."""
    buckets: list[list[Sample]] = [[] for _ in range(k)]
    for label in data.classes():
        samples = data.samples_of_class(label)
        points = np.stack([s.features for s in samples])
        if np.unique(points, axis=0).shape[0] < k:
            raise SplitError(f"class {label} has fewer than {k} distinct points")
        result = kmeans(points, k, subseed(seed, label))
        order = _canonical_order(result.centroids)
        canon = np.empty(k, dtype=np.int64)
        canon[order] = np.arange(k)
        for s, c in zip(samples, result.labels):
            buckets[canon[c]].append(s)
    return MixturePools(
        pools=tuple(tuple(b) for b in buckets),
        k_member=0,
        labels_of_pools=tuple(f"cluster-{i + 1}" for i in range(k)),
    )


def attribute_bias_pools(
    data: Dataset, value: str, p: float, n: int, seed: int
) -> MixturePools:
    """Build a member pool with a ceil(p*n) / (n - ceil(p*n)) attribute mix
    and a balanced non-member pool of the same size.

    The split attribute itself stays out of the features (dataio never
    encodes it), so the only trace the bias leaves is statistical. Leftover
    samples, capped at n per attribute value, form the shadow reserve; the
    rest are kept for drawing equally biased validation sets.
    """
    if not 0.0 <= p <= 1.0:
        raise SplitError(f"bias p must be in [0, 1], got {p}")
    if n < 1:
        raise SplitError(f"pool size n must be >= 1, got {n}")
    if data.schema.split_attribute_column is None:
        raise SplitError("dataset has no split-attribute column")
    with_v = [s for s in data.samples if s.attribute == value]
    without_v = [s for s in data.samples if s.attribute != value]
    n1_with = math.ceil(p * n)
    n1_without = n - n1_with
    n2_with = n // 2
    n2_without = n - n2_with
    if len(with_v) < n1_with + n2_with:
        raise SplitError(
            f"need {n1_with + n2_with} samples with attribute {value!r}, have {len(with_v)}"
        )
    if len(without_v) < n1_without + n2_without:
        raise SplitError(
            f"need {n1_without + n2_without} samples without attribute {value!r}, "
            f"have {len(without_v)}"
        )
    rng = as_generator(seed)
    w = [with_v[i] for i in rng.permutation(len(with_v))]
    wo = [without_v[i] for i in rng.permutation(len(without_v))]
    d1 = w[:n1_with] + wo[:n1_without]
    d2 = w[n1_with : n1_with + n2_with] + wo[n1_without : n1_without + n2_without]
    left_w = w[n1_with + n2_with :]
    left_wo = wo[n1_without + n2_without :]
    shadow = tuple(left_w[:n] + left_wo[:n])
    return MixturePools(
        pools=(tuple(d1), tuple(d2)),
        k_member=0,
        labels_of_pools=(f"bias[{value}]={p}", "balanced"),
        shadow_reserve=shadow if shadow else None,
        bias=BiasInfo(value, p, tuple(left_w), tuple(left_wo)),
    )


def source_split(data: Dataset, member_value: str) -> MixturePools:
    """Pool 1 holds the samples whose split attribute equals member_value,
    pool 2 everything else."""
    if data.schema.split_attribute_column is None:
        raise SplitError("dataset has no split-attribute column")
    d1 = tuple(s for s in data.samples if s.attribute == member_value)
    d2 = tuple(s for s in data.samples if s.attribute != member_value)
    if not d1:
        raise SplitError(f"attribute value {member_value!r} does not occur in the data")
    if not d2:
        raise SplitError(f"all rows have attribute value {member_value!r}; non-member pool empty")
    return MixturePools(
        pools=(d1, d2),
        k_member=0,
        labels_of_pools=(f"source={member_value}", "other-sources"),
    )


def draw(
    pools: MixturePools,
    n_members: int,
    n_nonmembers: int,
    seed,
    shadow_cap: "int | None" = None,
) -> SplitDraw:
    """Sample members from the member pool and non-members from the union
    of the other pools, both uniformly without replacement."""
    rng = as_generator(seed)
    member_pool = pools.pools[pools.k_member]
    others = [s for k, pool in enumerate(pools.pools) if k != pools.k_member for s in pool]
    if len(member_pool) < n_members:
        raise SplitError(
            f"member pool has {len(member_pool)} samples, need {n_members}"
        )
    if len(others) < n_nonmembers:
        raise SplitError(
            f"non-member pools have {len(others)} samples, need {n_nonmembers}"
        )
    m_idx = rng.choice(len(member_pool), size=n_members, replace=False)
    nm_idx = rng.choice(len(others), size=n_nonmembers, replace=False)
    members = tuple(member_pool[int(i)] for i in m_idx)
    nonmembers = tuple(others[int(i)] for i in nm_idx)
    if pools.shadow_reserve is not None:
        shadow = pools.shadow_reserve
    else:
        cap = n_members if shadow_cap is None else shadow_cap
        shadow_parts: list[Sample] = []
        taken_member = set(int(i) for i in m_idx)
        taken_other = set(int(i) for i in nm_idx)
        offset = 0
        for k, pool in enumerate(pools.pools):
            if k == pools.k_member:
                left = [s for i, s in enumerate(pool) if i not in taken_member]
            else:
                left = [
                    s
                    for i, s in enumerate(pool)
                    if (offset + i) not in taken_other
                ]
                offset += len(pool)
            order = rng.permutation(len(left))
            shadow_parts.extend(left[int(i)] for i in order[:cap])
        shadow = tuple(shadow_parts)
    return SplitDraw(members=members, nonmembers=nonmembers, shadow_pool=shadow)


def iid_counterfactual(split: SplitDraw, seed) -> SplitDraw:
    """Merge members and non-members and re-partition into the original
    sizes, destroying any member/non-member dependency."""
    rng = as_generator(seed)
    merged = list(split.members) + list(split.nonmembers)
    order = rng.permutation(len(merged))
    n = len(split.members)
    members = tuple(merged[int(i)] for i in order[:n])
    nonmembers = tuple(merged[int(i)] for i in order[n:])
    return SplitDraw(members=members, nonmembers=nonmembers, shadow_pool=split.shadow_pool)
