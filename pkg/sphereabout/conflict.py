"""Pairwise conflict relation over candidate paths.

The canonical relation is geometric: two paths conflict when their sampled polylines come
within ``d_min`` of each other at any pair of points, whatever the timing. The temporal
functions evaluate synchronized positions instead and are used by the sensitivity studies.
"""

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from enum import StrEnum
from functools import cached_property
from typing import Iterator, Self

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.spatial import cKDTree

from .errors import EmptyPolylineError, InfeasiblePairError
from .geometry import (
    NodeId,
    PathKind,
    PathSpec,
    SampledPath,
    SphereLayout,
    candidate_paths,
    sample_path,
)

logger = logging.getLogger(__name__)

_EPS = 1e-12
DEFAULT_DT_S = 0.02


class SharedNodeRule(StrEnum):
    MASK_NEAR_SHARED_NODE = "mask_near_shared_node"
    STRICT = "strict"


class ConflictPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    d_min_m: float
    max_spacing_m: float = 0.1
    shared_node_mask_radius_m: float = 4.0
    shared_node_rule: SharedNodeRule = SharedNodeRule.MASK_NEAR_SHARED_NODE

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.d_min_m < 0:
            raise ValueError("d_min_m must be non-negative")
        if self.max_spacing_m <= 0:
            raise ValueError("max_spacing_m must be positive")
        if self.shared_node_mask_radius_m < 0:
            raise ValueError("shared_node_mask_radius_m must be non-negative")
        return self

    @property
    def masks_shared_nodes(self) -> bool:
        return self.shared_node_rule == SharedNodeRule.MASK_NEAR_SHARED_NODE


def shared_endpoints(a: PathSpec, b: PathSpec) -> list[tuple[NodeId, np.ndarray]]:
    ends_b = {b.entry: b.start, b.exit: b.end}
    shared = []
    for node, xyz in ((a.entry, a.start), (a.exit, a.end)):
        if node in ends_b:
            shared.append((node, np.asarray(xyz, dtype=float)))
    return shared


def segment_distances(
    p0: np.ndarray, p1: np.ndarray, q0: np.ndarray, q1: np.ndarray
) -> np.ndarray:
    """Exact closest distances between segments p0-p1 and q0-q1, row by row.

    Clamped closest-parameter solution, with degenerate (zero-length) and parallel
    segments handled explicitly.
    """
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    f = np.einsum("ij,ij->i", d2, r)
    c = np.einsum("ij,ij->i", d1, r)
    b = np.einsum("ij,ij->i", d1, d2)

    a_ok = a > _EPS
    e_ok = e > _EPS
    denom = a * e - b * b
    general = a_ok & e_ok & (denom > _EPS * a * e)

    s = np.where(general, np.clip(_safe_div(b * f - c * e, denom), 0.0, 1.0), 0.0)
    s = np.where(a_ok & ~e_ok, np.clip(_safe_div(-c, a), 0.0, 1.0), s)
    t = np.where(e_ok, _safe_div(b * s + f, e), 0.0)

    low = t < 0.0
    high = t > 1.0
    s = np.where(low & a_ok, np.clip(_safe_div(-c, a), 0.0, 1.0), s)
    s = np.where(high & a_ok, np.clip(_safe_div(b - c, a), 0.0, 1.0), s)
    s = np.where((low | high) & ~a_ok, 0.0, s)
    t = np.clip(t, 0.0, 1.0)

    closest_p = p0 + s[:, np.newaxis] * d1
    closest_q = q0 + t[:, np.newaxis] * d2
    return np.linalg.norm(closest_p - closest_q, axis=1)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=float)
    np.divide(num, den, out=out, where=np.abs(den) > 0)
    return out


def outside_pieces(
    path: SampledPath, shared: list[tuple[NodeId, np.ndarray]], radius: float
) -> tuple[np.ndarray, np.ndarray]:
    """Polyline segments cut where they cross a shared-node mask sphere.

    Returns the start and end points of the pieces lying outside every sphere. Cuts lie
    exactly on the sphere surface.
    """
    starts, ends = path.points[:-1], path.points[1:]
    if not shared:
        return starts, ends
    d = ends - starts
    a = np.einsum("ij,ij->i", d, d)
    cuts = [np.zeros(len(starts)), np.ones(len(starts))]
    removed = []
    buried = np.zeros(len(starts), dtype=bool)
    for _, xyz in shared:
        rel = starts - xyz
        b = np.einsum("ij,ij->i", d, rel)
        c = np.einsum("ij,ij->i", rel, rel) - radius * radius
        disc = b * b - a * c
        hit = (a > _EPS) & (disc > 0)
        root = np.sqrt(np.where(hit, disc, 0.0))
        lo = np.where(hit, _safe_div(-b - root, a), 2.0)
        hi = np.where(hit, _safe_div(-b + root, a), 2.0)
        removed.append((lo, hi))
        cuts += [np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)]
        # zero-length segments are points: dropped when inside the sphere
        buried |= (a <= _EPS) & (c <= 0)

    t = np.sort(np.stack(cuts, axis=1), axis=1)
    u, v = t[:, :-1], t[:, 1:]
    mid = 0.5 * (u + v)
    keep = v - u > _EPS
    keep &= ~buried[:, np.newaxis]
    for lo, hi in removed:
        keep &= ~((mid > lo[:, np.newaxis]) & (mid < hi[:, np.newaxis]))

    rows, cols = np.nonzero(keep)
    u_kept = u[rows, cols][:, np.newaxis]
    v_kept = v[rows, cols][:, np.newaxis]
    return starts[rows] + u_kept * d[rows], starts[rows] + v_kept * d[rows]


def _as_segments(path: SampledPath) -> SampledPath:
    if len(path.points) == 0:
        raise EmptyPolylineError(f"Polyline for {path.spec} has no points")
    if len(path.points) == 1:
        doubled = np.repeat(path.points, 2, axis=0)
        return SampledPath(spec=path.spec, points=doubled, spacing_m=path.spacing_m)
    return path


def min_pair_distance(a: SampledPath, b: SampledPath, policy: ConflictPolicy) -> float:
    """Minimum distance between two polylines over all segment pairs.

    Under the masking rule only the pieces outside the shared-node spheres take part; when
    either path has nothing left the distance is infinite.
    """
    a = _as_segments(a)
    b = _as_segments(b)

    shared = shared_endpoints(a.spec, b.spec) if policy.masks_shared_nodes else []
    a0, a1 = outside_pieces(a, shared, policy.shared_node_mask_radius_m)
    b0, b1 = outside_pieces(b, shared, policy.shared_node_mask_radius_m)
    if len(a0) == 0 or len(b0) == 0:
        return math.inf

    mid_a, mid_b = 0.5 * (a0 + a1), 0.5 * (b0 + b1)
    half_a = 0.5 * np.linalg.norm(a1 - a0, axis=1)
    half_b = 0.5 * np.linalg.norm(b1 - b0, axis=1)
    tree_a = cKDTree(mid_a)
    tree_b = cKDTree(mid_b)
    # midpoints lie on the pieces, so their closest pair bounds the minimum from above
    upper, _ = tree_b.query(mid_a, k=1)
    bound = float(np.min(upper))

    reach = bound + float(half_a.max()) + float(half_b.max()) + 1e-9
    near = tree_a.query_ball_tree(tree_b, reach)
    ia = np.repeat(np.arange(len(near)), [len(js) for js in near])
    ib = np.fromiter((j for js in near for j in js), dtype=int, count=len(ia))
    if len(ia) == 0:
        return bound

    dists = segment_distances(a0[ia], a1[ia], b0[ib], b1[ib])
    return float(min(bound, float(np.min(dists))))


def _outside_samples(
    path: SampledPath, shared: list[tuple[NodeId, np.ndarray]], radius: float
) -> np.ndarray:
    keep = np.ones(len(path.points), dtype=bool)
    for _, xyz in shared:
        keep &= np.linalg.norm(path.points - xyz, axis=1) > radius
    return keep


def _travelled(path: SampledPath, index: int) -> float:
    cum = path.cumulative_m
    if cum[-1] <= 0:
        return 0.0
    return float(cum[index] * path.spec.length_m / cum[-1])


def closest_approach(
    a: SampledPath, b: SampledPath, policy: ConflictPolicy
) -> tuple[float, float] | None:
    """Travelled distances along ``a`` and ``b`` to their closest pair of samples.

    Samples inside a shared-node mask are skipped; None when either path has none left.
    """
    shared = shared_endpoints(a.spec, b.spec) if policy.masks_shared_nodes else []
    keep_a = _outside_samples(a, shared, policy.shared_node_mask_radius_m)
    keep_b = _outside_samples(b, shared, policy.shared_node_mask_radius_m)
    if not keep_a.any() or not keep_b.any():
        return None
    idx_a = np.flatnonzero(keep_a)
    idx_b = np.flatnonzero(keep_b)
    gaps, nearest = cKDTree(b.points[idx_b]).query(a.points[idx_a], k=1)
    best = int(np.argmin(gaps))
    return _travelled(a, int(idx_a[best])), _travelled(b, int(idx_b[nearest[best]]))


class ConflictGraph(BaseModel):
    """Symmetric conflict relation over all candidate paths.

    ``min_dist[m, n]`` holds the (masked) polyline distance; the diagonal is never queried.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    paths: list[PathSpec]
    policy: ConflictPolicy
    min_dist: np.ndarray

    @cached_property
    def conflicts(self) -> np.ndarray:
        flags = self.min_dist <= self.policy.d_min_m
        np.fill_diagonal(flags, False)
        return flags

    @cached_property
    def conflict_masks(self) -> tuple[int, ...]:
        """Per path, a bitmask of the path indices it conflicts with."""
        masks = []
        for row in self.conflicts:
            mask = 0
            for n in np.flatnonzero(row):
                mask |= 1 << int(n)
            masks.append(mask)
        return tuple(masks)

    @cached_property
    def path_index(self) -> dict[tuple[str, str, int], int]:
        return {p.key: k for k, p in enumerate(self.paths)}

    def index_of(self, entry: NodeId, exit: NodeId, kind: PathKind) -> int:
        try:
            return self.path_index[(entry.label, exit.label, int(kind))]
        except KeyError:
            raise InfeasiblePairError(
                f"Path {entry}->{exit}#{int(kind)} is not in the conflict graph"
            ) from None

    def in_conflict(self, m: int, n: int) -> bool:
        return bool(self.conflicts[m, n])

    def conflict_set(self) -> set[tuple[int, int]]:
        rows, cols = np.nonzero(np.triu(self.conflicts, k=1))
        return {(int(m), int(n)) for m, n in zip(rows, cols)}

    def pair_rows(self) -> Iterator[tuple[PathSpec, PathSpec, float, bool]]:
        """Unordered pairs m < n in index order."""
        for m, n in itertools.combinations(range(len(self.paths)), 2):
            yield (
                self.paths[m],
                self.paths[n],
                float(self.min_dist[m, n]),
                bool(self.conflicts[m, n]),
            )

    def with_threshold(self, d_min_m: float) -> "ConflictGraph":
        """Same distances judged against another separation minimum."""
        policy = self.policy.model_copy(update={"d_min_m": d_min_m})
        return ConflictGraph(paths=self.paths, policy=policy, min_dist=self.min_dist)


_worker_samples: list[SampledPath] = []


def _init_worker(samples: list[SampledPath]) -> None:
    global _worker_samples
    _worker_samples = samples


def _row_distances(args: tuple[int, ConflictPolicy]) -> list[float]:
    m, policy = args
    return [
        min_pair_distance(_worker_samples[m], _worker_samples[n], policy)
        for n in range(m + 1, len(_worker_samples))
    ]


def build_conflict_graph(
    layout: SphereLayout, policy: ConflictPolicy, threads: int = 1
) -> ConflictGraph:
    paths = candidate_paths(layout)
    samples = [sample_path(p, layout, policy.max_spacing_m) for p in paths]
    count = len(paths)
    logger.info(
        "Evaluating %d path pairs (R=%g m, spacing=%g m, rule=%s)",
        count * (count - 1) // 2,
        layout.radius_m,
        policy.max_spacing_m,
        policy.shared_node_rule,
    )

    jobs = [(m, policy) for m in range(count)]
    if threads > 1:
        with ProcessPoolExecutor(
            max_workers=threads, initializer=_init_worker, initargs=(samples,)
        ) as pool:
            rows = list(pool.map(_row_distances, jobs))
    else:
        _init_worker(samples)
        rows = [_row_distances(job) for job in jobs]

    min_dist = np.zeros((count, count))
    for m, row in enumerate(rows):
        min_dist[m, m + 1 :] = row
        min_dist[m + 1 :, m] = row

    graph = ConflictGraph(paths=paths, policy=policy, min_dist=min_dist)
    logger.info("Conflict graph ready: %d conflicting pairs", len(graph.conflict_set()))
    return graph


class MotionProfile(BaseModel):
    """Constant-speed motion along a sampled path, starting at ``entry_time_s``."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    path: SampledPath
    speed_mps: float
    entry_time_s: float = 0.0

    @model_validator(mode="after")
    def _check(self) -> Self:
        if self.speed_mps <= 0:
            raise ValueError("speed_mps must be positive")
        return self

    @property
    def exit_time_s(self) -> float:
        return self.entry_time_s + self.path.spec.length_m / self.speed_mps

    def positions(self, times: np.ndarray) -> np.ndarray:
        travelled = self.speed_mps * (np.asarray(times) - self.entry_time_s)
        return self.path.point_at_distance(travelled)


def temporal_min_distance(
    p: MotionProfile,
    q: MotionProfile,
    dt_s: float = DEFAULT_DT_S,
    policy: ConflictPolicy | None = None,
) -> float:
    """Minimum synchronized separation over the overlap of both transit windows.

    Without a policy no masking is applied.
    """
    if not dt_s > 0:
        raise ValueError(f"dt_s must be positive, got {dt_s!r}")
    start = max(p.entry_time_s, q.entry_time_s)
    stop = min(p.exit_time_s, q.exit_time_s)
    if start > stop:
        return math.inf

    times = np.append(np.arange(start, stop, dt_s), stop)
    pos_p = p.positions(times)
    pos_q = q.positions(times)
    gaps = np.linalg.norm(pos_p - pos_q, axis=1)

    if policy is not None and policy.masks_shared_nodes:
        radius = policy.shared_node_mask_radius_m
        keep = np.ones(len(times), dtype=bool)
        for _, xyz in shared_endpoints(p.path.spec, q.path.spec):
            near_p = np.linalg.norm(pos_p - xyz, axis=1) <= radius
            near_q = np.linalg.norm(pos_q - xyz, axis=1) <= radius
            keep &= ~(near_p | near_q)
        gaps = gaps[keep]

    if len(gaps) == 0:
        return math.inf
    return float(np.min(gaps))


def temporal_conflicts(
    profiles: list[MotionProfile], policy: ConflictPolicy, dt_s: float = DEFAULT_DT_S
) -> set[tuple[int, int]]:
    if not profiles:
        raise ValueError("profiles must not be empty")
    found: set[tuple[int, int]] = set()
    for k, l in itertools.combinations(range(len(profiles)), 2):
        gap = temporal_min_distance(profiles[k], profiles[l], dt_s, policy)
        if gap <= policy.d_min_m:
            found.add((k, l))
    return found
