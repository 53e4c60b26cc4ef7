"""Private spatial decompositions and range-count queries over released trees.

Three synopsis builders share one tree representation:

* :func:`build_privtree` -- recursive splitting driven by a depth-biased,
  noised point count, with a constant noise scale independent of tree height.
* :func:`build_simple_tree` -- classic fixed-height noisy quadtree; the caller
  must supply ``lam >= h / epsilon`` for an epsilon-private build.
* :func:`build_ug` -- uniform grid exposed as a depth-1 tree.

Cells are half-open ``[lo, hi)`` per dimension, with the global domain's upper
face closed, so child regions partition their parent exactly.  ``noiseless=True``
on the builders replaces every Laplace draw with zero (bias and thresholds are
still applied); it exists only for oracle testing and is NOT private.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dp_core import PrivacyParams, laplace_sf, sample_laplace
from .errors import InputDataError, ParameterError

__all__ = [
    "DEFAULT_DEPTH_CAP",
    "DecompTree",
    "RangeQuery",
    "SpatialDataset",
    "SpatialDomain",
    "TreeNode",
    "attach_noisy_counts",
    "biased_count",
    "build_privtree",
    "build_simple_tree",
    "build_ug",
    "infer_domain",
    "load_points_csv",
    "load_tree",
    "load_workload_csv",
    "privtree_split_probabilities",
    "range_count",
    "shape_probability",
    "simulate_privtree_shapes",
    "tree_from_json_dict",
    "tree_shape_mask",
    "trees_equal",
]

# Bisecting a float interval degenerates past ~52 halvings, so builds stop
# splitting at this depth.  The cap is data-independent and therefore
# privacy-neutral; nodes at the cap are leaves and draw no split noise.
DEFAULT_DEPTH_CAP = 40


@dataclass(frozen=True)
class SpatialDomain:
    """Axis-aligned box domain; ``lo[i] < hi[i]`` for every dimension."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi) or not lo:
            raise ParameterError("domain lo/hi must be nonempty and equally long")
        for a, b in zip(lo, hi):
            if not a < b:
                raise ParameterError(f"domain requires lo < hi per dimension, got [{a}, {b})")

    @property
    def dims(self) -> int:
        return len(self.lo)

    def volume(self) -> float:
        return float(np.prod([b - a for a, b in zip(self.lo, self.hi)]))


@dataclass(frozen=True)
class SpatialDataset:
    """Point set over a domain; every point lies in ``[lo, hi)`` per dimension."""

    domain: SpatialDomain
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, self.domain.dims)
        if pts.ndim != 2 or pts.shape[1] != self.domain.dims:
            raise InputDataError(
                f"points must have shape (n, {self.domain.dims}), got {pts.shape}"
            )
        lo = np.asarray(self.domain.lo)
        hi = np.asarray(self.domain.hi)
        if pts.shape[0] and not ((pts >= lo).all() and (pts < hi).all()):
            raise InputDataError("every point must lie in [lo, hi) per dimension")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class RangeQuery:
    """Axis-aligned query box; membership is half-open ``[lo, hi)``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi) or not lo:
            raise ParameterError("query lo/hi must be nonempty and equally long")
        for a, b in zip(lo, hi):
            if not a <= b:
                raise ParameterError(f"query requires lo <= hi per dimension, got [{a}, {b}]")

    @property
    def dims(self) -> int:
        return len(self.lo)


@dataclass
class TreeNode:
    """One region of a decomposition tree.

    ``exact_count`` is working state for builders only; it is stripped before
    a tree is returned and must never reach a release artifact.
    """

    id: int
    depth: int
    lo: tuple
    hi: tuple
    children: list = field(default_factory=list)
    noisy_count: float | None = None
    exact_count: int | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def volume(self) -> float:
        return float(np.prod([b - a for a, b in zip(self.lo, self.hi)]))


@dataclass
class DecompTree:
    """A released decomposition: node arena plus build parameterization.

    ``params`` is set for bias-decayed builds; ``params_info`` always carries
    the four serialized keys (epsilon, lambda, theta, delta), with ``None``
    where a builder has no such notion.
    """

    nodes: list
    fanout: int
    params: PrivacyParams | None = None
    params_info: dict = field(default_factory=dict)
    root: int = 0
    _sums: dict | None = field(default=None, repr=False, compare=False)
    _grid: dict | None = field(default=None, repr=False, compare=False)

    @property
    def dims(self) -> int:
        return len(self.nodes[self.root].lo)

    def node(self, nid: int) -> TreeNode:
        return self.nodes[nid]

    def leaves(self):
        return [v for v in self.nodes if v.is_leaf]

    def invalidate_caches(self) -> None:
        self._sums = None

    def to_json_dict(self) -> dict:
        """Serializable release form; refuses to leak exact counts."""
        keys = ("epsilon", "lambda", "theta", "delta")
        out_nodes = []
        for v in self.nodes:
            if v.exact_count is not None:
                raise InputDataError(
                    "tree still carries exact counts; refusing to serialize"
                )
            entry = {
                "id": v.id,
                "depth": v.depth,
                "lo": list(v.lo),
                "hi": list(v.hi),
                "children": list(v.children),
            }
            if v.noisy_count is not None:
                entry["noisy_count"] = float(v.noisy_count)
            out_nodes.append(entry)
        return {
            "fanout": self.fanout,
            "params": {k: self.params_info.get(k) for k in keys},
            "nodes": out_nodes,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())
            fh.write("\n")


def trees_equal(a: DecompTree, b: DecompTree) -> bool:
    """Exact structural equality (regions, depths, children, counts)."""
    if a.fanout != b.fanout or len(a.nodes) != len(b.nodes) or a.root != b.root:
        return False
    for va, vb in zip(a.nodes, b.nodes):
        if (va.depth, va.lo, va.hi, list(va.children)) != (
            vb.depth,
            vb.lo,
            vb.hi,
            list(vb.children),
        ):
            return False
        if (va.noisy_count is None) != (vb.noisy_count is None):
            return False
        if va.noisy_count is not None and va.noisy_count != vb.noisy_count:
            return False
    return True


def biased_count(c: float, depth: int, theta: float, delta: float) -> float:
    """Depth-biased split score ``max(theta - delta, c - depth * delta)``."""
    return max(theta - delta, c - depth * delta)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _dims_for_level(depth: int, d: int, dims_per_level: int) -> tuple:
    """Dimensions bisected at this depth: all of them, or a round-robin window.

    Always ascending, so child order can be reconstructed from regions alone
    (see _node_split_geometry)."""
    if dims_per_level == d:
        return tuple(range(d))
    return tuple(
        sorted((depth * dims_per_level + j) % d for j in range(dims_per_level))
    )


def _child_regions(lo, hi, dims):
    """All 2^len(dims) half-open sub-boxes, ordered by child code (bit j of the
    code selects the upper half along dims[j])."""
    mids = [(lo[j] + hi[j]) / 2.0 for j in dims]
    out = []
    for code in range(1 << len(dims)):
        clo, chi = list(lo), list(hi)
        for j, (dim, mid) in enumerate(zip(dims, mids)):
            if (code >> j) & 1:
                clo[dim] = mid
            else:
                chi[dim] = mid
        out.append((tuple(clo), tuple(chi)))
    return out


def _child_codes(pts, idx, dims, mids):
    code = np.zeros(idx.size, dtype=np.intp)
    for j, (dim, mid) in enumerate(zip(dims, mids)):
        code |= (pts[idx, dim] >= mid).astype(np.intp) << j
    return code


def _resolve_dims_per_level(data: SpatialDataset, dims_per_level):
    d = data.domain.dims
    if dims_per_level is None:
        return d
    if not 1 <= dims_per_level <= d:
        raise ParameterError(
            f"dims_per_level must be in [1, {d}], got {dims_per_level!r}"
        )
    return int(dims_per_level)


def _grow(data: SpatialDataset, dims_per_level: int, visit):
    """Shared BFS split loop.

    ``visit(count, depth) -> (split, noisy_count)`` holds the builder-specific
    rule; noise draws therefore happen in BFS order on a single stream.
    Exact counts are kept on nodes only while growing and stripped at the end.
    """
    pts = data.points
    d = data.domain.dims
    root = TreeNode(id=0, depth=0, lo=data.domain.lo, hi=data.domain.hi)
    nodes = [root]
    pending = deque([(0, np.arange(pts.shape[0]))])
    while pending:
        nid, idx = pending.popleft()
        node = nodes[nid]
        node.exact_count = int(idx.size)
        split, noisy = visit(int(idx.size), node.depth)
        node.noisy_count = noisy
        if not split:
            continue
        dims = _dims_for_level(node.depth, d, dims_per_level)
        regions = _child_regions(node.lo, node.hi, dims)
        mids = [(node.lo[j] + node.hi[j]) / 2.0 for j in dims]
        codes = _child_codes(pts, idx, dims, mids)
        for c_idx, (clo, chi) in enumerate(regions):
            child = TreeNode(id=len(nodes), depth=node.depth + 1, lo=clo, hi=chi)
            node.children.append(child.id)
            nodes.append(child)
            pending.append((child.id, idx[codes == c_idx]))
    for node in nodes:
        node.exact_count = None
    return nodes


def build_privtree(
    data: SpatialDataset,
    params: PrivacyParams,
    rng: np.random.Generator | None = None,
    *,
    depth_cap: int = DEFAULT_DEPTH_CAP,
    dims_per_level: int | None = None,
    noiseless: bool = False,
) -> DecompTree:
    """Grow a bias-decayed decomposition tree and release its structure only.

    Each visited node's exact count is biased by ``depth * delta`` (floored at
    ``theta - delta``), noised at scale ``params.lam``, and split when the
    noisy score exceeds ``theta``.  Nodes at ``depth_cap`` never split and
    draw no noise.  The returned tree has all point counts removed; attach
    released counts with :func:`attach_noisy_counts`.
    """
    dims_per_level = _resolve_dims_per_level(data, dims_per_level)
    fanout = 1 << dims_per_level
    if params.beta != fanout:
        raise ParameterError(
            f"params.beta={params.beta} does not match fanout {fanout} "
            f"(2^dims_per_level)"
        )
    if not noiseless and rng is None:
        raise ParameterError("rng is required unless noiseless=True")
    theta, delta, lam = params.theta, params.delta, params.lam

    def visit(count, depth):
        if depth >= depth_cap:
            return False, None
        b = biased_count(count, depth, theta, delta)
        b_hat = b if noiseless else b + sample_laplace(lam, rng)
        return b_hat > theta, None

    nodes = _grow(data, dims_per_level, visit)
    info = {
        "epsilon": params.epsilon,
        "lambda": params.lam,
        "theta": params.theta,
        "delta": params.delta,
    }
    return DecompTree(nodes=nodes, fanout=fanout, params=params, params_info=info)


def build_simple_tree(
    data: SpatialDataset,
    lam: float,
    theta: float,
    h: int,
    rng: np.random.Generator | None = None,
    *,
    dims_per_level: int | None = None,
    noiseless: bool = False,
) -> DecompTree:
    """Fixed-height noisy decomposition: every node carries a noisy count.

    A node splits when its noisy count exceeds ``theta`` and its depth is
    below ``h - 1``, so the tree has at most ``h`` levels.  The caller is
    responsible for ``lam >= h / epsilon`` when an epsilon-private release is
    intended.
    """
    if not (isinstance(h, (int, np.integer)) and h >= 1):
        raise ParameterError(f"height h must be an integer >= 1, got {h!r}")
    if not lam > 0:
        raise ParameterError(f"lam must be positive, got {lam!r}")
    if not noiseless and rng is None:
        raise ParameterError("rng is required unless noiseless=True")
    dims_per_level = _resolve_dims_per_level(data, dims_per_level)

    def visit(count, depth):
        c_hat = float(count) if noiseless else count + sample_laplace(lam, rng)
        return (c_hat > theta and depth < h - 1), c_hat

    nodes = _grow(data, dims_per_level, visit)
    info = {"epsilon": None, "lambda": float(lam), "theta": float(theta), "delta": None}
    return DecompTree(nodes=nodes, fanout=1 << dims_per_level, params_info=info)


def build_ug(
    data: SpatialDataset,
    epsilon: float,
    rng: np.random.Generator | None = None,
    *,
    noiseless: bool = False,
) -> DecompTree:
    """Uniform-grid synopsis as a depth-1 tree with ``m**d`` leaf cells.

    Uses ``m = ceil((n * epsilon / 10) ** (2 / (d + 2)))`` bins per dimension
    and a per-cell noise scale of ``1 / epsilon``.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon!r}")
    if data.n < 1:
        raise ParameterError("uniform grid requires a nonempty dataset")
    if not noiseless and rng is None:
        raise ParameterError("rng is required unless noiseless=True")
    d = data.domain.dims
    m = int(math.ceil((data.n * epsilon / 10.0) ** (2.0 / (d + 2.0))))
    m = max(m, 1)
    edges = [
        np.linspace(data.domain.lo[j], data.domain.hi[j], m + 1) for j in range(d)
    ]
    counts, _ = np.histogramdd(data.points, bins=edges)
    noisy = counts if noiseless else counts + sample_laplace(
        1.0 / epsilon, rng, size=counts.shape
    )
    root = TreeNode(id=0, depth=0, lo=data.domain.lo, hi=data.domain.hi)
    nodes = [root]
    flat = noisy.reshape(-1)
    for k, mi in enumerate(np.ndindex(counts.shape)):
        lo = tuple(float(edges[j][mi[j]]) for j in range(d))
        hi = tuple(float(edges[j][mi[j] + 1]) for j in range(d))
        child = TreeNode(
            id=k + 1, depth=1, lo=lo, hi=hi, noisy_count=float(flat[k])
        )
        root.children.append(child.id)
        nodes.append(child)
    info = {"epsilon": float(epsilon), "lambda": 1.0 / epsilon, "theta": None, "delta": None}
    tree = DecompTree(nodes=nodes, fanout=m**d, params_info=info)
    tree._grid = {"edges": edges, "counts": noisy}
    return tree


# ---------------------------------------------------------------------------
# noisy-count postprocessing
# ---------------------------------------------------------------------------


def _node_split_geometry(tree: DecompTree, node: TreeNode):
    """Recover (dims, mids) of a node's split from its first child's region."""
    first = tree.node(node.children[0])
    dims = tuple(
        j
        for j in range(len(node.lo))
        if first.lo[j] != node.lo[j] or first.hi[j] != node.hi[j]
    )
    if len(node.children) != 1 << len(dims) or any(
        first.lo[j] != node.lo[j] for j in dims
    ):
        raise InputDataError("tree children do not form a recognized bisection")
    return dims, [first.hi[j] for j in dims]


def _leaf_exact_counts(tree: DecompTree, data: SpatialDataset) -> dict:
    root = tree.node(tree.root)
    if tuple(root.lo) != data.domain.lo or tuple(root.hi) != data.domain.hi:
        raise InputDataError("tree domain does not match dataset domain")
    pts = data.points
    out = {}
    pending = deque([(tree.root, np.arange(pts.shape[0]))])
    while pending:
        nid, idx = pending.popleft()
        node = tree.node(nid)
        if node.is_leaf:
            out[nid] = int(idx.size)
            continue
        dims, mids = _node_split_geometry(tree, node)
        codes = _child_codes(pts, idx, dims, mids)
        for c_idx, cid in enumerate(node.children):
            pending.append((cid, idx[codes == c_idx]))
    return out


def attach_noisy_counts(
    tree: DecompTree,
    data: SpatialDataset,
    epsilon_counts: float,
    rng: np.random.Generator | None = None,
    *,
    noiseless: bool = False,
) -> DecompTree:
    """Publish per-leaf noisy counts at Laplace scale ``1 / epsilon_counts``.

    Leaves partition the domain, so one point affects one leaf and the leaf
    count vector has sensitivity 1.  Internal nodes report the sum of their
    leaves' noisy counts, derived on demand during queries.  Negative leaf
    counts are released as-is (sums stay unbiased); clamp only in
    presentation-layer output if needed.  Mutates and returns ``tree``.
    """
    if not epsilon_counts > 0:
        raise ParameterError(f"epsilon_counts must be positive, got {epsilon_counts!r}")
    if not noiseless and rng is None:
        raise ParameterError("rng is required unless noiseless=True")
    counts = _leaf_exact_counts(tree, data)
    scale = 1.0 / epsilon_counts
    for nid in sorted(counts):
        c = counts[nid]
        tree.node(nid).noisy_count = float(c) if noiseless else c + sample_laplace(
            scale, rng
        )
    tree.invalidate_caches()
    tree._grid = None  # grid fast-path cache would now be stale
    return tree


# ---------------------------------------------------------------------------
# range counting
# ---------------------------------------------------------------------------


def _subtree_sums(tree: DecompTree) -> dict:
    if tree._sums is not None:
        return tree._sums
    sums = {}
    # iterative post-order; loaded trees may order ids arbitrarily
    stack = [(tree.root, False)]
    while stack:
        nid, expanded = stack.pop()
        node = tree.node(nid)
        if node.is_leaf:
            if node.noisy_count is None:
                raise InputDataError(
                    "tree has no noisy counts attached; run attach_noisy_counts first"
                )
            sums[nid] = float(node.noisy_count)
        elif expanded:
            sums[nid] = float(sum(sums[c] for c in node.children))
        else:
            stack.append((nid, True))
            stack.extend((c, False) for c in node.children)
    tree._sums = sums
    return sums


def _overlap(node_lo, node_hi, q_lo, q_hi):
    """Returns (relation, fraction) where relation is -1 disjoint, 1 contained,
    0 partial, and fraction is |q ∩ region| / |region| for partial/contained."""
    frac = 1.0
    contained = True
    for a, b, qa, qb in zip(node_lo, node_hi, q_lo, q_hi):
        oa, ob = max(a, qa), min(b, qb)
        if oa >= ob:
            return -1, 0.0
        frac *= (ob - oa) / (b - a)
        if qa > a or qb < b:
            contained = False
    return (1, 1.0) if contained else (0, frac)


def _grid_range_count(tree: DecompTree, q: RangeQuery) -> float:
    edges, counts = tree._grid["edges"], tree._grid["counts"]
    res = np.asarray(counts, dtype=np.float64)
    for j in range(len(edges)):
        e = edges[j]
        width = e[1:] - e[:-1]
        ol = np.maximum(e[:-1], q.lo[j])
        oh = np.minimum(e[1:], q.hi[j])
        w = np.clip(oh - ol, 0.0, None) / width
        res = np.tensordot(w, res, axes=([0], [0]))
    return float(res)


def range_count(tree: DecompTree, q: RangeQuery) -> float:
    """Estimate the number of points in the query box from the released tree.

    Top-down traversal: disjoint regions are skipped, contained regions add
    their (derived) count, partially covered leaves contribute their noisy
    count scaled by the volume fraction of the overlap.  Queries reaching
    outside the domain are effectively clipped to it.
    """
    if q.dims != tree.dims:
        raise InputDataError(
            f"query dimensionality {q.dims} does not match tree ({tree.dims})"
        )
    if tree._grid is not None:
        return _grid_range_count(tree, q)
    sums = _subtree_sums(tree)

    def node_count(node):
        return node.noisy_count if node.noisy_count is not None else sums[node.id]

    def rec(nid):
        node = tree.node(nid)
        rel, frac = _overlap(node.lo, node.hi, q.lo, q.hi)
        if rel == -1:
            return 0.0
        if rel == 1:
            return node_count(node)
        if node.is_leaf:
            return node_count(node) * frac
        return sum(rec(c) for c in node.children)

    return float(rec(tree.root))


# ---------------------------------------------------------------------------
# serialization and file formats
# ---------------------------------------------------------------------------


def tree_from_json_dict(doc: dict) -> DecompTree:
    try:
        fanout = int(doc["fanout"])
        params_info = dict(doc["params"])
        raw_nodes = doc["nodes"]
    except (KeyError, TypeError) as exc:
        raise InputDataError(f"malformed tree document: {exc}") from exc
    nodes = [None] * len(raw_nodes)
    root = None
    for entry in raw_nodes:
        node = TreeNode(
            id=int(entry["id"]),
            depth=int(entry["depth"]),
            lo=tuple(float(v) for v in entry["lo"]),
            hi=tuple(float(v) for v in entry["hi"]),
            children=[int(c) for c in entry["children"]],
            noisy_count=(
                float(entry["noisy_count"]) if "noisy_count" in entry else None
            ),
        )
        if not 0 <= node.id < len(raw_nodes) or nodes[node.id] is not None:
            raise InputDataError(f"bad or duplicate node id {node.id}")
        if any(not 0 <= c < len(raw_nodes) for c in node.children):
            raise InputDataError(f"node {node.id} references an unknown child id")
        nodes[node.id] = node
        if node.depth == 0:
            root = node.id
    if root is None:
        raise InputDataError("tree document has no depth-0 root node")
    tree = DecompTree(nodes=nodes, fanout=fanout, params_info=params_info, root=root)
    tree._grid = _detect_grid(tree)
    return tree


def load_tree(path) -> DecompTree:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputDataError(f"{path}: invalid JSON ({exc})") from exc
    return tree_from_json_dict(doc)


def _detect_grid(tree: DecompTree):
    """Re-tag uniform grids after deserialization so queries stay fast."""
    root = tree.node(tree.root)
    if root.is_leaf or len(tree.nodes) != len(root.children) + 1:
        return None
    d = tree.dims
    m = round(tree.fanout ** (1.0 / d))
    if m**d != tree.fanout or len(root.children) != tree.fanout:
        return None
    edges = [np.linspace(root.lo[j], root.hi[j], m + 1) for j in range(d)]
    counts = np.empty((m,) * d, dtype=np.float64)
    for k, mi in enumerate(np.ndindex(counts.shape)):
        child = tree.node(root.children[k])
        exp_lo = tuple(float(edges[j][mi[j]]) for j in range(d))
        exp_hi = tuple(float(edges[j][mi[j] + 1]) for j in range(d))
        if not child.is_leaf or child.lo != exp_lo or child.hi != exp_hi:
            return None
        if child.noisy_count is None:
            return None
        counts[mi] = child.noisy_count
    return {"edges": edges, "counts": counts}


def infer_domain(points: np.ndarray, pad: float = 1e-9) -> SpatialDomain:
    """Bounding-box domain of a point set.

    The upper bound is nudged above the max so points satisfy the half-open
    convention.  NOTE: inferring the domain from the data is itself
    data-dependent and hence privacy-relevant; prefer fixed, public bounds.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise InputDataError("cannot infer a domain from an empty point set")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    hi = hi + pad * span
    return SpatialDomain(lo=tuple(lo), hi=tuple(hi))


def _parse_csv_floats(path, expected_fields=None):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split(",")]
            try:
                row = [float(f) for f in fields]
            except ValueError as exc:
                raise InputDataError(f"{path}: malformed CSV line {lineno}: {exc}") from exc
            if expected_fields is not None and len(row) != expected_fields:
                raise InputDataError(
                    f"{path}: line {lineno}: expected {expected_fields} fields, got {len(row)}"
                )
            if rows and len(row) != len(rows[0]):
                raise InputDataError(
                    f"{path}: line {lineno}: inconsistent field count "
                    f"({len(row)} vs {len(rows[0])})"
                )
            rows.append(row)
    return rows


def load_points_csv(path) -> np.ndarray:
    """Read one point per line, comma-separated decimals; '#' lines ignored."""
    rows = _parse_csv_floats(path)
    if not rows:
        return np.empty((0, 0))
    return np.asarray(rows, dtype=np.float64)


def load_workload_csv(path, dims: int):
    """Read queries as lines ``lo1,...,lod,hi1,...,hid``."""
    rows = _parse_csv_floats(path, expected_fields=2 * dims)
    queries = []
    for row in rows:
        queries.append(RangeQuery(lo=tuple(row[:dims]), hi=tuple(row[dims:])))
    return queries


# ---------------------------------------------------------------------------
# split-decision audit helpers
#
# For a fixed dataset the split decisions of the candidate nodes are
# independent Laplace threshold tests, so tree-shape distributions can be
# simulated in bulk (vectorized over runs) and compared against closed-form
# shape probabilities.  Both paths reuse biased_count / laplace_sf /
# sample_laplace, i.e. exactly the split rule of build_privtree.
# ---------------------------------------------------------------------------


def _candidate_decision_nodes(domain: SpatialDomain, depth_cap: int, dims_per_level: int):
    """BFS enumeration of all nodes with depth < depth_cap in the complete tree.

    Returns (regions, depths, parents); parents index into the same list,
    -1 for the root.  Only these nodes make split decisions.
    """
    d = domain.dims
    regions = [(domain.lo, domain.hi)]
    depths = [0]
    parents = [-1]
    frontier = [0]
    for depth in range(depth_cap - 1):
        nxt = []
        for pi in frontier:
            lo, hi = regions[pi]
            dims = _dims_for_level(depth, d, dims_per_level)
            for clo, chi in _child_regions(lo, hi, dims):
                regions.append((clo, chi))
                depths.append(depth + 1)
                parents.append(pi)
                nxt.append(len(regions) - 1)
        frontier = nxt
    return regions, np.asarray(depths), np.asarray(parents)


def privtree_split_probabilities(
    data: SpatialDataset,
    params: PrivacyParams,
    *,
    depth_cap: int,
    dims_per_level: int | None = None,
):
    """Exact per-candidate-node split probabilities on this dataset.

    Returns (probs, parents, counts) over the decision nodes (depth <
    depth_cap) of the complete tree, in BFS order.
    """
    dims_per_level = _resolve_dims_per_level(data, dims_per_level)
    if params.beta != 1 << dims_per_level:
        raise ParameterError("params.beta does not match the split fanout")
    regions, depths, parents = _candidate_decision_nodes(
        data.domain, depth_cap, dims_per_level
    )
    pts = data.points
    counts = np.empty(len(regions), dtype=np.int64)
    for i, (lo, hi) in enumerate(regions):
        mask = np.ones(pts.shape[0], dtype=bool)
        for j in range(data.domain.dims):
            mask &= (pts[:, j] >= lo[j]) & (pts[:, j] < hi[j])
        counts[i] = int(mask.sum())
    b = np.array(
        [
            biased_count(c, depth, params.theta, params.delta)
            for c, depth in zip(counts, depths)
        ]
    )
    probs = laplace_sf(params.theta - b, params.lam)
    return probs, parents, counts


def simulate_privtree_shapes(
    data: SpatialDataset,
    params: PrivacyParams,
    runs: int,
    rng: np.random.Generator,
    *,
    depth_cap: int,
    dims_per_level: int | None = None,
) -> np.ndarray:
    """Sample ``runs`` tree shapes, one bitmask per run.

    Bit i of a mask is set when decision node i (BFS order over the complete
    tree to depth_cap) is present in the tree and splits.  The simulation
    draws the same Laplace threshold test per node as build_privtree but
    vectorized across runs, which is what makes million-run audits feasible.
    """
    dims_per_level = _resolve_dims_per_level(data, dims_per_level)
    regions, depths, parents = _candidate_decision_nodes(
        data.domain, depth_cap, dims_per_level
    )
    ndec = len(regions)
    if ndec > 62:
        raise ParameterError(
            f"shape masks support at most 62 decision nodes, got {ndec}"
        )
    probs, parents, counts = privtree_split_probabilities(
        data, params, depth_cap=depth_cap, dims_per_level=dims_per_level
    )
    b = np.array(
        [
            biased_count(c, depth, params.theta, params.delta)
            for c, depth in zip(counts, depths)
        ]
    )
    noise = sample_laplace(params.lam, rng, size=(runs, ndec))
    raw_split = (b[None, :] + noise) > params.theta
    eff = np.empty_like(raw_split)
    masks = np.zeros(runs, dtype=np.int64)
    for i in range(ndec):
        if parents[i] < 0:
            eff[:, i] = raw_split[:, i]
        else:
            eff[:, i] = raw_split[:, i] & eff[:, parents[i]]
        masks |= eff[:, i].astype(np.int64) << i
    return masks


def shape_probability(mask: int, probs: np.ndarray, parents: np.ndarray) -> float:
    """Closed-form probability of one shape mask under independent split tests."""
    prob = 1.0
    for i in range(len(probs)):
        visible = parents[i] < 0 or (mask >> parents[i]) & 1
        bit = (mask >> i) & 1
        if not visible:
            if bit:
                raise ParameterError(f"mask {mask:b} sets bit {i} on an absent node")
            continue
        prob *= probs[i] if bit else 1.0 - probs[i]
    return float(prob)


def tree_shape_mask(
    tree: DecompTree, *, depth_cap: int, dims_per_level: int | None = None
) -> int:
    """Mask of a concrete built tree in the candidate-node numbering."""
    root = tree.node(tree.root)
    if dims_per_level is None:
        dims_per_level = tree.dims
    regions, depths, parents = _candidate_decision_nodes(
        SpatialDomain(root.lo, root.hi), depth_cap, dims_per_level
    )
    # pair candidate decision nodes with real nodes by BFS descent
    mask = 0
    pairs = deque([(0, tree.root)])
    children_of = {}
    for i, p in enumerate(parents):
        if p >= 0:
            children_of.setdefault(int(p), []).append(i)
    while pairs:
        ci, nid = pairs.popleft()
        node = tree.node(nid)
        if node.is_leaf:
            continue
        mask |= 1 << ci
        cand_children = children_of.get(ci, [])
        if cand_children:
            if len(cand_children) != len(node.children):
                raise InputDataError("tree fanout does not match candidate enumeration")
            for cci, cnid in zip(cand_children, node.children):
                pairs.append((cci, cnid))
        elif any(not tree.node(c).is_leaf for c in node.children):
            raise InputDataError("tree is deeper than the candidate depth cap")
    return mask
