"""Private prediction suffix trees for sequence data.

A prediction suffix tree (PST) node holds a predictor string (the suffix
context, extended leftward as the tree deepens) and a next-symbol histogram
over the alphabet plus the end marker.  The private build reuses the
bias-decayed split loop of the spatial module with the score

    score(v) = ||hist(v)||_1 - max(hist(v))

which is monotone along the tree and changes by at most ``l_max`` when one
length-capped sequence is inserted, so the split noise scale carries a
sensitivity factor of ``l_max``.

Reserved tokens: ``$`` starts every sequence, ``&`` ends every non-truncated
one; neither may appear in the alphabet.  Internally symbols map to dense ids
with START=0 and END=1.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from heapq import heappush, heappop

import numpy as np

from .dp_core import PrivacyParams, privtree_params, sample_laplace
from .errors import GenerationError, InputDataError, ParameterError
from .spatial import DEFAULT_DEPTH_CAP, biased_count

__all__ = [
    "Alphabet",
    "END_ID",
    "END_TOKEN",
    "Pst",
    "PstNode",
    "START_ID",
    "START_TOKEN",
    "SequenceDataset",
    "build_private_pst",
    "estimate_string_count",
    "exact_histograms",
    "generate_sequences",
    "load_pst",
    "load_sequences",
    "longest_suffix_node",
    "pst_from_json_dict",
    "pst_score",
    "top_k_strings",
    "truncate_sequences",
]

START_TOKEN = "$"
END_TOKEN = "&"
START_ID = 0
END_ID = 1


@dataclass(frozen=True)
class Alphabet:
    """Ordered symbol set; ids are dense with START=0, END=1, symbols from 2."""

    symbols: tuple

    def __post_init__(self):
        symbols = tuple(str(s) for s in self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if not symbols:
            raise ParameterError("alphabet must contain at least one symbol")
        if len(set(symbols)) != len(symbols):
            raise ParameterError("alphabet symbols must be distinct")
        if START_TOKEN in symbols or END_TOKEN in symbols:
            raise ParameterError(
                f"{START_TOKEN!r} and {END_TOKEN!r} are reserved tokens"
            )
        object.__setattr__(
            self, "_ids", {s: i + 2 for i, s in enumerate(symbols)}
        )

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def fanout(self) -> int:
        """Children per split: one per symbol plus the start marker."""
        return len(self.symbols) + 1

    def id_of(self, token: str) -> int:
        if token == START_TOKEN:
            return START_ID
        if token == END_TOKEN:
            return END_ID
        try:
            return self._ids[token]
        except KeyError:
            raise InputDataError(f"unknown symbol {token!r}") from None

    def token_of(self, sym_id: int) -> str:
        if sym_id == START_ID:
            return START_TOKEN
        if sym_id == END_ID:
            return END_TOKEN
        idx = sym_id - 2
        if not 0 <= idx < len(self.symbols):
            raise InputDataError(f"unknown symbol id {sym_id}")
        return self.symbols[idx]

    @property
    def symbol_ids(self) -> tuple:
        """Ids of the plain symbols (excluding START and END)."""
        return tuple(range(2, len(self.symbols) + 2))


@dataclass(frozen=True)
class SequenceDataset:
    """Length-capped sequences; entries marked open-ended carry no end marker.

    A stored sequence's length, counting the end marker when present (and
    never the start marker), is at most ``l_max``.
    """

    alphabet: Alphabet
    sequences: tuple
    open_ended: tuple
    l_max: int

    def __post_init__(self):
        if not (isinstance(self.l_max, (int, np.integer)) and self.l_max >= 1):
            raise ParameterError(f"l_max must be an integer >= 1, got {self.l_max!r}")
        seqs = tuple(tuple(int(t) for t in s) for s in self.sequences)
        opens = tuple(bool(o) for o in self.open_ended)
        if len(seqs) != len(opens):
            raise InputDataError("sequences and open_ended must align")
        valid = set(self.alphabet.symbol_ids)
        for s, is_open in zip(seqs, opens):
            if any(t not in valid for t in s):
                raise InputDataError("sequence contains ids outside the alphabet")
            if len(s) + (0 if is_open else 1) > self.l_max:
                raise InputDataError("sequence exceeds the length cap")
        object.__setattr__(self, "sequences", seqs)
        object.__setattr__(self, "open_ended", opens)

    @property
    def n(self) -> int:
        return len(self.sequences)


def truncate_sequences(raw, l_max: int, alphabet: Alphabet | None = None) -> SequenceDataset:
    """Cap every raw sequence at ``l_max`` symbols counting the end marker.

    Sequences of length ``< l_max`` (so length+END <= l_max) keep their end
    marker; longer ones are cut to their first ``l_max`` symbols and become
    open-ended.  ``raw`` holds token lists without sentinels; the alphabet is
    inferred in first-appearance order unless given.
    """
    if not (isinstance(l_max, (int, np.integer)) and l_max >= 1):
        raise ParameterError(f"l_max must be an integer >= 1, got {l_max!r}")
    raw = [list(map(str, s)) for s in raw]
    if alphabet is None:
        seen = []
        for s in raw:
            for tok in s:
                if tok not in seen:
                    seen.append(tok)
        if not seen:
            raise ParameterError("cannot infer an alphabet from empty input")
        alphabet = Alphabet(tuple(seen))
    sequences, opens = [], []
    for s in raw:
        ids = tuple(alphabet.id_of(t) for t in s)
        if len(ids) + 1 <= l_max:
            sequences.append(ids)
            opens.append(False)
        else:
            sequences.append(ids[: int(l_max)])
            opens.append(True)
    return SequenceDataset(
        alphabet=alphabet,
        sequences=tuple(sequences),
        open_ended=tuple(opens),
        l_max=int(l_max),
    )


def load_sequences(path):
    """Read newline-delimited records of whitespace-separated tokens.

    '#' comment lines and blank lines are ignored; an empty record is not
    representable in this format.
    """
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            out.append(line.split())
    return out


def pst_score(hist) -> float:
    """Histogram magnitude minus its largest count; 0 for an empty histogram."""
    if isinstance(hist, dict):
        counts = np.asarray(list(hist.values()), dtype=np.float64)
    else:
        counts = np.asarray(hist, dtype=np.float64)
    if counts.size == 0:
        return 0.0
    if (counts < 0).any():
        raise ParameterError("histogram counts must be nonnegative")
    return float(counts.sum() - counts.max())


@dataclass
class PstNode:
    """PST node: predictor ids (deepest-first growth is leftward prepend),
    next-symbol histogram indexed by symbol id (START slot unused, always 0),
    and children keyed by the prepended symbol id."""

    id: int
    predictor: tuple
    children: dict = field(default_factory=dict)
    hist: np.ndarray | None = None

    @property
    def depth(self) -> int:
        return len(self.predictor)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class Pst:
    nodes: list
    alphabet: Alphabet
    l_max: int
    params: PrivacyParams | None = None
    params_info: dict = field(default_factory=dict)
    root: int = 0

    def node(self, nid: int) -> PstNode:
        return self.nodes[nid]

    def to_json_dict(self) -> dict:
        keys = ("epsilon", "lambda", "theta", "delta")
        out_nodes = []
        for v in self.nodes:
            entry = {
                "id": v.id,
                "predictor": [self.alphabet.token_of(t) for t in v.predictor],
                "children": {
                    self.alphabet.token_of(sym): cid
                    for sym, cid in sorted(v.children.items())
                },
            }
            if v.hist is not None:
                entry["hist"] = {
                    self.alphabet.token_of(sym): float(v.hist[sym])
                    for sym in (END_ID, *self.alphabet.symbol_ids)
                }
            out_nodes.append(entry)
        return {
            "alphabet": list(self.alphabet.symbols),
            "l_max": self.l_max,
            "params": {k: self.params_info.get(k) for k in keys},
            "nodes": out_nodes,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())
            fh.write("\n")


def pst_from_json_dict(doc: dict) -> Pst:
    try:
        alphabet = Alphabet(tuple(doc["alphabet"]))
        l_max = int(doc["l_max"])
        params_info = dict(doc["params"])
        raw_nodes = doc["nodes"]
    except (KeyError, TypeError, ParameterError) as exc:
        raise InputDataError(f"malformed PST document: {exc}") from exc
    size = len(raw_nodes)
    nodes = [None] * size
    for entry in raw_nodes:
        nid = int(entry["id"])
        if not 0 <= nid < size or nodes[nid] is not None:
            raise InputDataError(f"bad or duplicate node id {nid}")
        hist = None
        if "hist" in entry:
            hist = np.zeros(alphabet.size + 2, dtype=np.float64)
            for tok, cnt in entry["hist"].items():
                hist[alphabet.id_of(tok)] = float(cnt)
        children = {
            alphabet.id_of(tok): int(cid) for tok, cid in entry["children"].items()
        }
        if any(not 0 <= cid < size for cid in children.values()):
            raise InputDataError(f"node {nid} references an unknown child id")
        nodes[nid] = PstNode(
            id=nid,
            predictor=tuple(alphabet.id_of(t) for t in entry["predictor"]),
            children=children,
            hist=hist,
        )
    root = next((v.id for v in nodes if v is not None and not v.predictor), None)
    if root is None:
        raise InputDataError("PST document has no empty-predictor root")
    return Pst(
        nodes=nodes, alphabet=alphabet, l_max=l_max, params_info=params_info, root=root
    )


def load_pst(path) -> Pst:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputDataError(f"{path}: invalid JSON ({exc})") from exc
    return pst_from_json_dict(doc)


# ---------------------------------------------------------------------------
# construction
#
# A "position" is (sequence, i): the i-th next-symbol of that sequence
# (1-based; includes the end marker for non-truncated sequences), whose
# context is the first i-1 symbols prefixed by the start marker.  A node owns
# the positions whose context ends with its predictor; its children partition
# them by the next-older context symbol (the start marker when the context is
# exactly the predictor).
# ---------------------------------------------------------------------------


def _all_positions(data: SequenceDataset):
    seq_idx, next_sym, next_pos = [], [], []
    for si, (seq, is_open) in enumerate(zip(data.sequences, data.open_ended)):
        emitted = list(seq) if is_open else list(seq) + [END_ID]
        for i, sym in enumerate(emitted, start=1):
            seq_idx.append(si)
            next_sym.append(sym)
            next_pos.append(i)
    return (
        np.asarray(seq_idx, dtype=np.intp),
        np.asarray(next_sym, dtype=np.intp),
        np.asarray(next_pos, dtype=np.intp),
    )


def _hist_from_positions(next_sym: np.ndarray, width: int) -> np.ndarray:
    return np.bincount(next_sym, minlength=width).astype(np.float64)


def _extension_symbols(data, seq_idx, next_pos, depth):
    """Symbol one step before the depth-long predictor in each context
    (START when the context is exactly the predictor)."""
    out = np.empty(seq_idx.size, dtype=np.intp)
    for k in range(seq_idx.size):
        j = next_pos[k] - 1 - depth  # 1-based index into the sequence
        out[k] = data.sequences[seq_idx[k]][j - 1] if j >= 1 else START_ID
    return out


def exact_histograms(data: SequenceDataset, predictors) -> dict:
    """Exact next-symbol histograms for the given predictor id-tuples.

    A position's context is the start marker followed by the symbols before
    it; the position lands in a predictor's histogram when the predictor is a
    suffix of that context.  Intended for fixtures and small oracles.
    """
    width = data.alphabet.size + 2
    out = {tuple(p): np.zeros(width, dtype=np.float64) for p in predictors}
    for seq, is_open in zip(data.sequences, data.open_ended):
        emitted = list(seq) if is_open else list(seq) + [END_ID]
        for i, sym in enumerate(emitted, start=1):
            ctx = (START_ID,) + tuple(seq[: i - 1])
            for pred, hist in out.items():
                m = len(pred)
                if m <= len(ctx) and (m == 0 or ctx[-m:] == pred):
                    hist[sym] += 1.0
    return out


def build_private_pst(
    data: SequenceDataset,
    epsilon: float,
    rng: np.random.Generator | None = None,
    *,
    theta: float = 0.0,
    tree_budget_fraction: float | None = None,
    depth_cap: int = DEFAULT_DEPTH_CAP,
    noiseless: bool = False,
) -> Pst:
    """Build a private PST: noisy structure first, noisy histograms second.

    Structure: the bias-decayed split loop with score ``pst_score`` and noise
    scale ``(2b-1)/(b-1) * l_max / eps_tree`` (fanout ``b = |alphabet|+1``,
    bias ``delta = lam * ln(b)``).  Nodes whose predictor starts with the
    start marker never split (nothing precedes the start marker), and they
    draw no split noise since the constraint is data-independent.

    Histograms: leaf histograms get Laplace noise of scale ``l_max /
    eps_hist``; internal histograms are their leaf sums, and any negative
    count in the released tree is then reset to zero.

    Budget: ``eps_tree = epsilon / b`` and ``eps_hist = epsilon * (b-1) / b``
    by default; pass ``tree_budget_fraction`` to override.  The score sums
    ``b - 1`` histogram counts, so giving the per-count histogram stage
    ``b - 1`` times the structure budget balances their noise levels.
    """
    if data.alphabet.size < 1:
        raise ParameterError("alphabet must be nonempty")
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon!r}")
    if not noiseless and rng is None:
        raise ParameterError("rng is required unless noiseless=True")
    beta = data.alphabet.fanout
    if tree_budget_fraction is None:
        tree_budget_fraction = 1.0 / beta
    if not 0.0 < tree_budget_fraction < 1.0:
        raise ParameterError(
            f"tree_budget_fraction must be in (0, 1), got {tree_budget_fraction!r}"
        )
    eps_tree = epsilon * tree_budget_fraction
    eps_hist = epsilon - eps_tree
    params = privtree_params(eps_tree, beta, theta, sensitivity=float(data.l_max))

    width = data.alphabet.size + 2
    seq_idx, next_sym, next_pos = _all_positions(data)
    root = PstNode(id=0, predictor=())
    nodes = [root]
    # (node id, position arrays); exact histograms live only in this frontier
    pending = deque([(0, seq_idx, next_sym, next_pos)])
    leaf_exact = {}
    while pending:
        nid, p_seq, p_sym, p_pos = pending.popleft()
        node = nodes[nid]
        hist = _hist_from_positions(p_sym, width)
        blocked = node.predictor and node.predictor[0] == START_ID
        split = False
        if not blocked and node.depth < depth_cap:
            b = biased_count(pst_score(hist), node.depth, params.theta, params.delta)
            b_hat = b if noiseless else b + sample_laplace(params.lam, rng)
            split = b_hat > params.theta
        if not split:
            leaf_exact[nid] = hist
            continue
        ext = _extension_symbols(data, p_seq, p_pos, node.depth)
        for sym in (START_ID, *data.alphabet.symbol_ids):
            child = PstNode(id=len(nodes), predictor=(sym,) + node.predictor)
            node.children[sym] = child.id
            nodes.append(child)
            mask = ext == sym
            pending.append((child.id, p_seq[mask], p_sym[mask], p_pos[mask]))

    hist_scale = data.l_max / eps_hist
    for nid in sorted(leaf_exact):
        hist = leaf_exact[nid].copy()
        if not noiseless:
            hist[1:] += sample_laplace(hist_scale, rng, size=width - 1)
        nodes[nid].hist = hist
    # internal histograms are leaf sums; negatives are zeroed afterwards so
    # the sums themselves stay unbiased
    for node in reversed(nodes):
        if not node.is_leaf:
            node.hist = sum(nodes[c].hist for c in node.children.values())
    for node in nodes:
        np.maximum(node.hist, 0.0, out=node.hist)

    info = {
        "epsilon": float(epsilon),
        "lambda": params.lam,
        "theta": params.theta,
        "delta": params.delta,
    }
    return Pst(
        nodes=nodes,
        alphabet=data.alphabet,
        l_max=data.l_max,
        params=params,
        params_info=info,
    )


# ---------------------------------------------------------------------------
# queries, mining, generation
# ---------------------------------------------------------------------------


def _to_ids(pst: Pst, tokens):
    return [
        t if isinstance(t, (int, np.integer)) else pst.alphabet.id_of(t)
        for t in tokens
    ]


def _deepest_suffix_node(pst: Pst, context_ids) -> int:
    nid = pst.root
    for sym in reversed(context_ids):
        child = pst.node(nid).children.get(sym)
        if child is None:
            break
        nid = child
    return nid


def longest_suffix_node(pst: Pst, s) -> int:
    """Id of the deepest node whose predictor is a suffix of ``s``.

    ``s`` must carry the start marker as its first token; the root (empty
    predictor) always matches.
    """
    ids = _to_ids(pst, s)
    if not ids or ids[0] != START_ID:
        raise ParameterError("sequence must start with the start marker")
    if any(t == START_ID for t in ids[1:]):
        raise ParameterError("start marker may appear only at the front")
    return _deepest_suffix_node(pst, ids)


def estimate_string_count(pst: Pst, s_q) -> float:
    """Estimated number of occurrences of ``s_q`` across the source sequences.

    Multiplies, symbol by symbol, the next-symbol probability predicted by
    the deepest matching context node; the first factor is the root histogram
    count itself.  Returns 0 when any visited histogram is empty, so the
    query stays total on clamped noisy trees.
    """
    ids = _to_ids(pst, s_q)
    if not ids:
        raise ParameterError("query string must be nonempty")
    if any(t == START_ID for t in ids):
        raise ParameterError("query strings never contain the start marker")
    if any(t == END_ID for t in ids[:-1]):
        raise ParameterError("the end marker may only terminate a query string")
    root_hist = pst.node(pst.root).hist
    if root_hist is None:
        raise InputDataError("PST has no histograms attached")
    ans = float(root_hist[ids[0]])
    for i in range(1, len(ids)):
        if ans == 0.0:
            return 0.0
        node = pst.node(_deepest_suffix_node(pst, ids[:i]))
        mag = float(node.hist.sum())
        if mag == 0.0:
            return 0.0
        ans *= float(node.hist[ids[i]]) / mag
    return ans


def top_k_strings(pst: Pst, k: int):
    """Best-first mining of the ``k`` highest-estimate symbol strings.

    The search pops the highest pending estimate, emits it, and pushes its
    one-symbol extensions (up to length ``l_max``).  Every extension
    multiplies the estimate by a factor <= 1, so estimates never increase
    along extensions and the emission order is globally correct.  Ties break
    shorter-first, then by alphabet order.  Returns ``(token_tuple,
    estimate)`` pairs; fewer than ``k`` when the string space is exhausted.
    """
    if not (isinstance(k, (int, np.integer)) and k >= 1):
        raise ParameterError(f"k must be an integer >= 1, got {k!r}")
    if pst.node(pst.root).hist is None:
        raise InputDataError("PST has no histograms attached")
    heap = []
    root_hist = pst.node(pst.root).hist
    for sym in pst.alphabet.symbol_ids:
        heappush(heap, (-float(root_hist[sym]), 1, (sym,)))
    out = []
    while heap and len(out) < k:
        neg_est, _, ids = heappop(heap)
        est = -neg_est
        out.append((tuple(pst.alphabet.token_of(t) for t in ids), est))
        if len(ids) >= pst.l_max:
            continue
        node = pst.node(_deepest_suffix_node(pst, list(ids)))
        mag = float(node.hist.sum())
        for sym in pst.alphabet.symbol_ids:
            child_est = est * float(node.hist[sym]) / mag if mag > 0.0 else 0.0
            heappush(heap, (-child_est, len(ids) + 1, ids + (sym,)))
    return out


def generate_sequences(pst: Pst, count: int, rng: np.random.Generator):
    """Sample synthetic sequences from the released model.

    Each sequence starts at the start marker and repeatedly samples the next
    symbol from the deepest matching context's normalized histogram until the
    end marker appears.  A hard cutoff at ``l_max`` emitted symbols ends the
    sequence regardless (clamped noisy histograms can lose the end marker);
    hitting a zero-magnitude histogram mid-sequence also ends it there.
    Returns token lists without sentinels.
    """
    if not (isinstance(count, (int, np.integer)) and count >= 0):
        raise ParameterError(f"count must be a nonnegative integer, got {count!r}")
    root_hist = pst.node(pst.root).hist
    if root_hist is None:
        raise InputDataError("PST has no histograms attached")
    if float(root_hist.sum()) <= 0.0:
        raise GenerationError("root histogram is empty; nothing to sample")
    out = []
    for _ in range(count):
        ctx = [START_ID]
        emitted = []
        while len(emitted) < pst.l_max:
            node = pst.node(_deepest_suffix_node(pst, ctx))
            hist = node.hist
            mag = float(hist.sum())
            if mag <= 0.0:
                break
            u = rng.random() * mag
            acc = 0.0
            sym = END_ID
            for cand in (END_ID, *pst.alphabet.symbol_ids):
                acc += float(hist[cand])
                if u < acc:
                    sym = cand
                    break
            if sym == END_ID:
                break
            emitted.append(sym)
            ctx.append(sym)
        out.append([pst.alphabet.token_of(t) for t in emitted])
    return out
