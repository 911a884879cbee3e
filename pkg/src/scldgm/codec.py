"""Finite-length code construction, systematic encoding, the BPSK-AWGN
channel, and sum-product decoding with two-step and joint schedules.

Graphs come from the configuration model (random socket permutation with
duplicate-edge repair).  Decoding is vectorized over edges and over blocks;
check updates run in the log-magnitude domain so saturated messages never
produce infinities, and every message is clipped to +-LLR_CLIP to stay
comparable with the quantized-evolution grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .degree import DegreeDistribution, average_degree
from .dde import CodeEnsemble, CodeKind
from .errors import ConstructionError, InvalidInputError

LLR_CLIP = 50.0

_REPAIR_PASSES = 200
_LDPC_REBUILDS = 50
_WILSON_Z = 1.959963984540054


@dataclass(frozen=True)
class RateSpec:
    """Dimensions of a concatenated code: k info bits, k' intermediate
    bits, n transmitted bits."""

    k: int
    k_prime: int
    n: int

    def __post_init__(self):
        if not 0 < self.k < self.k_prime < self.n:
            raise InvalidInputError(
                f"need 0 < k < k' < n, got {self.k}, {self.k_prime}, {self.n}"
            )

    @property
    def n_o(self) -> int:
        return self.k_prime - self.k

    @property
    def n_i(self) -> int:
        return self.n - self.k_prime

    @property
    def r_o(self) -> float:
        return self.k / self.k_prime

    @property
    def r_i(self) -> float:
        return self.k_prime / self.n

    @property
    def r(self) -> float:
        return self.k / self.n


def _degree_counts(dist: DegreeDistribution, n_nodes: int) -> dict[int, int]:
    """Integer node counts for each degree class by largest remainder."""
    shares = {d: c * n_nodes for d, c in dist.terms.items()}
    counts = {d: int(math.floor(s)) for d, s in shares.items()}
    short = n_nodes - sum(counts.values())
    by_remainder = sorted(shares, key=lambda d: shares[d] - counts[d], reverse=True)
    for d in by_remainder[:short]:
        counts[d] += 1
    return counts


def _degree_sequence(counts: dict[int, int]) -> np.ndarray:
    return np.repeat(
        np.fromiter(counts.keys(), dtype=np.int64),
        np.fromiter(counts.values(), dtype=np.int64),
    )


def _match_edge_total(counts: dict[int, int], target_edges: int) -> dict[int, int]:
    """Shift nodes between adjacent degree classes until the edge total
    matches; used on the check side, whose distribution is the completion
    of the variable side."""
    counts = dict(counts)
    degrees = sorted(counts)
    diff = target_edges - sum(d * c for d, c in counts.items())
    while diff != 0:
        moved = False
        if diff > 0:
            for lo, hi in zip(degrees, degrees[1:]):
                if hi - lo == 1 and counts[lo] > 0:
                    counts[lo] -= 1
                    counts[hi] += 1
                    diff -= 1
                    moved = True
                    break
        else:
            for lo, hi in zip(degrees, degrees[1:]):
                if hi - lo == 1 and counts[hi] > 0:
                    counts[hi] -= 1
                    counts[lo] += 1
                    diff += 1
                    moved = True
                    break
        if not moved:
            raise ConstructionError(
                f"cannot match edge total {target_edges} with degrees {degrees}"
            )
    return counts


class SparseBipartiteGraph:
    """Bipartite graph stored as edges sorted by check node, with the
    transposed variable-node grouping precomputed."""

    def __init__(self, vn_count: int, cn_count: int, edge_cn, edge_vn):
        order = np.lexsort((edge_vn, edge_cn))
        self.vn_count = int(vn_count)
        self.cn_count = int(cn_count)
        self.edge_cn = np.ascontiguousarray(edge_cn[order], dtype=np.int64)
        self.edge_vn = np.ascontiguousarray(edge_vn[order], dtype=np.int64)
        self.edge_count = len(self.edge_vn)
        keys = self.edge_cn * vn_count + self.edge_vn
        if len(np.unique(keys)) != self.edge_count:
            raise ConstructionError("duplicate edges in graph")
        self.cn_ptr = np.searchsorted(self.edge_cn, np.arange(cn_count + 1))
        if np.any(np.diff(self.cn_ptr) == 0):
            raise ConstructionError("check node with no edges")
        # Permutation grouping the same edges by variable node.
        self.vn_order = np.argsort(self.edge_vn, kind="stable")
        vn_sorted = self.edge_vn[self.vn_order]
        self.vn_ptr = np.searchsorted(vn_sorted, np.arange(vn_count + 1))
        if np.any(np.diff(self.vn_ptr) == 0):
            raise ConstructionError("variable node with no edges")

    def vn_degrees(self) -> np.ndarray:
        return np.diff(self.vn_ptr)

    def cn_degrees(self) -> np.ndarray:
        return np.diff(self.cn_ptr)


def _random_bipartite(
    vn_degrees: np.ndarray, cn_degrees: np.ndarray, rng: np.random.Generator
) -> SparseBipartiteGraph:
    """Configuration model: pair variable and check sockets by a random
    permutation, then swap away duplicate edges."""
    if vn_degrees.sum() != cn_degrees.sum():
        raise ConstructionError("socket counts differ between the two sides")
    vn_count, cn_count = len(vn_degrees), len(cn_degrees)
    edge_vn = np.repeat(np.arange(vn_count), vn_degrees)
    edge_cn = np.repeat(np.arange(cn_count), cn_degrees)
    edge_vn = edge_vn[rng.permutation(len(edge_vn))]
    for _ in range(_REPAIR_PASSES):
        keys = edge_cn * vn_count + edge_vn
        order = np.argsort(keys, kind="stable")
        dup = np.zeros(len(keys), dtype=bool)
        dup[order[1:]] = keys[order[1:]] == keys[order[:-1]]
        if not dup.any():
            return SparseBipartiteGraph(vn_count, cn_count, edge_cn, edge_vn)
        bad = np.flatnonzero(dup)
        partners = rng.integers(0, len(edge_vn), size=len(bad))
        for b, p in zip(bad, partners):
            edge_vn[b], edge_vn[p] = edge_vn[p], edge_vn[b]
    raise ConstructionError("duplicate edges persisted after repair passes")


class LdgmCode:
    """Generator-matrix code: each check node is a transmitted parity bit
    equal to the XOR of its neighbor variable nodes."""

    def __init__(self, graph: SparseBipartiteGraph):
        self.graph = graph
        self.message_length = graph.vn_count
        self.parity_length = graph.cn_count

    def parity(self, message: np.ndarray) -> np.ndarray:
        bits = np.asarray(message, dtype=np.uint8)
        return np.bitwise_xor.reduceat(bits[self.graph.edge_vn], self.graph.cn_ptr[:-1])

    def encode(self, message: np.ndarray) -> np.ndarray:
        message = np.asarray(message, dtype=np.uint8)
        if message.shape != (self.message_length,):
            raise InvalidInputError(
                f"message length {message.shape} != {self.message_length}"
            )
        return np.concatenate([message, self.parity(message)])


def build_ldgm(
    k_prime: int,
    vn_dist: DegreeDistribution,
    cn_dist: DegreeDistribution,
    seed,
) -> LdgmCode:
    """Random LDGM code on k_prime message bits; the check count follows
    from the edge balance of the two distributions."""
    rng = np.random.default_rng(seed)
    cn_count_real = k_prime * average_degree(vn_dist) / average_degree(cn_dist)
    cn_count = round(cn_count_real)
    if cn_count < 1:
        raise ConstructionError("degree distributions give no check nodes")
    vn_counts = _degree_counts(vn_dist, k_prime)
    vn_degrees = _degree_sequence(vn_counts)
    cn_counts = _match_edge_total(
        _degree_counts(cn_dist, cn_count), int(vn_degrees.sum())
    )
    cn_degrees = _degree_sequence(cn_counts)
    return LdgmCode(_random_bipartite(vn_degrees, cn_degrees, rng))


class LdpcCode:
    """Parity-check code with a systematic encoder.  Graph columns are
    arranged so positions [0, k) carry the information bits and positions
    [k, k') the parity bits solved from the check equations (any columns
    left free by dependent check rows are frozen to zero)."""

    def __init__(self, graph: SparseBipartiteGraph, encoder_matrix: np.ndarray):
        self.graph = graph
        self.codeword_length = graph.vn_count
        self.check_count = graph.cn_count
        self.message_length = self.codeword_length - self.check_count
        self.encoder_matrix = encoder_matrix  # rank x message_length
        self.frozen_count = self.check_count - encoder_matrix.shape[0]

    def encode(self, message: np.ndarray) -> np.ndarray:
        message = np.asarray(message, dtype=np.uint8)
        if message.shape != (self.message_length,):
            raise InvalidInputError(
                f"message length {message.shape} != {self.message_length}"
            )
        parity = (self.encoder_matrix @ message.astype(np.int64)) & 1
        return np.concatenate(
            [message, np.zeros(self.frozen_count, dtype=np.uint8), parity.astype(np.uint8)]
        )

    def syndrome(self, codeword: np.ndarray) -> np.ndarray:
        bits = np.asarray(codeword, dtype=np.uint8)
        return np.bitwise_xor.reduceat(bits[self.graph.edge_vn], self.graph.cn_ptr[:-1])


def _gf2_systemize(graph: SparseBipartiteGraph, message_length: int):
    """Reduced row echelon form over GF(2) with free column pivoting.

    Dependent rows reduce to zero and are satisfied by construction
    (regular graphs with even variable degree always carry at least one:
    the XOR of all rows is zero).  Spare free columns beyond the requested
    message length are frozen to zero so the nominal dimensions hold.
    Returns (encoder matrix, new-position -> old-column permutation), or
    None when too few independent rows remain.
    """
    n_chk, n_col = graph.cn_count, graph.vn_count
    dense = np.zeros((n_chk, n_col), dtype=np.uint8)
    dense[graph.edge_cn, graph.edge_vn] = 1
    available = np.ones(n_col, dtype=bool)
    pivot_cols = []
    pivot_rows = []
    for row in range(n_chk):
        candidates = np.flatnonzero(dense[row] & available)
        if len(candidates) == 0:
            if dense[row].any():
                return None
            continue
        col = candidates[0]
        pivot_cols.append(col)
        pivot_rows.append(row)
        available[col] = False
        hits = np.flatnonzero(dense[:, col])
        hits = hits[hits != row]
        dense[hits] ^= dense[row]
    free_cols = np.flatnonzero(available)
    if len(free_cols) < message_length:
        return None
    info_cols = free_cols[:message_length]
    frozen_cols = free_cols[message_length:]
    encoder = dense[np.ix_(pivot_rows, info_cols)].copy()
    new_to_old = np.concatenate(
        [info_cols, frozen_cols, np.asarray(pivot_cols, dtype=np.int64)]
    )
    return encoder, new_to_old


def build_ldpc(
    k_prime: int,
    vn_dist: DegreeDistribution,
    cn_dist: DegreeDistribution,
    seed,
) -> LdpcCode:
    """Random LDPC code of length k_prime with a precomputed systematic
    encoder; draws that cannot be systemized are rebuilt before giving up."""
    rng = np.random.default_rng(seed)
    check_count_real = k_prime * average_degree(vn_dist) / average_degree(cn_dist)
    check_count = round(check_count_real)
    if check_count < 1:
        raise ConstructionError("degree distributions give no check equations")
    vn_counts = _degree_counts(vn_dist, k_prime)
    vn_degrees = _degree_sequence(vn_counts)
    cn_counts = _match_edge_total(
        _degree_counts(cn_dist, check_count), int(vn_degrees.sum())
    )
    cn_degrees = _degree_sequence(cn_counts)
    for _ in range(_LDPC_REBUILDS):
        graph = _random_bipartite(vn_degrees, cn_degrees, rng)
        result = _gf2_systemize(graph, k_prime - check_count)
        if result is None:
            continue
        encoder, new_to_old = result
        old_to_new = np.empty_like(new_to_old)
        old_to_new[new_to_old] = np.arange(len(new_to_old))
        remapped = SparseBipartiteGraph(
            graph.vn_count, graph.cn_count, graph.edge_cn, old_to_new[graph.edge_vn]
        )
        return LdpcCode(remapped, encoder)
    raise ConstructionError("parity-check matrix rank deficient after rebuilds")


@dataclass
class ConcatenatedCode:
    """Outer code feeding an inner LDGM code; output layout is
    [info | outer parity | inner parity]."""

    outer: LdgmCode | LdpcCode
    inner: LdgmCode
    rates: RateSpec

    def __post_init__(self):
        k_prime = (
            self.outer.message_length + self.outer.parity_length
            if isinstance(self.outer, LdgmCode)
            else self.outer.codeword_length
        )
        if k_prime != self.rates.k_prime or self.inner.message_length != k_prime:
            raise InvalidInputError("outer code length must match inner message length")
        if self.inner.parity_length != self.rates.n_i:
            raise InvalidInputError("inner parity count inconsistent with rates")

    @property
    def outer_is_ldpc(self) -> bool:
        return isinstance(self.outer, LdpcCode)

    def encode(self, info_bits: np.ndarray) -> np.ndarray:
        info_bits = np.asarray(info_bits, dtype=np.uint8)
        if info_bits.shape != (self.rates.k,):
            raise InvalidInputError(f"need {self.rates.k} information bits")
        intermediate = self.outer.encode(info_bits)
        return np.concatenate([intermediate, self.inner.parity(intermediate)])


def build_concatenated(
    k: int,
    inner: CodeEnsemble,
    outer: CodeEnsemble,
    seed,
) -> ConcatenatedCode:
    """Sample a finite-length realization of a concatenated ensemble."""
    if inner.kind is not CodeKind.LDGM_INNER:
        raise InvalidInputError("inner ensemble must be an LDGM inner code")
    if outer.kind is CodeKind.LDGM_INNER:
        raise InvalidInputError("outer ensemble must be an outer code")
    seeds = np.random.SeedSequence(seed).spawn(2)
    k_prime = round(k / outer.rate)
    if outer.kind is CodeKind.LDGM_OUTER:
        outer_code = build_ldgm(k, outer.vn_dist, outer.cn_dist, seeds[0])
        if outer_code.parity_length != k_prime - k:
            raise ConstructionError("outer parity count inconsistent with rate")
    else:
        outer_code = build_ldpc(k_prime, outer.vn_dist, outer.cn_dist, seeds[0])
        if outer_code.message_length != k:
            raise ConstructionError("outer message length inconsistent with rate")
    inner_code = build_ldgm(k_prime, inner.vn_dist, inner.cn_dist, seeds[1])
    n = k_prime + inner_code.parity_length
    return ConcatenatedCode(outer_code, inner_code, RateSpec(k, k_prime, n))


def save_code(code: ConcatenatedCode, path) -> None:
    """Store a code instance as a JSON header plus a compact binary
    adjacency file (<path>.json and <path>.adj)."""
    path = Path(path)
    arrays = [
        code.outer.graph.edge_cn,
        code.outer.graph.edge_vn,
        code.inner.graph.edge_cn,
        code.inner.graph.edge_vn,
    ]
    header = {
        "format": 1,
        "k": code.rates.k,
        "k_prime": code.rates.k_prime,
        "n": code.rates.n,
        "outer_kind": "ldpc" if code.outer_is_ldpc else "ldgm",
        "outer_cn_count": code.outer.graph.cn_count,
        "outer_edges": int(code.outer.graph.edge_count),
        "inner_edges": int(code.inner.graph.edge_count),
    }
    if code.outer_is_ldpc:
        header["encoder_shape"] = list(code.outer.encoder_matrix.shape)
        arrays.append(np.packbits(code.outer.encoder_matrix.ravel()))
    with open(path.with_suffix(".adj"), "wb") as fh:
        for array in arrays[:-1] if code.outer_is_ldpc else arrays:
            fh.write(array.astype(np.uint32).tobytes())
        if code.outer_is_ldpc:
            fh.write(arrays[-1].tobytes())
    path.with_suffix(".json").write_text(json.dumps(header, indent=1) + "\n")


def load_code(path) -> ConcatenatedCode:
    """Inverse of save_code."""
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    if header.get("format") != 1:
        raise InvalidInputError(f"unsupported code file format {header.get('format')}")
    raw = path.with_suffix(".adj").read_bytes()
    k, k_prime, n = header["k"], header["k_prime"], header["n"]
    outer_edges, inner_edges = header["outer_edges"], header["inner_edges"]
    counts = [outer_edges, outer_edges, inner_edges, inner_edges]
    arrays = []
    offset = 0
    for count in counts:
        arrays.append(
            np.frombuffer(raw, dtype=np.uint32, count=count, offset=offset).astype(
                np.int64
            )
        )
        offset += 4 * count
    outer_cn = header["outer_cn_count"]
    if header["outer_kind"] == "ldpc":
        rows, cols = header["encoder_shape"]
        packed = np.frombuffer(raw, dtype=np.uint8, offset=offset)
        encoder = np.unpackbits(packed, count=rows * cols).reshape(rows, cols)
        outer_graph = SparseBipartiteGraph(k_prime, outer_cn, arrays[0], arrays[1])
        outer: LdgmCode | LdpcCode = LdpcCode(outer_graph, encoder)
    else:
        outer_graph = SparseBipartiteGraph(k, outer_cn, arrays[0], arrays[1])
        outer = LdgmCode(outer_graph)
    inner_graph = SparseBipartiteGraph(k_prime, n - k_prime, arrays[2], arrays[3])
    return ConcatenatedCode(outer, LdgmCode(inner_graph), RateSpec(k, k_prime, n))


def transmit(bits: np.ndarray, sigma: float, rng) -> np.ndarray:
    """BPSK (0 -> +1, 1 -> -1) over AWGN; returns channel LLRs 2y/sigma^2."""
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    bits = np.asarray(bits, dtype=np.uint8)
    symbols = 1.0 - 2.0 * bits.astype(np.float64)
    received = symbols + sigma * rng.standard_normal(bits.shape)
    return 2.0 * received / (sigma * sigma)


# ---------------------------------------------------------------------------
# Sum-product message passing, vectorized over edges and blocks.
# Message arrays have shape (blocks, edges); node arrays (blocks, nodes).


def _log_tanh_mag(llr_abs: np.ndarray) -> np.ndarray:
    """log tanh(|L|/2), computed from exp(-|L|) so large magnitudes keep
    their tiny distance from zero; -inf at L = 0."""
    e = np.exp(-llr_abs)
    with np.errstate(divide="ignore"):
        return np.log1p(-e) - np.log1p(e)


def _mag_from_log_product(log_prod: np.ndarray, clip: float) -> np.ndarray:
    """2*atanh(exp(g)) for g <= 0, clipped; g = 0 maps to the clip value."""
    z = np.exp(log_prod)
    with np.errstate(divide="ignore"):
        mag = np.log1p(z) - np.log1p(-z)
    return np.minimum(mag, clip)


def _segment_sum(values: np.ndarray, ptr: np.ndarray) -> np.ndarray:
    return np.add.reduceat(values, ptr[:-1], axis=-1)


def _check_update(
    graph: SparseBipartiteGraph,
    msg_vc: np.ndarray,
    cn_obs: np.ndarray | None,
    clip: float = LLR_CLIP,
) -> np.ndarray:
    """Check-to-variable messages under the product rule, with the check's
    own channel LLR included in the product when cn_obs is given."""
    mag = np.abs(msg_vc)
    g = _log_tanh_mag(mag)
    zero = mag == 0.0
    neg = msg_vc < 0.0
    g_sum = _segment_sum(np.where(zero, 0.0, g), graph.cn_ptr)
    zeros = _segment_sum(zero.astype(np.int64), graph.cn_ptr)
    negs = _segment_sum(neg.astype(np.int64), graph.cn_ptr)
    if cn_obs is not None:
        obs_zero = cn_obs == 0.0
        g_sum = g_sum + np.where(obs_zero, 0.0, _log_tanh_mag(np.abs(cn_obs)))
        zeros = zeros + obs_zero
        negs = negs + (cn_obs < 0.0)
    e_cn = graph.edge_cn
    other_zeros = zeros[..., e_cn] - zero
    log_prod = g_sum[..., e_cn] - np.where(zero, 0.0, g)
    out_mag = _mag_from_log_product(np.minimum(log_prod, 0.0), clip)
    sign = 1.0 - 2.0 * ((negs[..., e_cn] - neg) & 1)
    return np.where(other_zeros > 0, 0.0, sign * out_mag)


def _check_belief(
    graph: SparseBipartiteGraph, msg_vc: np.ndarray, clip: float = LLR_CLIP
) -> np.ndarray:
    """Per-check product-rule combination of all incoming messages: the
    check's extrinsic estimate of its own parity bit."""
    mag = np.abs(msg_vc)
    g = _log_tanh_mag(mag)
    zero = mag == 0.0
    g_sum = _segment_sum(np.where(zero, 0.0, g), graph.cn_ptr)
    zeros = _segment_sum(zero.astype(np.int64), graph.cn_ptr)
    negs = _segment_sum((msg_vc < 0.0).astype(np.int64), graph.cn_ptr)
    out_mag = _mag_from_log_product(np.minimum(g_sum, 0.0), clip)
    sign = 1.0 - 2.0 * (negs & 1)
    return np.where(zeros > 0, 0.0, sign * out_mag)


def _vn_sums(graph: SparseBipartiteGraph, msg_cv: np.ndarray) -> np.ndarray:
    return _segment_sum(msg_cv[..., graph.vn_order], graph.vn_ptr)


def _variable_update(
    graph: SparseBipartiteGraph,
    msg_cv: np.ndarray,
    priors: np.ndarray,
    clip: float = LLR_CLIP,
) -> tuple[np.ndarray, np.ndarray]:
    """Variable-to-check messages and the decision totals."""
    totals = priors + _vn_sums(graph, msg_cv)
    msg_vc = np.clip(totals[..., graph.edge_vn] - msg_cv, -clip, clip)
    return msg_vc, totals


def _run_sum_product(
    graph: SparseBipartiteGraph,
    priors: np.ndarray,
    cn_obs: np.ndarray | None,
    iterations: int,
) -> np.ndarray:
    """Plain sum-product schedule; returns the decision totals."""
    msg_vc = np.clip(priors[..., graph.edge_vn], -LLR_CLIP, LLR_CLIP)
    totals = priors
    for _ in range(iterations):
        msg_cv = _check_update(graph, msg_vc, cn_obs)
        msg_vc, totals = _variable_update(graph, msg_cv, priors)
    return totals


@dataclass
class DecodeResult:
    """Hard decisions for the information bits plus bookkeeping."""

    info_bits: np.ndarray
    inner_iterations: int
    outer_iterations: int
    bit_errors: int | None = None


def _hard(llr: np.ndarray) -> np.ndarray:
    # An exactly zero decision LLR counts as a bit value of 1.
    return (llr <= 0.0).astype(np.uint8)


def _outer_stage(code: ConcatenatedCode, inner_decision: np.ndarray, iterations: int):
    k = code.rates.k
    if code.outer_is_ldpc:
        priors = inner_decision
        totals = _run_sum_product(code.outer.graph, priors, None, iterations)
        return totals[..., :k]
    priors = inner_decision[..., :k]
    cn_obs = inner_decision[..., k:]
    totals = _run_sum_product(code.outer.graph, priors, cn_obs, iterations)
    return totals


def _decode_two_step_batch(
    code: ConcatenatedCode, llrs: np.ndarray, inner_iters: int, outer_iters: int
) -> np.ndarray:
    k_prime = code.rates.k_prime
    llrs = np.clip(llrs, -LLR_CLIP, LLR_CLIP)
    inner_totals = _run_sum_product(
        code.inner.graph, llrs[..., :k_prime], llrs[..., k_prime:], inner_iters
    )
    outer_totals = _outer_stage(code, inner_totals, outer_iters)
    return _hard(outer_totals[..., : code.rates.k])


def _decode_joint_batch(
    code: ConcatenatedCode, llrs: np.ndarray, global_iters: int
) -> np.ndarray:
    """One inner and one outer pass per global iteration, exchanging
    extrinsic information on the intermediate bits."""
    k, k_prime = code.rates.k, code.rates.k_prime
    llrs = np.clip(llrs, -LLR_CLIP, LLR_CLIP)
    channel_m = llrs[..., :k_prime]
    channel_p = llrs[..., k_prime:]
    inner_graph = code.inner.graph
    outer_graph = code.outer.graph
    batch_shape = llrs.shape[:-1]
    outer_ext = np.zeros(batch_shape + (k_prime,))
    msg_vc_in = None
    msg_vc_out = None
    outer_totals = channel_m[..., :k]
    for _ in range(global_iters):
        inner_priors = np.clip(channel_m + outer_ext, -LLR_CLIP, LLR_CLIP)
        if msg_vc_in is None:
            msg_vc_in = np.clip(inner_priors[..., inner_graph.edge_vn], -LLR_CLIP, LLR_CLIP)
        msg_cv_in = _check_update(inner_graph, msg_vc_in, channel_p)
        msg_vc_in, _ = _variable_update(inner_graph, msg_cv_in, inner_priors)
        # Extrinsic decision toward the outer stage: channel plus inner
        # check messages, without the outer stage's own contribution.
        decision_ext = channel_m + _vn_sums(inner_graph, msg_cv_in)
        if code.outer_is_ldpc:
            outer_priors = np.clip(decision_ext, -LLR_CLIP, LLR_CLIP)
            outer_obs = None
        else:
            outer_priors = np.clip(decision_ext[..., :k], -LLR_CLIP, LLR_CLIP)
            outer_obs = np.clip(decision_ext[..., k:], -LLR_CLIP, LLR_CLIP)
        if msg_vc_out is None:
            msg_vc_out = outer_priors[..., outer_graph.edge_vn].copy()
        msg_cv_out = _check_update(outer_graph, msg_vc_out, outer_obs)
        msg_vc_out, outer_totals = _variable_update(outer_graph, msg_cv_out, outer_priors)
        if code.outer_is_ldpc:
            outer_ext = _vn_sums(outer_graph, msg_cv_out)
        else:
            outer_ext = np.concatenate(
                [
                    _vn_sums(outer_graph, msg_cv_out),
                    _check_belief(outer_graph, msg_vc_out),
                ],
                axis=-1,
            )
    return _hard(outer_totals[..., :k])


def sp_decode_two_step(
    code: ConcatenatedCode,
    llr: np.ndarray,
    inner_iters: int = 100,
    outer_iters: int = 100,
    reference: np.ndarray | None = None,
) -> DecodeResult:
    """Inner sum-product decoding to completion, then outer decoding seeded
    with the inner decision LLRs."""
    llr = np.asarray(llr, dtype=np.float64)
    if llr.shape != (code.rates.n,):
        raise InvalidInputError(f"llr length {llr.shape} != n = {code.rates.n}")
    bits = _decode_two_step_batch(code, llr[None, :], inner_iters, outer_iters)[0]
    errors = None if reference is None else int(np.count_nonzero(bits != reference))
    return DecodeResult(bits, inner_iters, outer_iters, errors)


def sp_decode_joint(
    code: ConcatenatedCode,
    llr: np.ndarray,
    global_iters: int = 100,
    reference: np.ndarray | None = None,
) -> DecodeResult:
    """Joint schedule: inner and outer decoding in every iteration."""
    llr = np.asarray(llr, dtype=np.float64)
    if llr.shape != (code.rates.n,):
        raise InvalidInputError(f"llr length {llr.shape} != n = {code.rates.n}")
    bits = _decode_joint_batch(code, llr[None, :], global_iters)[0]
    errors = None if reference is None else int(np.count_nonzero(bits != reference))
    return DecodeResult(bits, global_iters, global_iters, errors)


def _wilson_interval(errors: int, trials: int) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    z2 = _WILSON_Z * _WILSON_Z
    phat = errors / trials
    denom = 1.0 + z2 / trials
    center = (phat + z2 / (2 * trials)) / denom
    half = (
        _WILSON_Z
        * math.sqrt(phat * (1 - phat) / trials + z2 / (4 * trials * trials))
        / denom
    )
    return max(center - half, 0.0), min(center + half, 1.0)


@dataclass(frozen=True)
class SimPoint:
    eb_no_db: float
    ber: float
    ci_low: float
    ci_high: float
    blocks: int
    bit_errors: int


def _block_errors(code, sigma, seed, point_index, blocks, decoder, inner_iters, outer_iters):
    """Bit-error count of each block in [blocks[0], blocks[1]).  Every block
    draws from its own seeded stream, so results do not depend on batching
    or scheduling."""
    k = code.rates.k
    lo, hi = blocks
    count = hi - lo
    messages = np.empty((count, k), dtype=np.uint8)
    llrs = np.empty((count, code.rates.n))
    for i, block in enumerate(range(lo, hi)):
        rng = np.random.default_rng([seed, point_index, block])
        messages[i] = rng.integers(0, 2, size=k, dtype=np.uint8)
        llrs[i] = transmit(code.encode(messages[i]), sigma, rng)
    if decoder == "two-step":
        decoded = _decode_two_step_batch(code, llrs, inner_iters, outer_iters)
    elif decoder == "joint":
        decoded = _decode_joint_batch(code, llrs, inner_iters)
    else:
        raise InvalidInputError(f"unknown decoder {decoder!r}")
    return np.count_nonzero(decoded != messages, axis=1)


def simulate_ber(
    code: ConcatenatedCode,
    eb_no_list,
    max_blocks: int,
    min_errors: int,
    seed,
    decoder: str = "two-step",
    inner_iters: int = 100,
    outer_iters: int = 100,
    batch: int = 32,
    jobs: int = 1,
) -> list[SimPoint]:
    """Monte-Carlo bit error rate of a code instance.

    Each point runs blocks until min_errors bit errors accumulate or
    max_blocks is reached.  Blocks are evaluated in deterministic per-block
    streams and tallied in order, so the result is identical for any batch
    size or worker count.
    """
    if max_blocks < 1:
        raise InvalidInputError("max_blocks must be at least 1")
    executor = None
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        executor = ProcessPoolExecutor(max_workers=jobs)
    try:
        results = []
        for point_index, db in enumerate(eb_no_list):
            sigma = math.sqrt(1.0 / (2.0 * code.rates.r * 10.0 ** (db / 10.0)))
            tally_errors = 0
            tally_blocks = 0
            done = False
            next_block = 0
            while not done and next_block < max_blocks:
                ranges = []
                start = next_block
                workers = jobs if executor is not None else 1
                for _ in range(workers):
                    if start >= max_blocks:
                        break
                    stop = min(start + batch, max_blocks)
                    ranges.append((start, stop))
                    start = stop
                next_block = start
                args = [
                    (code, sigma, seed, point_index, rg, decoder, inner_iters, outer_iters)
                    for rg in ranges
                ]
                if executor is not None:
                    chunk_errors = list(executor.map(_block_errors_star, args))
                else:
                    chunk_errors = [_block_errors(*a) for a in args]
                for errors in chunk_errors:
                    if done:
                        break
                    for e in errors:
                        tally_errors += int(e)
                        tally_blocks += 1
                        if tally_errors >= min_errors:
                            done = True
                            break
            trials = tally_blocks * code.rates.k
            lo, hi = _wilson_interval(tally_errors, trials)
            results.append(
                SimPoint(db, tally_errors / trials, lo, hi, tally_blocks, tally_errors)
            )
        return results
    finally:
        if executor is not None:
            executor.shutdown()


def _block_errors_star(args):
    return _block_errors(*args)
