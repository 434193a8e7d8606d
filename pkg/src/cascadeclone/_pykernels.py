"""Pure-Python reference versions of the compiled kernels in ``_kernels.pyx``.

Both implementations must produce bit-identical output; the random stream
is a counter-based hash, so no state is shared between draws.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

MASK = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
VICTIM_MULT = 0xD1B54A32D192ED03
KIND_MULT = 0xAEF17502108EF2D9
INV_2_53 = 1.0 / 9007199254740992.0

DRAW_INFECT = 0
DRAW_DELAY = 1
DRAW_QUOTE = 2

DELAY_EXPONENTIAL = 0
DELAY_CONSTANT = 1


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def trial_key(seed: int) -> int:
    return mix64((seed + GOLDEN) & MASK)


def node_key(tkey: int, node: int) -> int:
    return mix64(tkey ^ (((node + 1) * GOLDEN) & MASK))


def uniform(nkey: int, victim: int, kind: int) -> float:
    h = mix64((nkey + (victim + 1) * VICTIM_MULT + kind * KIND_MULT) & MASK)
    return (h >> 11) * INV_2_53


def draw_uniform(seed: int, infector: int, victim: int, kind: int) -> float:
    """Uniform in [0, 1) keyed by (trial seed, infector, victim, draw kind)."""
    return uniform(node_key(trial_key(seed & MASK), infector), victim, kind)


def delay(u: float, delay_kind: int, delay_param: float) -> float:
    if delay_kind == DELAY_CONSTANT:
        return delay_param
    return -delay_param * math.log1p(-u)


def _run(indptr, indices, probs, source, seed, delay_kind, delay_param, max_layer):
    tkey = trial_key(seed & MASK)
    state = {source: 0.0}
    layer = {source: 0}
    parent_edge = {source: -1}
    heap = [(0.0, source)]
    order = []
    while heap:
        t_i, i = heapq.heappop(heap)
        order.append(i)
        li = layer[i]
        if max_layer >= 0 and li >= max_layer:
            continue
        nkey = node_key(tkey, i)
        for e in range(indptr[i], indptr[i + 1]):
            j = int(indices[e])
            if j in state:
                continue
            p = probs[e]
            if uniform(nkey, j, DRAW_INFECT) < p:
                t_j = t_i + delay(uniform(nkey, j, DRAW_DELAY), delay_kind, delay_param)
                state[j] = t_j
                layer[j] = li + 1
                parent_edge[j] = e
                heapq.heappush(heap, (t_j, j))
    return order, state, layer, parent_edge


def cascade_trace(indptr, indices, probs, source, seed, delay_kind, delay_param, max_layer):
    """One trial; returns (nodes, times, layers, parent_edges) in dequeue order."""
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64).tolist()
    order, times, layer, parent_edge = _run(
        indptr.tolist(), indices, probs, int(source), int(seed),
        int(delay_kind), float(delay_param), int(max_layer),
    )
    return (
        np.array(order, dtype=np.int64),
        np.array([times[i] for i in order], dtype=np.float64),
        np.array([layer[i] for i in order], dtype=np.int32),
        np.array([parent_edge[i] for i in order], dtype=np.int64),
    )


def cascade_accumulate(indptr, indices, probs, source, seeds, delay_kind, delay_param,
                       max_layer, totals, layer_counts, node_hits, edge_hits):
    """Run one trial per seed and add results into the caller's buffers.

    ``totals[t]`` and ``layer_counts[t, :]`` are written for trial t;
    ``node_hits`` and ``edge_hits`` are incremented.
    """
    indptr_l = np.asarray(indptr, dtype=np.int64).tolist()
    indices_l = np.asarray(indices, dtype=np.int64)
    probs_l = np.asarray(probs, dtype=np.float64).tolist()
    cap = layer_counts.shape[1]
    for t, seed in enumerate(seeds):
        order, _, layer, parent_edge = _run(
            indptr_l, indices_l, probs_l, int(source), int(seed),
            int(delay_kind), float(delay_param), int(max_layer),
        )
        totals[t] = len(order)
        for i in order:
            node_hits[i] += 1
            l = layer[i]
            if l >= cap:
                raise ValueError("layer buffer too small")
            layer_counts[t, l] += 1
            e = parent_edge[i]
            if e >= 0:
                edge_hits[e] += 1


def histogram(bins, rows, grad, hess, n_bins, f_start, f_end, out):
    """Gradient/hessian histogram for features [f_start, f_end) over ``rows``.

    ``out`` has shape (n_features, n_bins, 2) and is overwritten in that range.
    """
    sub = bins[rows, f_start:f_end].astype(np.int64)
    g = grad[rows]
    h = hess[rows]
    for k in range(f_end - f_start):
        col = sub[:, k]
        out[f_start + k, :, 0] = np.bincount(col, weights=g, minlength=n_bins)[:n_bins]
        out[f_start + k, :, 1] = np.bincount(col, weights=h, minlength=n_bins)[:n_bins]
