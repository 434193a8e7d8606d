# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled cascade and histogram kernels.

Mirrors ``_pykernels`` exactly; see that module for the reference semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log1p
from libc.stdint cimport uint64_t, int64_t, int32_t, int8_t, uint16_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t VICTIM_MULT = 0xD1B54A32D192ED03ULL
cdef uint64_t KIND_MULT = 0xAEF17502108EF2D9ULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double uniform(uint64_t nkey, int64_t victim, uint64_t kind) noexcept nogil:
    cdef uint64_t h = mix64(nkey + <uint64_t>(victim + 1) * VICTIM_MULT + kind * KIND_MULT)
    return <double>(h >> 11) * INV_2_53


cdef inline double delay(double u, int kind, double param) noexcept nogil:
    if kind == 1:
        return param
    return -param * log1p(-u)


cdef inline bint heap_less(double ta, int64_t na, double tb, int64_t nb) noexcept nogil:
    return ta < tb or (ta == tb and na < nb)


cdef inline void heap_push(double* ht, int64_t* hn, int64_t* size, double t, int64_t n) noexcept nogil:
    cdef int64_t i = size[0]
    cdef int64_t parent
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if heap_less(t, n, ht[parent], hn[parent]):
            ht[i] = ht[parent]
            hn[i] = hn[parent]
            i = parent
        else:
            break
    ht[i] = t
    hn[i] = n


cdef inline void heap_pop(double* ht, int64_t* hn, int64_t* size, double* t_out, int64_t* n_out) noexcept nogil:
    cdef int64_t last, i, child, sz
    cdef double t
    cdef int64_t n
    t_out[0] = ht[0]
    n_out[0] = hn[0]
    size[0] -= 1
    sz = size[0]
    if sz == 0:
        return
    t = ht[sz]
    n = hn[sz]
    i = 0
    while True:
        child = 2 * i + 1
        if child >= sz:
            break
        if child + 1 < sz and heap_less(ht[child + 1], hn[child + 1], ht[child], hn[child]):
            child += 1
        if heap_less(ht[child], hn[child], t, n):
            ht[i] = ht[child]
            hn[i] = hn[child]
            i = child
        else:
            break
    ht[i] = t
    hn[i] = n


cdef struct Work:
    int8_t* state
    double* time
    int32_t* layer
    int64_t* parent_edge
    int64_t* order
    double* ht
    int64_t* hn


cdef int64_t run_one(const int64_t[::1] indptr, const int64_t[::1] indices, const double[::1] probs,
                     int64_t source, uint64_t seed, int delay_kind, double delay_param,
                     int64_t max_layer, Work* w) noexcept nogil:
    """Run a trial; returns number infected. Leaves state dirty for touched nodes."""
    cdef uint64_t tkey = mix64(seed + GOLDEN)
    cdef uint64_t nkey
    cdef int64_t size = 0
    cdef int64_t count = 0
    cdef int64_t i, j, e
    cdef double t_i, t_j
    cdef int32_t li
    w.state[source] = 1
    w.time[source] = 0.0
    w.layer[source] = 0
    w.parent_edge[source] = -1
    heap_push(w.ht, w.hn, &size, 0.0, source)
    while size > 0:
        heap_pop(w.ht, w.hn, &size, &t_i, &i)
        w.order[count] = i
        count += 1
        li = w.layer[i]
        if max_layer >= 0 and li >= max_layer:
            continue
        nkey = mix64(tkey ^ (<uint64_t>(i + 1) * GOLDEN))
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            if w.state[j] != 0:
                continue
            if uniform(nkey, j, 0) < probs[e]:
                t_j = t_i + delay(uniform(nkey, j, 1), delay_kind, delay_param)
                w.state[j] = 1
                w.time[j] = t_j
                w.layer[j] = li + 1
                w.parent_edge[j] = e
                heap_push(w.ht, w.hn, &size, t_j, j)
    return count


cdef int alloc_work(Work* w, int64_t n) noexcept nogil:
    cdef int64_t k
    w.state = <int8_t*> malloc(n * sizeof(int8_t))
    w.time = <double*> malloc(n * sizeof(double))
    w.layer = <int32_t*> malloc(n * sizeof(int32_t))
    w.parent_edge = <int64_t*> malloc(n * sizeof(int64_t))
    w.order = <int64_t*> malloc(n * sizeof(int64_t))
    w.ht = <double*> malloc(n * sizeof(double))
    w.hn = <int64_t*> malloc(n * sizeof(int64_t))
    if (w.state == NULL or w.time == NULL or w.layer == NULL or w.parent_edge == NULL
            or w.order == NULL or w.ht == NULL or w.hn == NULL):
        return -1
    for k in range(n):
        w.state[k] = 0
    return 0


cdef void free_work(Work* w) noexcept nogil:
    free(w.state)
    free(w.time)
    free(w.layer)
    free(w.parent_edge)
    free(w.order)
    free(w.ht)
    free(w.hn)


def cascade_trace(indptr, indices, probs, int64_t source, seed, int delay_kind,
                  double delay_param, int64_t max_layer):
    cdef const int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const double[::1] pr = np.ascontiguousarray(probs, dtype=np.float64)
    cdef int64_t n = ip.shape[0] - 1
    cdef uint64_t useed = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef Work w
    cdef int64_t count, k, node
    if source < 0 or source >= n:
        raise IndexError("source out of range")
    if alloc_work(&w, n) != 0:
        free_work(&w)
        raise MemoryError()
    try:
        with nogil:
            count = run_one(ip, ix, pr, source, useed, delay_kind, delay_param, max_layer, &w)
        nodes = np.empty(count, dtype=np.int64)
        times = np.empty(count, dtype=np.float64)
        layers = np.empty(count, dtype=np.int32)
        parents = np.empty(count, dtype=np.int64)
        for k in range(count):
            node = w.order[k]
            nodes[k] = node
            times[k] = w.time[node]
            layers[k] = w.layer[node]
            parents[k] = w.parent_edge[node]
    finally:
        free_work(&w)
    return nodes, times, layers, parents


def cascade_accumulate(indptr, indices, probs, int64_t source, seeds, int delay_kind,
                       double delay_param, int64_t max_layer, int64_t[::1] totals,
                       int32_t[:, ::1] layer_counts, int64_t[::1] node_hits,
                       int64_t[::1] edge_hits):
    cdef const int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const double[::1] pr = np.ascontiguousarray(probs, dtype=np.float64)
    cdef const uint64_t[::1] sd = np.ascontiguousarray(seeds, dtype=np.uint64)
    cdef int64_t n = ip.shape[0] - 1
    cdef int64_t n_trials = sd.shape[0]
    cdef int64_t cap = layer_counts.shape[1]
    cdef Work w
    cdef int64_t t, k, node, count, e
    cdef int32_t l
    cdef bint overflow = False
    if source < 0 or source >= n:
        raise IndexError("source out of range")
    if alloc_work(&w, n) != 0:
        free_work(&w)
        raise MemoryError()
    try:
        with nogil:
            for t in range(n_trials):
                count = run_one(ip, ix, pr, source, sd[t], delay_kind, delay_param, max_layer, &w)
                totals[t] = count
                for k in range(count):
                    node = w.order[k]
                    w.state[node] = 0
                    node_hits[node] += 1
                    l = w.layer[node]
                    if l >= cap:
                        overflow = True
                    else:
                        layer_counts[t, l] += 1
                    e = w.parent_edge[node]
                    if e >= 0:
                        edge_hits[e] += 1
    finally:
        free_work(&w)
    if overflow:
        raise ValueError("layer buffer too small")


def histogram(const uint16_t[:, ::1] bins, const int64_t[::1] rows, const double[::1] grad,
              const double[::1] hess, int64_t n_bins, int64_t f_start, int64_t f_end,
              double[:, :, ::1] out):
    cdef int64_t r, k, f, b, n_rows = rows.shape[0]
    cdef double g, h
    with nogil:
        for f in range(f_start, f_end):
            for b in range(n_bins):
                out[f, b, 0] = 0.0
                out[f, b, 1] = 0.0
        for k in range(n_rows):
            r = rows[k]
            g = grad[r]
            h = hess[r]
            for f in range(f_start, f_end):
                b = bins[r, f]
                out[f, b, 0] += g
                out[f, b, 1] += h
