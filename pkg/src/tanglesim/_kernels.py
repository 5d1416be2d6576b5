"""Compiled inner loops for the tangle: ancestor weight propagation and MCMC walks."""

import numpy as np
from numba import njit


@njit(cache=True)
def propagate_weight(parents, weight, stamp, stack, site):
    """Add 1 to the cumulative weight of every distinct ancestor of ``site``.

    ``stamp`` marks visited sites with ``site + 1`` so the array never needs
    clearing between commits. Returns the number of ancestors touched.
    """
    mark = site + 1
    top = 0
    m = parents.shape[1]
    for j in range(m):
        p = parents[site, j]
        if p >= 0 and stamp[p] != mark:
            stamp[p] = mark
            stack[top] = p
            top += 1
    touched = 0
    while top > 0:
        top -= 1
        u = stack[top]
        weight[u] += 1
        touched += 1
        for j in range(m):
            p = parents[u, j]
            if p >= 0 and stamp[p] != mark:
                stamp[p] = mark
                stack[top] = p
                top += 1
    return touched


@njit(cache=True)
def _edge_cdf(first_child, edge_next, edge_child, weight, j, alpha, edge_cdf):
    """Fill the normalised cumulative jump probabilities on j's edge list."""
    wmax = -1
    e = first_child[j]
    while e >= 0:
        c = edge_child[e]
        if weight[c] > wmax:
            wmax = weight[c]
        e = edge_next[e]
    total = 0.0
    e = first_child[j]
    while e >= 0:
        total += np.exp(alpha * (weight[edge_child[e]] - wmax))
        edge_cdf[e] = total
        e = edge_next[e]
    e = first_child[j]
    while e >= 0:
        edge_cdf[e] /= total
        e = edge_next[e]


@njit(cache=True)
def walk_many(first_child, edge_next, edge_child, weight, start, alpha,
              uniforms, out, edge_cdf, cdf_stamp, mark):
    """Run ``len(out)`` exponential-link walks from ``start``.

    Each step from site j picks child k with probability proportional to
    exp(alpha * (w_k - max_k w_k)), which equals exp(-alpha (w_j - w_k)) up to
    normalisation. Per-site jump CDFs are cached on the edges and reused while
    ``cdf_stamp[j] == mark``; callers must change ``mark`` whenever the DAG or
    the weights change. Returns ``(completed, used)``; when the uniform buffer
    runs dry mid-walk the partial walk is dropped and ``completed < len(out)``.
    """
    n_walks = out.shape[0]
    n_u = uniforms.shape[0]
    used = 0
    done = 0
    while done < n_walks:
        cur = start
        walk_used = 0
        ok = True
        while True:
            e = first_child[cur]
            if e < 0:
                break
            if edge_next[e] < 0:
                cur = edge_child[e]
                continue
            if used + walk_used >= n_u:
                ok = False
                break
            if cdf_stamp[cur] != mark:
                _edge_cdf(first_child, edge_next, edge_child, weight, cur,
                          alpha, edge_cdf)
                cdf_stamp[cur] = mark
            u = uniforms[used + walk_used]
            walk_used += 1
            nxt = -1
            while e >= 0:
                nxt = edge_child[e]
                if u < edge_cdf[e]:
                    break
                e = edge_next[e]
            cur = nxt
        if not ok:
            break
        out[done] = cur
        used += walk_used
        done += 1
    return done, used


@njit(cache=True)
def exit_distribution(first_child, edge_next, edge_child, weight, start,
                      alpha, n_sites):
    """Exact absorption probabilities of the exponential-link walk.

    Probability mass is pushed forward in id order, which is a topological
    order because children always carry larger ids than their parents.
    """
    mass = np.zeros(n_sites, dtype=np.float64)
    result = np.zeros(n_sites, dtype=np.float64)
    mass[start] = 1.0
    for j in range(start, n_sites):
        if mass[j] == 0.0:
            continue
        e = first_child[j]
        if e < 0:
            result[j] += mass[j]
            continue
        wmax = -1
        e2 = e
        while e2 >= 0:
            c = edge_child[e2]
            if weight[c] > wmax:
                wmax = weight[c]
            e2 = edge_next[e2]
        total = 0.0
        e2 = e
        while e2 >= 0:
            total += np.exp(alpha * (weight[edge_child[e2]] - wmax))
            e2 = edge_next[e2]
        e2 = e
        while e2 >= 0:
            c = edge_child[e2]
            mass[c] += mass[j] * np.exp(alpha * (weight[c] - wmax)) / total
            e2 = edge_next[e2]
    return result


@njit(cache=True)
def _popcount(v):
    v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
    v = (v & np.uint64(0x3333333333333333)) + \
        ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
    v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (v * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(cache=True)
def propagate_weight_batch(parents, weight, sites, acc):
    """Weight update for a batch of sites committed in the same step.

    Each new site gets one bit; bits flow to ancestors in decreasing id
    order (a reverse topological order) and every ancestor gains the number
    of distinct batch members that reach it. ``acc`` is scratch space of
    shape (>= n_sites, ceil(len(sites) / 64)) and is left zeroed.
    """
    n_words = acc.shape[1]
    m = parents.shape[1]
    top = -1
    for b in range(sites.shape[0]):
        s = sites[b]
        word = b // 64
        acc[s, word] |= np.uint64(1) << np.uint64(b % 64)
        if s > top:
            top = s
    touched = 0
    for u in range(top, -1, -1):
        nz = False
        for w in range(n_words):
            if acc[u, w] != 0:
                nz = True
                break
        if not nz:
            continue
        cnt = 0
        for w in range(n_words):
            cnt += np.int64(_popcount(acc[u, w]))
        for j in range(m):
            p = parents[u, j]
            if p >= 0:
                for w in range(n_words):
                    acc[p, w] |= acc[u, w]
        for w in range(n_words):
            acc[u, w] = np.uint64(0)
        weight[u] += cnt
        touched += 1
    # new sites counted themselves; their own weight is set by the caller
    for b in range(sites.shape[0]):
        weight[sites[b]] -= 1
    return touched
