"""Independent reference implementations used as test oracles."""

import numpy as np

from tanglesim.tangle import TangleState


def random_dag(rng, n_sites, m=2):
    """A tangle of ``n_sites`` sites built with h = 0, each new site
    approving m uniformly chosen earlier sites. Returns (state, parents)."""
    st = TangleState(m=m, h=0, capacity=4)
    st.add_arrival(0)
    parents = {0: ()}
    for i in range(1, n_sites):
        sid = st.add_arrival(0)
        par = tuple(int(p) for p in rng.integers(0, sid, size=m))
        st.commit_attachment(sid, par, 0)
        parents[sid] = par
    return st, parents


def brute_weights(parents):
    """Cumulative weight by reverse reachability: count the sites from which
    each site can be reached, itself included."""
    n = len(parents)
    reach = {}
    for i in range(n):
        seen = {i}
        stack = [i]
        while stack:
            u = stack.pop()
            for p in parents[u]:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        reach[i] = seen
    return np.array([sum(1 for j in range(n) if i in reach[j])
                     for i in range(n)])


def brute_children(parents):
    kids = {i: set() for i in parents}
    for c, ps in parents.items():
        for p in ps:
            kids[p].add(c)
    return {k: sorted(v) for k, v in kids.items()}


def enumerate_walk_exits(parents, alpha, start=0):
    """Exit law of the weight-biased walk by listing every path from
    ``start`` to a tip and multiplying its step probabilities."""
    w = brute_weights(parents)
    kids = brute_children(parents)
    out = {}

    def visit(node, prob):
        ks = kids[node]
        if not ks:
            out[node] = out.get(node, 0.0) + prob
            return
        raw = np.array([np.exp(-alpha * (w[node] - w[k])) for k in ks])
        for k, q in zip(ks, raw / raw.sum()):
            visit(k, prob * q)

    visit(start, 1.0)
    return out


def paths_count(parents, start=0):
    kids = brute_children(parents)

    def count(node):
        return 1 if not kids[node] else sum(count(k) for k in kids[node])

    return count(start)


FIXED_DAG = {
    0: (),
    1: (0, 0),
    2: (0, 1),
    3: (1, 2),
    4: (1, 1),
    5: (2, 3),
    6: (3, 4),
    7: (4, 5),
    8: (5, 6),
    9: (3, 3),
}


def build(parents, m=2):
    st = TangleState(m=m, h=0, capacity=4)
    st.add_arrival(0)
    for i in range(1, len(parents)):
        st.add_arrival(0)
        st.commit_attachment(i, parents[i], 0)
    return st

