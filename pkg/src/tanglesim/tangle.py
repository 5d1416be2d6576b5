"""The growing tangle: sites, approval edges, the free/pending tip partition and
cumulative weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

UNATTACHED = 0
FREE = 1
PENDING = 2
APPROVED = 3


class TangleError(ValueError):
    """Raised on an illegal mutation of a :class:`TangleState`."""


@dataclass(frozen=True)
class Site:
    id: int
    created_at: int
    attached_at: int | None
    parents: tuple[int, ...]
    is_genesis: bool


class TangleState:
    """Append-only DAG of transactions plus the tip partition.

    Edges point from a child to the ``m`` parents it approves. The genesis is
    created at ``-h`` and attached at time 0, so it obeys the same
    ``attached_at = created_at + h`` rule as every other site and is counted
    by ``arrival_count``.

    ``dt`` is the length of one clock step in model time units; it only
    scales ages handed to age weight functions.

    Cumulative weights are maintained incrementally on every commit unless
    ``track_weights`` is False (policies that never look at weights do not
    pay the O(ancestors) cost per commit).
    """

    def __init__(self, m: int = 2, h: int = 1, capacity: int = 1024,
                 track_weights: bool = True, dt: float = 1.0):
        if m < 1:
            raise ValueError("m must be >= 1")
        if h < 0:
            raise ValueError("h must be >= 0")
        self.m = m
        self.h = h
        self.track_weights = track_weights
        self.dt = dt
        self.clock = 0
        self.n_sites = 0
        self.n_attached = 0
        self.n_edges = 0
        self._alloc(max(capacity, 16))
        self._tips = np.empty(max(capacity, 16), dtype=np.int64)
        self.n_tips = 0
        self.n_free = 0
        self._acc = None
        self._version = 0
        self._walk_caches = {}

    def _alloc(self, cap):
        self.created_at = np.zeros(cap, dtype=np.int64)
        self.attached_at = np.full(cap, -1, dtype=np.int64)
        self.parents = np.full((cap, self.m), -1, dtype=np.int64)
        self.weight = np.zeros(cap, dtype=np.int64)
        self.status = np.zeros(cap, dtype=np.int8)
        self.first_child = np.full(cap, -1, dtype=np.int64)
        self.tip_pos = np.full(cap, -1, dtype=np.int64)
        self._stamp = np.zeros(cap, dtype=np.int64)
        self._stack = np.empty(cap, dtype=np.int64)
        self.edge_child = np.empty(cap * self.m, dtype=np.int64)
        self.edge_next = np.empty(cap * self.m, dtype=np.int64)

    def _grow(self, need):
        cap = self.created_at.shape[0]
        if need <= cap:
            return
        new_cap = max(need, 2 * cap)
        old = (self.created_at, self.attached_at, self.parents, self.weight,
               self.status, self.first_child, self.tip_pos, self._stamp,
               self.edge_child, self.edge_next)
        self._alloc(new_cap)
        n, e = self.n_sites, self.n_edges
        self.created_at[:n] = old[0][:n]
        self.attached_at[:n] = old[1][:n]
        self.parents[:n] = old[2][:n]
        self.weight[:n] = old[3][:n]
        self.status[:n] = old[4][:n]
        self.first_child[:n] = old[5][:n]
        self.tip_pos[:n] = old[6][:n]
        self._stamp[:n] = old[7][:n]
        self.edge_child[:e] = old[8][:e]
        self.edge_next[:e] = old[9][:e]
        tips = np.empty(new_cap, dtype=np.int64)
        tips[:self.n_tips] = self._tips[:self.n_tips]
        self._tips = tips

    # -- counts -----------------------------------------------------------

    @property
    def arrival_count(self) -> int:
        """N(t): every created transaction, genesis included."""
        return self.n_sites

    @property
    def L(self) -> int:
        return self.n_tips

    @property
    def X(self) -> int:
        return self.n_free

    @property
    def W(self) -> int:
        return self.n_tips - self.n_free

    @property
    def tips(self) -> np.ndarray:
        """Current tip ids (free and pending), in no particular order."""
        return self._tips[:self.n_tips]

    @property
    def free_tips(self) -> set[int]:
        t = self.tips
        return set(t[self.status[t] == FREE].tolist())

    @property
    def pending_tips(self) -> set[int]:
        t = self.tips
        return set(t[self.status[t] == PENDING].tolist())

    def site(self, i: int) -> Site:
        self._check_id(i)
        att = int(self.attached_at[i])
        par = tuple(int(p) for p in self.parents[i] if p >= 0)
        return Site(i, int(self.created_at[i]), att if att >= 0 else None,
                    par, i == 0)

    def is_attached(self, i: int) -> bool:
        return self.status[i] != UNATTACHED

    def children(self, i: int) -> list[int]:
        """Attached direct approvers of ``i``, most recent first."""
        out = []
        e = self.first_child[i]
        while e >= 0:
            out.append(int(self.edge_child[e]))
            e = self.edge_next[e]
        return out

    def ages(self, ids) -> np.ndarray:
        return self.clock - self.attached_at[ids]

    def _check_id(self, i):
        if not 0 <= i < self.n_sites:
            raise TangleError(f"unknown site id {i}")

    # -- tip bookkeeping ---------------------------------------------------

    def _add_tip(self, i):
        self._tips[self.n_tips] = i
        self.tip_pos[i] = self.n_tips
        self.n_tips += 1
        self.status[i] = FREE
        self.n_free += 1

    def _remove_tip(self, i):
        pos = self.tip_pos[i]
        last = self._tips[self.n_tips - 1]
        self._tips[pos] = last
        self.tip_pos[last] = pos
        self.tip_pos[i] = -1
        self.n_tips -= 1
        if self.status[i] == FREE:
            self.n_free -= 1
        self.status[i] = APPROVED

    # -- operations --------------------------------------------------------

    def add_arrival(self, t: int) -> int:
        """Create a transaction at time ``t``; it joins the DAG at ``t + h``.

        The first call on an empty state creates the genesis, which is
        attached immediately and becomes the sole free tip.
        """
        if t != self.clock:
            raise TangleError(f"arrival at t={t} but clock is {self.clock}")
        i = self.n_sites
        self._grow(i + 1)
        self.n_sites += 1
        if i == 0:
            self.created_at[0] = t - self.h
            self.attached_at[0] = t
            self.weight[0] = 1
            self.n_attached = 1
            self._add_tip(0)
        else:
            self.created_at[i] = t
        return i

    def commit_attachment(self, site: int, parents, t: int) -> None:
        """Attach ``site`` to ``parents`` at time ``t`` (its PoW completion).

        Parents that are still tips leave the tip set; parents already
        approved by an earlier commit are left alone.
        """
        self._check_id(site)
        if self.status[site] != UNATTACHED:
            raise TangleError(f"site {site} already attached")
        if t != self.created_at[site] + self.h:
            raise TangleError(
                f"site {site} created at {self.created_at[site]} cannot "
                f"attach at {t} with h={self.h}")
        parents = [int(p) for p in parents]
        if len(parents) != self.m:
            raise TangleError(f"expected {self.m} parents, got {len(parents)}")
        for p in parents:
            self._check_id(p)
            if p >= site or self.status[p] == UNATTACHED:
                raise TangleError(f"parent {p} of {site} is not attached")
        self.parents[site] = parents
        self.attached_at[site] = t
        self.n_attached += 1
        for p in dict.fromkeys(parents):
            e = self.n_edges
            self.edge_child[e] = site
            self.edge_next[e] = self.first_child[p]
            self.first_child[p] = e
            self.n_edges += 1
            if self.status[p] in (FREE, PENDING):
                self._remove_tip(p)
        self._version += 1
        self.weight[site] = 1
        if self.track_weights:
            _kernels.propagate_weight(self.parents, self.weight, self._stamp,
                                      self._stack, site)
        self._add_tip(site)

    def commit_batch(self, sites, parents, t: int) -> None:
        """Commit several sites attaching at the same time ``t``.

        Equivalent to calling :meth:`commit_attachment` for each site in
        order, but the weight update is done in one sweep over the shared
        ancestry.
        """
        sites = np.asarray(sites, dtype=np.int64)
        if len(sites) == 0:
            return
        track = self.track_weights
        self.track_weights = False
        try:
            for i, row in zip(sites.tolist(), parents):
                self.commit_attachment(i, row, t)
        finally:
            self.track_weights = track
        if track:
            words = (len(sites) + 63) // 64
            if (self._acc is None or self._acc.shape[1] < words
                    or self._acc.shape[0] < self.n_sites):
                self._acc = np.zeros((self.created_at.shape[0], words),
                                     dtype=np.uint64)
            _kernels.propagate_weight_batch(self.parents, self.weight, sites,
                                            self._acc)

    def mark_pending(self, tips) -> int:
        """Move the selected free tips to the pending set.

        Returns U, the number of distinct selected tips that were free.
        Selecting a tip that is already pending is a no-op.
        """
        moved = 0
        for b in dict.fromkeys(int(b) for b in tips):
            self._check_id(b)
            st = self.status[b]
            if st == FREE:
                self.status[b] = PENDING
                self.n_free -= 1
                moved += 1
            elif st != PENDING:
                raise TangleError(f"site {b} is not a tip")
        return moved

    def cumulative_weight(self, site: int) -> int:
        """Number of attached sites with a directed path to ``site``, itself
        included."""
        self._check_id(site)
        if self.status[site] == UNATTACHED:
            raise TangleError(f"site {site} is not attached")
        if not self.track_weights:
            raise TangleError("weights are not tracked on this state")
        return int(self.weight[site])

    def recompute_weights(self) -> None:
        """Rebuild all weights from scratch (used when tracking is switched
        on after the fact)."""
        self.weight[:self.n_sites] = 0
        self._stamp[:self.n_sites] = 0
        for i in range(self.n_sites):
            if self.status[i] != UNATTACHED:
                self.weight[i] += 1
                _kernels.propagate_weight(self.parents, self.weight,
                                          self._stamp, self._stack, i)
        self.track_weights = True
        self._version += 1

    def walk_cache(self, alpha: float):
        """Scratch (edge_cdf, stamp, mark) for cached walk transitions.

        One cache per alpha; ``mark`` is the DAG version, so entries go stale
        as soon as anything is committed.
        """
        cap = self.edge_child.shape[0]
        entry = self._walk_caches.get(alpha)
        if entry is None or entry[0].shape[0] != cap:
            entry = (np.zeros(cap), np.full(self.created_at.shape[0], -1,
                                            dtype=np.int64))
            self._walk_caches[alpha] = entry
        return entry[0], entry[1], self._version

    def tick(self) -> None:
        self.clock += 1

    def check_partition(self) -> None:
        """Full rescan: tips are exactly the attached sites without an
        attached child, and the free/pending split matches the counters."""
        n = self.n_sites
        attached = self.status[:n] != UNATTACHED
        has_child = self.first_child[:n] >= 0
        expected = set(np.flatnonzero(attached & ~has_child).tolist())
        actual = set(self.tips.tolist())
        if expected != actual:
            raise AssertionError(
                f"tip set mismatch: missing {expected - actual}, "
                f"extra {actual - expected}")
        free = self.free_tips
        if len(free) != self.n_free:
            raise AssertionError("free tip counter out of sync")
        if free & self.pending_tips:
            raise AssertionError("free and pending tips overlap")
