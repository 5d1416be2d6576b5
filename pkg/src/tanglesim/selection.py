"""Tip selection: uniform, cumulative-weight MCMC walk, age-weighted proxy and
the hybrid composition."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels, specs
from .tangle import FREE, TangleError, TangleState
from .weights import WeightFunction, make_weight

log = logging.getLogger(__name__)

GENESIS = 0


class EmptyTipSet(TangleError):
    pass


class WalkTerminus(LookupError):
    """Raised by :func:`mcmc_step` when the current site has no approvers."""


# -- single draws -------------------------------------------------------------

def select_uniform(state: TangleState, rng: np.random.Generator) -> int:
    if state.n_tips == 0:
        raise EmptyTipSet("no tips to select from")
    return int(state.tips[rng.integers(state.n_tips)])


def transition_probabilities(state: TangleState, current: int, alpha: float,
                             link: Callable | None = None):
    """Children of ``current`` and their jump probabilities.

    With the default exponential link the weights are shifted by the largest
    child weight before exponentiating; the shift cancels on normalisation.
    """
    kids = state.children(current)
    if not kids:
        raise WalkTerminus(current)
    w = state.weight[kids].astype(float)
    if link is None:
        p = np.exp(alpha * (w - w.max()))
    else:
        p = np.asarray(link(-alpha * (state.weight[current] - w)), dtype=float)
    total = p.sum()
    if not total > 0:
        p = np.ones_like(w)
        total = p.sum()
    return kids, p / total


def mcmc_step(state: TangleState, current: int, alpha: float,
              rng: np.random.Generator, link: Callable | None = None) -> int:
    kids, p = transition_probabilities(state, current, alpha, link)
    if len(kids) == 1:
        return kids[0]
    return kids[int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(),
                                    side="right").clip(max=len(kids) - 1))]


def select_mcmc(state: TangleState, alpha: float, rng: np.random.Generator,
                link: Callable | None = None, start: int = GENESIS) -> int:
    cur = start
    while True:
        try:
            cur = mcmc_step(state, cur, alpha, rng, link)
        except WalkTerminus:
            return cur


def select_age_weighted(state: TangleState, g: WeightFunction,
                        rng: np.random.Generator) -> int:
    tips, p = AgeWeighted(g).probabilities(state)
    return int(tips[np.searchsorted(np.cumsum(p), rng.random(),
                                    side="right").clip(max=len(tips) - 1)])


# -- policies -----------------------------------------------------------------

class SelectionPolicy:
    """Base for the per-slot selection laws.

    ``draw`` returns ``size`` independent tip ids from the current tip set;
    ``probabilities`` returns the exact law as ``(tips, probs)``.
    """

    needs_weights = False

    def draw(self, state: TangleState, size: int,
             rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def probabilities(self, state: TangleState):
        raise NotImplementedError

    def slots(self, m: int) -> list["SelectionPolicy"]:
        return [self] * m

    def spec(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.spec()


@dataclass(frozen=True)
class Uniform(SelectionPolicy):

    def draw(self, state, size, rng):
        if state.n_tips == 0:
            raise EmptyTipSet("no tips to select from")
        return state.tips[rng.integers(state.n_tips, size=size)]

    def probabilities(self, state):
        if state.n_tips == 0:
            raise EmptyTipSet("no tips to select from")
        tips = state.tips.copy()
        return tips, np.full(len(tips), 1.0 / len(tips))

    def spec(self):
        return "uniform"


@dataclass(frozen=True)
class McmcWalk(SelectionPolicy):
    """Random walk from the genesis toward the tips.

    ``start_lag`` (off by default) starts walks at the newest site attached at
    least that many steps ago instead of the genesis, which bounds the walk
    length on long runs.
    """

    alpha: float
    link: Callable | None = field(default=None, compare=False)
    start_lag: int | None = None
    needs_weights = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def start_site(self, state: TangleState) -> int:
        if self.start_lag is None:
            return GENESIS
        cutoff = state.clock - self.start_lag
        att = state.attached_at[:state.n_sites]
        ok = np.flatnonzero((att >= 0) & (att <= cutoff))
        return int(ok[-1]) if len(ok) else GENESIS

    def draw(self, state, size, rng):
        if state.n_attached == 0:
            raise EmptyTipSet("empty tangle")
        start = self.start_site(state)
        if self.link is not None:
            return np.array([select_mcmc(state, self.alpha, rng, self.link,
                                         start) for _ in range(size)],
                            dtype=np.int64)
        out = np.empty(size, dtype=np.int64)
        done = 0
        budget = getattr(state, "_walk_budget", 64)
        cache = state.walk_cache(float(self.alpha))
        while done < size:
            uniforms = rng.random((size - done) * budget)
            n, _ = _kernels.walk_many(state.first_child, state.edge_next,
                                      state.edge_child, state.weight, start,
                                      float(self.alpha), uniforms, out[done:],
                                      *cache)
            done += n
            if done < size:
                budget *= 2
        state._walk_budget = budget
        return out

    def probabilities(self, state):
        start = self.start_site(state)
        if self.link is None:
            mass = _kernels.exit_distribution(
                state.first_child, state.edge_next, state.edge_child,
                state.weight, start, float(self.alpha), state.n_sites)
        else:
            mass = np.zeros(state.n_sites)
            flow = np.zeros(state.n_sites)
            flow[start] = 1.0
            for j in range(start, state.n_sites):
                if flow[j] == 0:
                    continue
                try:
                    kids, p = transition_probabilities(state, j, self.alpha,
                                                       self.link)
                except WalkTerminus:
                    mass[j] += flow[j]
                    continue
                flow[kids] += flow[j] * p
        tips = state.tips.copy()
        return tips, mass[tips]

    def spec(self):
        extra = f",start_lag={self.start_lag}" if self.start_lag else ""
        return f"mcmc{{alpha={self.alpha:g}{extra}}}"


@dataclass(frozen=True)
class AgeWeighted(SelectionPolicy):
    """Tip b is drawn with probability g(age_b) / sum over tips of g(age)."""

    g: WeightFunction

    def probabilities(self, state):
        if state.n_tips == 0:
            raise EmptyTipSet("no tips to select from")
        tips = state.tips.copy()
        w = np.asarray(self.g(state.ages(tips) * state.dt), dtype=float)
        z = w.sum()
        if not z > 0:
            log.warning("age weights vanish on all %d tips at t=%d; "
                        "falling back to uniform", len(tips), state.clock)
            return tips, np.full(len(tips), 1.0 / len(tips))
        return tips, w / z

    def draw(self, state, size, rng):
        tips, p = self.probabilities(state)
        cdf = np.cumsum(p)
        idx = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")
        return tips[np.minimum(idx, len(tips) - 1)]

    def spec(self):
        return f"age{{{self.g.spec()}}}"


@dataclass(frozen=True)
class Hybrid(SelectionPolicy):
    """Slot 1 from ``first`` (security step), slots 2..m from ``second``
    (swipe step)."""

    first: SelectionPolicy
    second: SelectionPolicy = field(default_factory=Uniform)

    def __post_init__(self):
        if isinstance(self.first, Hybrid) or isinstance(self.second, Hybrid):
            raise ValueError("hybrid policies nest exactly one level")

    @property
    def needs_weights(self):
        return self.first.needs_weights or self.second.needs_weights

    def slots(self, m):
        return [self.first] + [self.second] * (m - 1)

    def draw(self, state, size, rng):
        raise TypeError("a hybrid policy draws per slot; use slots(m)")

    def probabilities(self, state):
        raise TypeError("a hybrid policy has one law per slot; use slots(m)")

    def spec(self):
        return f"hybrid{{{self.first.spec()},{self.second.spec()}}}"


# -- composite draws ----------------------------------------------------------

@dataclass(frozen=True)
class SelectionRecord:
    """The m tips chosen by one new transaction and how many were free."""

    tips: tuple[int, ...]
    U: int

    def indicator(self, b: int, slot: int) -> int:
        """R_b for the given slot: 1 if that slot chose tip ``b``."""
        return int(self.tips[slot] == b)


def select_m_tips(state: TangleState, policy: SelectionPolicy, m: int,
                  rng: np.random.Generator) -> SelectionRecord:
    if m < 2:
        raise ValueError("m must be >= 2")
    tips = tuple(int(p.draw(state, 1, rng)[0]) for p in policy.slots(m))
    free = {b for b in tips if state.status[b] == FREE}
    return SelectionRecord(tips, len(free))


def expected_free_hits(state: TangleState, policy: SelectionPolicy,
                       m: int) -> float:
    """E[U] = sum over free tips b of 1 - prod_j (1 - Q_b^(j))."""
    miss = {}
    for p in policy.slots(m):
        tips, probs = p.probabilities(state)
        for b, q in zip(tips.tolist(), probs.tolist()):
            miss[b] = miss.get(b, 1.0) * (1.0 - q)
    return float(sum(1.0 - v for b, v in miss.items()
                     if state.status[b] == FREE))


# -- grammar ------------------------------------------------------------------

def parse_weight(text: str) -> WeightFunction:
    name, args, kwargs = specs.parse(text)
    if args:
        raise specs.SpecError(f"weight {text!r} takes keyword arguments only")
    return make_weight(name, **{k: specs.to_number(v)
                                for k, v in kwargs.items()})


def parse_policy(text: str) -> SelectionPolicy:
    """Build a policy from ``uniform``, ``mcmc{alpha}``, ``age{g=exp,beta=1}``
    or ``hybrid{first,second}``."""
    name, args, kwargs = specs.parse(text)
    if name in ("uniform", "random", "rs"):
        return Uniform()
    if name == "mcmc":
        alpha = kwargs.pop("alpha", None) or (args[0] if args else None)
        if alpha is None:
            raise specs.SpecError(f"mcmc needs alpha in {text!r}")
        lag = kwargs.pop("start_lag", None)
        return McmcWalk(specs.to_number(alpha),
                        start_lag=int(specs.to_number(lag)) if lag else None)
    if name == "age":
        if "g" in kwargs:
            wname = kwargs.pop("g")
        elif args:
            wname = args.pop(0)
        else:
            raise specs.SpecError(f"age needs a weight in {text!r}")
        if "{" in wname:
            return AgeWeighted(parse_weight(wname))
        params = {k: specs.to_number(v) for k, v in kwargs.items()}
        if args:
            first = {"exp": "beta", "power": "p", "const": "c",
                     "constant": "c"}.get(wname)
            if first is None:
                raise specs.SpecError(f"unexpected arguments in {text!r}")
            params[first] = specs.to_number(args[0])
        return AgeWeighted(make_weight(wname, **params))
    if name == "hybrid":
        parts = args + list(kwargs.values())
        if "first" in kwargs or "second" in kwargs:
            parts = [kwargs.get("first"), kwargs.get("second", "uniform")]
        if len(parts) == 1:
            parts.append("uniform")
        if len(parts) != 2 or parts[0] is None:
            raise specs.SpecError(f"hybrid needs first,second in {text!r}")
        return Hybrid(parse_policy(parts[0]), parse_policy(parts[1]))
    raise specs.SpecError(f"unknown policy {name!r}")
