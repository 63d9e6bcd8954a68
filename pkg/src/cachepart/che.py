"""Characteristic-time (Che) approximation for LRU, FIFO and RANDOM caches.

Under Poisson (IRM) arrivals a file with rate ``lam`` is found in a cache
with characteristic time ``T`` with probability

* LRU:          ``1 - exp(-lam * T)``
* FIFO/RANDOM:  ``1 - 1 / (1 + lam * T)``

and ``T`` is fixed by requiring the hit probabilities to sum to the cache
size.  :class:`HitCurve` evaluates everything as a function of ``T``, which
is explicit; functions of the cache size go through :meth:`HitCurve.solve_T`.

Other policies plug in by adding a branch to ``hit_prob``,
``capacity_at``/``hit_rate_at`` and the derivative weights in ``state_at``.
"""
from __future__ import annotations

import math
import threading
from functools import lru_cache

import numpy as np

from .model import DemandModel, Policy

__all__ = [
    "HitCurve",
    "hit_prob",
    "solve_T",
    "hit_rate",
    "marginal_hit_rate",
    "scaled_hit_rate",
    "curve_for",
    "curve_for_demand",
]

INF = math.inf


def hit_prob(policy, lam, T):
    """Hit probability of a file with request rate ``lam`` at characteristic time ``T``.

    ``T`` may be ``math.inf``.  Works elementwise on arrays.
    """
    policy = Policy.parse(policy)
    lam = np.asarray(lam, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(lam < 0) or np.any(T < 0):
        raise ValueError("rates and characteristic time must be nonnegative")
    with np.errstate(invalid="ignore", over="ignore"):
        x = lam * T
    x = np.where(lam == 0, 0.0, x)  # 0 * inf counts as zero exposure
    if policy is Policy.LRU:
        out = -np.expm1(-x)
    else:
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.where(np.isinf(x), 1.0, x / (1.0 + x))
    return out[()] if out.ndim == 0 else out


class HitCurve:
    """Hit rate of a single cache (or slice) as a function of its size.

    Parameters
    ----------
    policy : Policy or str
    rates : array-like
        Per-file request rates.  Only the multiset matters.

    Notes
    -----
    ``solve_T`` results are memoised per instance; the memo is guarded by a
    lock so a curve can be shared between threads.
    """

    def __init__(self, policy, rates):
        self.policy = Policy.parse(policy)
        r = np.sort(np.asarray(rates, dtype=float))[::-1].copy()
        if r.ndim != 1 or r.size == 0:
            raise ValueError("rates must be a nonempty vector")
        if np.any(r < 0):
            raise ValueError("rates must be nonnegative")
        r = r[r > 0]
        self.n_zero = int(np.size(rates) - r.size)
        r.setflags(write=False)
        self.rates = r
        self.N = int(np.size(rates))
        self.total_rate = float(r.sum())
        self.lam_min = float(r[-1]) if r.size else 0.0
        self.lam_max = float(r[0]) if r.size else 0.0
        self._memo: dict[float, float] = {}
        self._lock = threading.Lock()
        self._t_top = None
        self._table = None
        # marginal hit rate in the limits C -> 0 and C -> N
        if r.size:
            self.marginal_at_empty = float((r * r).sum() / self.total_rate)
            if self.policy is Policy.LRU:
                self.marginal_at_full = self.lam_min
            else:
                self.marginal_at_full = float(r.size / (1.0 / r).sum())
        else:
            self.marginal_at_empty = self.marginal_at_full = 0.0

    def __repr__(self):
        return f"HitCurve({self.policy.value}, N={self.N}, R={self.total_rate:g})"

    # -- explicit functions of T ------------------------------------------

    def capacity_at(self, T: float) -> float:
        """Expected occupancy ``sum_i o(lam_i, T)``."""
        if T == INF:
            return float(self.rates.size)
        x = self.rates * T
        if self.policy is Policy.LRU:
            return float(-np.expm1(-x).sum())
        return float((x / (1.0 + x)).sum())

    def hit_rate_at(self, T: float) -> float:
        if T == INF:
            return self.total_rate
        x = self.rates * T
        if self.policy is Policy.LRU:
            return float((self.rates * -np.expm1(-x)).sum())
        return float((self.rates * x / (1.0 + x)).sum())

    def marginal_at(self, T: float) -> float:
        """``dh/dC`` at characteristic time ``T``: ratio of ``dh/dT`` to ``dC/dT``."""
        if T == 0:
            return self.marginal_at_empty
        if T == INF:
            return self.marginal_at_full
        r = self.rates
        if self.policy is Policy.LRU:
            w = np.exp(-(r - self.lam_min) * T)  # shifted to avoid underflow
        else:
            w = 1.0 / (1.0 + r * T) ** 2
        rw = r * w
        return float((r * rw).sum() / rw.sum())

    def state_at(self, T: float):
        """``(C, h, dh/dC)`` at characteristic time ``T`` in one pass."""
        if T == 0:
            return 0.0, 0.0, self.marginal_at_empty
        if T == INF:
            return float(self.rates.size), self.total_rate, self.marginal_at_full
        r = self.rates
        x = r * T
        if self.policy is Policy.LRU:
            o = -np.expm1(-x)
            w = np.exp(-(r - self.lam_min) * T)
        else:
            o = x / (1.0 + x)
            w = 1.0 / (1.0 + x) ** 2
        rw = r * w
        return float(o.sum()), float(r @ o), float((r * rw).sum() / rw.sum())

    # -- functions of the cache size --------------------------------------

    def solve_T(self, C: float) -> float:
        """Characteristic time of a cache holding ``C`` files.

        Bisection on the monotone occupancy; ``|occupancy - C| <= 1e-10 * N``.
        """
        C = float(C)
        if C < 0 or C > self.N or math.isnan(C):
            raise ValueError(f"cache size {C} outside [0, {self.N}]")
        if C == 0:
            return 0.0
        n_pos = self.rates.size
        tol = 1e-10 * self.N
        if C >= n_pos:
            # zero-rate files can never be hit; anything at or above the number
            # of requested files behaves like an infinite characteristic time
            return INF
        memo = self._memo.get(C)
        if memo is not None:
            return memo
        lo, hi = 0.0, 1.0 / self.lam_min
        while self.capacity_at(hi) < C:
            lo, hi = hi, hi * 2.0
            if math.isinf(hi):
                return INF
        if self._table is not None:
            # tighten the bracket from the precomputed grid
            u, Cs = self._table[0], self._table[1]
            i = int(np.searchsorted(Cs, C))
            if 0 < i < u.size:
                lo, hi = max(lo, math.exp(u[i - 1])), min(hi, math.exp(u[i]))
        T = hi
        for _ in range(2000):
            T = 0.5 * (lo + hi)
            f = self.capacity_at(T) - C
            if abs(f) <= tol or T in (lo, hi):
                break
            if f < 0:
                lo = T
            else:
                hi = T
        with self._lock:
            if len(self._memo) > 100_000:
                self._memo.clear()
            self._memo[C] = T
        return T

    def hit_rate(self, C: float) -> float:
        return self.hit_rate_at(self.solve_T(C))

    def marginal(self, C: float) -> float:
        """Analytic ``dh/dC`` for ``0 < C < N``."""
        if not 0 < C < self.N:
            raise ValueError(
                f"marginal hit rate is defined for 0 < C < N={self.N}; one-sided limits "
                f"are marginal_at_empty={self.marginal_at_empty:g} and "
                f"marginal_at_full={self.marginal_at_full:g}")
        return self.marginal_at(self.solve_T(C))

    def scaled_hit_rate(self, C: float, p: float) -> float:
        if not 0 <= p <= 1:
            raise ValueError("routing fraction must lie in [0, 1]")
        if p == 0:
            return 0.0
        return p * self.hit_rate(C)

    # -- bracket used by the allocation solvers ----------------------------

    def t_bounds(self):
        """``(T_lo, T_hi)`` spanning occupancies from ~0 to ~N (relative 1e-12)."""
        if self._t_top is None:
            hi = 1.0 / self.lam_min
            target = self.rates.size * (1.0 - 1e-12)
            while self.capacity_at(hi) < target and hi < 1e300:
                hi *= 4.0
            self._t_top = hi
        return 1e-12 / self.lam_max, self._t_top

    def table(self):
        """Dense ``(log T, C, h, dh/dC)`` grid over :meth:`t_bounds`, built once.

        Used only to bracket roots; exact values always come from
        :meth:`state_at`.
        """
        tab = self._table
        if tab is None:
            lo, hi = self.t_bounds()
            u = np.linspace(math.log(lo), math.log(hi), 768)
            states = np.array([self.state_at(math.exp(v)) for v in u])
            tab = (u, states[:, 0], states[:, 1], states[:, 2])
            for a in tab:
                a.setflags(write=False)
            with self._lock:
                self._table = tab
        return tab


@lru_cache(maxsize=256)
def curve_for_demand(policy: Policy, demand: DemandModel) -> HitCurve:
    """Shared curve for a provider's demand under a cache policy."""
    return HitCurve(policy, demand.rates)


_curve_cache: dict = {}
_curve_lock = threading.Lock()


def curve_for(policy, rates) -> HitCurve:
    """Memoised :class:`HitCurve` keyed on the rate vector contents."""
    policy = Policy.parse(policy)
    a = np.ascontiguousarray(rates, dtype=float)
    key = (policy, a.size, hash(a.tobytes()))
    c = _curve_cache.get(key)
    if c is None or c.N != a.size:
        c = HitCurve(policy, a)
        with _curve_lock:
            if len(_curve_cache) > 512:
                _curve_cache.clear()
            _curve_cache[key] = c
    return c


def solve_T(policy, rates, C) -> float:
    return curve_for(policy, rates).solve_T(C)


def hit_rate(policy, rates, C) -> float:
    """``sum_i lam_i * o(lam_i, T(C))``."""
    return curve_for(policy, rates).hit_rate(C)


def marginal_hit_rate(policy, rates, C) -> float:
    return curve_for(policy, rates).marginal(C)


def scaled_hit_rate(policy, rates, C, p) -> float:
    """Hit rate of a slice of size ``C`` receiving a fraction ``p`` of the stream.

    Thinning the stream does not change the per-file hit probabilities at a
    fixed size, so this is just ``p * hit_rate``.
    """
    return curve_for(policy, rates).scaled_hit_rate(C, p)
