"""Persistent Contrastive Divergence with exact Gibbs conditionals.

A persistent pool of N synthetic individuals is advanced by Gibbs sweeps
under the current parameters; pool frequencies replace the intractable
model expectations in the dual gradient, and Adam takes the step. The
partition function is never computed.

Randomness is split into named streams keyed by ``(seed, stream, generation,
attribute)``: one stream draws the attribute order of a sweep, another the
N uniforms of a column update, so row updates are reproducible whatever the
thread count.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .metrics import MRE_FLOOR, mre
from .model import AttrLookup, AttributeSchema, ConstraintSet, _check_lambda, _strides, build_attr_lookup, feature_frequencies

log = logging.getLogger(__name__)

_INIT_STREAM = 0
_PERM_STREAM = 1
_ROW_STREAM = 2


@dataclass
class PcdConfig:
    pool_size: int = 25_000
    sweeps: int = 1
    learning_rate: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 1000
    window: int = 50
    tau: float = 0.02
    seed: int = 0
    threads: int = 1
    snapshot_every: int = 0
    mre_floor: float = MRE_FLOOR

    def __post_init__(self):
        if self.pool_size < 1:
            raise InvalidInputError("pool_size must be >= 1")
        if self.sweeps < 1:
            raise InvalidInputError("sweeps must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be > 0")
        if self.window < 1:
            raise InvalidInputError("window must be >= 1")
        if not 0 < self.tau < 1:
            raise InvalidInputError("tau must lie in (0, 1)")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if self.threads < 1:
            raise InvalidInputError("threads must be >= 1")
        if self.seed < 0:
            raise InvalidInputError("seed must be nonnegative")

    @classmethod
    def recommended(cls, cs: ConstraintSet, **overrides) -> PcdConfig:
        """Rule-of-thumb settings: one sweep for pairwise constraints, five with
        ternary ones; a smaller step from K = 15 upwards."""
        arity = int(cs.arities.max()) if cs.m else 1
        params = dict(
            sweeps=1 if arity <= 2 else 5,
            learning_rate=0.01 if cs.schema.K >= 15 else 0.05,
        )
        params.update(overrides)
        return cls(**params)


@dataclass
class Pool:
    states: np.ndarray
    generation: int = 0

    def __post_init__(self):
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise InvalidInputError("pool must be a non-empty (N, K) matrix")

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @classmethod
    def uniform(cls, schema: AttributeSchema, n: int, seed: int = 0) -> Pool:
        rng = np.random.default_rng(np.random.SeedSequence([seed, _INIT_STREAM]))
        states = np.empty((n, schema.K), dtype=np.int64)
        for k, d in enumerate(schema.domain_sizes):
            states[:, k] = rng.integers(0, d, size=n)
        return cls(states, 0)

    def copy(self) -> Pool:
        return Pool(self.states.copy(), self.generation)


class Adam:
    """Adam moments for a flat parameter vector; ``step`` returns the update to subtract."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def copy(self) -> Adam:
        return copy.deepcopy(self)


def gibbs_conditional(x, k: int, lookup: AttrLookup, lam) -> np.ndarray:
    """``p(A_k = v | x_-k)`` from the lookup entries of attribute k.

    ``x[k]`` is ignored. Entry j adds ``lam_j`` to value ``v_j`` when all of its
    context attributes agree with ``x``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    energies = np.zeros(lookup.domain_sizes[k])
    for e in lookup[k]:
        if all(x[a] == v for a, v in zip(e.context_attrs, e.context_values)):
            energies[e.value] += lam[e.constraint]
    energies -= energies.max()
    p = np.exp(energies)
    return p / p.sum()


def scan_energies(states: np.ndarray, k: int, lookup: AttrLookup, lam) -> np.ndarray:
    """(N, d_k) log-energies by matching every lookup entry against the pool."""
    lam = np.asarray(lam, dtype=np.float64)
    n = states.shape[0]
    energies = np.zeros((n, lookup.domain_sizes[k]))
    for e in lookup[k]:
        if e.context_attrs:
            active = np.ones(n, dtype=bool)
            for a, v in zip(e.context_attrs, e.context_values):
                active &= states[:, a] == v
            energies[active, e.value] += lam[e.constraint]
        else:
            energies[:, e.value] += lam[e.constraint]
    return energies


@dataclass
class _ContextBlock:
    attrs: tuple[int, ...]
    strides: np.ndarray
    flat: np.ndarray  # position in the (ctx_size, d_k) table
    constraints: np.ndarray
    shape: tuple[int, int]


class AttrKernel:
    """Lookup entries of one attribute grouped by context attribute set.

    Each group becomes a dense ``(context cells, d_k)`` table of lambda values,
    so the energy update is one gather per group instead of one mask per entry.
    """

    def __init__(self, k: int, lookup: AttrLookup, schema: AttributeSchema):
        self.k = k
        self.d = lookup.domain_sizes[k]
        by_ctx: dict[tuple[int, ...], list] = {}
        for e in lookup[k]:
            by_ctx.setdefault(e.context_attrs, []).append(e)
        self.blocks: list[_ContextBlock] = []
        for attrs, entries in sorted(by_ctx.items(), key=lambda kv: (len(kv[0]), kv[0])):
            shape = tuple(schema.domain_sizes[a] for a in attrs)
            strides = _strides(shape) if attrs else np.zeros(0, dtype=np.int64)
            ctx_size = math.prod(shape)
            flat = np.array(
                [int(np.dot(e.context_values, strides)) * self.d + e.value for e in entries], dtype=np.int64
            )
            cons = np.array([e.constraint for e in entries], dtype=np.int64)
            self.blocks.append(_ContextBlock(attrs, strides, flat, cons, (ctx_size, self.d)))
        self.tables: list[np.ndarray] = []

    def set_lambda(self, lam: np.ndarray) -> None:
        tables = []
        for b in self.blocks:
            t = np.zeros(b.shape[0] * b.shape[1])
            t[b.flat] = lam[b.constraints]
            tables.append(t.reshape(b.shape))
        self.tables = tables

    def energies(self, states: np.ndarray) -> np.ndarray:
        n = states.shape[0]
        out = np.zeros((n, self.d))
        for b, table in zip(self.blocks, self.tables):
            if not b.attrs:
                out += table[0]
                continue
            code = states[:, b.attrs[0]] * int(b.strides[0])
            for a, s in zip(b.attrs[1:], b.strides[1:]):
                code = code + states[:, a] * int(s)
            out += table[code]
        return out


def _sample_rows(energies: np.ndarray, u: np.ndarray) -> np.ndarray:
    energies -= energies.max(axis=1, keepdims=True)
    np.exp(energies, out=energies)
    np.cumsum(energies, axis=1, out=energies)
    thresh = u * energies[:, -1]
    choice = (energies < thresh[:, None]).sum(axis=1)
    return np.minimum(choice, energies.shape[1] - 1)


class GibbsSampler:
    """Compiled per-attribute kernels for repeated sweeps under changing lambda."""

    def __init__(self, cs: ConstraintSet, lookup: AttrLookup | None = None):
        self.cs = cs
        self.lookup = build_attr_lookup(cs) if lookup is None else lookup
        self.kernels = [AttrKernel(k, self.lookup, cs.schema) for k in range(cs.schema.K)]

    def set_lambda(self, lam) -> None:
        lam = _check_lambda(self.cs, lam)
        for kern in self.kernels:
            kern.set_lambda(lam)

    def _update_column(self, pool: Pool, k: int, u: np.ndarray, threads: int, executor) -> None:
        kern = self.kernels[k]
        states = pool.states
        if threads <= 1 or executor is None:
            states[:, k] = _sample_rows(kern.energies(states), u)
            return
        bounds = np.linspace(0, pool.size, threads + 1).astype(int)

        def work(lo, hi):
            rows = states[lo:hi]
            return lo, hi, _sample_rows(kern.energies(rows), u[lo:hi])

        results = list(executor.map(lambda b: work(*b), zip(bounds[:-1], bounds[1:])))
        for lo, hi, vals in results:
            states[lo:hi, k] = vals

    def sweep(self, pool: Pool, seed: int, threads: int = 1, executor=None) -> Pool:
        """Resample every attribute of every row once, in a fresh random attribute order."""
        g = pool.generation
        perm_rng = np.random.default_rng(np.random.SeedSequence([seed, _PERM_STREAM, g]))
        for k in perm_rng.permutation(self.cs.schema.K):
            row_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _ROW_STREAM, g, int(k)])))
            u = row_rng.random(pool.size)
            self._update_column(pool, int(k), u, threads, executor)
        pool.generation += 1
        return pool


def gibbs_sweep(pool: Pool, cs: ConstraintSet, lam, seed: int = 0, threads: int = 1) -> Pool:
    """One in-place Gibbs sweep of ``pool`` under ``lam``."""
    sampler = GibbsSampler(cs)
    sampler.set_lambda(lam)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return sampler.sweep(pool, seed, threads, ex)
    return sampler.sweep(pool, seed)


def estimate_expectations(pool: Pool, cs: ConstraintSet) -> np.ndarray:
    """Fraction of pool rows matching each constraint."""
    return feature_frequencies(pool.states, cs)


def should_stop(history, window: int, tau: float) -> bool:
    """Stop when the best MRE of the latest window improves on the best of the
    window before it by a relative amount below ``tau``."""
    if len(history) < 2 * window:
        return False
    hist = np.asarray(history[-2 * window :], dtype=np.float64)
    prev = float(hist[:window].min())
    last = float(hist[window:].min())
    if prev <= 0.0:
        return True
    return (prev - last) / prev < tau


@dataclass
class PcdTrace:
    mre: list[float] = field(default_factory=list)
    elapsed: list[float] = field(default_factory=list)
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)
    stop_reason: str = ""

    COLUMNS = ("iteration", "mre", "wall_seconds", "stopped")

    def rows(self) -> list[dict]:
        n = len(self.mre)
        return [
            {"iteration": i + 1, "mre": self.mre[i], "wall_seconds": self.elapsed[i], "stopped": i == n - 1 and bool(self.stop_reason)}
            for i in range(n)
        ]


@dataclass
class PcdResult:
    lam: np.ndarray
    pool: Pool
    trace: PcdTrace
    adam: Adam
    alpha_hat: np.ndarray
    iterations: int
    diverged: bool = False

    @property
    def final_mre(self) -> float:
        return self.trace.mre[-1] if self.trace.mre else float("nan")

    @property
    def stop_reason(self) -> str:
        return self.trace.stop_reason


def fit_pcd(
    cs: ConstraintSet,
    targets=None,
    config: PcdConfig | None = None,
    *,
    resume: PcdResult | None = None,
    callback=None,
) -> PcdResult:
    """Fit lambda by PCD; ``resume`` continues a previous run (pool, Adam state, trace).

    ``callback(t, lam, alpha_hat, mre_t)`` is invoked after each outer iteration.
    """
    config = config or PcdConfig()
    alpha = cs.targets if targets is None else np.asarray(targets, dtype=np.float64)
    if alpha.shape != (cs.m,):
        raise InvalidInputError(f"expected {cs.m} targets, got shape {alpha.shape}")
    sampler = GibbsSampler(cs)
    if resume is None:
        lam = np.zeros(cs.m)
        pool = Pool.uniform(cs.schema, config.pool_size, config.seed)
        adam = Adam(cs.m, config.learning_rate, config.beta1, config.beta2, config.eps)
        trace = PcdTrace()
    else:
        lam = _check_lambda(cs, resume.lam).copy()
        pool = resume.pool.copy()
        adam = resume.adam.copy()
        trace = copy.deepcopy(resume.trace)
        trace.stop_reason = ""
    cs.schema.check_states(pool.states)
    history = list(trace.mre)
    start = time.perf_counter() - (trace.elapsed[-1] if trace.elapsed else 0.0)
    alpha_hat = np.full(cs.m, np.nan)
    diverged = False
    executor = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for _ in range(config.max_iters):
            sampler.set_lambda(lam)
            for _ in range(config.sweeps):
                sampler.sweep(pool, config.seed, config.threads, executor)
            alpha_hat = feature_frequencies(pool.states, cs)
            new_lam = lam - adam.step(alpha_hat - alpha)
            mre_t = mre(alpha_hat, alpha, config.mre_floor)
            history.append(mre_t)
            trace.mre.append(mre_t)
            trace.elapsed.append(time.perf_counter() - start)
            t = len(trace.mre)
            if not np.all(np.isfinite(new_lam)):
                diverged = True
                trace.stop_reason = "diverged"
                log.warning("PCD diverged at iteration %d", t)
                break
            lam = new_lam
            if config.snapshot_every and t % config.snapshot_every == 0:
                trace.snapshots[t] = lam.copy()
            if callback is not None:
                callback(t, lam, alpha_hat, mre_t)
            if should_stop(history, config.window, config.tau):
                trace.stop_reason = "stopping_rule"
                break
        else:
            trace.stop_reason = "max_iters"
    finally:
        if executor is not None:
            executor.shutdown()
    return PcdResult(lam, pool, trace, adam, alpha_hat, len(trace.mre), diverged)
