"""Enumeration-based MaxEnt reference: log-partition, expectations, dual solve, exact KL.

The tuple space is walked in mixed-radix blocks: the leading attributes are
fixed and the log-weights of the remaining suffix are built by broadcasting
each pattern group's dense lambda table. Memory stays at one block of scalars.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from itertools import product
from typing import Iterator

import numpy as np
from scipy.optimize import minimize

from .errors import EnumerationInfeasibleError, InvalidInputError, SchemaMismatchError
from .metrics import mre
from .model import ConstraintSet, _check_lambda

log = logging.getLogger(__name__)

DEFAULT_MAX_ENUM = 10**8
BLOCK_SIZE = 1 << 20


def check_budget(cs: ConstraintSet, max_enum: float = DEFAULT_MAX_ENUM) -> None:
    size = cs.schema.space_size
    if size > max_enum:
        raise EnumerationInfeasibleError(size, max_enum)


def iter_log_weight_blocks(
    cs: ConstraintSet, lam: np.ndarray, block_size: int = BLOCK_SIZE
) -> Iterator[tuple[tuple[int, ...], np.ndarray]]:
    """Yield ``(prefix, u_block)`` covering the tuple space in mixed-radix order.

    ``u_block`` has shape ``domain_sizes[len(prefix):]``.
    """
    sizes = cs.schema.domain_sizes
    K = len(sizes)
    r = 0
    while r < K - 1 and math.prod(sizes[r:]) > block_size:
        r += 1
    suffix_shape = sizes[r:]
    tables = [(g, g.dense(lam)) for g in cs.pattern_groups]
    for prefix in product(*(range(d) for d in sizes[:r])):
        u = np.zeros(suffix_shape)
        for g, table in tables:
            idx = tuple(prefix[a] if a < r else slice(None) for a in g.attrs)
            shape = [1] * (K - r)
            for a in g.attrs:
                if a >= r:
                    shape[a - r] = sizes[a]
            u += table[idx].reshape(shape)
        yield prefix, u


def _marginal_axes(cs: ConstraintSet, r: int):
    K = cs.schema.K
    out = []
    for g in cs.pattern_groups:
        keep = [a - r for a in g.attrs if a >= r]
        drop = tuple(i for i in range(K - r) if i not in keep)
        n_prefix = sum(1 for a in g.attrs if a < r)
        out.append((g, drop, n_prefix))
    return out


def _enumerate(cs: ConstraintSet, lam: np.ndarray, max_enum: float, marginals: bool):
    """Return ``(log Z, alpha_hat or None)`` by two-pass streaming log-sum-exp."""
    check_budget(cs, max_enum)
    first = next(iter_log_weight_blocks(cs, lam))
    single = first[1].size == cs.schema.space_size

    def all_blocks():
        if single:
            yield first
        else:
            yield from iter_log_weight_blocks(cs, lam)

    top = -np.inf
    for _, u in all_blocks():
        top = max(top, float(u.max()))
    r = len(first[0])
    total = 0.0
    margs = [np.zeros(g.shape) for g in cs.pattern_groups] if marginals else None
    axes = _marginal_axes(cs, r) if marginals else None
    for prefix, u in all_blocks():
        w = np.exp(u - top)
        total += float(w.sum())
        if marginals:
            for i, (g, drop, n_prefix) in enumerate(axes):
                red = w.sum(axis=drop) if drop else w
                margs[i][tuple(prefix[a] for a in g.attrs[:n_prefix])] += red
    log_z = top + math.log(total)
    if not marginals:
        return log_z, None
    alpha = np.empty(cs.m)
    for g, marg in zip(cs.pattern_groups, margs):
        alpha[g.atoms] = marg.reshape(-1)[g.cells] / total
    return log_z, alpha


def log_partition(cs: ConstraintSet, lam, max_enum: float = DEFAULT_MAX_ENUM) -> float:
    lam = _check_lambda(cs, lam)
    return _enumerate(cs, lam, max_enum, marginals=False)[0]


def exact_expectations(cs: ConstraintSet, lam, max_enum: float = DEFAULT_MAX_ENUM) -> np.ndarray:
    """Model frequencies ``E_p[f_j]`` by full enumeration."""
    lam = _check_lambda(cs, lam)
    return np.clip(_enumerate(cs, lam, max_enum, marginals=True)[1], 0.0, 1.0)


@dataclass
class EnumeratedModel:
    """An exponential-family distribution small enough to enumerate."""

    cs: ConstraintSet
    lam: np.ndarray
    max_enum: float = DEFAULT_MAX_ENUM
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.lam = _check_lambda(self.cs, self.lam).copy()
        self.lam.setflags(write=False)
        check_budget(self.cs, self.max_enum)

    def _stats(self):
        if "stats" not in self._cache:
            self._cache["stats"] = _enumerate(self.cs, self.lam, self.max_enum, marginals=True)
        return self._cache["stats"]

    @property
    def log_z(self) -> float:
        return self._stats()[0]

    @property
    def expectations(self) -> np.ndarray:
        return np.clip(self._stats()[1], 0.0, 1.0)

    @property
    def entropy(self) -> float:
        """Shannon entropy in nats: ``log Z - lam . E[f]``."""
        return self.log_z - float(np.dot(self.lam, self._stats()[1]))

    def log_weights(self) -> np.ndarray:
        """Dense ``u_x`` over the whole space, shape ``domain_sizes``."""
        if "u" not in self._cache:
            sizes = self.cs.schema.domain_sizes
            u = np.empty(sizes)
            for prefix, block in iter_log_weight_blocks(self.cs, self.lam):
                u[prefix] = block
            self._cache["u"] = u
        return self._cache["u"]

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights() - self.log_z)

    def log_prob(self, x) -> float:
        x = self.cs.schema.check_tuple(x)
        return float(self.log_weights()[tuple(x)]) - self.log_z


@dataclass
class DualState:
    lam: np.ndarray
    objective: float
    gradient: np.ndarray
    expectations: np.ndarray


def dual_objective_and_gradient(
    cs: ConstraintSet, lam, targets=None, max_enum: float = DEFAULT_MAX_ENUM
) -> DualState:
    """``Phi = log Z - lam . alpha`` and its gradient ``alpha_hat - alpha``."""
    lam = _check_lambda(cs, lam)
    alpha = cs.targets if targets is None else np.asarray(targets, dtype=np.float64)
    if alpha.shape != (cs.m,):
        raise InvalidInputError(f"expected {cs.m} targets, got shape {alpha.shape}")
    log_z, alpha_hat = _enumerate(cs, lam, max_enum, marginals=True)
    return DualState(lam, log_z - float(np.dot(lam, alpha)), alpha_hat - alpha, alpha_hat)


@dataclass
class ExactSolution:
    lam: np.ndarray
    converged: bool
    diverged: bool
    iterations: int
    grad_inf_norm: float
    objective: float
    mre: float
    message: str
    seconds: float
    trace: list[dict] = field(default_factory=list)

    TRACE_COLUMNS = ("iteration", "objective", "grad_inf_norm", "mre", "elapsed_seconds")


class _Diverged(Exception):
    pass


def solve_exact(
    cs: ConstraintSet,
    targets=None,
    *,
    tol: float = 1e-6,
    max_iters: int = 1000,
    memory: int = 10,
    max_norm: float = 1e3,
    max_enum: float = DEFAULT_MAX_ENUM,
    lam0=None,
) -> ExactSolution:
    """Minimise the dual objective with L-BFGS.

    Converged means ``max_j |alpha_hat_j - alpha_j| <= tol``. Divergence
    (non-finite objective or ``||lam|| > max_norm``) is reported with the
    last finite iterate rather than raised.
    """
    check_budget(cs, max_enum)
    alpha = cs.targets if targets is None else np.asarray(targets, dtype=np.float64)
    if alpha.shape != (cs.m,):
        raise InvalidInputError(f"expected {cs.m} targets, got shape {alpha.shape}")
    x0 = np.zeros(cs.m) if lam0 is None else _check_lambda(cs, lam0).copy()
    start = time.perf_counter()
    last: dict = {}
    trace: list[dict] = []

    def fun(x):
        state = dual_objective_and_gradient(cs, x, alpha, max_enum)
        if not np.isfinite(state.objective):
            raise _Diverged("non-finite objective")
        last["x"] = x.copy()
        last["state"] = state
        return state.objective, state.gradient

    def record(x):
        state = last.get("state")
        if state is None or not np.array_equal(last["x"], x):
            state = dual_objective_and_gradient(cs, x, alpha, max_enum)
        trace.append(
            {
                "iteration": len(trace),
                "objective": state.objective,
                "grad_inf_norm": float(np.max(np.abs(state.gradient))),
                "mre": _safe_mre(state.expectations, alpha),
                "elapsed_seconds": time.perf_counter() - start,
            }
        )
        return state

    def callback(intermediate_result):
        x = intermediate_result.x
        record(x)
        if np.linalg.norm(x) > max_norm:
            raise _Diverged(f"||lambda|| exceeded {max_norm:g}")

    record(x0)
    diverged = False
    message = ""
    try:
        res = minimize(
            fun,
            x0,
            jac=True,
            method="L-BFGS-B",
            callback=callback,
            options={"maxcor": memory, "gtol": tol, "ftol": 0.0, "maxiter": max_iters, "maxls": 50},
        )
        x = res.x
        message = str(res.message)
        iterations = int(res.nit)
    except _Diverged as exc:
        diverged = True
        message = str(exc)
        x = last.get("x", x0)
        iterations = len(trace) - 1
    state = dual_objective_and_gradient(cs, x, alpha, max_enum)
    gnorm = float(np.max(np.abs(state.gradient))) if cs.m else 0.0
    if not diverged and np.linalg.norm(x) > max_norm:
        diverged = True
        message = f"||lambda|| exceeded {max_norm:g}"
    converged = (not diverged) and gnorm <= tol
    if not converged:
        log.info("exact solver stopped without convergence: %s (grad %.3g)", message, gnorm)
    return ExactSolution(
        lam=np.asarray(x, dtype=np.float64),
        converged=converged,
        diverged=diverged,
        iterations=iterations,
        grad_inf_norm=gnorm,
        objective=state.objective,
        mre=_safe_mre(state.expectations, alpha),
        message=message,
        seconds=time.perf_counter() - start,
        trace=trace,
    )


def _safe_mre(est, alpha) -> float:
    try:
        return mre(est, alpha)
    except InvalidInputError:
        return float("nan")


def exact_kl(p: EnumeratedModel, q: EnumeratedModel) -> float:
    """``KL(p || q)`` in nats by enumeration."""
    if p.cs.schema.domain_sizes != q.cs.schema.domain_sizes:
        raise SchemaMismatchError("models are defined over different attribute schemas")
    log_zp, log_zq = p.log_z, q.log_z
    acc = 0.0
    blocks_q = iter_log_weight_blocks(q.cs, q.lam)
    for (_, up), (_, uq) in zip(iter_log_weight_blocks(p.cs, p.lam), blocks_q):
        pp = np.exp(up - log_zp)
        acc += float(np.sum(pp * (up - uq)))
    return max(acc - log_zp + log_zq, 0.0)


def exact_conditional(cs: ConstraintSet, lam, x, k: int) -> np.ndarray:
    """Brute-force ``p(A_k = v | x_-k)``: score every candidate v, softmax."""
    from .model import tuple_energy

    lam = _check_lambda(cs, lam)
    x = cs.schema.check_tuple(x).copy()
    d = cs.schema.domain_sizes[k]
    energies = np.empty(d)
    for v in range(d):
        x[k] = v
        energies[v] = tuple_energy(x, cs, lam)
    energies -= energies.max()
    p = np.exp(energies)
    return p / p.sum()
