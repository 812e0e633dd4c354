"""Exact inference: case likelihoods and per-family posteriors.

Two independent routes compute the same quantities:

* The main route is variable elimination with a min-degree ordering.  It
  is batched over data cases: factors carry a leading case axis so one
  elimination pass answers a query for every case in a dataset chunk at
  once.  Products keep a separate per-case log-scale accumulator, so
  probabilities far below float underflow stay representable.

* The oracle route (`enumerate_*`) sums over all joint completions.  It
  exists for tests and sanity checks and shares no code with the main
  route beyond the network types.

A "family" is a variable together with its parents; the family posterior
for case y is P(X_i = k, Pa_i = j | y), stored in the same (q_i, r_i)
layout as the variable's CPT.  For every family these entries sum to 1
over (j, k): they partition the evidence-conditioned joint.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import Network, NetworkStructure, ValidationError, ZeroProbabilityError
from .netio import DataCase, MISSING

MAX_ENUM_STATES = 1 << 20

# Factor entries stay raw floats until they sink below this; then the
# per-case maximum is pulled out into the log-scale accumulator, keeping
# evidence probabilities far below float underflow representable.
RESCALE_TRIGGER = 1e-100


# -- batched factors ------------------------------------------------------


@dataclass
class _Factor:
    """values[b, ...] * exp(logscale[b]) over the sorted variable scope.

    The leading axis is the case batch; it may have length 1 and rely on
    broadcasting when the factor is case-independent.  ``logscale`` is a
    scalar 0.0 until a rescale makes it a per-case array.
    """

    scope: tuple[int, ...]
    values: np.ndarray
    logscale: np.ndarray | float


def _align(
    values: np.ndarray, scope: tuple[int, ...], union: tuple[int, ...], arities: tuple[int, ...]
) -> np.ndarray:
    """Reshape `values` with singleton axes so it broadcasts over the union."""
    if scope == union:
        return values
    shape = (values.shape[0],) + tuple(
        arities[v] if v in scope else 1 for v in union
    )
    return values.reshape(shape)


def _multiply(factors: list[_Factor], arities: tuple[int, ...]) -> _Factor:
    if len(factors) == 1:
        return factors[0]
    union = tuple(sorted(set().union(*(f.scope for f in factors))))
    values = _align(factors[0].values, factors[0].scope, union, arities)
    logscale = factors[0].logscale
    for f in factors[1:]:
        values = values * _align(f.values, f.scope, union, arities)
        logscale = logscale + f.logscale
    return _Factor(union, values, logscale)


def _sum_out(factor: _Factor, var: int) -> _Factor:
    ax = 1 + factor.scope.index(var)
    values = factor.values.sum(axis=ax)
    scope = tuple(v for v in factor.scope if v != var)
    return _Factor(scope, values, factor.logscale)


def _maybe_rescale(factor: _Factor) -> _Factor:
    """Pull per-case maxima into the log-scale accumulator when needed.

    Cases whose values are identically zero are left alone; they signal
    zero-probability evidence and are reported by the caller.
    """
    if factor.values.size == 0 or float(factor.values.max()) > RESCALE_TRIGGER:
        return factor
    flat = factor.values.reshape(factor.values.shape[0], -1)
    m = flat.max(axis=1)
    safe = np.where(m > 0.0, m, 1.0)
    shape = (-1,) + (1,) * (factor.values.ndim - 1)
    values = factor.values / safe.reshape(shape)
    logscale = factor.logscale + np.log(safe)
    return _Factor(factor.scope, values, logscale)


@lru_cache(maxsize=1024)
def _min_degree_order(scopes: tuple[tuple[int, ...], ...], elim: frozenset[int]) -> tuple[int, ...]:
    """Min-degree elimination ordering; ties broken by variable id."""
    nbrs: dict[int, set[int]] = {}
    for sc in scopes:
        for a in sc:
            nbrs.setdefault(a, set())
        for a in sc:
            for b in sc:
                if a != b:
                    nbrs[a].add(b)
    remaining = set(elim) & set(nbrs)
    order = []
    while remaining:
        v = min(remaining, key=lambda x: (len(nbrs[x]), x))
        order.append(v)
        vs = nbrs.pop(v)
        for a in vs:
            nbrs[a].discard(v)
        for a in vs:
            for b in vs:
                if a != b:
                    nbrs[a].add(b)
        remaining.discard(v)
    return tuple(order)


def _cpt_factor(network: Network, i: int, evidence: np.ndarray | None) -> _Factor:
    """CPT of variable i as a batched factor, with i's evidence folded in."""
    s = network.structure
    axis_vars = list(s.parents[i]) + [i]
    shape = tuple(s.arity(v) for v in axis_vars)
    values = network.theta.tables[i].reshape(shape)
    perm = sorted(range(len(axis_vars)), key=lambda p: axis_vars[p])
    scope = tuple(axis_vars[p] for p in perm)
    values = values.transpose(tuple(perm))[None]
    if evidence is not None:
        pos = scope.index(i)
        ev_shape = (evidence.shape[0],) + (1,) * pos + (s.arity(i),) + (1,) * (len(scope) - pos - 1)
        values = values * evidence.reshape(ev_shape)
    return _Factor(scope, values, 0.0)


def _evidence_columns(structure: NetworkStructure, values: np.ndarray) -> list[np.ndarray | None]:
    """Per variable: (B, r) indicator-or-ones matrix, or None if never observed."""
    out: list[np.ndarray | None] = []
    for i in range(structure.n_vars):
        col = values[:, i]
        obs = col >= 0
        if not np.any(obs):
            out.append(None)
            continue
        ev = np.ones((values.shape[0], structure.arity(i)))
        ev[obs] = 0.0
        ev[np.nonzero(obs)[0], col[obs]] = 1.0
        out.append(ev)
    return out


def _eliminate(factors: list[_Factor], elim: frozenset[int], arities: tuple[int, ...]) -> _Factor:
    order = _min_degree_order(tuple(f.scope for f in factors), elim)
    for var in order:
        touching = [f for f in factors if var in f.scope]
        rest = [f for f in factors if var not in f.scope]
        merged = _maybe_rescale(_sum_out(_multiply(touching, arities), var))
        factors = rest + [merged]
    return _multiply(factors, arities)


def _run_queries(
    network: Network, values: np.ndarray, query_sets: list[tuple[int, ...]]
) -> list[_Factor]:
    """One elimination per query set, sharing the evidence-folded factors."""
    s = network.structure
    arities = tuple(s.arity(i) for i in range(s.n_vars))
    evidence = _evidence_columns(s, values)
    base = [_cpt_factor(network, i, evidence[i]) for i in range(s.n_vars)]
    all_vars = frozenset(range(s.n_vars))
    return [_eliminate(list(base), all_vars - frozenset(qs), arities) for qs in query_sets]


def _raise_zero(total: np.ndarray, what: str) -> None:
    bad = np.nonzero(~(total > 0.0))[0]
    if bad.size:
        idx = int(bad[0])
        raise ZeroProbabilityError(
            f"{what}: case {idx} has probability 0 under the current parameters",
            case_index=idx,
        )


# -- public single-case operations ----------------------------------------


def joint_probability(network: Network, case: DataCase) -> float:
    """Chain-rule product for a fully observed case."""
    s = network.structure
    states = case.states
    if np.any(states < 0):
        raise ValidationError("joint_probability requires a fully observed case")
    p = 1.0
    for i in range(s.n_vars):
        j = 0
        for q in s.parents[i]:
            j = j * s.arity(q) + int(states[q])
        p *= float(network.theta.tables[i][j, int(states[i])])
    return p


def log_marginal_likelihood(network: Network, case: DataCase) -> float:
    """log P(observed part of the case), by variable elimination."""
    lls = log_likelihood_cases(network, case.states[None, :])
    return float(lls[0])


def log_likelihood_cases(network: Network, values: np.ndarray) -> np.ndarray:
    """log P(y) for every row of an (N, V) case matrix."""
    res = _run_queries(network, values, [()])[0]
    total = res.values.reshape(res.values.shape[0], -1).sum(axis=1)
    total = np.broadcast_to(total, (values.shape[0],))
    logscale = np.broadcast_to(res.logscale, (values.shape[0],))
    _raise_zero(total, "log-likelihood")
    return np.log(total) + logscale


def family_posteriors(network: Network, case: DataCase) -> list[np.ndarray]:
    """P(X_i = k, Pa_i = j | case) for every family, CPT-shaped."""
    post, _ = batch_family_posteriors(network, case.states[None, :])
    return [p[0] for p in post]


def batch_family_posteriors(
    network: Network, values: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Family posteriors for every case row, plus per-case log-likelihoods.

    Returns ([(N, q_i, r_i) arrays], (N,) log-likelihood vector).  The
    log-likelihood is read off the normalizer of the first family query.
    """
    s = network.structure
    n_cases = values.shape[0]
    query_sets = [tuple(sorted(set(s.parents[i]) | {i})) for i in range(s.n_vars)]
    results = _run_queries(network, values, query_sets)
    posteriors = []
    loglik: np.ndarray | None = None
    for i, res in enumerate(results):
        target = list(s.parents[i]) + [i]
        perm = [res.scope.index(v) for v in target]
        vals = res.values.transpose([0] + [1 + p for p in perm])
        vals = np.ascontiguousarray(vals).reshape(vals.shape[0], *s.table_shape(i))
        total = vals.reshape(vals.shape[0], -1).sum(axis=1)
        _raise_zero(np.broadcast_to(total, (n_cases,)), "family posteriors")
        if loglik is None:
            loglik = np.broadcast_to(np.log(total) + res.logscale, (n_cases,)).copy()
        post = vals / total.reshape(-1, 1, 1)
        posteriors.append(np.broadcast_to(post, (n_cases,) + post.shape[1:]))
    assert loglik is not None
    return posteriors, loglik


def posterior_marginal(network: Network, case: DataCase, var_ids: list[int]) -> np.ndarray:
    """Joint posterior over the given variables, axes in the given order."""
    if len(set(var_ids)) != len(var_ids):
        raise ValidationError("duplicate variables in marginal query")
    res = _run_queries(network, case.states[None, :], [tuple(sorted(var_ids))])[0]
    perm = [res.scope.index(v) for v in var_ids]
    vals = res.values.transpose([0] + [1 + p for p in perm])[0]
    total = vals.sum()
    if not total > 0.0:
        raise ZeroProbabilityError(
            "marginal query: evidence has probability 0", case_index=None
        )
    return vals / total


def parent_config_marginals(network: Network) -> list[np.ndarray]:
    """Exact prior P(Pa_i = j) for every variable, as (q_i,) arrays."""
    s = network.structure
    empty = DataCase(np.full(s.n_vars, MISSING, dtype=np.int64))
    post = family_posteriors(network, empty)
    return [p.sum(axis=1) for p in post]


# -- enumeration oracle ----------------------------------------------------


def _check_enum_size(structure: NetworkStructure, free: list[int]) -> None:
    total = 1
    for v in free:
        total *= structure.arity(v)
        if total > MAX_ENUM_STATES:
            raise ValidationError(
                f"state space too large to enumerate (> {MAX_ENUM_STATES})"
            )


def _completions(structure: NetworkStructure, case_states: np.ndarray) -> np.ndarray:
    """All full assignments consistent with the case, as an (T, V) matrix."""
    free = [i for i in range(structure.n_vars) if case_states[i] < 0]
    _check_enum_size(structure, free)
    t = 1
    for v in free:
        t *= structure.arity(v)
    full = np.tile(case_states, (t, 1))
    if free:
        grids = np.meshgrid(*[np.arange(structure.arity(v)) for v in free], indexing="ij")
        for col, v in enumerate(free):
            full[:, v] = grids[col].ravel()
    return full


def _assignment_weights(network: Network, full: np.ndarray) -> np.ndarray:
    """Chain-rule weight of each full assignment row."""
    s = network.structure
    w = np.ones(full.shape[0])
    for i in range(s.n_vars):
        j = np.zeros(full.shape[0], dtype=np.int64)
        for p in s.parents[i]:
            j = j * s.arity(p) + full[:, p]
        w *= network.theta.tables[i][j, full[:, i]]
    return w


def enumerate_case_probability(network: Network, case: DataCase) -> float:
    """P(observed part of the case) by summing all completions."""
    full = _completions(network.structure, case.states)
    return float(_assignment_weights(network, full).sum())


def enumerate_family_posteriors(network: Network, case: DataCase) -> list[np.ndarray]:
    """Same contract as family_posteriors, via exhaustive summation."""
    s = network.structure
    full = _completions(s, case.states)
    w = _assignment_weights(network, full)
    total = w.sum()
    if not total > 0.0:
        raise ZeroProbabilityError(
            "enumeration: evidence has probability 0", case_index=None
        )
    out = []
    for i in range(s.n_vars):
        j = np.zeros(full.shape[0], dtype=np.int64)
        for p in s.parents[i]:
            j = j * s.arity(p) + full[:, p]
        acc = np.zeros(s.table_shape(i))
        np.add.at(acc, (j, full[:, i]), w)
        out.append(acc / total)
    return out


def enumerate_joint(network: Network) -> np.ndarray:
    """The full joint as a flat array, C-ordered over declared variables."""
    s = network.structure
    empty = np.full(s.n_vars, MISSING, dtype=np.int64)
    full = _completions(s, empty)
    return _assignment_weights(network, full)
