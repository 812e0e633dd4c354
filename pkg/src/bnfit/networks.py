"""Built-in synthetic networks for tests, demos, and experiments.

Three sizes: a 3-variable chain whose middle node plays the hidden role,
an 8-node tree with mixed arities, and a 15-node two-layer DAG.  CPTs are
fixed (seeded) draws kept away from 0 and 1 so every configuration has
visible probability and estimation stays well-conditioned.
"""

from __future__ import annotations

import numpy as np

from .model import Network, NetworkStructure, ParameterVector, ValidationError, Variable


def _structure(spec: list[tuple[str, int, list[str]]]) -> NetworkStructure:
    names = [name for name, _, _ in spec]
    variables = tuple(
        Variable(i, name, tuple(f"s{k}" for k in range(arity)))
        for i, (name, arity, _) in enumerate(spec)
    )
    index = {n: i for i, n in enumerate(names)}
    parents = tuple(tuple(index[p] for p in plist) for _, _, plist in spec)
    return NetworkStructure(variables, parents)


def _seeded_tables(
    structure: NetworkStructure, seed: int, alpha: float, blend: float
) -> list[np.ndarray]:
    """Sharp Dirichlet rows blended with a little uniform mass."""
    rng = np.random.default_rng(seed)
    tables = []
    for i in range(structure.n_vars):
        q, r = structure.table_shape(i)
        rows = rng.dirichlet(np.full(r, alpha), size=q)
        rows = blend * rows + (1 - blend) / r
        tables.append(rows / rows.sum(axis=1, keepdims=True))
    return tables


def _weaken_coupling(
    structure: NetworkStructure, tables: list[np.ndarray], parent_name: str, amount: float
) -> None:
    """Shrink every child CPT's variation along one parent's axis.

    Children keep sharp rows but respond only mildly to this parent, so
    its value is inferred slowly from data: a realistic mix of strong and
    weak dependencies that gives estimation a genuinely slow mode.
    """
    wi = structure.by_name(parent_name).index
    for i in range(structure.n_vars):
        if wi not in structure.parents[i]:
            continue
        pa = structure.parents[i]
        ax = pa.index(wi)
        shape = tuple(structure.arity(p) for p in pa) + (structure.arity(i),)
        t = tables[i].reshape(shape)
        m = t.mean(axis=ax, keepdims=True)
        t = amount * m + (1 - amount) * t
        tables[i] = (t / t.sum(axis=-1, keepdims=True)).reshape(structure.table_shape(i))


def chain3() -> Network:
    """A -> M -> B, all binary; M is the conventional hidden node."""
    structure = _structure([("A", 2, []), ("M", 2, ["A"]), ("B", 2, ["M"])])
    theta = ParameterVector(
        [
            np.array([[0.65, 0.35]]),
            np.array([[0.85, 0.15], [0.25, 0.75]]),
            np.array([[0.80, 0.20], [0.30, 0.70]]),
        ]
    )
    return Network(structure, theta)


def tree8() -> Network:
    """8-node tree, arities 2 and 3."""
    spec = [
        ("T0", 3, []),
        ("T1", 2, ["T0"]),
        ("T2", 3, ["T0"]),
        ("T3", 2, ["T1"]),
        ("T4", 2, ["T1"]),
        ("T5", 3, ["T2"]),
        ("T6", 2, ["T2"]),
        ("T7", 2, ["T3"]),
    ]
    structure = _structure(spec)
    return Network(structure, ParameterVector(_seeded_tables(structure, 80801, 0.4, 0.9)))


def twolayer15() -> Network:
    """15-node two-layer DAG: 5 roots, 10 children with 2 parents each.

    V4's children depend on it only weakly, so runs that hide V4 face a
    slow estimation mode; the other dependencies are sharp.
    """
    spec = [
        ("V0", 2, []),
        ("V1", 3, []),
        ("V2", 2, []),
        ("V3", 3, []),
        ("V4", 2, []),
        ("V5", 2, ["V0", "V1"]),
        ("V6", 2, ["V1", "V2"]),
        ("V7", 3, ["V2", "V3"]),
        ("V8", 2, ["V3", "V4"]),
        ("V9", 2, ["V4", "V0"]),
        ("V10", 2, ["V0", "V2"]),
        ("V11", 3, ["V1", "V3"]),
        ("V12", 2, ["V2", "V4"]),
        ("V13", 2, ["V0", "V3"]),
        ("V14", 2, ["V1", "V4"]),
    ]
    structure = _structure(spec)
    tables = _seeded_tables(structure, 151501, 0.3, 0.95)
    _weaken_coupling(structure, tables, "V4", 0.5)
    return Network(structure, ParameterVector(tables))


BUILTIN_NETWORKS = {
    "chain3": chain3,
    "tree8": tree8,
    "twolayer15": twolayer15,
}


def builtin_network(name: str) -> Network:
    try:
        return BUILTIN_NETWORKS[name]()
    except KeyError:
        raise ValidationError(
            f"unknown built-in network {name!r}; "
            f"available: {sorted(BUILTIN_NETWORKS)}"
        ) from None
