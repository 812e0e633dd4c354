"""Build networks, draw data, and obscure it.

Walks through the basic objects: the built-in networks, forward
(ancestral) sampling, and the hidden/obscured missingness model used by
all the estimation demos.
"""

import numpy as np

from bnfit import (
    MissingnessSpec,
    chain3,
    forward_sample,
    obscure,
    serialize_network,
    twolayer15,
)

net = chain3()
print("chain3 variables:", [v.name for v in net.structure.variables])
print("CPT of M given A:")
print(net.theta.tables[1])

# 500 complete cases from the network's distribution
complete = forward_sample(net, 500, seed=7)
freq_a1 = (complete.values[:, 0] == 1).mean()
print(f"\nP(A=s1) = {net.theta.tables[0][0, 1]:.2f}, sampled frequency = {freq_a1:.3f}")

# hide M everywhere; obscure 20% of the remaining values
spec = MissingnessSpec(hidden=("M",), obscure_prob=0.2, seed=8)
partial = obscure(complete, spec)
missing_frac = (partial.values == -1).mean(axis=0)
for v, frac in zip(net.structure.variables, missing_frac):
    print(f"missing fraction of {v.name}: {frac:.2f}")

# the bigger built-in network, serialized to its file format
big = twolayer15()
text = serialize_network(big, name="twolayer15")
print(f"\ntwolayer15 has {big.structure.n_vars} variables; "
      f"file form is {len(text.splitlines())} lines")
print("\n".join(text.splitlines()[:6]), "\n...")
