"""treelab: percolation, Ising and random-walk experiments on products of regular trees.

The package pairs Monte Carlo estimators (percolation_engine, ising_engine,
walk_engine) with exact brute-force oracles (exact_oracle) on a shared
geometry layer (tree_geometry, product_graph), under a deterministic,
stream-per-replica execution model (rng, cli).
"""

__version__ = "0.1.0"
