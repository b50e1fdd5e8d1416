"""Benchmark table: each family's baseline planner against the gated planner.

Run with ``python demos/comparison_table.py``. Success is the exact
probability that the MAP guess of Q is right; residual is H(Q | H_T) in bits.
"""

from bridgegap.bench import format_table, run_table

results = run_table(n=4, m=8, n_c=2, n_f=2)
print(format_table(results))
