"""
Small parsimony on four related trees
=====================================

Sankoff scores for two sites on four trees that share a root split.  Trees
that pair taxa the same way on both sides score better.
"""

from vbpimix.parsimony import EXAMPLE_SITES, example_tree, parsimony_score, render_example

print(render_example())

# %%
# The same totals straight from the scoring function.
for name in ("tau1", "tau2", "tau3", "tau4"):
    t = example_tree(name)
    print(name, sum(parsimony_score(t, col) for col in EXAMPLE_SITES.values()))
