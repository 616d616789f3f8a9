# %% [markdown]
# # Scoring a new customer
#
# Every split belongs to one party. To classify a row, the active party walks
# each tree and, at a passive node, asks its owner "left or right?" for that
# row. The owner looks up its own threshold and answers with one bit.

# %%
from secureboost import data
from secureboost.boosting import BoostingParams
from secureboost.federation import Federation, vertical_partition

ds = data.synth("credit1", 500, 6, seed=1)
parties = vertical_partition(ds.X, ds.y, [[0, 1, 2], [3, 4, 5]], ds.feature_names)

with Federation(parties, BoostingParams(n_trees=3), key_bits=256, record=True) as fed:
    fed.fit()
    queries = {1: parties[0].X[:4], 2: parties[1].X[:4]}
    leaves = fed.apply(queries, record_paths=True)
    print(leaves)
    # which party decided each step of row 0's path through every tree
    print(fed.active.inference_paths[0])
    print(fed.predict_proba(queries).round(4))
