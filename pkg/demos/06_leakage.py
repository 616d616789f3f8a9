# %% [markdown]
# # How much does a passive party learn?
#
# When a passive party owns the parent of two leaves it sees which rows share
# a leaf. Its best guess is that they share a label, and it is right as often
# as the leaf is pure. The completely secure variant builds the first tree at
# the active party alone, so later trees only ever fit residuals.

# %%
from secureboost import data
from secureboost.boosting import BoostingParams, train_centralized
from secureboost.security import critical_purity, leaf_purity, purity_trend, residual_mask_check

ds = data.synth("credit2", 3000, 10, seed=0)
params = BoostingParams(n_trees=5)
model = train_centralized(ds.X, ds.y, params, first_tree_columns=range(5))
leaves = model.apply(ds.X)
print("mean purity per tree:", [round(p, 4) for p in purity_trend(model, leaves, ds.y)])

# %% [markdown]
# The first tree's leaf weights give the label mix away even without the
# rows: with a base score of 0.5 a weight w means a positive fraction of
# about 0.5 + w / 4.

# %%
report = leaf_purity(model, 0, leaves, ds.y)
for s in report.leaves[:4]:
    print(s.n, round(s.positive_fraction, 3), round(s.theta_from_weight, 3))
print(report.weight_check)

# %%
print("critical purity at a = 0.5:", critical_purity(0.5))
print(residual_mask_check(model, leaves, ds.y))
