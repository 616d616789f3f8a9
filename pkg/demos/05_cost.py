# %% [markdown]
# # What crosses the wire
#
# Per tree the active party ships 2n ciphertexts (g and h for every row) to
# each passive party. Per node the passive party answers with two ciphertexts
# per bucket and feature, which is bounded by the bucket count rather than by
# the number of rows.

# %%
from secureboost import data
from secureboost.boosting import BoostingParams
from secureboost.federation import train_federated, vertical_partition

ds = data.synth("credit2", 1000, 10, seed=0)
parties = vertical_partition(ds.X, ds.y, [list(range(5)), list(range(5, 10))])
model, lookups, cost = train_federated(parties, BoostingParams(n_trees=3, n_bins=16),
                                       key_bits=256, crypto_seed=0)

# %%
party = cost["parties"][2]
print("gradient ciphertexts:", party["gradient_ciphertexts"], "= 2 x 1000 rows x 3 trees")
for phase, stats in party["phases"].items():
    print(phase, stats)

# %%
for node in cost["nodes"][:5]:
    print(node["tree"], node["node"], node["n_instances"], "rows ->", node["ciphertexts"],
          "ciphertexts; naive", node["naive_bound"])
