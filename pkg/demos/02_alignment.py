# %% [markdown]
# # Finding shared customers without showing the others
#
# Party A blinds the hash of every id with a random factor before sending it
# to party B, who signs blindly with an RSA key. A strips the blinding and
# compares digests with the ones B published for its own ids. Both sides end
# up with the same sorted list of shared ids and nothing else.

# %%
from secureboost.alignment import align, transcript_audit

bank = ["alice", "bob", "carol", "dave"]
shop = ["carol", "erin", "alice", "frank"]
result = align(bank, shop, key_bits=512, rng=1, record=True)
print(result.shared_ids)
print("bank rows:", result.rows("A"), "shop rows:", result.rows("B"))

# %% [markdown]
# The audit scans every frame for the raw bytes of a non-shared id or for its
# unblinded hash. An honest run is clean.

# %%
print(transcript_audit(result.transcript, bank, shop))

# %% [markdown]
# Switching blinding off is the classic mistake: anyone holding the public
# modulus can hash a guessed id and spot it in the traffic.

# %%
careless = align(bank, shop, key_bits=512, rng=1, record=True, blind=False)
for v in transcript_audit(careless.transcript, bank, shop).violations:
    print(v)
