# %% [markdown]
# # Adding numbers you cannot read
#
# Paillier encryption lets anyone holding the public key add encrypted
# values. Only the private key holder can see the result. Gradients are real
# numbers, so they go through a fixed-point codec first: multiply by 2^40,
# round, and wrap negatives into the top half of the plaintext space.

# %%
import math

import numpy as np

from secureboost._random import RandomSource
from secureboost.paillier import FixedPointCodec, keygen

pk, sk = keygen(512, RandomSource("demo"))
print("modulus bits:", pk.n.bit_length())

# %% [markdown]
# Two encryptions of the same number look nothing alike, yet their sum
# decrypts to the sum of the plaintexts.

# %%
a, b = pk.encrypt(2), pk.encrypt(3)
print(pk.encrypt(2).value == a.value)
print(sk.decrypt(a + b))

# %% [markdown]
# Negative reals survive the trip because the codec treats the upper half of
# Z_n as negative.

# %%
codec = FixedPointCodec(pk.n)
print(codec.encode(-0.5) == pk.n - 2 ** 39)
grads = np.random.default_rng(0).uniform(-1, 1, 200)
encrypted_sum = sum(pk.encrypt(codec.encode(g)) for g in grads)
print(codec.decode(sk.decrypt(encrypted_sum)), math.fsum(grads))
