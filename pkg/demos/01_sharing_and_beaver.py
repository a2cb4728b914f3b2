"""Secret sharing, fixed point and one Beaver multiplication.

Two servers each hold a random-looking share of x and y. They multiply
without seeing either value, using a dealer triple and one exchange.
"""
import numpy as np

from mpcpipe import SessionConfig, decode_fixed, encode_fixed, reconstruct, run_parties
from mpcpipe.protocols import mul_fixed
from mpcpipe.sharing import AdditiveShare, share_additive

rng = np.random.default_rng(0)
x = np.array([1.5, -2.25, 3.0])
y = np.array([0.5, 4.0, -1.0])

# encode at 16 fraction bits, then split into two additive shares
xs = share_additive(encode_fixed(x), 2, rng)
ys = share_additive(encode_fixed(y), 2, rng)
print("party 0 share of x:", xs[0].tensor)
print("party 1 share of x:", xs[1].tensor)
print("reconstructed x:   ", decode_fixed(reconstruct(xs)))


def program(party):
    # each party only touches its own shares
    return mul_fixed(party, xs[party.rank].tensor, ys[party.rank].tensor)


cfg = SessionConfig(n_parties=2, latency=1e-3)
outs = run_parties(cfg, program, [(), ()])
z = reconstruct([AdditiveShare(i, o) for i, o in enumerate(outs)])
print("x * y (secure):    ", decode_fixed(z))
print("x * y (plain):     ", x * y)
