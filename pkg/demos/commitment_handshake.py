#!/usr/bin/env python3
"""Walk through the commitment scheme and the index handshake.

The operator only learns which decoy slots hold real data after proving,
one commit/challenge/response round at a time, that it already knows the
slot indices. A wrong guess fails the check no matter how the challenge
bit lands, and the meter answers in constant shape either way.
"""

import numpy as np

from privflow import collect, pedersen


def main():
    params = pedersen.setup("toy-modp", seed=1)
    print("toy group: g=%d h=%d modulus=%d order=%d"
          % (params.g, params.h, params.modulus, params.p))

    # commitments are binding on the committed slot and blind to everyone else
    c = pedersen.commit(7, 13, params)
    print("commit(7, r=13) -> %d (the 7 is not recoverable from this)" % c.value)

    a = pedersen.commit(3, 5, params)
    b = pedersen.commit(4, 8, params)
    both = pedersen.homomorphic_add(a, b, params)
    direct = pedersen.commit(7, 13, params)
    print("commit(3)*commit(4) == commit(3+4): %s" % (both.value == direct.value))

    # one sigma round by hand, honest and dishonest
    r, true_slot = 9, 5
    cm = pedersen.commit(true_slot, r, params)
    for b_chal in (0, 1):
        s = pedersen.respond(r, true_slot, b_chal, params)
        ok = pedersen.verify(cm, s, b_chal, true_slot, params)
        bad = pedersen.verify(cm, s, b_chal, true_slot + 3, params)
        print("challenge %d: honest slot verifies %s, wrong slot verifies %s"
              % (b_chal, ok, bad))

    # a whole session: the meter embeds a short series, the operator proves
    rng = np.random.default_rng(0)
    series = rng.uniform(0.97, 1.01, size=8)
    sm = collect.MeterAgent(1, series, dim=8, k=2, params=params, seed=4)
    dso = collect.OperatorAgent(params, seed=11)
    record = collect.run_handshake(sm, dso)
    print("session: %s after %d rounds, recovered series matches: %s"
          % (record.outcome, record.rounds,
             bool(np.allclose(record.row, series))))


if __name__ == "__main__":
    main()
