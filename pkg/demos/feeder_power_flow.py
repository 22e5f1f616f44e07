#!/usr/bin/env python3
"""Build a random radial feeder, run a day of loads through the Newton
solver, and check the solution against the power balance equations.

Everything here is synthetic; the feeder layout and the load series come
from seeded generators, so the numbers printed below reproduce exactly.
"""

import numpy as np

from privflow import feeder


def main():
    model = feeder.random_radial_feeder(15, seed=42)
    print("feeder: %d buses, slack id %d" % (len(model.buses), model.slack_id))
    for ln in model.lines[:4]:
        print("  line %2d -> %2d  r=%.4f x=%.4f" % (ln.from_bus, ln.to_bus, ln.r, ln.x))
    print("  ... %d lines total" % len(model.lines))

    Y = feeder.build_admittance(model)
    prof = feeder.generate_profiles(len(model.pq_ids), T=96, resolution=15,
                                    seed=3, season="winter")
    loads = feeder.LoadProfile(list(model.pq_ids), prof.p, prof.q, 15,
                               start=prof.start)
    state = feeder.solve_power_flow(Y, loads)

    # recompute injections from the solved voltages and compare to schedule
    worst = 0.0
    for t in (0, 31, 63, 95):
        P, Q = feeder.power_injections(Y, state.v[:, t], state.theta[:, t])
        for k, b in enumerate(loads.bus_ids):
            i = Y.index_of(b)
            worst = max(worst, abs(P[i] + loads.p[k, t]), abs(Q[i] + loads.q[k, t]))
    print("max |power mismatch| over spot checks: %.2e p.u." % worst)
    print("voltage range across the day: %.4f .. %.4f p.u."
          % (state.v.min(), state.v.max()))
    print("deepest bus at evening peak: bus %d"
          % state.bus_ids[int(np.argmin(state.v[:, 72]))])


if __name__ == "__main__":
    main()
