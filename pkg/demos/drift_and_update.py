#!/usr/bin/env python3
"""Detect seasonal drift in collected voltages and refresh the estimator
without retraining it from scratch.

The drift indicator sums Wasserstein distances between chronological
windows of the training era and a newly collected pool. Same-season data
stays under the self-calibrated threshold; a season change crosses it,
and the incremental update then trains only the early layers on the new
pool, leaving the later layers bit-frozen.
"""

import numpy as np

from privflow import drift, feeder, randomize
from privflow import estimator as est


def season_pool(model, Y, T, seed, season):
    prof = feeder.generate_profiles(len(model.pq_ids), T, 15, seed=seed,
                                    season=season)
    loads = feeder.LoadProfile(list(model.pq_ids), prof.p, prof.q, 15)
    state = feeder.solve_power_flow(Y, loads)
    return loads, est.targets_from_state(state, model.pq_ids)


def main():
    model = feeder.random_radial_feeder(10, seed=5)
    Y = feeder.build_admittance(model)
    summer_loads, summer_v = season_pool(model, Y, 2880, 12, "summer")
    fresh_loads, fresh_v = season_pool(model, Y, 480, 13, "summer")
    winter_loads, winter_v = season_pool(model, Y, 480, 14, "winter")

    for tag, pool in (("same season", fresh_v), ("winter", winter_v)):
        ind = drift.drift_indicator(summer_v, pool, n_windows=6)
        print("%-12s total distance %.4f vs threshold %.4f -> %s"
              % (tag, ind.total, ind.threshold,
                 "update needed" if ind.triggered else "keep model"))

    # train on summer, then refresh with the winter pool
    meters = {b: randomize.sample_params(seed=60 + b) for b in model.pq_ids}
    Xs = est.features_from_profile(randomize.transform_profile(summer_loads, meters))
    Xw = est.features_from_profile(randomize.transform_profile(winter_loads, meters))
    cfg = est.TrainConfig(lr=1e-4, epochs=80, batch=25, seed=3, split=0.8)
    net, _ = est.build_preset("ann0", len(model.pq_ids), seed=3)
    perm = np.random.default_rng([cfg.seed, 0xA11]).permutation(Xs.shape[0])
    scaler = est.fit_scaler(Xs[perm[:int(0.8 * len(perm))]])
    net, _ = est.train(net, est.scale(scaler, Xs), summer_v, cfg)

    def mae(m, X, v):
        return np.abs(np.asarray(est.forward(m, est.scale(scaler, X)),
                                 np.float64) - v).mean()

    il = drift.ILConfig(frozen_layers=(3, 4, 5), lr=2e-5, max_epochs=150,
                        batch=25, seed=3)
    before = mae(net, Xw, winter_v)
    updated, hist = drift.incremental_update(net, scaler, (Xw, winter_v),
                                             None, il)
    print("winter error %.2e -> %.2e after %d update epochs at lr %.0e"
          % (before, mae(updated, Xw, winter_v), hist["epochs_run"], hist["lr"]))
    frozen_ok = all(np.array_equal(net.weights[i - 1], updated.weights[i - 1])
                    for i in il.frozen_layers)
    print("frozen layers %s bit-identical: %s" % (il.frozen_layers, frozen_ok))
    print("summer error before/after: %.2e / %.2e"
          % (mae(net, Xs, summer_v), mae(updated, Xs, summer_v)))


if __name__ == "__main__":
    main()
