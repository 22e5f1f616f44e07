#!/usr/bin/env python3
"""Train the voltage estimator on randomized inputs and compare against
training on the original powers.

The operator never sees real powers, only each meter's sigmoid-transformed
series. Because the transform is monotone per meter, a scaler plus the
network can still learn the voltage map; the two loss curves land in the
same place.
"""

import numpy as np

from privflow import feeder, randomize
from privflow import estimator as est


def main():
    model = feeder.random_radial_feeder(10, seed=5)
    Y = feeder.build_admittance(model)
    prof = feeder.generate_profiles(len(model.pq_ids), T=960, resolution=15,
                                    seed=5)
    loads = feeder.LoadProfile(list(model.pq_ids), prof.p, prof.q, 15)
    state = feeder.solve_power_flow(Y, loads)
    targets = est.targets_from_state(state, model.pq_ids)

    meters = {b: randomize.sample_params(seed=40 + b) for b in model.pq_ids}
    X_orig = est.features_from_profile(loads)
    X_hidden = est.features_from_profile(randomize.transform_profile(loads, meters))

    cfg = est.TrainConfig(lr=1e-4, epochs=60, batch=25, seed=2, split=0.8)
    for tag, X in (("original", X_orig), ("randomized", X_hidden)):
        net, wants_scaler = est.build_preset("ann0", len(model.pq_ids), seed=2)
        perm = np.random.default_rng([cfg.seed, 0xA11]).permutation(X.shape[0])
        scaler = est.fit_scaler(X[perm[:int(0.8 * len(perm))]])
        net, hist = est.train(net, est.scale(scaler, X), targets, cfg)
        print("%-10s inputs: epoch 1 test mse %.2e -> epoch %d test mse %.2e"
              % (tag, hist["test"][0], hist["epochs_run"], hist["test"][-1]))
        stats = est.evaluate(net, scaler, X, targets)
        print("           mean err %+0.2e  std %.2e  max|err| %.2e"
              % (stats.mean, stats.std, stats.max_abs))

    path = "/tmp/estimator_demo_model.bin"
    est.save_model(net, path, scaler=scaler)
    net2, scaler2 = est.load_model(path)
    same = all(np.array_equal(a, b) for a, b in zip(net.weights, net2.weights))
    print("checkpoint round trip bit-identical: %s" % same)


if __name__ == "__main__":
    main()
