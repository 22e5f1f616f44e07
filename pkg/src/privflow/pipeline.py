"""Staged orchestration of the full workflow: build a feeder, synthesize
loads, solve the physics, collect meter data over the privacy handshake,
train the estimator, and maintain it (estimates, drift checks, updates,
reports).

Each stage reads its inputs from the output directory, writes its artifacts
there, and drops a small JSON manifest (config hash, seeds, duration,
outputs). Later stages compare the stored hash against the current config
and warn when an upstream artifact came from a different configuration.
Every stage is deterministic under the configured seeds, so rerunning a
stage reproduces its numeric artifacts bit for bit.
"""

import configparser
import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import __version__, collect, drift, feeder, pedersen, randomize
from . import estimator as est

__all__ = [
    "PipelineError", "RunConfig", "STAGES", "load_config", "preset_config",
    "write_config", "run_stage", "run_pipeline",
]

STAGES = ["gen-network", "gen-profiles", "solve-pf", "collect", "train",
          "estimate", "drift-check", "update", "report"]


class PipelineError(Exception):
    pass


@dataclass
class RunConfig:
    # network
    n_buses: int = 15
    network_seed: int = 42
    network_file: str = ""              # reuse this feeder file instead of generating
    # profiles
    steps: int = 2880
    resolution_minutes: int = 15
    season: str = "neutral"
    profile_seed: int = 42
    base_load: float = 0.03
    # randomize
    bounds_preset: str = "set_iv"
    randomize_seed: int = 7
    # collect
    realization: str = "toy-modp"
    dim: int = 16
    shares: int = 2
    collect_seed: int = 99
    parallel: bool = False
    transport: str = "pipe"
    rounds_per_candidate: int = 1
    noise_pct: float = 0.0              # measurement noise on metered voltages
    # train
    model_preset: str = "ann2"
    train_inputs: str = "transformed"   # transformed | original
    train_targets: str = "collected"    # collected | solver
    lr: float = 5.0e-6
    epochs: int = 1500
    batch: int = 25
    weight_decay: float = 1e-4
    split: float = 0.8
    train_seed: int = 7
    stop_train_mse: float = 0.0         # 0 disables early stopping
    # drift
    n_windows: int = 6
    per_node: bool = False
    new_voltages: str = ""              # path to a freshly collected pool
    # update
    frozen_layers: str = "4,5,6"
    update_lr: float = 5.0e-6
    update_decay: float = 1.0
    update_max_epochs: int = 1000
    update_seed: int = 7
    update_round: int = 0
    update_profiles: str = ""           # new-season load profile csv
    update_targets: str = ""            # new-season voltage csv

    def frozen_layer_tuple(self):
        parts = [p for p in self.frozen_layers.replace(" ", "").split(",") if p]
        return tuple(int(p) for p in parts)


# (section, key) -> (field, parser)
_SCHEMA = {
    ("network", "buses"): ("n_buses", int),
    ("network", "seed"): ("network_seed", int),
    ("network", "file"): ("network_file", str),
    ("profiles", "steps"): ("steps", int),
    ("profiles", "resolution_minutes"): ("resolution_minutes", int),
    ("profiles", "season"): ("season", str),
    ("profiles", "seed"): ("profile_seed", int),
    ("profiles", "base_load"): ("base_load", float),
    ("randomize", "bounds"): ("bounds_preset", str),
    ("randomize", "seed"): ("randomize_seed", int),
    ("collect", "realization"): ("realization", str),
    ("collect", "dim"): ("dim", int),
    ("collect", "shares"): ("shares", int),
    ("collect", "seed"): ("collect_seed", int),
    ("collect", "parallel"): ("parallel", lambda s: s.lower() in ("1", "true", "yes")),
    ("collect", "transport"): ("transport", str),
    ("collect", "rounds_per_candidate"): ("rounds_per_candidate", int),
    ("collect", "noise_pct"): ("noise_pct", float),
    ("train", "preset"): ("model_preset", str),
    ("train", "inputs"): ("train_inputs", str),
    ("train", "targets"): ("train_targets", str),
    ("train", "lr"): ("lr", float),
    ("train", "epochs"): ("epochs", int),
    ("train", "batch"): ("batch", int),
    ("train", "weight_decay"): ("weight_decay", float),
    ("train", "split"): ("split", float),
    ("train", "seed"): ("train_seed", int),
    ("train", "stop_train_mse"): ("stop_train_mse", float),
    ("drift", "windows"): ("n_windows", int),
    ("drift", "per_node"): ("per_node", lambda s: s.lower() in ("1", "true", "yes")),
    ("drift", "new_voltages"): ("new_voltages", str),
    ("update", "frozen_layers"): ("frozen_layers", str),
    ("update", "lr"): ("update_lr", float),
    ("update", "decay"): ("update_decay", float),
    ("update", "max_epochs"): ("update_max_epochs", int),
    ("update", "seed"): ("update_seed", int),
    ("update", "round"): ("update_round", int),
    ("update", "profiles"): ("update_profiles", str),
    ("update", "targets"): ("update_targets", str),
}

_FIELD_TO_KEY = {field: (sec, key) for (sec, key), (field, _) in _SCHEMA.items()}


def load_config(path):
    """Read a key-value config file (INI sections, see write_config)."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise PipelineError("config file not found: %s" % path)
    cfg = RunConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            if (section, key) not in _SCHEMA:
                raise PipelineError("unknown config key [%s] %s" % (section, key))
            field, parse = _SCHEMA[(section, key)]
            try:
                setattr(cfg, field, parse(raw))
            except ValueError:
                raise PipelineError("bad value for [%s] %s: %r" % (section, key, raw))
    return cfg


def write_config(cfg, path):
    parser = configparser.ConfigParser()
    for field, value in asdict(cfg).items():
        section, key = _FIELD_TO_KEY[field]
        if not parser.has_section(section):
            parser.add_section(section)
        if isinstance(value, bool):
            value = "true" if value else "false"
        parser.set(section, key, str(value))
    with open(path, "w") as f:
        parser.write(f)


def config_hash(cfg):
    lines = []
    for field, value in sorted(asdict(cfg).items()):
        section, key = _FIELD_TO_KEY[field]
        lines.append("%s.%s=%r" % (section, key, value))
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


_PRESETS = {
    # 15-minute cadence over one month on a small feeder
    "15min-30day": dict(n_buses=15, steps=2880, resolution_minutes=15),
    # hourly cadence over two months, wider feeder
    "60min-60day": dict(n_buses=31, steps=1440, resolution_minutes=60),
    # hourly cadence over a full year
    "60min-1year": dict(n_buses=25, steps=8760, resolution_minutes=60),
}


def preset_config(name):
    if name not in _PRESETS:
        raise PipelineError("unknown preset %r (have: %s)"
                            % (name, ", ".join(sorted(_PRESETS))))
    cfg = RunConfig()
    for field, value in _PRESETS[name].items():
        setattr(cfg, field, value)
    return cfg


# ---------------------------------------------------------------------------
# Artifact plumbing
# ---------------------------------------------------------------------------


def _path(out_dir, name):
    return os.path.join(out_dir, name)


def _require(out_dir, name, produced_by):
    p = _path(out_dir, name)
    if not os.path.exists(p):
        raise PipelineError("missing artifact %s; run stage %s first"
                            % (name, produced_by))
    return p


def _manifest_path(out_dir, stage):
    return _path(out_dir, stage + ".manifest.json")


def _write_manifest(out_dir, stage, cfg, seeds, outputs, t0, warnings):
    manifest = {
        "stage": stage,
        "version": __version__,
        "config_hash": config_hash(cfg),
        "seeds": seeds,
        "duration_s": round(time.perf_counter() - t0, 3),
        "outputs": outputs,
        "warnings": warnings,
    }
    with open(_manifest_path(out_dir, stage), "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def _check_upstream(out_dir, stage, cfg, upstream, warnings):
    """Warn when a dependency was built under a different config."""
    path = _manifest_path(out_dir, upstream)
    if not os.path.exists(path):
        return
    with open(path) as f:
        manifest = json.load(f)
    if manifest.get("config_hash") != config_hash(cfg):
        msg = ("%s artifacts were produced under config %s, current is %s"
               % (upstream, manifest.get("config_hash"), config_hash(cfg)))
        warnings.append(msg)
        print("warning: " + msg)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def _stage_gen_network(cfg, out_dir):
    if cfg.network_file:
        model = feeder.read_feeder_file(cfg.network_file)
    else:
        model = feeder.random_radial_feeder(cfg.n_buses, seed=cfg.network_seed)
    feeder.write_feeder_file(model, _path(out_dir, "network.txt"))
    return {"network": cfg.network_seed}, ["network.txt"]


def _stage_gen_profiles(cfg, out_dir, warnings):
    net = _require(out_dir, "network.txt", "gen-network")
    _check_upstream(out_dir, "gen-network", cfg, "gen-network", warnings)
    model = feeder.read_feeder_file(net)
    n_pq = len(model.pq_ids)
    prof = feeder.generate_profiles(n_pq, cfg.steps, cfg.resolution_minutes,
                                    seed=cfg.profile_seed, season=cfg.season,
                                    base_load=cfg.base_load)
    # generated bus ids are 2..n+1; remap onto the actual PQ ids
    prof = feeder.LoadProfile(list(model.pq_ids), prof.p, prof.q,
                              prof.resolution_minutes, start=prof.start)
    feeder.write_profile_csv(prof, _path(out_dir, "profiles.csv"))
    return {"profiles": cfg.profile_seed}, ["profiles.csv"]


def _stage_solve_pf(cfg, out_dir, warnings):
    net = _require(out_dir, "network.txt", "gen-network")
    profs = _require(out_dir, "profiles.csv", "gen-profiles")
    for up in ("gen-network", "gen-profiles"):
        _check_upstream(out_dir, up, cfg, up, warnings)
    model = feeder.read_feeder_file(net)
    prof = feeder.read_profile_csv(profs)
    Y = feeder.build_admittance(model)
    state = feeder.solve_power_flow(Y, prof)
    feeder.write_voltage_csv(state, _path(out_dir, "voltages.csv"))
    return {}, ["voltages.csv"]


def _stage_collect(cfg, out_dir, warnings):
    profs = _require(out_dir, "profiles.csv", "gen-profiles")
    volts = _require(out_dir, "voltages.csv", "solve-pf")
    for up in ("gen-profiles", "solve-pf"):
        _check_upstream(out_dir, up, cfg, up, warnings)
    prof = feeder.read_profile_csv(profs)
    state = feeder.read_voltage_csv(volts)

    if cfg.bounds_preset not in randomize.BOUNDS_PRESETS:
        raise PipelineError("unknown bounds preset %r" % cfg.bounds_preset)
    bounds = randomize.BOUNDS_PRESETS[cfg.bounds_preset]
    meter_params = {b: randomize.sample_params(bounds, seed=cfg.randomize_seed + b)
                    for b in prof.bus_ids}
    transformed = randomize.transform_profile(prof, meter_params)
    feeder.write_profile_csv(transformed, _path(out_dir, "transformed.csv"))

    if cfg.noise_pct > 0:
        state = feeder.inject_measurement_noise(state, cfg.noise_pct,
                                                seed=cfg.collect_seed)
    group = pedersen.setup(cfg.realization, seed=cfg.collect_seed)
    meters = []
    for b in prof.bus_ids:
        row = state.v[state.bus_ids.index(b)]
        meters.append(collect.MeterAgent(b, row, cfg.dim, cfg.shares, group,
                                         seed=cfg.collect_seed + b))
    dso = collect.OperatorAgent(group, seed=cfg.collect_seed)
    matrix, records = collect.collect_dataset(
        meters, dso, parallel=cfg.parallel, transport=cfg.transport,
        rounds_per_candidate=cfg.rounds_per_candidate)
    collected = feeder.BusState(list(prof.bus_ids), matrix,
                                np.zeros_like(matrix),
                                prof.resolution_minutes, start=prof.start)
    feeder.write_voltage_csv(collected, _path(out_dir, "collected.csv"))
    _write_csv(_path(out_dir, "sessions.csv"),
               ["sm_id", "dim", "shares", "rounds", "duration_s", "outcome"],
               [(r.sm_id, r.dim, r.shares, r.rounds, "%.6f" % r.duration,
                 r.outcome) for r in records])
    return ({"randomize": cfg.randomize_seed, "collect": cfg.collect_seed},
            ["transformed.csv", "collected.csv", "sessions.csv"])


def _load_training_data(cfg, out_dir, warnings):
    if cfg.train_inputs == "transformed":
        feats = _require(out_dir, "transformed.csv", "collect")
    elif cfg.train_inputs == "original":
        feats = _require(out_dir, "profiles.csv", "gen-profiles")
    else:
        raise PipelineError("train inputs must be transformed or original")
    if cfg.train_targets == "collected":
        targ = _require(out_dir, "collected.csv", "collect")
    elif cfg.train_targets == "solver":
        targ = _require(out_dir, "voltages.csv", "solve-pf")
    else:
        raise PipelineError("train targets must be collected or solver")
    _check_upstream(out_dir, "collect", cfg, "collect", warnings)
    prof = feeder.read_profile_csv(feats)
    state = feeder.read_voltage_csv(targ)
    X = est.features_from_profile(prof)
    Y = est.targets_from_state(state, prof.bus_ids)
    return X, Y, prof.bus_ids


def _stage_train(cfg, out_dir, warnings):
    X, Y, bus_ids = _load_training_data(cfg, out_dir, warnings)
    model, wants_scaler = est.build_preset(cfg.model_preset, len(bus_ids),
                                           seed=cfg.train_seed)
    tc = est.TrainConfig(
        lr=cfg.lr, epochs=cfg.epochs, batch=cfg.batch,
        weight_decay=cfg.weight_decay, seed=cfg.train_seed, split=cfg.split,
        stop_train_mse=cfg.stop_train_mse if cfg.stop_train_mse > 0 else None)
    scaler = None
    feats = X
    if wants_scaler:
        perm = np.random.default_rng([tc.seed, 0xA11]).permutation(X.shape[0])
        n_train = int(round(tc.split * X.shape[0]))
        scaler = est.fit_scaler(X[perm[:n_train]])
        feats = est.scale(scaler, X)
    model, history = est.train(model, feats, Y, tc)
    est.save_model(model, _path(out_dir, "model.bin"), scaler=scaler)
    _write_csv(_path(out_dir, "losses.csv"), ["epoch", "train_mse", "test_mse"],
               [(i + 1, "%.10e" % tr, "%.10e" % te) for i, (tr, te) in
                enumerate(zip(history["train"], history["test"]))])
    return {"train": cfg.train_seed}, ["model.bin", "losses.csv"]


def _stage_estimate(cfg, out_dir, warnings):
    model_path = _require(out_dir, "model.bin", "train")
    _check_upstream(out_dir, "train", cfg, "train", warnings)
    src = "transformed.csv" if cfg.train_inputs == "transformed" else "profiles.csv"
    feats_path = _require(out_dir, src, "collect")
    model, scaler = est.load_model(model_path)
    prof = feeder.read_profile_csv(feats_path)
    X = est.features_from_profile(prof)
    if scaler is not None:
        X = est.scale(scaler, X)
    V = np.asarray(est.forward(model, X), dtype=np.float64)
    state = feeder.BusState(list(prof.bus_ids), V.T, np.zeros_like(V.T),
                            prof.resolution_minutes, start=prof.start)
    feeder.write_voltage_csv(state, _path(out_dir, "estimates.csv"))
    outputs = ["estimates.csv"]
    truth_path = _path(out_dir, "voltages.csv")
    if os.path.exists(truth_path):
        truth = feeder.read_voltage_csv(truth_path)
        Yt = est.targets_from_state(truth, prof.bus_ids)
        err = V - Yt
        rows = [(b, "%.6e" % err[:, j].mean(), "%.6e" % err[:, j].std(),
                 "%.6e" % np.abs(err[:, j]).max())
                for j, b in enumerate(prof.bus_ids)]
        rows.append(("all", "%.6e" % err.mean(), "%.6e" % err.std(),
                     "%.6e" % np.abs(err).max()))
        _write_csv(_path(out_dir, "error_report.csv"),
                   ["bus_id", "mean_err", "std_err", "max_abs_err"], rows)
        outputs.append("error_report.csv")
    return {}, outputs


def _magnitude_pool(out_dir):
    """Training-era magnitudes: collected if available, else solver output
    without the slack bus."""
    collected = _path(out_dir, "collected.csv")
    if os.path.exists(collected):
        state = feeder.read_voltage_csv(collected)
        return state.v.T
    volts = _require(out_dir, "voltages.csv", "solve-pf")
    state = feeder.read_voltage_csv(volts)
    net = _require(out_dir, "network.txt", "gen-network")
    model = feeder.read_feeder_file(net)
    keep = [i for i, b in enumerate(state.bus_ids) if b != model.slack_id]
    return state.v[keep].T


def _stage_drift_check(cfg, out_dir, warnings):
    pool = _magnitude_pool(out_dir)
    if cfg.new_voltages:
        new_state = feeder.read_voltage_csv(cfg.new_voltages)
        keep = list(range(len(new_state.bus_ids)))
        net = _path(out_dir, "network.txt")
        if os.path.exists(net):
            # a solver export includes the slack bus; keep pools comparable
            slack = feeder.read_feeder_file(net).slack_id
            keep = [i for i, b in enumerate(new_state.bus_ids) if b != slack]
        new = new_state.v[keep].T
        train_pool = pool
    else:
        # no fresh pool named: compare the last fifth against the rest,
        # a same-season smoke check that should not trigger
        cut = int(0.8 * pool.shape[0])
        train_pool, new = pool[:cut], pool[cut:]
    ind = drift.drift_indicator(train_pool, new, cfg.n_windows,
                                per_node=cfg.per_node)
    _write_csv(_path(out_dir, "drift.csv"),
               ["window", "distance", "tt", "tt_star", "triggered"],
               [(i, "%.10e" % w, "%.10e" % ind.total, "%.10e" % ind.threshold,
                 flag) for i, w, _, _, flag in ind.rows()])
    print("drift-check: tt=%.6e tt*=%.6e -> %s"
          % (ind.total, ind.threshold,
             "triggered" if ind.triggered else "not triggered"))
    return {}, ["drift.csv"]


def _stage_update(cfg, out_dir, warnings):
    model_path = _require(out_dir, "model.bin", "train")
    _check_upstream(out_dir, "train", cfg, "train", warnings)
    if not cfg.update_profiles or not cfg.update_targets:
        raise PipelineError("update needs newly collected data; set "
                            "[update] profiles and [update] targets")
    model, scaler = est.load_model(model_path)
    prof = feeder.read_profile_csv(cfg.update_profiles)
    state = feeder.read_voltage_csv(cfg.update_targets)
    X = est.features_from_profile(prof)
    Y = est.targets_from_state(state, prof.bus_ids)
    il = drift.ILConfig(frozen_layers=cfg.frozen_layer_tuple(),
                        lr=cfg.update_lr, decay=cfg.update_decay,
                        max_epochs=cfg.update_max_epochs, batch=cfg.batch,
                        weight_decay=cfg.weight_decay, seed=cfg.update_seed)
    updated, history = drift.incremental_update(
        model, scaler, (X, Y), None, il, round_index=cfg.update_round)
    est.save_model(updated, _path(out_dir, "model_updated.bin"), scaler=scaler)
    log_path = _path(out_dir, "update_log.csv")
    new_file = not os.path.exists(log_path)
    with open(log_path, "a", newline="") as f:
        w = csv.writer(f)
        if new_file:
            w.writerow(["round", "lr", "epochs_run", "final_train_mse",
                        "frozen_layers"])
        w.writerow([history["round"], "%.3e" % history["lr"],
                    history["epochs_run"], "%.10e" % history["train"][-1],
                    " ".join(str(i) for i in history["frozen_layers"])])
    return {"update": cfg.update_seed}, ["model_updated.bin", "update_log.csv"]


def _stage_report(cfg, out_dir, warnings):
    rep = _path(out_dir, "report")
    os.makedirs(rep, exist_ok=True)
    outputs = []

    losses = _path(out_dir, "losses.csv")
    if os.path.exists(losses):
        with open(losses) as f:
            rows = list(csv.reader(f))[1:]
        _write_csv(os.path.join(rep, "loss_train.csv"), ["epoch", "mse"],
                   [(r[0], r[1]) for r in rows])
        _write_csv(os.path.join(rep, "loss_test.csv"), ["epoch", "mse"],
                   [(r[0], r[2]) for r in rows])
        outputs += ["report/loss_train.csv", "report/loss_test.csv"]

    est_path = _path(out_dir, "estimates.csv")
    truth_path = _path(out_dir, "voltages.csv")
    if os.path.exists(est_path) and os.path.exists(truth_path):
        guess = feeder.read_voltage_csv(est_path)
        truth = feeder.read_voltage_csv(truth_path)
        Yg = guess.v.T
        Yt = est.targets_from_state(truth, guess.bus_ids)
        err = (Yg - Yt).ravel()
        counts, edges = np.histogram(err, bins=60)
        centers = 0.5 * (edges[:-1] + edges[1:])
        _write_csv(os.path.join(rep, "error_hist.csv"), ["error", "count"],
                   [("%.6e" % c, int(n)) for c, n in zip(centers, counts)])
        _write_csv(os.path.join(rep, "error_by_bus.csv"), ["bus_id", "mean_abs_err"],
                   [(b, "%.6e" % np.abs(Yg[:, j] - Yt[:, j]).mean())
                    for j, b in enumerate(guess.bus_ids)])
        outputs += ["report/error_hist.csv", "report/error_by_bus.csv"]

    drift_path = _path(out_dir, "drift.csv")
    if os.path.exists(drift_path):
        with open(drift_path) as f:
            rows = list(csv.reader(f))[1:]
        _write_csv(os.path.join(rep, "drift_windows.csv"), ["window", "distance"],
                   [(r[0], r[1]) for r in rows])
        outputs.append("report/drift_windows.csv")

    sessions = _path(out_dir, "sessions.csv")
    if os.path.exists(sessions):
        with open(sessions) as f:
            rows = list(csv.reader(f))[1:]
        _write_csv(os.path.join(rep, "session_rounds.csv"), ["sm_id", "rounds"],
                   [(r[0], r[3]) for r in rows])
        outputs.append("report/session_rounds.csv")

    if not outputs:
        raise PipelineError("nothing to report; run earlier stages first")
    return {}, outputs


def run_stage(cfg, stage, out_dir):
    """Run one stage; returns its manifest."""
    if stage not in STAGES:
        raise PipelineError("unknown stage %r (have: %s)"
                            % (stage, ", ".join(STAGES)))
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    warnings = []
    if stage == "gen-network":
        seeds, outputs = _stage_gen_network(cfg, out_dir)
    elif stage == "gen-profiles":
        seeds, outputs = _stage_gen_profiles(cfg, out_dir, warnings)
    elif stage == "solve-pf":
        seeds, outputs = _stage_solve_pf(cfg, out_dir, warnings)
    elif stage == "collect":
        seeds, outputs = _stage_collect(cfg, out_dir, warnings)
    elif stage == "train":
        seeds, outputs = _stage_train(cfg, out_dir, warnings)
    elif stage == "estimate":
        seeds, outputs = _stage_estimate(cfg, out_dir, warnings)
    elif stage == "drift-check":
        seeds, outputs = _stage_drift_check(cfg, out_dir, warnings)
    elif stage == "update":
        seeds, outputs = _stage_update(cfg, out_dir, warnings)
    else:
        seeds, outputs = _stage_report(cfg, out_dir, warnings)
    manifest = _write_manifest(out_dir, stage, cfg, seeds, outputs, t0, warnings)
    print("%s done in %.2fs -> %s" % (stage, manifest["duration_s"],
                                      ", ".join(outputs)))
    return manifest


def run_pipeline(cfg, out_dir, stages=None):
    """Run a sequence of stages in order; default covers the offline phase
    through reporting (update is opt-in since it needs new data)."""
    if stages is None:
        stages = ["gen-network", "gen-profiles", "solve-pf", "collect",
                  "train", "estimate", "drift-check", "report"]
    return [run_stage(cfg, s, out_dir) for s in stages]
