"""Distribution feeder models, admittance construction, Newton-Raphson power
flow, synthetic load profiles, and measurement noise.

Conventions: one slack bus fixed at 1.0 p.u. / 0 rad, all other buses are PQ.
Load profiles store consumption as positive numbers; the solver injects their
negation. Reactive power follows from the active series through a constant
power factor (0.95 by default) when profiles are generated here.
"""

import csv
import datetime
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Bus", "Line", "FeederModel", "AdmittanceMatrix", "LoadProfile",
    "BusState", "PowerFlowError", "build_admittance", "solve_power_flow",
    "power_injections", "generate_profiles", "inject_measurement_noise",
    "random_radial_feeder", "read_feeder_file", "write_feeder_file",
    "read_profile_csv", "write_profile_csv", "read_voltage_csv",
    "write_voltage_csv", "POWER_FACTOR",
]

POWER_FACTOR = 0.95
# tan(arccos(0.95)), the Q/P ratio implied by the default power factor
_TAN_PHI = math.tan(math.acos(POWER_FACTOR))


class PowerFlowError(Exception):
    def __init__(self, message, trace=None, step=None):
        super().__init__(message)
        self.trace = trace or []
        self.step = step


@dataclass(frozen=True)
class Bus:
    id: int
    type: str  # "slack" or "pq"


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float  # series resistance, p.u.
    x: float  # series reactance, p.u.


@dataclass
class FeederModel:
    """Buses plus series lines; validated on construction."""

    buses: list
    lines: list
    base_voltage: float = 1.0

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate bus ids")
        slacks = [b for b in self.buses if b.type == "slack"]
        if len(slacks) != 1:
            raise ValueError("need exactly one slack bus, got %d" % len(slacks))
        for b in self.buses:
            if b.type not in ("slack", "pq"):
                raise ValueError("unknown bus type %r" % b.type)
        known = set(ids)
        seen_pairs = set()
        for ln in self.lines:
            if ln.from_bus not in known or ln.to_bus not in known:
                raise ValueError("line references unknown bus (%s,%s)"
                                 % (ln.from_bus, ln.to_bus))
            if ln.r < 0 or ln.x <= 0:
                raise ValueError("line (%s,%s) needs r >= 0 and x > 0"
                                 % (ln.from_bus, ln.to_bus))
            if ln.r == 0 and ln.x == 0:
                raise ValueError("zero-impedance line (%s,%s)" % (ln.from_bus, ln.to_bus))
            pair = frozenset((ln.from_bus, ln.to_bus))
            if len(pair) == 1:
                raise ValueError("line from bus %s to itself" % ln.from_bus)
            if pair in seen_pairs:
                raise ValueError("duplicate line between %s and %s"
                                 % (ln.from_bus, ln.to_bus))
            seen_pairs.add(pair)
        if not self._connected():
            raise ValueError("line graph is not connected")

    def _connected(self):
        if not self.buses:
            return False
        adj = {b.id: [] for b in self.buses}
        for ln in self.lines:
            adj[ln.from_bus].append(ln.to_bus)
            adj[ln.to_bus].append(ln.from_bus)
        seen = {self.buses[0].id}
        stack = [self.buses[0].id]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == len(self.buses)

    @property
    def slack_id(self):
        return next(b.id for b in self.buses if b.type == "slack")

    @property
    def pq_ids(self):
        return [b.id for b in self.buses if b.type == "pq"]


@dataclass
class AdmittanceMatrix:
    """Nodal admittance with the bus bookkeeping the solver needs."""

    matrix: np.ndarray          # N x N complex
    bus_ids: list               # row/column order
    bus_types: list             # parallel to bus_ids

    @property
    def conductance(self):
        return self.matrix.real

    @property
    def susceptance(self):
        return self.matrix.imag

    def index_of(self, bus_id):
        return self.bus_ids.index(bus_id)


@dataclass
class LoadProfile:
    bus_ids: list
    p: np.ndarray               # N x T, p.u., consumption positive
    q: np.ndarray               # N x T
    resolution_minutes: int
    start: datetime.datetime = field(
        default_factory=lambda: datetime.datetime(2024, 1, 1))
    transformed: bool = False

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.p.shape != self.q.shape:
            raise ValueError("p and q shapes differ")
        if self.p.shape[0] != len(self.bus_ids):
            raise ValueError("row count does not match bus ids")

    @property
    def samples(self):
        return self.p.shape[1]

    def timestamps(self):
        step = datetime.timedelta(minutes=self.resolution_minutes)
        return [self.start + k * step for k in range(self.samples)]


@dataclass
class BusState:
    bus_ids: list
    v: np.ndarray               # N x T magnitudes, p.u.
    theta: np.ndarray           # N x T angles, rad
    resolution_minutes: int = 15
    start: datetime.datetime = field(
        default_factory=lambda: datetime.datetime(2024, 1, 1))

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.v.shape != self.theta.shape:
            raise ValueError("v and theta shapes differ")

    def timestamps(self):
        step = datetime.timedelta(minutes=self.resolution_minutes)
        return [self.start + k * step for k in range(self.v.shape[1])]


# ---------------------------------------------------------------------------
# Admittance and power flow
# ---------------------------------------------------------------------------


def build_admittance(model):
    """Per-line series admittance stamps: Y[n,m] = -1/(r+jx) for a line n-m,
    diagonals accumulate the incident admittances. No shunt elements."""
    n = len(model.buses)
    idx = {b.id: i for i, b in enumerate(model.buses)}
    Y = np.zeros((n, n), dtype=complex)
    for ln in model.lines:
        y = 1.0 / complex(ln.r, ln.x)
        i, j = idx[ln.from_bus], idx[ln.to_bus]
        Y[i, j] -= y
        Y[j, i] -= y
        Y[i, i] += y
        Y[j, j] += y
    return AdmittanceMatrix(Y, [b.id for b in model.buses],
                            [b.type for b in model.buses])


def power_injections(Y, v, theta):
    """P and Q injected at every bus for magnitudes v and angles theta."""
    Vc = v * np.exp(1j * theta)
    S = Vc * np.conj(Y.matrix @ Vc)
    return S.real, S.imag


def _scheduled_injections(Y, loads):
    """Map a LoadProfile onto the admittance bus order as injections."""
    n = len(Y.bus_ids)
    P = np.zeros((n, loads.samples))
    Q = np.zeros((n, loads.samples))
    row = {bid: k for k, bid in enumerate(loads.bus_ids)}
    for i, bid in enumerate(Y.bus_ids):
        if bid in row:
            P[i] = -loads.p[row[bid]]
            Q[i] = -loads.q[row[bid]]
    return P, Q


def solve_power_flow(Y, loads, tol=1e-8, max_iter=50):
    """Newton-Raphson in polar form from a flat start, one solve per time step.

    Returns a BusState spanning every bus in Y. Raises PowerFlowError with an
    iteration trace when a step fails to converge and with a condition
    estimate when the Jacobian goes singular.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    ids = Y.bus_ids
    n = len(ids)
    pq = np.array([t == "pq" for t in Y.bus_types])
    if (~pq).sum() != 1:
        raise ValueError("need exactly one slack bus")
    npq = int(pq.sum())
    P_sched, Q_sched = _scheduled_injections(Y, loads)
    T = loads.samples
    v_out = np.ones((n, T))
    th_out = np.zeros((n, T))
    M = Y.matrix
    for t in range(T):
        v = np.ones(n)
        th = np.zeros(n)
        trace = []
        converged = False
        for _ in range(max_iter):
            Vc = v * np.exp(1j * th)
            Ibus = M @ Vc
            S = Vc * np.conj(Ibus)
            dP = P_sched[:, t] - S.real
            dQ = Q_sched[:, t] - S.imag
            mismatch = max(np.max(np.abs(dP[pq])), np.max(np.abs(dQ[pq])))
            trace.append(mismatch)
            if mismatch < tol:
                converged = True
                break
            # complex-form partial derivatives of S wrt angles and magnitudes
            diagV = np.diag(Vc)
            diagI = np.diag(Ibus)
            diagE = np.diag(np.exp(1j * th))
            dS_dth = 1j * diagV @ np.conj(diagI - M @ diagV)
            dS_dv = diagV @ np.conj(M @ diagE) + np.conj(diagI) @ diagE
            J = np.empty((2 * npq, 2 * npq))
            J[:npq, :npq] = dS_dth.real[np.ix_(pq, pq)]
            J[:npq, npq:] = dS_dv.real[np.ix_(pq, pq)]
            J[npq:, :npq] = dS_dth.imag[np.ix_(pq, pq)]
            J[npq:, npq:] = dS_dv.imag[np.ix_(pq, pq)]
            rhs = np.concatenate([dP[pq], dQ[pq]])
            try:
                dx = np.linalg.solve(J, rhs)
            except np.linalg.LinAlgError:
                raise PowerFlowError(
                    "singular Jacobian at step %d (cond=%.3g)"
                    % (t, np.linalg.cond(J)), trace=trace, step=t)
            th[pq] += dx[:npq]
            v[pq] += dx[npq:]
        if not converged:
            raise PowerFlowError(
                "no convergence at step %d after %d iterations "
                "(mismatch trace: %s)" % (t, max_iter,
                                          ", ".join("%.3g" % m for m in trace)),
                trace=trace, step=t)
        v_out[:, t] = v
        th_out[:, t] = th
    return BusState(list(ids), v_out, th_out,
                    resolution_minutes=loads.resolution_minutes,
                    start=loads.start)


# ---------------------------------------------------------------------------
# Synthetic profiles and noise
# ---------------------------------------------------------------------------

_SEASONS = {
    # (demand level band lo/hi, morning peak hour, evening peak hour,
    #  evening peak weight, heating severity band lo/hi, start date); winter
    #  keeps the summer level band but multiplies everything by a shared
    #  weather severity, so a mild winter day looks exactly like a summer one
    #  while a cold snap lifts the whole feeder to loads summer never sees
    "summer": (0.15, 0.95, 8.0, 20.5, 0.9, 1.0, 1.0,
               datetime.datetime(2024, 7, 1)),
    "winter": (0.15, 0.95, 7.0, 18.0, 1.6, 1.0, 1.8,
               datetime.datetime(2024, 1, 1)),
    "neutral": (0.40, 1.15, 7.5, 19.0, 1.2, 1.0, 1.0,
                datetime.datetime(2024, 4, 1)),
}


def generate_profiles(n_buses, T, resolution=15, seed=0, season="neutral",
                      base_load=0.03, power_factor=POWER_FACTOR):
    """Per-bus stochastic load series with a two-peak diurnal shape.

    The season tag moves the peak hours and the demand level band so that
    summer and winter pools are distinguishable by distribution distance
    while still overlapping the way real seasons do. Each bus's level
    wanders slowly inside the band, piecewise-linear between uniform draws
    every two days, so bus levels hold no fixed ratio and a long pool covers
    the whole load region instead of one slice of it. Winter additionally
    carries a feeder-wide heating severity that wanders the same way; mild
    stretches sit at 1 and reproduce summer statistics, cold snaps scale
    every bus together. Output is deterministic in (all arguments, seed).
    Bus ids are 2..n_buses+1, leaving id 1 for the slack of a matching
    feeder.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if season not in _SEASONS:
        raise ValueError("unknown season %r" % season)
    k_lo, k_hi, m_peak, e_peak, e_weight, s_lo, s_hi, start = _SEASONS[season]
    rng = np.random.default_rng(seed)
    hours = (np.arange(T) * resolution / 60.0) % 24.0
    # two gaussian bumps over a floor; widths in hours
    shape = (0.35
             + 0.8 * np.exp(-0.5 * ((hours - m_peak) / 1.6) ** 2)
             + e_weight * np.exp(-0.5 * ((hours - e_peak) / 2.1) ** 2))
    seg = max(1, int(round(2.0 * 24 * 60 / resolution)))
    knots = rng.uniform(k_lo, k_hi, size=(n_buses, T // seg + 2))
    tgrid = np.arange(knots.shape[1]) * float(seg)
    steps = np.arange(T, dtype=np.float64)
    scale = np.vstack([np.interp(steps, tgrid, knots[b]) for b in range(n_buses)])
    if s_hi > s_lo:
        severity = np.interp(steps, tgrid,
                             rng.uniform(s_lo, s_hi, size=knots.shape[1]))
        scale = scale * severity[None, :]
    noise = rng.lognormal(mean=0.0, sigma=0.18, size=(n_buses, T))
    p = base_load * scale * shape[None, :] * noise
    q = p * math.tan(math.acos(power_factor))
    return LoadProfile(list(range(2, n_buses + 2)), p, q, resolution, start=start)


def inject_measurement_noise(states, three_sigma_pct, seed=0):
    """Additive gaussian error on magnitudes; 3 sigma equals the given percent
    of the 1.0 p.u. nominal. Angles are left untouched."""
    if three_sigma_pct < 0:
        raise ValueError("noise percentage must be nonnegative")
    if three_sigma_pct == 0:
        return BusState(list(states.bus_ids), states.v.copy(),
                        states.theta.copy(), states.resolution_minutes,
                        states.start)
    sigma = three_sigma_pct / 100.0 / 3.0
    rng = np.random.default_rng(seed)
    noisy = states.v + rng.normal(0.0, sigma, size=states.v.shape)
    return BusState(list(states.bus_ids), noisy, states.theta.copy(),
                    states.resolution_minutes, states.start)


def random_radial_feeder(n_buses, seed=0, chain_bias=0.7):
    """Random tree feeder: bus 1 is the slack, later buses hang off earlier
    ones, mostly in a chain the way LV feeders run down a street."""
    if n_buses < 2:
        raise ValueError("need at least two buses")
    rng = np.random.default_rng(seed)
    buses = [Bus(1, "slack")] + [Bus(i, "pq") for i in range(2, n_buses + 1)]
    lines = []
    for i in range(2, n_buses + 1):
        if i == 2 or rng.random() < chain_bias:
            parent = i - 1
        else:
            parent = int(rng.integers(1, i))
        r = float(rng.uniform(0.005, 0.02))
        x = float(rng.uniform(0.004, 0.015))
        lines.append(Line(parent, i, r, x))
    return FeederModel(buses, lines)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_feeder_file(model, path):
    """Plain text schema::

        base_voltage <float>
        bus <id> <slack|pq>
        line <from> <to> <r> <x>

    Blank lines and '#' comments are ignored."""
    with open(path, "w") as f:
        f.write("# feeder definition\n")
        f.write("base_voltage %.17g\n" % model.base_voltage)
        for b in model.buses:
            f.write("bus %d %s\n" % (b.id, b.type))
        for ln in model.lines:
            f.write("line %d %d %.17g %.17g\n" % (ln.from_bus, ln.to_bus, ln.r, ln.x))


def read_feeder_file(path):
    buses, lines, base = [], [], 1.0
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            kind = parts[0]
            try:
                if kind == "base_voltage":
                    base = float(parts[1])
                elif kind == "bus":
                    buses.append(Bus(int(parts[1]), parts[2]))
                elif kind == "line":
                    lines.append(Line(int(parts[1]), int(parts[2]),
                                      float(parts[3]), float(parts[4])))
                else:
                    raise ValueError("unknown record %r" % kind)
            except (IndexError, ValueError) as e:
                raise ValueError("%s:%d: %s" % (path, lineno, e))
    return FeederModel(buses, lines, base_voltage=base)


def _write_series_csv(path, header, bus_ids, stamps, columns, comment=None):
    with open(path, "w", newline="") as f:
        if comment:
            f.write("# %s\n" % comment)
        w = csv.writer(f)
        w.writerow(header)
        for k, bid in enumerate(bus_ids):
            for t, stamp in enumerate(stamps):
                w.writerow([bid, stamp.isoformat(timespec="minutes")]
                           + ["%.17g" % col[k, t] for col in columns])


def write_profile_csv(profile, path):
    comment = "transformed=true" if profile.transformed else None
    _write_series_csv(path, ["bus_id", "timestamp", "p_pu", "q_pu"],
                      profile.bus_ids, profile.timestamps(),
                      [profile.p, profile.q], comment=comment)


def write_voltage_csv(state, path):
    _write_series_csv(path, ["bus_id", "timestamp", "v_pu", "theta_rad"],
                      state.bus_ids, state.timestamps(),
                      [state.v, state.theta])


def _read_series_csv(path, expect_header):
    transformed = False
    rows = []
    with open(path, newline="") as f:
        first = f.readline()
        if first.startswith("#"):
            transformed = "transformed=true" in first
            header_line = f.readline()
        else:
            header_line = first
        header = next(csv.reader([header_line]))
        if header != expect_header:
            raise ValueError("unexpected header %r in %s" % (header, path))
        for rec in csv.reader(f):
            if not rec:
                continue
            rows.append((int(rec[0]), datetime.datetime.fromisoformat(rec[1]),
                         float(rec[2]), float(rec[3])))
    if not rows:
        raise ValueError("no data rows in %s" % path)
    bus_ids = sorted({r[0] for r in rows})
    stamps = sorted({r[1] for r in rows})
    pos_b = {b: i for i, b in enumerate(bus_ids)}
    pos_t = {s: i for i, s in enumerate(stamps)}
    a = np.full((len(bus_ids), len(stamps)), np.nan)
    b = np.full((len(bus_ids), len(stamps)), np.nan)
    for bid, stamp, va, vb in rows:
        a[pos_b[bid], pos_t[stamp]] = va
        b[pos_b[bid], pos_t[stamp]] = vb
    if np.isnan(a).any() or np.isnan(b).any():
        raise ValueError("missing samples in %s" % path)
    if len(stamps) > 1:
        res = int((stamps[1] - stamps[0]).total_seconds() // 60)
    else:
        res = 15
    return bus_ids, stamps, a, b, res, transformed


def read_profile_csv(path):
    bus_ids, stamps, p, q, res, transformed = _read_series_csv(
        path, ["bus_id", "timestamp", "p_pu", "q_pu"])
    return LoadProfile(bus_ids, p, q, res, start=stamps[0], transformed=transformed)


def read_voltage_csv(path):
    bus_ids, stamps, v, th, res, _ = _read_series_csv(
        path, ["bus_id", "timestamp", "v_pu", "theta_rad"])
    return BusState(bus_ids, v, th, resolution_minutes=res, start=stamps[0])
