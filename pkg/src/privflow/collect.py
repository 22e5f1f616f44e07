"""Voltage collection between meters and the operator.

A meter never sends a voltage in the clear. Each magnitude is split into k
shares that sum back to the original, the shares are hidden at secret index
positions inside a dimension-I vector of look-alike decoys, and the operator
has to learn the index tuple through a commit/challenge/respond handshake:
it walks the candidate tuples in a session-specific random order, commits to
each guess, and the meter checks the response algebra against its true
indices, answering accept or reject. Once a candidate is accepted the meter
streams its whole embedded series and the operator recovers the magnitudes
by summing the shares at the verified positions.

One handshake per meter session verifies the tuple once; every vector of
that session reuses it.
"""

import itertools
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import wire
from .pedersen import Commitment, commit, recover_blinding, respond

__all__ = [
    "SplitEmbedding", "CandidateList", "SessionRecord",
    "split_voltage", "embed", "embed_series", "enumerate_candidates",
    "MeterAgent", "OperatorAgent", "run_handshake", "collect_dataset",
]


@dataclass
class SplitEmbedding:
    """One embedded vector: k true shares hidden among decoys."""

    vector: np.ndarray          # length I
    true_indices: tuple         # k distinct positions, meter-side secret
    k: int
    bounds: tuple               # (lo, hi) range used for the decoys

    def recover(self):
        return float(sum(self.vector[i] for i in self.true_indices))


@dataclass
class CandidateList:
    """All ordered k-tuples of distinct indices from range(I)."""

    candidates: list
    cursor: int = 0

    def __len__(self):
        return len(self.candidates)

    def advance(self):
        c = self.candidates[self.cursor]
        self.cursor += 1
        return c

    @property
    def exhausted(self):
        return self.cursor >= len(self.candidates)


@dataclass
class SessionRecord:
    sm_id: int
    dim: int                    # I
    shares: int                 # k
    rounds: int
    duration: float
    outcome: str                # accepted | exhausted | aborted
    row: object = None          # recovered series; transport result, not timing


def split_voltage(v, k, seed=0):
    """Split positive magnitudes into k shares that sum back to v.

    The first cut draws share1 uniformly from [0.49 v, 0.51 v] and takes the
    remainder as share2; k=4 applies the same rule once more to each half.
    v may be a scalar or a 1-D series; shares come back with shape (k,) or
    (k, T). The last share of every cut is a subtraction, so sums recover v
    to machine precision.
    """
    if k not in (2, 4):
        raise ValueError("k must be 2 or 4")
    rng = np.random.default_rng(seed)
    v = np.asarray(v, dtype=np.float64)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    if np.any(v <= 0):
        raise ValueError("voltage magnitudes must be positive")

    def cut(x):
        s1 = rng.uniform(0.49, 0.51, size=x.shape) * x
        return s1, x - s1

    a, b = cut(v)
    if k == 2:
        shares = np.stack([a, b])
    else:
        a1, a2 = cut(a)
        b1, b2 = cut(b)
        shares = np.stack([a1, a2, b1, b2])
    return shares[:, 0] if scalar else shares


def embed(shares, dim, seed=0, indices=None):
    """Place k shares at secret positions of a dimension-I vector, filling the
    rest with decoys drawn uniformly from [0.97*min(shares), 1.03*max(shares)].
    """
    shares = np.asarray(shares, dtype=np.float64)
    k = shares.shape[0]
    if dim <= k:
        raise ValueError("dimension I must exceed the share count k")
    rng = np.random.default_rng(seed)
    if indices is None:
        indices = tuple(int(i) for i in rng.choice(dim, size=k, replace=False))
    else:
        indices = tuple(int(i) for i in indices)
        if len(set(indices)) != k or any(not 0 <= i < dim for i in indices):
            raise ValueError("need k distinct indices inside range(I)")
    lo = 0.97 * float(shares.min())
    hi = 1.03 * float(shares.max())
    vector = rng.uniform(lo, hi, size=dim)
    for pos, s in zip(indices, shares):
        vector[pos] = s
    return SplitEmbedding(vector, indices, k, (lo, hi))


def embed_series(shares, dim, seed=0, indices=None):
    """Vectorized embed for a (k, T) share series with one fixed index tuple.

    Returns (matrix T x I, indices, bounds T x 2); bounds are per time step.
    """
    shares = np.asarray(shares, dtype=np.float64)
    k, T = shares.shape
    if dim <= k:
        raise ValueError("dimension I must exceed the share count k")
    rng = np.random.default_rng(seed)
    if indices is None:
        indices = tuple(int(i) for i in rng.choice(dim, size=k, replace=False))
    else:
        indices = tuple(int(i) for i in indices)
        if len(set(indices)) != k or any(not 0 <= i < dim for i in indices):
            raise ValueError("need k distinct indices inside range(I)")
    lo = 0.97 * shares.min(axis=0)
    hi = 1.03 * shares.max(axis=0)
    matrix = rng.uniform(lo[:, None], hi[:, None], size=(T, dim))
    for j, pos in enumerate(indices):
        matrix[:, pos] = shares[j]
    return matrix, indices, np.stack([lo, hi], axis=1)


def enumerate_candidates(dim, k):
    """Every ordered k-tuple of distinct indices, lexicographic order."""
    if dim <= k:
        raise ValueError("dimension I must exceed the share count k")
    return CandidateList(list(itertools.permutations(range(dim), k)))


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------


class MeterAgent:
    """Meter side: embeds its series, answers handshake rounds as the
    verifier, then streams the embedded vectors."""

    def __init__(self, sm_id, v_series, dim, k, params, seed=0,
                 rounds_per_candidate=1, true_indices=None, chunk=700):
        self.sm_id = sm_id
        self.v_series = np.asarray(v_series, dtype=np.float64)
        self.dim = dim
        self.k = k
        self.params = params
        self.seed = seed
        self.rho = rounds_per_candidate
        self.chunk = chunk
        rng = np.random.default_rng(seed)
        shares = split_voltage(self.v_series, k, seed=rng)
        self.matrix, self.true_indices, self.bounds = embed_series(
            shares, dim, seed=rng, indices=true_indices)
        self._challenge_rng = random.Random((seed << 16) ^ 0x5A5A ^ sm_id)
        # g^index factors are fixed for the session, so cache them
        self._g_pow = [params.exp_g(i) for i in self.true_indices]

    def _check_round(self, conn):
        """One commit/challenge/respond exchange; returns the verdict."""
        tag, payload = conn.recv_frame()
        if tag != wire.TAG_COMMITS:
            raise wire.TransportError("expected COMMITS, got 0x%02x" % tag)
        commits = [Commitment(self.params.deserialize(e))
                   for e in wire.decode_commits(payload)]
        if len(commits) != self.k:
            return False
        b = self._challenge_rng.getrandbits(1)
        conn.send_frame(wire.TAG_CHALLENGE, wire.encode_challenge(b))
        tag, payload = conn.recv_frame()
        if tag != wire.TAG_RESPONSES:
            raise wire.TransportError("expected RESPONSES, got 0x%02x" % tag)
        responses = wire.decode_responses(payload)
        if len(responses) != self.k:
            return False
        ok = True
        for j, (c, s) in enumerate(zip(commits, responses)):
            r = recover_blinding(s, self.true_indices[j], b, self.params)
            if r == 0:
                r = self.params.p
            recomputed = self.params.mul(self._g_pow[j], self.params.exp_h(r))
            if recomputed != c.value:
                ok = False  # keep timing independent of the failing position
        return ok

    def run_session(self, conn):
        """Returns "accepted" after streaming data, or raises TransportError."""
        conn.send_frame(wire.TAG_HELLO,
                        wire.encode_hello(self.dim, self.k, self.sm_id))
        accepted = False
        while not accepted:
            verdicts = [self._check_round(conn) for _ in range(self.rho)]
            accepted = all(verdicts)
            conn.send_frame(wire.TAG_VERDICT, wire.encode_verdict(accepted))
        for lo in range(0, self.matrix.shape[0], self.chunk):
            block = self.matrix[lo:lo + self.chunk]
            conn.send_frame(wire.TAG_DATA, wire.encode_data(block))
        conn.send_frame(wire.TAG_ACK)
        tag, _ = conn.recv_frame()
        if tag != wire.TAG_ACK:
            raise wire.TransportError("expected final ACK, got 0x%02x" % tag)
        return "accepted"


class OperatorAgent:
    """Operator side: proves candidate index tuples until one is accepted,
    then receives and reassembles the meter's series.

    run_session has no shared mutable state, so sessions can run in
    parallel; the caller aggregates the returned rows.
    """

    def __init__(self, params, seed=0):
        self.params = params
        self.seed = seed

    def _prove_round(self, conn, candidate, rng):
        blindings = [rng.randrange(1, self.params.p + 1) for _ in candidate]
        commits = [commit(x0, r, self.params)
                   for x0, r in zip(candidate, blindings)]
        conn.send_frame(wire.TAG_COMMITS, wire.encode_commits(
            [self.params.serialize(c.value) for c in commits]))
        tag, payload = conn.recv_frame()
        if tag != wire.TAG_CHALLENGE:
            raise wire.TransportError("expected CHALLENGE, got 0x%02x" % tag)
        b = wire.decode_challenge(payload)
        conn.send_frame(wire.TAG_RESPONSES, wire.encode_responses(
            [respond(r, x0, b, self.params)
             for x0, r in zip(candidate, blindings)]))

    def run_session(self, conn, rounds_per_candidate=1):
        """Returns (SessionRecord, recovered row or None)."""
        t0 = time.perf_counter()
        sm_id = None
        try:
            tag, payload = conn.recv_frame()
            if tag != wire.TAG_HELLO:
                raise wire.TransportError("expected HELLO, got 0x%02x" % tag)
            dim, k, sm_id = wire.decode_hello(payload)
            session_rng = random.Random((self.seed << 20) ^ 0x0D50 ^ sm_id)
            cl = enumerate_candidates(dim, k)
            session_rng.shuffle(cl.candidates)
            rounds = 0
            chosen = None
            while not cl.exhausted:
                candidate = cl.advance()
                rounds += 1
                accepted = True
                for _ in range(rounds_per_candidate):
                    self._prove_round(conn, candidate, session_rng)
                tag, payload = conn.recv_frame()
                if tag != wire.TAG_VERDICT:
                    raise wire.TransportError("expected VERDICT, got 0x%02x" % tag)
                if wire.decode_verdict(payload):
                    chosen = candidate
                    break
            duration = time.perf_counter() - t0
            if chosen is None:
                return (SessionRecord(sm_id, dim, k, rounds, duration,
                                      "exhausted"), None)
            blocks = []
            while True:
                tag, payload = conn.recv_frame()
                if tag == wire.TAG_ACK:
                    break
                if tag != wire.TAG_DATA:
                    raise wire.TransportError("expected DATA, got 0x%02x" % tag)
                blocks.append(wire.decode_data(payload))
            conn.send_frame(wire.TAG_ACK)
            matrix = np.vstack(blocks) if blocks else np.empty((0, dim))
            row = matrix[:, list(chosen)].sum(axis=1)
            return (SessionRecord(sm_id, dim, k, rounds,
                                  time.perf_counter() - t0, "accepted"), row)
        except wire.TransportError:
            return (SessionRecord(sm_id if sm_id is not None else -1,
                                  0, 0, 0, time.perf_counter() - t0,
                                  "aborted"), None)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def _session_pair(transport, timeout):
    if transport == "pipe":
        return wire.pipe_pair(timeout=timeout)
    if transport == "tcp":
        return wire.loopback_pair(timeout=timeout)
    raise ValueError("unknown transport %r" % transport)


def run_handshake(sm, dso, transport="pipe", timeout=30.0,
                  rounds_per_candidate=1):
    """Run one full meter session against the operator; returns the
    operator's SessionRecord (rounds tried, duration, outcome)."""
    meter_conn, op_conn = _session_pair(transport, timeout)
    failure = []

    def meter_side():
        try:
            sm.run_session(meter_conn)
        except wire.TransportError as e:
            failure.append(e)
        finally:
            meter_conn.close()

    t = threading.Thread(target=meter_side, daemon=True)
    t.start()
    record, row = dso.run_session(op_conn, rounds_per_candidate=rounds_per_candidate)
    op_conn.close()  # unblocks the meter if the operator gave up first
    t.join(timeout=timeout)
    record.row = row
    return record


def collect_dataset(sms, dso, parallel=False, transport="pipe", timeout=60.0,
                    rounds_per_candidate=1):
    """Collect every meter's series through its own session.

    Returns (matrix, records): matrix is N x T in the order of sms, with NaN
    rows for failed sessions (partial dataset); records hold per-session
    rounds, duration, and outcome.
    """
    T = max(sm.v_series.shape[0] for sm in sms)

    def one(sm):
        return run_handshake(sm, dso, transport=transport, timeout=timeout,
                             rounds_per_candidate=rounds_per_candidate)

    if parallel:
        with ThreadPoolExecutor(max_workers=min(8, len(sms))) as pool:
            records = list(pool.map(one, sms))
    else:
        records = [one(sm) for sm in sms]
    matrix = np.full((len(sms), T), np.nan)
    for i, rec in enumerate(records):
        if rec.outcome == "accepted" and rec.row is not None:
            matrix[i, :len(rec.row)] = rec.row
    return matrix, records
