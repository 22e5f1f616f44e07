"""Pedersen commitments over a prime-order group, plus the sigma-protocol round
used by the voltage-release handshake.

Two group realizations are provided:

* ``toy-modp``: the multiplicative group mod a small prime (23). Small enough
  that soundness and binding can be checked exhaustively in tests.
* ``secp256k1``: the standard curve, implemented here in pure Python with
  Jacobian coordinates and fixed-base window tables so commitments are fast
  enough for multi-meter simulations.

A commitment to integer ``x0`` with blinding ``r`` is ``C = g^x0 * h^r``
(written multiplicatively; on the curve this is ``x0*G + r*H``). Exponents are
reduced modulo the group order, which is what ``GroupParams.p`` holds.
"""

import hashlib
from dataclasses import dataclass

__all__ = [
    "GroupParams",
    "Commitment",
    "SigmaSession",
    "ProtocolError",
    "setup",
    "commit",
    "respond",
    "recover_blinding",
    "verify",
    "homomorphic_add",
    "dlog_from_collision",
    "encode_int",
    "decode_int",
]


class ProtocolError(Exception):
    pass


# ---------------------------------------------------------------------------
# secp256k1 curve arithmetic (pure Python, Jacobian coordinates)
# ---------------------------------------------------------------------------

# Curve domain parameters from SEC 2: y^2 = x^3 + 7 over F_P, base point G,
# prime group order N.
_P = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
_N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
_GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
_GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8
_B = 7

# Affine points are (x, y) tuples; None is the identity.


def _jac_double(X1, Y1, Z1):
    if Y1 == 0:
        return (0, 1, 0)
    A = (X1 * X1) % _P
    Bq = (Y1 * Y1) % _P
    C = (Bq * Bq) % _P
    t = (X1 + Bq) % _P
    D = (2 * (t * t - A - C)) % _P
    E = (3 * A) % _P
    F = (E * E) % _P
    X3 = (F - 2 * D) % _P
    Y3 = (E * (D - X3) - 8 * C) % _P
    Z3 = (2 * Y1 * Z1) % _P
    return (X3, Y3, Z3)


def _jac_add_affine(X1, Y1, Z1, x2, y2):
    # Mixed addition: Jacobian (X1,Y1,Z1) + affine (x2,y2).
    if Z1 == 0:
        return (x2, y2, 1)
    Z1Z1 = (Z1 * Z1) % _P
    U2 = (x2 * Z1Z1) % _P
    S2 = (y2 * Z1 * Z1Z1) % _P
    H = (U2 - X1) % _P
    r = (S2 - Y1) % _P
    if H == 0:
        if r == 0:
            return _jac_double(X1, Y1, Z1)
        return (0, 1, 0)
    HH = (H * H) % _P
    HHH = (H * HH) % _P
    V = (X1 * HH) % _P
    X3 = (r * r - HHH - 2 * V) % _P
    Y3 = (r * (V - X3) - Y1 * HHH) % _P
    Z3 = (Z1 * H) % _P
    return (X3, Y3, Z3)


def _jac_to_affine(X, Y, Z):
    if Z == 0:
        return None
    zi = pow(Z, _P - 2, _P)
    zi2 = (zi * zi) % _P
    return ((X * zi2) % _P, (Y * zi2 * zi) % _P)


def _affine_add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    X, Y, Z = _jac_add_affine(p1[0], p1[1], 1, p2[0], p2[1])
    return _jac_to_affine(X, Y, Z)


def _on_curve(pt):
    if pt is None:
        return True
    x, y = pt
    return 0 <= x < _P and 0 <= y < _P and (y * y - x * x * x - _B) % _P == 0


def _build_window_table(base):
    """Fixed-base table: 64 windows of 4 bits, affine entries table[w][d] = d*16^w*base."""
    table = []
    cur = base
    for _ in range(64):
        row = [None] * 16
        acc = None
        for d in range(1, 16):
            acc = _affine_add(acc, cur)
            row[d] = acc
        table.append(row)
        X, Y, Z = cur[0], cur[1], 1
        for _ in range(4):
            X, Y, Z = _jac_double(X, Y, Z)
        cur = _jac_to_affine(X, Y, Z)
    return table


def _windowed_mul(table, k):
    acc = (0, 1, 0)
    w = 0
    while k:
        d = k & 15
        if d:
            pt = table[w][d]
            acc = _jac_add_affine(acc[0], acc[1], acc[2], pt[0], pt[1])
        k >>= 4
        w += 1
    return _jac_to_affine(*acc)


def _scalar_mul(pt, k):
    """Plain MSB-first double-and-add for bases without a precomputed table."""
    if pt is None or k == 0:
        return None
    acc = (0, 1, 0)
    for bit in bin(k)[2:]:
        acc = _jac_double(*acc)
        if bit == "1":
            acc = _jac_add_affine(acc[0], acc[1], acc[2], pt[0], pt[1])
    return _jac_to_affine(*acc)


def _lift_x(x, want_odd_y):
    """Return the curve point with this x, or None if x is not on the curve."""
    rhs = (x * x * x + _B) % _P
    y = pow(rhs, (_P + 1) // 4, _P)  # works because P % 4 == 3
    if (y * y) % _P != rhs:
        return None
    if (y & 1) != want_odd_y:
        y = _P - y
    return (x, y)


# ---------------------------------------------------------------------------
# Group parameters
# ---------------------------------------------------------------------------

_TOY_MODULUS = 23
_TOY_ORDER = 22
_TOY_G = 5


def _toy_order_of(a):
    acc, k = 1, 0
    while True:
        acc = (acc * a) % _TOY_MODULUS
        k += 1
        if acc == 1:
            return k


class GroupParams:
    """Immutable group description: realization tag, generators g and h, and
    the exponent modulus p (the group order).

    The discrete log of h base g is unknown by construction: h is derived by
    hashing g together with a domain tag and the setup seed until a valid
    group element comes out.
    """

    def __init__(self, realization, g, h, p, modulus=None):
        self.realization = realization
        self.g = g
        self.h = h
        self.p = p  # exponent modulus == group order
        self.modulus = modulus  # residue modulus, toy realization only
        self._tables = {}

    def __repr__(self):
        return "GroupParams(%s)" % self.realization

    def __eq__(self, other):
        return (
            isinstance(other, GroupParams)
            and self.realization == other.realization
            and self.g == other.g
            and self.h == other.h
            and self.p == other.p
        )

    @property
    def identity(self):
        if self.realization == "toy-modp":
            return 1
        return None

    def mul(self, a, b):
        """Group operation on two elements."""
        if self.realization == "toy-modp":
            return (a * b) % self.modulus
        return _affine_add(a, b)

    def exp(self, base, k):
        """base^k with the exponent reduced mod the group order."""
        k = k % self.p
        if self.realization == "toy-modp":
            return pow(base, k, self.modulus)
        if k == 0:
            return None
        if base == self.g or base == self.h:
            tag = "g" if base == self.g else "h"
            if tag not in self._tables:
                self._tables[tag] = _build_window_table(base)
            return _windowed_mul(self._tables[tag], k)
        return _scalar_mul(base, k)

    def exp_g(self, k):
        return self.exp(self.g, k)

    def exp_h(self, k):
        return self.exp(self.h, k)

    # -- serialization ------------------------------------------------------

    def element_size(self):
        if self.realization == "toy-modp":
            return (self.modulus.bit_length() + 7) // 8
        return 33

    def serialize(self, elem):
        """Canonical fixed-width byte encoding of a group element."""
        if self.realization == "toy-modp":
            return elem.to_bytes(self.element_size(), "big")
        if elem is None:
            return b"\x00" * 33  # identity; never produced by honest commits
        x, y = elem
        prefix = b"\x03" if (y & 1) else b"\x02"
        return prefix + x.to_bytes(32, "big")

    def deserialize(self, data):
        if self.realization == "toy-modp":
            if len(data) != self.element_size():
                raise ValueError("bad toy element length %d" % len(data))
            elem = int.from_bytes(data, "big")
            if not 1 <= elem < self.modulus:
                raise ValueError("residue out of range")
            return elem
        if len(data) != 33:
            raise ValueError("bad curve element length %d" % len(data))
        if data == b"\x00" * 33:
            return None
        if data[0] not in (2, 3):
            raise ValueError("bad compression prefix 0x%02x" % data[0])
        pt = _lift_x(int.from_bytes(data[1:], "big"), data[0] == 3)
        if pt is None or not _on_curve(pt):
            raise ValueError("x coordinate not on curve")
        return pt


def setup(realization, seed=0):
    """Build group parameters for the chosen realization.

    g is a fixed generator (5 in the toy group, the standard base point on the
    curve); h comes from hash-to-group on (domain tag, g, seed, counter). In
    the toy group candidates are additionally rejected until g*h^-1 generates
    the whole group, so that no wrong committed index of realistic size can
    collide with a true one (the curve group has prime order, where this holds
    for free).
    """
    if realization == "toy-modp":
        gbytes = _TOY_G.to_bytes(1, "big")
        ctr = 0
        while True:
            digest = hashlib.sha256(
                b"privflow-pedersen-h|" + gbytes + b"|%d|%d" % (seed, ctr)
            ).digest()
            h = 2 + int.from_bytes(digest, "big") % (_TOY_MODULUS - 3)
            ctr += 1
            if h == _TOY_G or h == 1:
                continue
            # Soundness of the index check needs g*h^-1 to generate the whole
            # group; note ord(h) itself then cannot also be 22 (one of j and
            # 1-j is even for h = g^j), and does not need to be.
            g_inv_h = (_TOY_G * pow(h, _TOY_MODULUS - 2, _TOY_MODULUS)) % _TOY_MODULUS
            if _toy_order_of(g_inv_h) == _TOY_ORDER:
                return GroupParams("toy-modp", _TOY_G, h, _TOY_ORDER, modulus=_TOY_MODULUS)
    if realization == "secp256k1":
        g = (_GX, _GY)
        gser = b"\x02" + _GX.to_bytes(32, "big") if not (_GY & 1) else b"\x03" + _GX.to_bytes(32, "big")
        ctr = 0
        while True:
            digest = hashlib.sha256(
                b"privflow-pedersen-h|" + gser + b"|%d|%d" % (seed, ctr)
            ).digest()
            ctr += 1
            pt = _lift_x(int.from_bytes(digest, "big") % _P, digest[0] & 1)
            if pt is not None and pt != g:
                return GroupParams("secp256k1", g, pt, _N)
    raise ValueError("unsupported realization %r" % realization)


# ---------------------------------------------------------------------------
# Commitments and the sigma round
# ---------------------------------------------------------------------------


@dataclass
class Commitment:
    """A group element, plus the opening (x0, r) on the prover side only."""

    value: object
    x0: int = None
    r: int = None

    def stripped(self):
        """Copy safe to put on the wire: no opening attached."""
        return Commitment(self.value)


def commit(x0, r, params):
    """C = g^x0 * h^r. The blinding r must lie in [1, p]; r = p stands for the
    exponent 0 residue class."""
    if not 1 <= r <= params.p:
        raise ValueError("blinding r=%d outside [1, %d]" % (r, params.p))
    value = params.mul(params.exp_g(x0), params.exp_h(r))
    return Commitment(value, x0=x0, r=r)


def canonical_blinding(r, params):
    """Map any integer blinding to its representative in [1, p] (same group
    element), used when adding openings of homomorphically combined commitments."""
    return (r - 1) % params.p + 1


def respond(r, x0, b, params):
    """Prover's reply to challenge bit b: s = (r + x0*(1-b)) mod p."""
    if b not in (0, 1):
        raise ValueError("challenge bit must be 0 or 1")
    return (r + x0 * (1 - b)) % params.p


def recover_blinding(s, x0, b, params):
    """Verifier-side inverse of respond: r = (s - (1-b)*x0) mod p."""
    if b not in (0, 1):
        raise ValueError("challenge bit must be 0 or 1")
    return (s - (1 - b) * x0) % params.p


def verify(C, s, b, x0_claimed, params):
    """Recompute-and-compare check: recover the blinding under the verifier's
    own value x0_claimed and test whether the commitment matches. Returns bool."""
    r = recover_blinding(s, x0_claimed, b, params)
    if r == 0:
        r = params.p
    value = C.value if isinstance(C, Commitment) else C
    return commit(x0_claimed, r, params).value == value


def homomorphic_add(C1, C2, params, params2=None):
    """Group operation on two commitments; the result opens to the sums
    (x1+x2, r1+r2) when both openings are known."""
    if params2 is not None and params2 != params:
        raise ValueError("commitments from different group realizations")
    value = params.mul(C1.value, C2.value)
    out = Commitment(value)
    if C1.x0 is not None and C2.x0 is not None:
        out.x0 = C1.x0 + C2.x0
        out.r = C1.r + C2.r
    return out


def dlog_from_collision(x1, r1, x2, r2, params):
    """Extract log_g(h) from a binding break: two openings (x1,r1) != (x2,r2)
    of the same commitment give log_g h = (x1-x2)/(r2-r1) mod p.

    Raises ProtocolError when the divisor is not invertible mod the group
    order (possible in the toy group, whose order is composite).
    """
    dx = (x1 - x2) % params.p
    dr = (r2 - r1) % params.p
    try:
        inv = pow(dr, -1, params.p)
    except ValueError:
        raise ProtocolError("r difference %d not invertible mod %d" % (dr, params.p))
    return (dx * inv) % params.p


class SigmaSession:
    """State of one commit/challenge/respond round.

    Tracks role ("prover" or "verifier") and enforces message order: commits
    first, then exactly one challenge, then responses.
    """

    def __init__(self, role, params):
        if role not in ("prover", "verifier"):
            raise ValueError(role)
        self.role = role
        self.params = params
        self.commits = None
        self.challenge = None
        self.responses = None
        self.rounds = 0

    def set_commits(self, commits):
        self.commits = list(commits)
        self.challenge = None
        self.responses = None
        self.rounds += 1

    def set_challenge(self, b):
        if self.commits is None:
            raise ProtocolError("challenge before commitments")
        if self.challenge is not None:
            raise ProtocolError("second challenge in one round")
        if b not in (0, 1):
            raise ProtocolError("challenge bit must be 0 or 1")
        self.challenge = b

    def set_responses(self, responses):
        if self.challenge is None:
            raise ProtocolError("responses before challenge")
        self.responses = list(responses)


# ---------------------------------------------------------------------------
# Integer codec shared with the wire format
# ---------------------------------------------------------------------------


def encode_int(n):
    """Nonnegative integer as 2-byte big-endian length + magnitude bytes."""
    if n < 0:
        raise ValueError("negative integer")
    size = (n.bit_length() + 7) // 8 or 1
    return size.to_bytes(2, "big") + n.to_bytes(size, "big")


def decode_int(data, offset=0):
    """Inverse of encode_int; returns (value, next_offset)."""
    size = int.from_bytes(data[offset:offset + 2], "big")
    end = offset + 2 + size
    if end > len(data):
        raise ValueError("truncated integer field")
    return int.from_bytes(data[offset + 2:end], "big"), end
