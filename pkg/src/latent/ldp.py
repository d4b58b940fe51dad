"""Randomized-response protocols over bit strings and their privacy calculus.

Four protocols are supported:

* ``UE``   symmetric unary encoding, 1s and 0s kept with the same probability;
* ``OUE``  optimized unary encoding, 1s kept with probability 1/2;
* ``MOUE`` OUE with a privacy budget coefficient ``alpha`` skewing 1s vs 0s;
* ``UER``  MOUE-like scheme whose 1-bit keep probability alternates with the
  parity of the bit position.

Every probability uses a per-bit exponent ``epsilon / sensitivity`` so that a
string whose adjacent inputs differ in at most ``sensitivity`` bits stays
within ``exp(epsilon)`` for UE, OUE and MOUE.  Probabilities are evaluated in
the logistic form ``1 / (1 + exp(-x))`` which cannot overflow.
"""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

__all__ = [
    "ProtocolKind",
    "PrivacyParams",
    "ProtocolProbs",
    "RngStream",
    "RatioBounds",
    "rappor_keep_prob",
    "ue_probs",
    "oue_probs",
    "ub_epsilon",
    "moue_probs",
    "uer_probs",
    "protocol_probs",
    "randomize",
    "randomize_batch",
    "worst_case_ratio_analytic",
    "brute_force_ldp_audit",
    "MAX_AUDIT_LENGTH",
]

MAX_AUDIT_LENGTH = 12
MAX_EXACT_AUDIT_LENGTH = 6

BitsLike = Union[np.ndarray, Sequence[int]]


class ProtocolKind(str, enum.Enum):
    UE = "UE"
    OUE = "OUE"
    MOUE = "MOUE"
    UER = "UER"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for kind in cls:
                if kind.value == value.upper():
                    return kind
        return None

    @property
    def code(self) -> int:
        """Single-byte wire code."""
        return _KIND_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "ProtocolKind":
        for kind, value in _KIND_CODES.items():
            if value == code:
                return kind
        raise ValueError(f"unknown protocol code {code}")


_KIND_CODES = {ProtocolKind.UE: 0, ProtocolKind.OUE: 1, ProtocolKind.MOUE: 2, ProtocolKind.UER: 3}


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not (epsilon > 0) or not math.isfinite(epsilon):
        raise ValueError(f"epsilon must be a finite real > 0, got {epsilon}")
    return epsilon


def _check_sensitivity(sensitivity: int) -> int:
    if isinstance(sensitivity, bool) or int(sensitivity) != sensitivity or sensitivity < 1:
        raise ValueError(f"sensitivity must be a positive integer, got {sensitivity}")
    return int(sensitivity)


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha >= 1 or math.isinf(alpha):
        raise ValueError(f"alpha must be a finite real >= 1, got {alpha}")
    return alpha


def _sigmoid(x: float) -> float:
    """``exp(x) / (1 + exp(x))`` without overflow for large |x|."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _scaled_sigmoid(log_scale: float, x: float) -> float:
    """``a*exp(x) / (1 + a*exp(x))`` with ``a = exp(log_scale)``."""
    return _sigmoid(log_scale + x)


@dataclass(frozen=True)
class PrivacyParams:
    """Privacy budget, budget coefficient and bit-level sensitivity."""

    epsilon: float
    alpha: float = 1.0
    sensitivity: int = 2

    def __post_init__(self):
        object.__setattr__(self, "epsilon", _check_epsilon(self.epsilon))
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))
        object.__setattr__(self, "sensitivity", _check_sensitivity(self.sensitivity))

    @property
    def per_bit_epsilon(self) -> float:
        return self.epsilon / self.sensitivity


@dataclass(frozen=True)
class ProtocolProbs:
    """Per-bit keep probabilities of a randomizer.

    A 1-bit at an even (0-based) position survives with ``keep_one_even``, at
    an odd position with ``keep_one_odd``; a 0-bit survives with
    ``keep_zero`` regardless of position.  Keep probabilities of exactly 1
    are accepted and mean "pass the bit through", which is how
    unrandomized reference runs are expressed.
    """

    keep_one_even: float
    keep_one_odd: float
    keep_zero: float
    protocol_kind: ProtocolKind

    def __post_init__(self):
        object.__setattr__(self, "protocol_kind", ProtocolKind(self.protocol_kind))
        for name in ("keep_one_even", "keep_one_odd", "keep_zero"):
            value = float(getattr(self, name))
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")
            object.__setattr__(self, name, value)
        if self.protocol_kind is not ProtocolKind.UER and self.keep_one_even != self.keep_one_odd:
            raise ValueError(f"{self.protocol_kind.value} keep probabilities cannot depend on parity")

    @property
    def keep_one(self) -> float:
        """Parity-independent 1-bit keep probability (even value for UER)."""
        return self.keep_one_even

    @property
    def flip_one_to_zero(self) -> float:
        return 1.0 - self.keep_one_even

    @property
    def flip_zero_to_one(self) -> float:
        return 1.0 - self.keep_zero

    @property
    def parity_dependent(self) -> bool:
        return self.keep_one_even != self.keep_one_odd

    def keep_one_at(self, length: int) -> np.ndarray:
        """Vector of 1-bit keep probabilities for positions ``0..length-1``."""
        out = np.full(length, self.keep_one_even)
        out[1::2] = self.keep_one_odd
        return out

    def pair_identity(self, parity: int = 0) -> float:
        """``(p / q) * ((1 - q) / (1 - p))`` for the given position parity.

        ``p`` is the 1-bit keep probability at that parity and ``q`` the 0->1
        flip probability.  For UE/OUE/MOUE this equals ``exp(epsilon / s)``
        (``exp(2 * epsilon / s)`` for UE).
        """
        p = self.keep_one_even if parity % 2 == 0 else self.keep_one_odd
        q = 1.0 - self.keep_zero
        return (p / q) * ((1.0 - q) / (1.0 - p))

    @classmethod
    def identity(cls, kind: ProtocolKind = ProtocolKind.UER) -> "ProtocolProbs":
        return cls(1.0, 1.0, 1.0, kind)


def rappor_keep_prob(epsilon: float, sensitivity: int) -> float:
    """Probability of keeping a bit under symmetric randomized response."""
    epsilon = _check_epsilon(epsilon)
    sensitivity = _check_sensitivity(sensitivity)
    return _sigmoid(epsilon / sensitivity)


def ue_probs(epsilon: float, sensitivity: int = 2) -> ProtocolProbs:
    """Unary encoding: 1s and 0s both kept with ``rappor_keep_prob``."""
    p = rappor_keep_prob(epsilon, sensitivity)
    return ProtocolProbs(p, p, p, ProtocolKind.UE)


def oue_probs(epsilon: float, sensitivity: int = 1) -> ProtocolProbs:
    """Optimized unary encoding: keep 1s w.p. 1/2, flip 0s w.p. ``1/(1+e^(eps/s))``.

    The default ``sensitivity=1`` gives the textbook ``q = 1 / (1 + e^eps)``.
    """
    x = _check_epsilon(epsilon) / _check_sensitivity(sensitivity)
    return ProtocolProbs(0.5, 0.5, _sigmoid(x), ProtocolKind.OUE)


def ub_epsilon(alpha: float, epsilon: float) -> float:
    """Effective budget of UE probabilities inflated by ``alpha``: ``ln(alpha^2 e^eps)``."""
    alpha = _check_alpha(alpha)
    epsilon = _check_epsilon(epsilon)
    return 2.0 * math.log(alpha) + epsilon


def moue_probs(params: PrivacyParams) -> ProtocolProbs:
    x = params.per_bit_epsilon
    keep_one = 1.0 / (1.0 + params.alpha)
    keep_zero = _scaled_sigmoid(math.log(params.alpha), x)
    return ProtocolProbs(keep_one, keep_one, keep_zero, ProtocolKind.MOUE)


def uer_probs(params: PrivacyParams) -> ProtocolProbs:
    """Utility-enhancing randomization.

    Even positions keep 1s with ``alpha/(1+alpha)``, odd positions with
    ``1/(1+alpha^3)``; 0s are kept with ``alpha e^x / (1 + alpha e^x)`` where
    ``x = epsilon / sensitivity``.
    """
    if params.sensitivity % 2:
        raise ValueError(f"UER needs an even sensitivity (string length), got {params.sensitivity}")
    log_alpha = math.log(params.alpha)
    keep_even = _sigmoid(log_alpha)
    keep_odd = _sigmoid(-3.0 * log_alpha)
    keep_zero = _scaled_sigmoid(log_alpha, params.per_bit_epsilon)
    return ProtocolProbs(keep_even, keep_odd, keep_zero, ProtocolKind.UER)


def protocol_probs(kind: Union[ProtocolKind, str], params: PrivacyParams) -> ProtocolProbs:
    """Dispatch to the probability function for ``kind``.

    ``alpha`` is ignored by UE and OUE.
    """
    kind = ProtocolKind(kind)
    if kind is ProtocolKind.UE:
        return ue_probs(params.epsilon, params.sensitivity)
    if kind is ProtocolKind.OUE:
        return oue_probs(params.epsilon, params.sensitivity)
    if kind is ProtocolKind.MOUE:
        return moue_probs(params)
    return uer_probs(params)


class RngStream:
    """Counter-based (Philox) uniform source keyed by ``(seed, stream)``.

    Two streams with the same key produce the same variates, so a record
    randomized with ``rng.child(record_index)`` can be replayed exactly and
    records can be processed in any order or in parallel.
    """

    def __init__(self, seed: int, stream: int = 0):
        if not 0 <= seed < 2**64 or not 0 <= stream < 2**64:
            raise ValueError("seed and stream must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(np.random.Philox(key=(self.stream << 64) | self.seed))

    def child(self, index: int) -> "RngStream":
        """Independent stream derived from this one and ``index``."""
        mixed = np.random.SeedSequence([self.seed, self.stream, int(index)]).generate_state(1, np.uint64)[0]
        return RngStream(self.seed, int(mixed))

    def uniform(self, n: int) -> np.ndarray:
        return self._gen.random(n)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def _as_bits(bits: BitsLike) -> np.ndarray:
    arr = np.asarray(bits)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("bit string must be a non-empty 1-D sequence")
    if arr.dtype != np.uint8:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("bit string must contain only 0 and 1")
        arr = arr.astype(np.uint8)
    return arr


def _randomize_with_uniforms(bits: np.ndarray, probs: ProtocolProbs, u: np.ndarray) -> np.ndarray:
    n = bits.shape[-1]
    keep_one = probs.keep_one_at(n) if probs.parity_dependent else probs.keep_one_even
    # a 1 survives when u < keep_one; a 0 turns into 1 when u >= keep_zero
    out = np.where(bits == 1, u < keep_one, u >= probs.keep_zero)
    return out.astype(np.uint8)


def randomize(bits: BitsLike, probs: ProtocolProbs, rng: RngStream) -> np.ndarray:
    """Randomize every bit independently; returns a read-only uint8 array."""
    arr = _as_bits(bits)
    out = _randomize_with_uniforms(arr, probs, rng.uniform(arr.size))
    out.flags.writeable = False
    return out


def randomize_batch(bits: np.ndarray, probs: ProtocolProbs, rng: RngStream) -> np.ndarray:
    """Randomize each row with its own ``rng.child(row)`` stream.

    Row ``i`` of the result equals ``randomize(bits[i], probs, rng.child(i))``.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 2:
        raise ValueError("expected a 2-D array of bit strings")
    out = np.empty_like(bits)
    for i in range(bits.shape[0]):
        out[i] = _randomize_with_uniforms(bits[i], probs, rng.child(i).uniform(bits.shape[1]))
    return out


def _log_bit_table(keep_one: float, keep_zero: float) -> np.ndarray:
    """``table[out, in] = log Pr[out | in]`` for one bit position."""
    with np.errstate(divide="ignore"):
        return np.log(np.array([[keep_zero, 1.0 - keep_one], [1.0 - keep_zero, keep_one]]))


def _log_max_factor(keep_one: float, keep_zero: float) -> float:
    """Largest single-bit likelihood ratio ``max_out Pr[out|a] / Pr[out|b]``."""
    t = _log_bit_table(keep_one, keep_zero)
    with np.errstate(invalid="ignore"):
        diffs = np.abs(t[:, 1] - t[:, 0])
    # nan: output impossible under both inputs, so it constrains nothing
    return float(np.nanmax(np.where(np.isnan(diffs), 0.0, diffs)))


class RatioBounds(NamedTuple):
    """Worst-case likelihood ratios, stored as natural logs.

    ``log_unconstrained`` places every differing bit at the least private
    position; ``log_paired`` (UER only) is the half-even/half-odd pairing in
    which each differing position contributes its parity's pair identity.
    """

    log_unconstrained: float
    log_paired: Optional[float]

    @property
    def unconstrained(self) -> float:
        return _safe_exp(self.log_unconstrained)

    @property
    def paired(self) -> Optional[float]:
        return None if self.log_paired is None else _safe_exp(self.log_paired)


def _safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def worst_case_ratio_analytic(
    probs: ProtocolProbs, sensitivity: int, length: Optional[int] = None
) -> RatioBounds:
    """Closed-form worst-case ratio ``Pr[B|v1] / Pr[B|v2]``.

    With ``length`` given, the differing bits are restricted to the positions
    of a string of that length (so both parities are limited to about half
    the bits); otherwise any number of positions of either parity is assumed
    available.
    """
    s = _check_sensitivity(sensitivity)
    even = _log_max_factor(probs.keep_one_even, probs.keep_zero)
    odd = _log_max_factor(probs.keep_one_odd, probs.keep_zero)
    if length is None:
        log_unc = s * max(even, odd)
    else:
        if s > length:
            raise ValueError("sensitivity cannot exceed the string length")
        per_pos = np.where(np.arange(length) % 2 == 0, even, odd)
        log_unc = float(np.sort(per_pos)[::-1][:s].sum())

    log_paired = None
    if probs.protocol_kind is ProtocolKind.UER:
        if s % 2:
            warnings.warn("paired even/odd bound is undefined for odd sensitivity", stacklevel=2)
        else:
            log_paired = (s // 2) * (math.log(probs.pair_identity(0)) + math.log(probs.pair_identity(1)))
    return RatioBounds(log_unc, log_paired)


def brute_force_ldp_audit(probs: ProtocolProbs, length: int, exact: bool = False) -> float:
    """Exhaustive ``max_{v1, v2, b} Pr[b|v1] / Pr[b|v2]`` over ``{0,1}^length``.

    Every input string and every output string is enumerated; log-likelihoods
    are summed per position.  ``exact=True`` repeats the enumeration in
    256-bit floating point (``length <= 6``).
    """
    if int(length) != length or length < 1:
        raise ValueError(f"length must be a positive integer, got {length}")
    if length > MAX_AUDIT_LENGTH:
        raise ValueError(f"refusing to enumerate 2^{length} strings (max length {MAX_AUDIT_LENGTH})")
    if exact:
        return _brute_force_mp(probs, length)

    patterns = np.array(list(itertools.product((0, 1), repeat=length)), dtype=np.intp)
    log_pr = np.zeros((patterns.shape[0], patterns.shape[0]))
    for i in range(length):
        keep_one = probs.keep_one_even if i % 2 == 0 else probs.keep_one_odd
        table = _log_bit_table(keep_one, probs.keep_zero)
        col = patterns[:, i]
        log_pr += table[col[:, None], col[None, :]]
    hi = log_pr.max(axis=1)
    possible = hi > -np.inf
    spread = hi[possible] - log_pr.min(axis=1)[possible]
    return _safe_exp(float(spread.max()))


def _brute_force_mp(probs: ProtocolProbs, length: int) -> float:
    import mpmath

    if length > MAX_EXACT_AUDIT_LENGTH:
        raise ValueError(f"exact audit supports length <= {MAX_EXACT_AUDIT_LENGTH}")
    with mpmath.workprec(256):
        tables = []
        for i in range(length):
            k1 = mpmath.mpf(probs.keep_one_even if i % 2 == 0 else probs.keep_one_odd)
            k0 = mpmath.mpf(probs.keep_zero)
            tables.append(((k0, 1 - k1), (1 - k0, k1)))
        patterns = list(itertools.product((0, 1), repeat=length))
        best = mpmath.mpf(0)
        for b in patterns:
            column = []
            for v in patterns:
                pr = mpmath.mpf(1)
                for i in range(length):
                    pr *= tables[i][b[i]][v[i]]
                column.append(pr)
            hi, lo = max(column), min(column)
            if hi == 0:
                continue
            if lo == 0:
                return math.inf
            best = max(best, hi / lo)
        return float(best)
