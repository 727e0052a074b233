"""Arbiter PUF simulation and challenge-response bookkeeping.

Each response bit comes from its own arbiter chain, modelled as a linear
threshold function over the parity features of the challenge::

    phi_i(c) = prod_{j >= i} (1 - 2 c_j),   phi_n = 1
    bit      = [w . phi(c) > 0]

A table-backed instance replays recorded challenge/response pairs instead.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from itertools import combinations
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import UnknownChallengeError, UnsupportedOperationError

DEFAULT_BITS = 16
DEFAULT_STAGES = 16
CSV_HEADER = ["experiment", "challenge", "response", "verdict"]

Bits = Tuple[int, ...]


def to_bits(value: Union[str, Sequence[int], np.ndarray]) -> Bits:
    """Normalise a ``"0101"`` string or an int sequence into a tuple of 0/1."""
    if isinstance(value, str):
        value = value.replace(" ", "")
        if not value or set(value) - {"0", "1"}:
            raise ValueError(f"not a bit string: {value!r}")
        return tuple(int(ch) for ch in value)
    bits = tuple(int(b) for b in value)
    if not bits or any(b not in (0, 1) for b in bits):
        raise ValueError("bit vectors must be non-empty and contain only 0 and 1")
    return bits


def bits_str(bits: Iterable[int]) -> str:
    return "".join(str(int(b)) for b in bits)


def hamming(a: Sequence[int], b: Sequence[int]) -> int:
    if len(a) != len(b):
        raise ValueError("hamming distance needs equal widths")
    return sum(x != y for x, y in zip(a, b))


def parity_features(challenges: np.ndarray) -> np.ndarray:
    """Map ``(N, n)`` 0/1 challenges to ``(N, n+1)`` +-1 parity features."""
    c = np.atleast_2d(np.asarray(challenges, dtype=np.int8))
    signs = 1 - 2 * c
    suffix = np.cumprod(signs[:, ::-1], axis=1)[:, ::-1]
    return np.hstack([suffix, np.ones((c.shape[0], 1), dtype=np.int8)]).astype(np.float64)


class Verdict(str, Enum):
    ACCEPTED = "V"
    REJECTED = "x"

    @classmethod
    def parse(cls, text: str) -> "Verdict":
        t = text.strip()
        if t in ("V", "v"):
            return cls.ACCEPTED
        if t in ("x", "X"):
            return cls.REJECTED
        raise ValueError(f"verdict must be V or x, got {text!r}")


@dataclass(frozen=True)
class CrpRow:
    experiment: int
    challenge: Bits
    response: Bits
    verdict: Verdict


@dataclass(frozen=True)
class CrpTable:
    rows: Tuple[CrpRow, ...]

    def __post_init__(self):
        rows = tuple(self.rows)
        object.__setattr__(self, "rows", rows)
        widths = {len(r.challenge) for r in rows} | {len(r.response) for r in rows}
        if len(widths) > 1:
            raise ValueError(f"all challenges and responses must share one width, saw {sorted(widths)}")
        keys = [(r.experiment, r.challenge) for r in rows]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (experiment, challenge) pair in CRP table")

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def width(self) -> int:
        if not self.rows:
            raise ValueError("empty table has no width")
        return len(self.rows[0].challenge)

    def experiments(self) -> Dict[int, List[CrpRow]]:
        out: Dict[int, List[CrpRow]] = {}
        for row in self.rows:
            out.setdefault(row.experiment, []).append(row)
        return out

    def lookup(self) -> Dict[Bits, Bits]:
        """Challenge -> response map; conflicting repeats are an error."""
        out: Dict[Bits, Bits] = {}
        for row in self.rows:
            prev = out.setdefault(row.challenge, row.response)
            if prev != row.response:
                raise ValueError(f"challenge {bits_str(row.challenge)} maps to two different responses")
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.experiment, bits_str(r.challenge), bits_str(r.response), r.verdict.value])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CrpTable":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise ValueError(f"CRP CSV header must be {','.join(CSV_HEADER)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise ValueError(f"line {lineno}: expected 4 fields, got {len(rec)}")
            rows.append(CrpRow(int(rec[0]), to_bits(rec[1]), to_bits(rec[2]), Verdict.parse(rec[3])))
        return cls(tuple(rows))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CrpTable":
        return cls.from_csv(Path(path).read_text())

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_csv())


def load_table3() -> CrpTable:
    """The bundled 22-row fixture (two identical 11-challenge experiments)."""
    return CrpTable.from_csv(resources.files("pufhsm.data").joinpath("table3.csv").read_text())


@dataclass(frozen=True)
class PufInstance:
    """A simulated arbiter PUF (``weights`` set) or a table-backed replay (``table`` set)."""

    weights: Optional[np.ndarray] = None
    seed: Optional[int] = None
    table: Optional[CrpTable] = None
    _lookup: Dict[Bits, Bits] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if (self.weights is None) == (self.table is None):
            raise ValueError("a PUF is either simulated (weights) or table-backed (table)")
        if self.weights is not None:
            w = np.array(self.weights, dtype=np.float64)
            if w.ndim != 2 or w.shape[1] < 2:
                raise ValueError("weights must have shape (n_bits, n_stages + 1)")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
        else:
            if not len(self.table):
                raise ValueError("table-backed PUF needs a non-empty table")
            object.__setattr__(self, "_lookup", self.table.lookup())

    @property
    def simulated(self) -> bool:
        return self.weights is not None

    @property
    def n_bits(self) -> int:
        return self.weights.shape[0] if self.simulated else self.table.width

    @property
    def n_stages(self) -> int:
        """Challenge width."""
        return self.weights.shape[1] - 1 if self.simulated else self.table.width

    @classmethod
    def from_table(cls, table: CrpTable) -> "PufInstance":
        return cls(table=table)


def new_simulated_puf(seed: int, n_stages: int = DEFAULT_STAGES, n_bits: int = DEFAULT_BITS) -> PufInstance:
    if n_stages < 1 or n_bits < 1:
        raise ValueError(f"n_stages and n_bits must be >= 1 (got {n_stages}, {n_bits})")
    rng = np.random.default_rng(seed)
    return PufInstance(weights=rng.standard_normal((n_bits, n_stages + 1)), seed=seed)


def _check_width(puf: PufInstance, challenge: Sequence[int]) -> Bits:
    c = to_bits(challenge)
    if len(c) != puf.n_stages:
        raise ValueError(f"challenge width {len(c)} does not match PUF width {puf.n_stages}")
    return c


def delay_sums(puf: PufInstance, challenges: np.ndarray) -> np.ndarray:
    """Pre-threshold delay differences, shape ``(N, n_bits)``."""
    return parity_features(challenges) @ puf.weights.T


def eval_many(puf: PufInstance, challenges: np.ndarray) -> np.ndarray:
    """Vectorised :func:`eval` over an ``(N, n_stages)`` 0/1 array."""
    challenges = np.atleast_2d(np.asarray(challenges))
    if challenges.shape[1] != puf.n_stages:
        raise ValueError(f"challenge width {challenges.shape[1]} does not match PUF width {puf.n_stages}")
    if puf.simulated:
        return (delay_sums(puf, challenges) > 0).astype(np.uint8)
    return np.array([evaluate(puf, c) for c in challenges], dtype=np.uint8)


def evaluate(puf: PufInstance, challenge: Sequence[int]) -> Bits:
    """Response of ``puf`` to ``challenge``.  Ties (sum exactly 0) give bit 0."""
    c = _check_width(puf, challenge)
    if puf.simulated:
        return tuple(int(b) for b in eval_many(puf, np.array([c]))[0])
    try:
        return puf._lookup[c]
    except KeyError:
        raise UnknownChallengeError(f"challenge {bits_str(c)} is not in the CRP table") from None


eval = evaluate  # noqa: A001 - shadows the builtin inside this module only


def eval_noisy(puf: PufInstance, challenge: Sequence[int], noise_sigma: float, rng_seed: int) -> Bits:
    """Evaluate with Gaussian noise of std ``noise_sigma`` added to each delay sum."""
    if not puf.simulated:
        raise UnsupportedOperationError("noisy evaluation needs a simulated PUF")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    c = _check_width(puf, challenge)
    sums = delay_sums(puf, np.array([c]))[0]
    if noise_sigma > 0:
        sums = sums + np.random.default_rng(rng_seed).normal(0.0, noise_sigma, sums.shape)
    return tuple(int(b) for b in (sums > 0))


def paper_uniqueness(table: CrpTable) -> float:
    """Distinct responses per experiment, summed over experiments, over total trials."""
    if not len(table):
        raise ValueError("uniqueness of an empty table is undefined")
    distinct = sum(len({r.response for r in rows}) for rows in table.experiments().values())
    return distinct / len(table)


def _challenge_array(challenges: Sequence[Sequence[int]]) -> np.ndarray:
    arr = np.array([to_bits(c) for c in challenges], dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError("challenges must share one width")
    return arr


def inter_instance_uniqueness(population: Sequence[PufInstance], challenges: Sequence[Sequence[int]]) -> float:
    """Mean fractional Hamming distance over all instance pairs and challenges."""
    if len(population) < 2:
        raise ValueError("inter-instance uniqueness needs at least 2 instances")
    if not len(challenges):
        raise ValueError("need at least one challenge")
    widths = {(p.n_stages, p.n_bits) for p in population}
    if len(widths) != 1:
        raise ValueError("all instances must share one width")
    arr = _challenge_array(challenges)
    responses = [eval_many(p, arr) for p in population]
    n_bits = population[0].n_bits
    total = 0.0
    pairs = 0
    for a, b in combinations(responses, 2):
        total += np.count_nonzero(a != b) / (arr.shape[0] * n_bits)
        pairs += 1
    return total / pairs


def reliability(
    puf: PufInstance,
    challenges: Sequence[Sequence[int]],
    repeats: int,
    noise_sigma: float,
    rng_seed: int = 0,
) -> float:
    """Mean fractional intra-distance between the noise-free response and noisy repeats."""
    if repeats < 2:
        raise ValueError("reliability needs repeats >= 2")
    if not puf.simulated:
        raise UnsupportedOperationError("reliability needs a simulated PUF")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if not len(challenges):
        raise ValueError("need at least one challenge")
    arr = _challenge_array(challenges)
    if arr.shape[1] != puf.n_stages:
        raise ValueError(f"challenge width {arr.shape[1]} does not match PUF width {puf.n_stages}")
    sums = delay_sums(puf, arr)
    reference = sums > 0
    if noise_sigma == 0:
        return 0.0
    rng = np.random.default_rng(rng_seed)
    flips = 0
    for _ in range(repeats):
        noisy = sums + rng.normal(0.0, noise_sigma, sums.shape)
        flips += np.count_nonzero((noisy > 0) != reference)
    return flips / (repeats * sums.size)


@dataclass(frozen=True)
class PufStats:
    paper_uniqueness: float
    inter_instance_hd: float
    reliability_intra_hd: float

    def __post_init__(self):
        for name in ("paper_uniqueness", "inter_instance_hd", "reliability_intra_hd"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def random_challenges(count: int, width: int = DEFAULT_STAGES, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2, size=(count, width), dtype=np.uint8)
