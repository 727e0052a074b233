"""Evaluation harness: PUF uniqueness table, roundtrip integrity, timing."""
from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import shutil
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .envelope import load_envelope, load_wrapped_key, seal_file, unseal_file
from .errors import HsmError
from .keybits import Pin
from .protocol import Auth, Decrypt, DeviceState, Enroll, HostState, Transcript, pipe_pair, run_session
from .puf import CrpRow, CrpTable, PufInstance, Verdict, evaluate, paper_uniqueness, to_bits
from .rsa import RsaKeyPair

TIMING_HEADER = ["file_size", "process", "real_s", "user_s", "sys_s", "repeats"]
MiB = 1 << 20
DEFAULT_SIZES = (1 * MiB, 16 * MiB, 256 * MiB)


class InsufficientSpaceError(HsmError, OSError):
    pass


@dataclass(frozen=True)
class TimingRow:
    file_size_bytes: int
    process: str
    real_s: float
    user_s: Optional[float]
    sys_s: Optional[float]
    repeats: int


def _cpu_times() -> Optional[Tuple[float, float]]:
    try:
        t = os.times()
    except (AttributeError, OSError):
        return None
    return t.user, t.system


def _timed(fn) -> Tuple[float, Optional[float], Optional[float]]:
    cpu0 = _cpu_times()
    t0 = time.perf_counter()
    fn()
    real = time.perf_counter() - t0
    cpu1 = _cpu_times()
    if cpu0 is None or cpu1 is None:
        return real, None, None
    return real, cpu1[0] - cpu0[0], cpu1[1] - cpu0[1]


def _write_random(path: Path, size: int, rng: np.random.Generator) -> None:
    with open(path, "wb") as fh:
        left = size
        while left:
            n = min(left, 16 * MiB)
            fh.write(rng.bytes(n))
            left -= n


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    if any(v is None for v in values):
        return None
    return sum(values) / len(values)


def run_timing(
    sizes: Iterable[int],
    repeats: int,
    keypair: RsaKeyPair,
    workdir: Union[str, os.PathLike, None] = None,
    rng_seed: int = 0,
    processes: Sequence[str] = ("Encrypt", "Decrypt"),
) -> List[TimingRow]:
    """Time file seal (Encrypt) and unseal (Decrypt) for each size, averaged over ``repeats``.

    Every repeat seals freshly generated random data; generation is not timed.
    """
    sizes = [int(s) for s in sizes]
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if any(s < 0 for s in sizes):
        raise ValueError("sizes must be non-negative")
    rng = np.random.default_rng(rng_seed)
    with tempfile.TemporaryDirectory(dir=workdir, prefix="pufhsm-bench-") as tmp:
        tmp = Path(tmp)
        need = 3 * max(sizes, default=0) + MiB
        free = shutil.disk_usage(tmp).free
        if free < need:
            raise InsufficientSpaceError(f"timing needs {need} bytes of scratch space, {free} free in {tmp}")
        plain, env, wkey, out = (tmp / n for n in ("plain.bin", "data.env.bin", "data.wkey.bin", "out.bin"))
        rows = []
        for size in sizes:
            samples = {p: [] for p in processes}
            for i in range(repeats):
                _write_random(plain, size, rng)
                seed = int(rng.integers(0, 2**63))
                enc = _timed(lambda: seal_file(plain, env, wkey, keypair.public, seed))
                dec = _timed(lambda: unseal_file(env, wkey, keypair.private, out))
                if "Encrypt" in samples:
                    samples["Encrypt"].append(enc)
                if "Decrypt" in samples:
                    samples["Decrypt"].append(dec)
            for process in processes:
                real, user, sys_ = zip(*samples[process])
                rows.append(TimingRow(size, process, sum(real) / repeats, _mean(user), _mean(sys_), repeats))
        return rows


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else f"{v:.6f}"


def timing_csv(rows: Sequence[TimingRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_HEADER)
    for r in rows:
        w.writerow([r.file_size_bytes, r.process, _fmt(r.real_s), _fmt(r.user_s), _fmt(r.sys_s), r.repeats])
    return buf.getvalue()


def read_timing_csv(text: str) -> List[TimingRow]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != TIMING_HEADER:
        raise ValueError(f"timing CSV header must be {','.join(TIMING_HEADER)}")
    opt = lambda s: float(s) if s else None  # noqa: E731
    return [TimingRow(int(r["file_size"]), r["process"], float(r["real_s"]), opt(r["user_s"]),
                      opt(r["sys_s"]), int(r["repeats"])) for r in reader]


def timing_is_monotone(rows: Sequence[TimingRow], process: str = "Encrypt") -> bool:
    real = [r.real_s for r in sorted((r for r in rows if r.process == process), key=lambda r: r.file_size_bytes)]
    return all(a <= b for a, b in zip(real, real[1:]))


# --- integrity ----------------------------------------------------------------

@dataclass(frozen=True)
class IntegrityReport:
    size_before: int
    size_after: int
    byte_identical: bool
    digest_match: bool

    def as_row(self) -> dict:
        return {"size_before": self.size_before, "size_after": self.size_after,
                "byte_identical": self.byte_identical, "digest_match": self.digest_match}


def verify_integrity(original, roundtripped, chunk: int = MiB) -> IntegrityReport:
    """Stream-compare two files; never holds either one in memory."""
    size_a, size_b = os.path.getsize(original), os.path.getsize(roundtripped)
    ha, hb = hashlib.sha256(), hashlib.sha256()
    identical = size_a == size_b
    with open(original, "rb") as fa, open(roundtripped, "rb") as fb:
        while True:
            a, b = fa.read(chunk), fb.read(chunk)
            if not a and not b:
                break
            identical = identical and a == b
            ha.update(a)
            hb.update(b)
    return IntegrityReport(size_a, size_b, identical, ha.digest() == hb.digest())


def integrity_csv(report: IntegrityReport) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(report.as_row()), lineterminator="\n")
    w.writeheader()
    w.writerow(report.as_row())
    return buf.getvalue()


def roundtrip_through_hsm(
    src, workdir, keypair: RsaKeyPair, key_file: bytes, pin: Pin, device: DeviceState,
    rng_seed: int = 0,
) -> Tuple[Path, Transcript]:
    """Seal ``src``, enroll and authenticate ``key_file`` on ``device``, then decrypt.

    Returns the path of the recovered file (inside ``workdir``) and the session transcript.
    """
    workdir = Path(workdir)
    env_path, wkey_path = workdir / "payload.env.bin", workdir / "payload.wkey.bin"
    seal_file(src, env_path, wkey_path, keypair.public, rng_seed)
    host = HostState(load_envelope(env_path), load_wrapped_key(wkey_path), keypair.private)
    transcript = run_session(device, host, pipe_pair(), [Enroll(key_file, pin), Auth(key_file, pin), Decrypt()])
    out = workdir / "recovered.bin"
    if transcript.plaintext is not None:
        out.write_bytes(transcript.plaintext)
    return out, transcript


# --- uniqueness -----------------------------------------------------------------

@dataclass(frozen=True)
class UniquenessReport:
    total_trials: int
    distinct_per_experiment: List[int]
    ratio: float
    per_row_verdicts: List[Verdict]
    table: CrpTable


def run_uniqueness(
    puf: PufInstance,
    challenges: Sequence,
    experiments: int,
    enrolled_response=None,
) -> UniquenessReport:
    """Evaluate every challenge once per experiment and score the result.

    A row is accepted when its response equals ``enrolled_response``
    (default: the response to the first challenge).
    """
    if not len(challenges):
        raise ValueError("need at least one challenge")
    if experiments < 1:
        raise ValueError("experiments must be >= 1")
    chs = [to_bits(c) for c in challenges]
    enrolled = to_bits(enrolled_response) if enrolled_response is not None else evaluate(puf, chs[0])
    rows = []
    for exp in range(1, experiments + 1):
        for c in chs:
            r = evaluate(puf, c)
            rows.append(CrpRow(exp, c, r, Verdict.ACCEPTED if r == enrolled else Verdict.REJECTED))
    table = CrpTable(tuple(rows))
    distinct = [len({r.response for r in rs}) for rs in table.experiments().values()]
    return UniquenessReport(len(rows), distinct, paper_uniqueness(table), [r.verdict for r in rows], table)


def whole_percent(ratio: float) -> int:
    """Percentage truncated to an integer, the way the 72% figure is quoted (16/22 -> 72)."""
    return math.floor(ratio * 100 + 1e-9)


def uniqueness_summary(report: UniquenessReport) -> str:
    return (f"trials={report.total_trials} distinct={'+'.join(map(str, report.distinct_per_experiment))} "
            f"uniqueness={report.ratio:.4f} ({whole_percent(report.ratio)}%)")

