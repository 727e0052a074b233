"""Command-line front end: keys, envelopes, the simulated authenticator, benchmarks."""
from __future__ import annotations

import argparse
import getpass
import json
import logging
import multiprocessing
import os
import re
import secrets
import socket
import sys
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import bench, envelope, plotting, puf
from .errors import CorruptionError, FormatError, HsmError, UnknownChallengeError, WrongKeyError
from .keybits import Pin, token_for
from .protocol import (Auth, Decrypt, DeviceState, Enroll, HostState, Indicator, MessageType, SocketEnd,
                       pipe_pair, run_session, serve_device)
from .rsa import RsaKeyPair, load_keypair, parse_key_file, private_key_json, public_key_json, rsa_keygen

log = logging.getLogger("pufhsm")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2

_SIZE_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([kmg]i?b?|b)?\s*$", re.I)
_UNITS = {"": 1, "b": 1, "k": 1 << 10, "m": 1 << 20, "g": 1 << 30}


def parse_size(text: str) -> int:
    """``"16MiB"`` / ``"1g"`` / ``"4096"`` -> bytes (binary units)."""
    m = _SIZE_RE.match(text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad size {text!r}")
    unit = (m.group(2) or "").lower()[:1]
    return int(float(m.group(1)) * _UNITS[unit])


def parse_sizes(text: str) -> List[int]:
    return [parse_size(t) for t in text.split(",") if t.strip()]


class UsageError(Exception):
    pass


# --- helpers ------------------------------------------------------------------

def read_pin(args) -> Pin:
    if args.pin_file:
        raw = Path(args.pin_file).read_text().strip()
    else:
        raw = getpass.getpass("PIN: ")
    try:
        return Pin(raw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_private(path) -> RsaKeyPair:
    try:
        return load_keypair(Path(path).read_text())
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _new_device(seed: int) -> dict:
    return {"puf_seed": seed, "n_stages": puf.DEFAULT_STAGES, "n_bits": puf.DEFAULT_BITS, "enrolled": []}


def load_device(path, create_seed: Optional[int] = None) -> DeviceState:
    p = Path(path)
    if not p.exists():
        if create_seed is None:
            raise FormatError(f"device file {p} does not exist")
        doc = _new_device(create_seed)
    else:
        try:
            doc = json.loads(p.read_text())
        except ValueError:
            raise FormatError(f"{p}: not a device file") from None
    inst = puf.new_simulated_puf(doc["puf_seed"], doc["n_stages"], doc["n_bits"])
    return DeviceState(inst, frozenset(bytes.fromhex(t) for t in doc["enrolled"]))


def save_device(path, state: DeviceState) -> None:
    doc = {"puf_seed": state.puf.seed, "n_stages": state.puf.n_stages, "n_bits": state.puf.n_bits,
           "enrolled": sorted(t.hex() for t in state.enrolled)}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def _figure_path(args, default_out: Path) -> Optional[Path]:
    if getattr(args, "no_figure", False):
        return None
    if getattr(args, "figure", None):
        return Path(args.figure)
    return default_out.with_suffix(".png")


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
        print(f"wrote {out}")
    else:
        sys.stdout.write(text)


# --- subcommands ------------------------------------------------------------------

def cmd_keygen(args) -> int:
    pair = rsa_keygen(args.bits, args.seed if args.seed is not None else secrets.randbits(64))
    pub, priv = Path(args.out + ".pub"), Path(args.out + ".priv")
    pub.write_text(public_key_json(pair))
    priv.write_text(private_key_json(pair))
    os.chmod(priv, 0o600)
    print(f"wrote {pub} and {priv} ({pair.modulus_bits}-bit modulus)")
    return EXIT_OK


def cmd_seal(args) -> int:
    try:
        doc = parse_key_file(Path(args.pub).read_text())
    except ValueError as exc:
        raise FormatError(f"{args.pub}: {exc}") from None
    seed = args.seed if args.seed is not None else secrets.randbits(64)
    envelope.seal_file(args.input, args.out, args.wrapped, (doc["e"], doc["n"]), seed)
    print(f"sealed {os.path.getsize(args.input)} bytes -> {args.out}, key -> {args.wrapped}")
    return EXIT_OK


def cmd_unseal(args) -> int:
    pair = _load_private(args.priv)
    envelope.unseal_file(args.env, args.wrapped, pair.private, args.out)
    print(f"recovered {os.path.getsize(args.out)} bytes -> {args.out}")
    return EXIT_OK


def cmd_enroll(args) -> int:
    state = load_device(args.device, create_seed=args.puf_seed)
    pin = read_pin(args)
    token = token_for(state.puf, Path(args.key).read_bytes(), pin).to_bytes()
    state = DeviceState(state.puf, state.enrolled | {token})
    save_device(args.device, state)
    print(f"enrolled credential ({len(state.enrolled)} registered)")
    return EXIT_OK


def _report_auth(ok: bool) -> int:
    if ok:
        print("GREEN: authentication succeeded")
        return EXIT_OK
    print("RED: authentication failed")
    return EXIT_DOMAIN


def cmd_auth(args) -> int:
    state = load_device(args.device)
    pin = read_pin(args)
    try:
        token = token_for(state.puf, Path(args.key).read_bytes(), pin).to_bytes()
    except UnknownChallengeError:
        return _report_auth(False)
    return _report_auth(token in state.enrolled)


def _device_process(addr, device_path, puf_seed, ready) -> None:
    state = load_device(device_path, create_seed=puf_seed) if device_path else \
        DeviceState(puf.new_simulated_puf(puf_seed))
    with socket.create_server(addr) as srv:
        ready.set()
        conn, _ = srv.accept()
        with conn:
            state = serve_device(state, SocketEnd(conn))
    if device_path:
        save_device(device_path, state)


def _parse_addr(text: str):
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise UsageError(f"--tcp expects HOST:PORT, got {text!r}")
    return host, int(port)


def cmd_session(args) -> int:
    if not (args.enroll or args.auth or args.decrypt):
        raise UsageError("session needs at least one of --enroll, --auth, --decrypt")
    pair = _load_private(args.key)
    key_bytes = Path(args.key).read_bytes()
    pin = read_pin(args)
    host = HostState(envelope.load_envelope(args.env), envelope.load_wrapped_key(args.wrapped), pair.private)
    script = ([Enroll(key_bytes, pin)] if args.enroll else []) + \
             ([Auth(key_bytes, pin)] if args.auth else []) + ([Decrypt()] if args.decrypt else [])

    if args.tcp:
        addr = _parse_addr(args.tcp)
        ctx = multiprocessing.get_context("spawn")
        ready = ctx.Event()
        proc = ctx.Process(target=_device_process, args=(addr, args.device, args.puf_seed, ready))
        proc.start()
        try:
            if not ready.wait(30):
                raise HsmError("device process did not start")
            sock = socket.create_connection(addr, timeout=30)
            end = SocketEnd(sock)
            transcript = run_session(None, host, (end, end), script)
            end.close()
            proc.join(30)
        finally:
            if proc.is_alive():
                proc.terminate()
        indicator = None
    else:
        device = load_device(args.device, create_seed=args.puf_seed) if args.device else \
            DeviceState(puf.new_simulated_puf(args.puf_seed))
        transcript = run_session(device, host, pipe_pair(), script)
        if args.device:
            save_device(args.device, transcript.device)
        indicator = transcript.device.indicator

    for e in transcript.events:
        if e.kind == "frame":
            log.info("%s %s", e.detail[0], MessageType(e.detail[1]).name)
    replies = transcript.frames("device->host")
    if args.auth:
        if indicator is Indicator.GREEN or (indicator is None and MessageType.AUTH_OK in replies[-1:]):
            print("GREEN: authentication succeeded")
        else:
            print("RED: authentication failed")
    errors = [e for e in transcript.events if e.kind == "error"]
    if transcript.plaintext is not None:
        if args.out:
            Path(args.out).write_bytes(transcript.plaintext)
            print(f"decrypted {len(transcript.plaintext)} bytes -> {args.out}")
        else:
            print(f"decrypted {len(transcript.plaintext)} bytes")
        return EXIT_OK
    if args.decrypt:
        detail = errors[-1].detail[-1] if errors else "access denied"
        print(f"decryption refused: {detail.lower().replace('_', ' ')}")
        return EXIT_DOMAIN
    if errors:
        print(f"session error: {errors[-1].detail[-1]}")
        return EXIT_DOMAIN
    if args.auth and (indicator is Indicator.RED or MessageType.AUTH_FAIL in replies[-1:]):
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_bench_time(args) -> int:
    pair = _load_private(args.key) if args.key else rsa_keygen(args.bits, args.seed)
    rows = bench.run_timing(args.sizes, args.repeats, pair, workdir=args.workdir, rng_seed=args.seed)
    _emit(bench.timing_csv(rows), args.out)
    fig = _figure_path(args, Path(args.out or "timing.csv"))
    if fig:
        plotting.plot_timing(rows, fig)
        print(f"wrote {fig}")
    if args.repeats >= 5 and not bench.timing_is_monotone(rows):
        print("check failed: mean encrypt time is not non-decreasing in size", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_bench_uniq(args) -> int:
    if args.simulated:
        inst = puf.new_simulated_puf(args.seed)
        challenges = [tuple(c) for c in puf.random_challenges(args.challenges, inst.n_stages, args.seed)]
    else:
        table = puf.CrpTable.load(args.table) if args.table else puf.load_table3()
        inst = puf.PufInstance.from_table(table)
        challenges = list(dict.fromkeys(r.challenge for r in table.rows))
    report = bench.run_uniqueness(inst, challenges, args.experiments)
    _emit(report.table.to_csv(), args.out)
    print(bench.uniqueness_summary(report))
    fig = _figure_path(args, Path(args.out or "uniqueness.csv"))
    if fig:
        plotting.plot_uniqueness(report, fig)
        print(f"wrote {fig}")
    return EXIT_OK


def cmd_bench_integrity(args) -> int:
    pair = _load_private(args.key) if args.key else rsa_keygen(args.bits, args.seed)
    key_bytes = private_key_json(pair).encode()
    pin = read_pin(args) if args.pin_file else Pin("0000")
    device = DeviceState(puf.new_simulated_puf(args.puf_seed))
    with tempfile.TemporaryDirectory(dir=args.workdir, prefix="pufhsm-integrity-") as tmp:
        src = Path(args.input) if args.input else Path(tmp) / "original.bin"
        if not args.input:
            size = parse_size("500MiB") if args.full else args.size
            with open(src, "wb") as fh:
                fh.write(np.random.default_rng(args.seed).bytes(size))
        out, transcript = bench.roundtrip_through_hsm(src, tmp, pair, key_bytes, pin, device, args.seed)
        if transcript.plaintext is None:
            print("decryption refused: integrity roundtrip did not complete")
            return EXIT_DOMAIN
        report = bench.verify_integrity(src, out)
    _emit(bench.integrity_csv(report), args.out)
    ok = report.byte_identical and report.digest_match and report.size_before == report.size_after
    print(f"integrity {'OK' if ok else 'FAILED'}: {report.size_before} -> {report.size_after} bytes")
    return EXIT_OK if ok else EXIT_DOMAIN


def cmd_puf_stats(args) -> int:
    pop = [puf.new_simulated_puf(args.seed + i) for i in range(args.instances)]
    ch = puf.random_challenges(args.challenges, pop[0].n_stages, args.seed)
    inter = puf.inter_instance_uniqueness(pop, ch)
    rel = puf.reliability(pop[0], ch, args.repeats, args.noise, args.seed)
    table_ratio = puf.paper_uniqueness(puf.load_table3())
    stats = puf.PufStats(table_ratio, inter, rel)
    text = ("metric,value\n"
            f"paper_uniqueness,{stats.paper_uniqueness:.6f}\n"
            f"inter_instance_hd,{stats.inter_instance_hd:.6f}\n"
            f"reliability_intra_hd,{stats.reliability_intra_hd:.6f}\n")
    _emit(text, args.out)
    fig = _figure_path(args, Path(args.out or "puf-stats.csv"))
    if fig:
        plotting.plot_hd_histogram([puf.eval_many(p, ch) for p in pop], fig)
        print(f"wrote {fig}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def _add_pin(p) -> None:
    p.add_argument("--pin-file", help="file holding the PIN (prompted without echo if omitted)")


def _add_report(p) -> None:
    p.add_argument("--out", help="CSV report path (stdout if omitted)")
    p.add_argument("--figure", help="figure path (default: next to --out, .png)")
    p.add_argument("--no-figure", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pufhsm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("keygen", help="generate an RSA key pair (<out>.pub, <out>.priv)")
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("seal", help="encrypt a file into an envelope and wrapped key")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--pub", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--wrapped", required=True)
    p.add_argument("--seed", type=int, help="deterministic seed (default: OS entropy)")
    p.set_defaults(func=cmd_seal)

    p = sub.add_parser("unseal", help="decrypt an envelope directly with a private key")
    p.add_argument("--env", required=True)
    p.add_argument("--wrapped", required=True)
    p.add_argument("--priv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_unseal)

    for name, func, helptext in (("enroll", cmd_enroll, "register a key+PIN on the device"),
                                 ("auth", cmd_auth, "check a key+PIN against the device")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--device", required=True, help="device state file (JSON)")
        p.add_argument("--key", required=True, help="private key file presented to the PUF")
        p.add_argument("--puf-seed", type=int, default=0, help="PUF seed when creating a new device")
        _add_pin(p)
        p.set_defaults(func=func)

    p = sub.add_parser("session", help="run enroll/auth/decrypt over the framed link")
    p.add_argument("--env", required=True)
    p.add_argument("--wrapped", required=True)
    p.add_argument("--key", required=True, help="private key file (credential and unwrapping key)")
    p.add_argument("--enroll", action="store_true")
    p.add_argument("--auth", action="store_true")
    p.add_argument("--decrypt", action="store_true")
    p.add_argument("--out", help="where to write the recovered plaintext")
    p.add_argument("--device", help="device state file to load and update")
    p.add_argument("--puf-seed", type=int, default=0)
    p.add_argument("--tcp", metavar="HOST:PORT", help="run the device in a separate process over TCP")
    _add_pin(p)
    p.set_defaults(func=cmd_session)

    p = sub.add_parser("bench-time", help="time seal/unseal over a size ladder")
    p.add_argument("--sizes", type=parse_sizes, default=list(bench.DEFAULT_SIZES))
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--key", help="private key file (default: generate one)")
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workdir")
    _add_report(p)
    p.set_defaults(func=cmd_bench_time)

    p = sub.add_parser("bench-uniq", help="repeat-challenge uniqueness experiment")
    p.add_argument("--table", help="CRP CSV (default: the bundled 22-row fixture)")
    p.add_argument("--simulated", action="store_true", help="use a simulated PUF instead of a table")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--challenges", type=int, default=11)
    p.add_argument("--experiments", type=int, default=2)
    _add_report(p)
    p.set_defaults(func=cmd_bench_uniq)

    p = sub.add_parser("bench-integrity", help="seal -> enroll -> auth -> decrypt, then compare files")
    p.add_argument("--in", dest="input", help="file to roundtrip (default: random data)")
    p.add_argument("--size", type=parse_size, default=parse_size("64MiB"))
    p.add_argument("--full", action="store_true", help="use a 500 MiB random file")
    p.add_argument("--key", help="private key file (default: generate one)")
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--puf-seed", type=int, default=0)
    p.add_argument("--workdir")
    p.add_argument("--out", help="CSV report path (stdout if omitted)")
    _add_pin(p)
    p.set_defaults(func=cmd_bench_integrity)

    p = sub.add_parser("puf-stats", help="inter/intra Hamming-distance statistics")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--challenges", type=int, default=1000)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    _add_report(p)
    p.set_defaults(func=cmd_puf_stats)
    return ap


_ERROR_NAMES = ((WrongKeyError, "wrong key"), (CorruptionError, "corruption"), (FormatError, "format error"))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HsmError as exc:
        label = next((name for cls, name in _ERROR_NAMES if isinstance(exc, cls)), type(exc).__name__)
        print(f"error: {label}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
