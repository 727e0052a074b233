import json
import socket

import pytest

from pufhsm.cli import main, parse_size


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "pin").write_text("8642\n")
    (tmp_path / "photo.bin").write_bytes(bytes(range(256)) * 400)
    assert main(["keygen", "--bits", "512", "--seed", "7", "--out", "k"]) == 0
    return tmp_path


def _run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out + out.err


def test_parse_size():
    assert parse_size("16MiB") == 16 << 20
    assert parse_size("1g") == 1 << 30
    assert parse_size("4096") == 4096


def test_keygen_is_reproducible(work):
    first = (work / "k.pub").read_bytes(), (work / "k.priv").read_bytes()
    assert main(["keygen", "--bits", "512", "--seed", "7", "--out", "k"]) == 0
    assert ((work / "k.pub").read_bytes(), (work / "k.priv").read_bytes()) == first
    assert json.loads(first[0])["kind"] == "rsa-public"


def _seal(work):
    return main(["seal", "--in", "photo.bin", "--pub", "k.pub", "--out", "photo.env.bin",
                 "--wrapped", "photo.wkey.bin"])


def test_seal_then_session_recovers_file(work, capsys):
    assert _seal(work) == 0
    code, out = _run(capsys, ["session", "--env", "photo.env.bin", "--wrapped", "photo.wkey.bin", "--key",
                              "k.priv", "--pin-file", "pin", "--enroll", "--auth", "--decrypt", "--out", "rec.bin"])
    assert code == 0 and "GREEN" in out
    assert (work / "rec.bin").read_bytes() == (work / "photo.bin").read_bytes()


def test_session_without_auth_is_denied(work, capsys):
    _seal(work)
    code, out = _run(capsys, ["session", "--env", "photo.env.bin", "--wrapped", "photo.wkey.bin", "--key",
                              "k.priv", "--pin-file", "pin", "--decrypt", "--out", "rec.bin"])
    assert code == 1 and "access denied" in out and not (work / "rec.bin").exists()


def test_session_over_tcp(work, capsys):
    _seal(work)
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    code, out = _run(capsys, ["session", "--env", "photo.env.bin", "--wrapped", "photo.wkey.bin", "--key",
                              "k.priv", "--pin-file", "pin", "--enroll", "--auth", "--decrypt",
                              "--out", "rec.bin", "--tcp", f"127.0.0.1:{port}", "--device", "dev.json"])
    assert code == 0, out
    assert (work / "rec.bin").read_bytes() == (work / "photo.bin").read_bytes()
    assert len(json.loads((work / "dev.json").read_text())["enrolled"]) == 1


def test_enroll_and_auth(work, capsys):
    main(["keygen", "--bits", "512", "--seed", "8", "--out", "other"])
    assert main(["enroll", "--device", "dev.json", "--key", "k.priv", "--pin-file", "pin"]) == 0
    code, out = _run(capsys, ["auth", "--device", "dev.json", "--key", "other.priv", "--pin-file", "pin"])
    assert code == 1 and "authentication failed" in out and "RED" in out
    code, out = _run(capsys, ["auth", "--device", "dev.json", "--key", "k.priv", "--pin-file", "pin"])
    assert code == 0 and "GREEN" in out


def test_domain_errors_name_their_class(work, capsys):
    _seal(work)
    main(["keygen", "--bits", "512", "--seed", "8", "--out", "other"])
    code, out = _run(capsys, ["unseal", "--env", "photo.env.bin", "--wrapped", "photo.wkey.bin",
                              "--priv", "other.priv", "--out", "x"])
    assert code == 1 and "wrong key" in out
    raw = bytearray((work / "photo.env.bin").read_bytes())
    raw[50] ^= 4
    (work / "bad.env.bin").write_bytes(raw)
    code, out = _run(capsys, ["unseal", "--env", "bad.env.bin", "--wrapped", "photo.wkey.bin",
                              "--priv", "k.priv", "--out", "x"])
    assert code == 1 and "corruption" in out
    (work / "junk.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    code, out = _run(capsys, ["unseal", "--env", "junk.bin", "--wrapped", "photo.wkey.bin",
                              "--priv", "k.priv", "--out", "x"])
    assert code == 1 and "format error" in out
    assert not (work / "x").exists()


@pytest.mark.parametrize("argv", [[], ["bogus"], ["seal", "--nope"], ["auth", "--pin", "1234"]])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_bad_pin_is_usage_error(work, capsys):
    (work / "badpin").write_text("12")
    assert main(["enroll", "--device", "d.json", "--key", "k.priv", "--pin-file", "badpin"]) == 2


def test_no_secret_leakage(work, capsys):
    priv = json.loads((work / "k.priv").read_text())
    _seal(work)
    outputs = []
    for argv in (["enroll", "--device", "dev.json", "--key", "k.priv", "--pin-file", "pin"],
                 ["auth", "--device", "dev.json", "--key", "k.priv", "--pin-file", "pin"],
                 ["-v", "session", "--env", "photo.env.bin", "--wrapped", "photo.wkey.bin", "--key", "k.priv",
                  "--pin-file", "pin", "--auth", "--decrypt", "--device", "dev.json", "--out", "r.bin"]):
        outputs.append(_run(capsys, argv)[1])
    text = "\n".join(outputs)
    for secret in ("8642", priv["d"], priv["d"][2:], priv["p"][2:], priv["q"][2:]):
        assert secret not in text


def test_bench_commands_write_csv_and_figures(work, capsys):
    assert main(["bench-uniq", "--out", "u.csv"]) == 0
    assert (work / "u.csv").read_text().startswith("experiment,challenge,response,verdict\n")
    assert (work / "u.png").stat().st_size > 0
    assert "(72%)" in capsys.readouterr().out
    assert main(["bench-time", "--sizes", "0,64KiB", "--repeats", "2", "--key", "k.priv", "--out", "t.csv"]) == 0
    assert (work / "t.csv").read_text().splitlines()[0] == "file_size,process,real_s,user_s,sys_s,repeats"
    assert (work / "t.png").exists()
    assert main(["puf-stats", "--instances", "5", "--challenges", "100", "--out", "s.csv", "--no-figure"]) == 0
    assert not (work / "s.png").exists()
    assert main(["bench-integrity", "--size", "200KiB", "--key", "k.priv", "--out", "i.csv"]) == 0
    assert (work / "i.csv").read_text().splitlines()[1] == "204800,204800,True,True"
