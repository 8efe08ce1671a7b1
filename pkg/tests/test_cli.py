import json
import socket
import subprocess
import sys

import pytest

from maskmpc.cli import ConfigError, main, parse_config


def _cli(*args):
    return subprocess.run([sys.executable, "-m", "maskmpc.cli", *args], capture_output=True, text=True,
                          timeout=300)


def test_config_parsing_and_errors(tmp_path):
    cfg = parse_config("framework = tetrad\nring = 64\nparties = 0=localhost:7000, 1=localhost:7001\n", "x")
    assert cfg.framework == "tetrad" and cfg.parties[1] == ("localhost", 7001)
    with pytest.raises(ConfigError, match="bad.cfg:2"):
        parse_config("framework = astra\nring = 13\n", "bad.cfg")
    with pytest.raises(ConfigError, match=":1"):
        parse_config("colour = blue\n", "c.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("framework = nope\n")
    assert main(["run", "--config", str(bad), "--protocol", "mult"]) == 2


def test_verify_tables_astra(capsys):
    assert main(["verify-tables", "--framework", "astra"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "rows pass" in out


def test_fault_scenario(capsys):
    assert main(["fault", "--scenario", "tetrad-mult-tamper"]) == 0
    assert "honest outcome abort" in capsys.readouterr().out
    assert main(["fault", "--scenario", "no-such-attack"]) == 2


def test_run_linreg_with_oracle(tmp_path):
    out = tmp_path / "lin"
    code = main(["run", "--framework", "astra", "--app", "linreg", "--iterations", "20", "--n", "64",
                 "--oracle", "--reveal", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["outcome"] == "ok" and report["oracle"]["mismatches"] == 0
    assert report["oracle"]["max_ulp"] <= report["oracle"]["tolerance_ulp"]
    assert "weights" in json.loads((out / "model.json").read_text())


def test_same_seed_same_outputs(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--framework", "swift", "--protocol", "dotp_trunc", "--n", "8", "--seed", "3",
                     "--split-phases", "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        report.pop("wall_time")
        runs.append((report, (out / "transcript.jsonl").read_bytes()))
    assert runs[0] == runs[1]


def test_bench_csv(tmp_path):
    csv_path = tmp_path / "bench.csv"
    assert main(["bench", "--frameworks", "aby2", "--protocols", "mult", "dotp", "--d-grid", "1,10",
                 "--out", str(tmp_path), "--csv", str(csv_path)]) == 0
    lines = csv_path.read_text().splitlines()
    assert len(lines) == 4  # header, mult, dotp at two lengths


def _free_ports(n):
    socks = [socket.socket() for _ in range(n)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


def test_tcp_one_process_per_party(tmp_path):
    ports = _free_ports(3)
    cfg = tmp_path / "astra.cfg"
    cfg.write_text("framework = astra\ntransport = tcp\nseed = 5\n"
                   f"parties = {', '.join(f'{i}=127.0.0.1:{p}' for i, p in enumerate(ports))}\n")
    assert _cli("keygen", "--config", str(cfg), "--out", str(tmp_path / "keys")).returncode == 0
    procs = [subprocess.Popen([sys.executable, "-m", "maskmpc.cli", "run", "--config", str(cfg), "--party",
                               str(p), "--keys", str(tmp_path / "keys"), "--protocol", "mult", "--n", "16",
                               "--oracle", "--out", str(tmp_path / f"p{p}")],
                              stdout=subprocess.PIPE, stderr=subprocess.PIPE)
             for p in range(3)]
    codes = [proc.wait(timeout=120) for proc in procs]
    assert codes == [0, 0, 0], [proc.stderr.read().decode() for proc in procs]
    report = json.loads((tmp_path / "p1" / "report.json").read_text())
    assert report["outcome"] == "ok" and report["oracle"]["mismatches"] == 0
    # P1 sends its half of the exchanged value to P2: 16 elements of 64 bits
    assert report["parties"]["1"]["bits_online"] == 16 * 64


def test_tcp_needs_party(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("framework = astra\ntransport = tcp\nparties = 0=127.0.0.1:1, 1=127.0.0.1:2, 2=127.0.0.1:3\n")
    result = _cli("run", "--config", str(cfg), "--protocol", "mult")
    assert result.returncode == 2 and "--party" in result.stderr
