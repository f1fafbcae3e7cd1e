import json
import subprocess
import sys

import pytest

from pcie_resilience import cli
from pcie_resilience.cli import main
from pcie_resilience.harness import run_campaign


def write(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return p


def test_run_passes_and_writes_files(tmp_path, capsys):
    cfg = write(tmp_path, "seed=5\nhorizon_cycles=2000\ncount_per_kind=1\n"
                          "trace_path=trace.txt\nreport_path=report.json\n")
    assert main(["run", "--config", str(cfg)]) == 0
    assert "injected=15 detected=15" in capsys.readouterr().out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["corrupted_bytes_delivered"] == 0
    assert (tmp_path / "trace.txt").read_text().startswith("cycle=0 ")


def test_run_bad_config_exits_2(tmp_path, capsys):
    assert main(["run", "--config", str(write(tmp_path, "mode=nope\n"))]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["inject", "--kind", "NoSuchFault", "--cycle", "1", "--seed", "1"])
    assert exc.value.code == 2


def test_violation_exits_1(tmp_path, monkeypatch, capsys):
    def broken(cfg):
        r = run_campaign(cfg)
        r.corrupted_bytes_delivered = 3
        return r

    monkeypatch.setattr(cli, "run_campaign", broken)
    assert main(["run", "--config", str(write(tmp_path, "horizon_cycles=500\n"))]) == 1
    assert "corrupted bytes" in capsys.readouterr().err


def test_inject_single_fault(tmp_path, capsys):
    trace = tmp_path / "t.txt"
    rc = main(["inject", "--kind", "FlipLcrcBit", "--cycle", "200", "--seed", "9",
               "--trace", str(trace)])
    assert rc == 0
    assert "injected=1 detected=1" in capsys.readouterr().out
    assert sum("kind=BadTlp" in l for l in trace.read_text().splitlines()) == 1


def test_trace_window(tmp_path, capsys):
    trace = tmp_path / "t.txt"
    trace.write_text("".join(f"cycle={i} tx=- rx=- err=0 kind=- pr=0 ltssm=L0\n" for i in range(10)))
    assert main(["trace", "--input", str(trace), "--from", "3", "--to", "5"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert [l.split()[0] for l in out] == ["cycle=3", "cycle=4", "cycle=5"]
    assert main(["trace", "--input", str(tmp_path / "none"), "--from", "0"]) == 2


def test_classify(capsys):
    assert main(["classify", "--kind", "ReceiverOverflow"]) == 0
    assert capsys.readouterr().out.split("\t")[-2:] == ["TL", "FatalUncorrectable\n"]
    assert main(["classify", "--kind", "PlSymbolError"]) == 0
    assert capsys.readouterr().out.startswith("RxError\t")
    assert main(["classify", "--kind", "Nope"]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "pcie_resilience", "classify", "--kind", "BadDllp"],
                         capture_output=True, text=True, check=True).stdout
    assert out.startswith("BadDllp\tBad DLL packet\tDL\tCorrectable")
