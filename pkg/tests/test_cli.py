import io
import json
import subprocess
import sys

import pytest

from trimod.cli import ALL_CHECKS, EXIT_CONFIG, EXIT_FAIL, EXIT_OK, EXIT_UNDECIDED, main


def run(argv, tmp_path=None):
    buf = io.StringIO()
    code = main(argv, out=buf)
    return code, buf.getvalue()


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(p)


class TestClassify:
    def test_geometric_default(self):
        code, text = run(["classify", "--window", "3"])
        assert code == EXIT_OK
        assert "E(b) convergent; commutation theorem applies; type III_1 expected" in text
        assert "right_qi: convergent" in text and "left_qi: convergent" in text

    def test_json_output(self, tmp_path):
        out = tmp_path / "c.json"
        code, text = run(["classify", "--window", "2", "--json", "--out", str(out)])
        assert code == EXIT_OK
        assert json.loads(text) == json.loads(out.read_text())
        assert json.loads(text)["conditions"]["inversion_equivalent"]["verdict"] == "convergent"

    def test_s_equal_one_rejected(self, tmp_path, capsys):
        cfg = write(tmp_path, "w.json", {"weights": {"family": "geometric", "s": 1}})
        code, _ = run(["classify", "--config", cfg])
        assert code == EXIT_CONFIG
        assert "s > 1" in capsys.readouterr().err

    def test_single_entry_table(self, tmp_path):
        cfg = write(tmp_path, "t.json", {"family": "table", "entries": [[0, 1, 3]]})
        code, text = run(["classify", "--config", cfg])
        assert code == EXIT_OK and "undecided" not in text

    def test_undecided_exit_code(self, monkeypatch):
        # every built-in family gets a certificate, so force an undecided series
        import trimod.weights_series as ws
        real = ws.s_left

        def stuck(cfg, k, n, budget=ws.TruncationBudget()):
            e = real(cfg, k, n, budget)
            return ws.SeriesEstimate(e.name, e.partial_sum, float("inf"), e.terms_used, ws.UNDECIDED)
        monkeypatch.setattr(ws, "s_left", stuck)
        code, text = run(["classify", "--window", "1"])
        assert code == EXIT_UNDECIDED and "left_qi: undecided" in text

    def test_malformed_config(self, tmp_path, capsys):
        cfg = write(tmp_path, "bad.json", '{"weights": {"family": "geometric",\n "s": }}')
        code, _ = run(["classify", "--config", cfg])
        assert code == EXIT_CONFIG
        assert f"{cfg}:2:" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [["classify", "--window", "0"], ["nope"], ["verify", "--tol", "-1"],
                                      ["verify", "--checks", "bogus"], ["classify", "--config", "/no/such"]])
    def test_usage_errors(self, argv):
        assert run(argv)[0] == EXIT_CONFIG

    def test_thread_cap_does_not_change_output(self, monkeypatch):
        a = run(["classify", "--window", "2", "--json"])
        monkeypatch.setenv("TRIMOD_THREADS", "1")
        assert run(["classify", "--window", "2", "--json"]) == a
        monkeypatch.setenv("TRIMOD_THREADS", "zero")
        assert run(["classify", "--window", "2"])[0] == EXIT_CONFIG


class TestVerify:
    def test_single_check(self):
        code, text = run(["verify", "--checks", "triple_commutator", "--json"])
        assert code == EXIT_OK
        rep = json.loads(text)
        assert [c["name"] for c in rep["checks"]] == ["triple_commutator"]
        assert rep["checks"][0]["residual"] == 0

    def test_negative_control(self, tmp_path):
        cfg = write(tmp_path, "kr.json", {"ar_convention": "kr", "checks": ["bracket_AR_w"]})
        code, text = run(["verify", "--config", cfg, "--json"])
        assert code == EXIT_FAIL
        rep = json.loads(text)
        assert not rep["pass"] and rep["checks"][0]["residual"] > 0

    def test_numeric_subset_deterministic(self):
        argv = ["verify", "--seed", "3", "--json", "--checks", "commutation,Urm,unitarity,moments"]
        first = run(argv)
        assert first[0] == EXIT_OK
        assert run(argv) == first
        assert run(argv[:2] + ["4"] + argv[3:])[1] != first[1]

    def test_tolerance_override_can_fail(self):
        code, _ = run(["verify", "--checks", "commutation", "--tol", "1e-30"])
        assert code == EXIT_FAIL

    def test_small_window_reports_skips(self):
        code, text = run(["verify", "--window", "1", "--checks", "Urm,triple_commutator", "--json"])
        rep = json.loads(text)
        assert code == EXIT_OK
        assert all(c["pass"] for c in rep["checks"])


class TestReport:
    def test_empty(self):
        code, text = run(["report"])
        assert code == EXIT_OK
        assert text.split() == ["file", "source", "item", "result"]

    def test_merge(self, tmp_path):
        c = tmp_path / "c.json"
        v = tmp_path / "v.json"
        run(["classify", "--window", "2", "--out", str(c)])
        run(["verify", "--checks", "J_involution", "--out", str(v)])
        code, text = run(["report", str(c), str(v)])
        assert code == EXIT_OK
        assert "right_qi" in text and "J_involution" in text

    def test_malformed_input(self, tmp_path, capsys):
        p = write(tmp_path, "r.json", '{"kind": "verify",\n\n  "checks": [}')
        assert run(["report", p])[0] == EXIT_CONFIG
        assert f"{p}:3:" in capsys.readouterr().err

    def test_unknown_kind(self, tmp_path):
        p = write(tmp_path, "r.json", {"kind": "other"})
        assert run(["report", p])[0] == EXIT_CONFIG


def test_console_entry_point_byte_identical(tmp_path):
    cmd = [sys.executable, "-m", "trimod", "verify", "--seed", "5", "--json", "--checks", "commutation,cocycle"]
    a = subprocess.run(cmd, capture_output=True, check=True).stdout
    b = subprocess.run(cmd, capture_output=True, check=True).stdout
    assert a == b and json.loads(a)["pass"]


def test_all_checks_listed():
    assert len(ALL_CHECKS) == len(set(ALL_CHECKS)) == 14
