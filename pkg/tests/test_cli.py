import json

import numpy as np
import pytest

from diffattn import cli, container
from diffattn.container import RecordType


def run_json(capsys, *argv):
    code = cli.run([*argv, "--json"])
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def pipeline(capsys, d, model="dcn-mul-v2"):
    assert cli.run(["gen-data", "--n", "240", "--seed", "7", "--out", str(d / "tr.dfa"), "--test-out", str(d / "te.dfa")]) == 0
    assert cli.run(["build-index", "--data", str(d / "tr.dfa"), "--clusters", "6", "--seed", "7", "--out", str(d / "ix.dfa")]) == 0
    assert cli.run(["train", "--data", str(d / "tr.dfa"), "--index", str(d / "ix.dfa"), "--model", model, "--epochs", "2",
                    "--k", "2", "--hidden", "8", "--seed", "7", "--out", str(d / "p.dfa"), "--history", str(d / "h.csv")]) == 0
    assert cli.run(["eval", "--data", str(d / "te.dfa"), "--params", str(d / "p.dfa"), "--reference", str(d / "tr.dfa"),
                    "--index", str(d / "ix.dfa"), "--k", "2", "--seed", "7", "--maps-out", str(d / "m.dfa")]) == 0
    assert cli.run(["dump-attention", "--data", str(d / "tr.dfa"), "--params", str(d / "p.dfa"), "--index", str(d / "ix.dfa"),
                    "--item", "4", "--seed", "7", "--out-prefix", str(d / "dump")]) == 0
    capsys.readouterr()
    return sorted(p.name for p in d.iterdir())


def test_pipeline_is_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    files = pipeline(capsys, a)
    assert files == pipeline(capsys, b)
    assert files == ["dump.csv", "dump.pgm", "h.csv", "ix.dfa", "m.dfa", "p.dfa", "te.dfa", "tr.dfa"]
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_gen_data_json_and_bytes(capsys, workdir):
    code, out = run_json(capsys, "gen-data", "--n", "100", "--seed", "7", "--out", "x.dfa")
    assert code == 0 and out == {"classes": 8, "dim": 32, "items": 100, "out": "x.dfa", "regions": 16, "seed": 7}
    first = (workdir / "x.dfa").read_bytes()
    cli.run(["gen-data", "--n", "100", "--seed", "7", "--out", "x.dfa"])
    assert (workdir / "x.dfa").read_bytes() == first


def test_rank_corr_self_is_one(capsys, workdir, rng):
    container.save(rng.random((4, 16)), workdir / "m.dfa")
    code, out = run_json(capsys, "rank-corr", "--a", "m.dfa", "--b", "m.dfa")
    assert code == 0 and out["mean"] == 1.0 and out["per_map"] == [1.0] * 4
    cli.run(["rank-corr", "--a", "m.dfa", "--b", "m.dfa"])
    assert "rank_correlation  1" in capsys.readouterr().out


def test_grad_check_command(capsys):
    code, out = run_json(capsys, "grad-check", "--model", "dcn-mul-v2", "--samples", "2", "--tol", "1e-4")
    assert code == 0 and out["passed"] is True
    assert set(out["max_rel_error"]) == {"W_I", "W_Q", "b_q", "W_P", "b_P", "W_A", "b_A", "W_1", "W_2"}
    code, out = run_json(capsys, "grad-check", "--model", "baseline", "--samples", "1", "--tol", "0")
    assert code == 1 and out["passed"] is False


def test_knn_command(capsys, workdir):
    cli.run(["gen-data", "--n", "120", "--out", "d.dfa"])
    cli.run(["build-index", "--data", "d.dfa", "--clusters", "4", "--out", "i.dfa"])
    capsys.readouterr()
    code, out = run_json(capsys, "knn", "--index", "i.dfa", "--id", "3", "--k", "4")
    assert code == 0 and len(out["neighbours"]) == 4 and 3 not in out["neighbours"]
    assert out["sq_distances"] == sorted(out["sq_distances"])


def test_unknown_flag_is_usage_error(capsys):
    assert cli.run(["gen-data", "--out", "x.dfa", "--bogus"]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--bogus" in err
    assert cli.run([]) == 1
    assert cli.run(["train", "--data", "x", "--out", "y", "--model", "dcn-sub-v9"]) == 1


def test_validation_errors(capsys, workdir, monkeypatch):
    (workdir / "junk.dfa").write_bytes(b"nope")
    assert cli.run(["build-index", "--data", "junk.dfa", "--out", "i.dfa"]) == 1
    assert "magic" in capsys.readouterr().err
    assert cli.run(["build-index", "--data", "missing.dfa", "--out", "i.dfa"]) == 1
    container.save(np.ones((2, 3)), workdir / "a.dfa")
    container.save(np.ones((2, 4)), workdir / "b.dfa")
    assert cli.run(["rank-corr", "--a", "a.dfa", "--b", "b.dfa"]) == 1
    assert cli.run(["build-index", "--data", "a.dfa", "--out", "i.dfa"]) == 1  # wrong record type
    cli.run(["gen-data", "--n", "60", "--out", "d.dfa"])
    cli.run(["train", "--data", "d.dfa", "--model", "baseline", "--epochs", "1", "--hidden", "4", "--out", "p.dfa"])
    monkeypatch.setenv("DIFFATTN_THREADS", "zero")
    assert cli.run(["eval", "--data", "d.dfa", "--params", "p.dfa"]) == 1
    monkeypatch.setenv("DIFFATTN_THREADS", "2")
    assert cli.run(["eval", "--data", "d.dfa", "--params", "p.dfa"]) == 0
    assert cli.run(["eval", "--data", "d.dfa", "--params", "p.dfa", "--model", "dan"]) == 1


def test_internal_error_exit_code(capsys, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("bug")

    monkeypatch.setattr(cli, "grad_check", boom)
    assert cli.run(["grad-check", "--model", "dan"]) == 2
    assert "RuntimeError" in capsys.readouterr().err


def test_dump_attention_outputs(capsys, workdir):
    cli.run(["gen-data", "--n", "120", "--out", "d.dfa"])
    cli.run(["train", "--data", "d.dfa", "--model", "dan", "--epochs", "1", "--k", "1", "--hidden", "4", "--clusters", "4", "--out", "p.dfa"])
    capsys.readouterr()
    code, out = run_json(capsys, "dump-attention", "--data", "d.dfa", "--params", "p.dfa", "--clusters", "4",
                         "--offset", "2", "--item", "0", "--out-prefix", "f")
    assert code == 0 and out["support"] != out["oppose"]
    head = (workdir / "f.pgm").read_bytes()[:20]
    assert head.startswith(b"P5\n")
    rows = (workdir / "f.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["target", "support", "oppose", "final"]
    # non-DCN models attend with the plain target map
    target = np.array(rows[1].split(",")[1:], dtype=float)
    final = np.array(rows[4].split(",")[1:], dtype=float)
    np.testing.assert_allclose(final, target, rtol=1e-12)
