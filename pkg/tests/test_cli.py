import csv
import json

from sprinkle.cli import _exit_for, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_bounds_mode(capsys):
    code, out, _ = run(capsys, "--mode", "bounds", "--n", "60", "--regime", "desk",
                       "--rounds", "10", "--hoeffding", "100", "1", "20")
    rep = json.loads(out)
    assert code == 0
    assert abs(rep["hoeffding"]["bound"] - 6.709252558050237e-04) < 1e-15
    assert "rounds" not in rep and "leftover_count_bound" in rep["bounds"]


def test_config_errors(capsys):
    code, _, err = run(capsys, "--n", "30")
    assert code == 2 and "alpha" in err
    code, _, err = run(capsys, "--n", "30", "--regime", "desk", "--p", "auto")
    assert code == 2 and "p:" in err
    code, _, err = run(capsys, "--n", "30", "--regime", "desk", "--rounds", "2", "--p", "abc")
    assert code == 2
    code, _, _ = run(capsys, "--mode", "verify")
    assert code == 2


def test_round_only(capsys):
    code, out, _ = run(capsys, "--mode", "round-only", "--n", "30", "--regime", "desk",
                       "--rounds", "1")
    rep = json.loads(out)
    assert code == 0 and len(rep["rounds"]) == 1
    assert rep["rounds"][0]["sizes"][0] == 30


def test_partite_pack_outputs_and_verify(tmp_path, capsys):
    out = tmp_path / "run"
    code, _, _ = run(capsys, "--n", "30", "--regime", "desk", "--rounds", "4", "--p", "auto",
                     "--out", str(out), "--normalize")
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert "timing" not in rep
    with open(out / "steps.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["round", "step", "n_j", "q_ij", "colored", "isolated", "bite", "failure"]
    with open(out / "completion.csv") as f:
        assert next(csv.reader(f)) == ["round", "n_left", "exposed", "solver_restarts", "success"]
    assert json.loads((out / "bounds.json").read_text()) == rep["bounds"]
    code, vout, _ = run(capsys, "--mode", "verify", "--report", str(out / "report.json"))
    assert code == 0 and json.loads(vout)["ok"]


def test_strict_exit(capsys):
    # leftover-count bound is below one at this scale, so strict mode fails
    code, _, _ = run(capsys, "--n", "60", "--regime", "desk", "--rounds", "4", "--p", "auto",
                     "--strict")
    assert code == 1


def test_exit_codes_helper():
    ok = {"audits": {"verdicts": {"a": True}, "budget_exhausted": 0}}
    bad = {"audits": {"verdicts": {"a": False}, "budget_exhausted": 0}}
    budget = {"audits": {"verdicts": {"a": True}, "budget_exhausted": 2}}
    assert _exit_for(ok, True) == 0
    assert _exit_for(bad, False) == 0
    assert _exit_for(bad, True) == 1
    assert _exit_for(budget, False) == 3


def test_ensemble(capsys):
    code, out, _ = run(capsys, "--mode", "ensemble", "--n", "30", "--regime", "desk",
                       "--rounds", "3", "--p", "auto", "--seeds", "4", "--workers", "2")
    rep = json.loads(out)
    assert code == 0 and len(rep["runs"]) == 4
    assert rep["pass_rates"]["structural"]["rate"] == 1.0


def test_nonpartite_mode(capsys):
    code, out, _ = run(capsys, "--mode", "nonpartite-pack", "--n", "20", "--regime", "desk",
                       "--rounds", "2", "--p", "0.5", "--t", "2", "--retries", "2")
    rep = json.loads(out)
    assert code == 0 and rep["nonpartite"]["t"] == 2
