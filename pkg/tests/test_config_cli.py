from __future__ import annotations

import json
import subprocess
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import pytest

from svre.bench import derive_seed, run_benchmark, runs_to_csv
from svre.cli import EXIT_ABORTED, EXIT_ERROR, EXIT_MAX_ITER, EXIT_OK, main
from svre.config import ConfigError, make_problem, parse_config
from svre.estimator import SvreConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def schema(name):
    return json.loads(resources.files("svre").joinpath(f"schemas/{name}.schema.json").read_text())


def write(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2)
    path.write_text(text)
    return str(path)


def small_linear(**svre):
    return {
        "problem": {"id": "linear", "params": {"d": 10, "beta": 3.0}},
        "svre": {"n": 200, "n_grad": 10, "seed": 1, **svre},
    }


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# config parsing ---------------------------------------------------------------


def test_parse_minimal_config():
    cfg = parse_config('{"problem": {"id": "fourbranch"}}')
    assert cfg.problem_id == "fourbranch"
    assert cfg.svre == SvreConfig()
    assert cfg.make_problem().params == {"gamma": 0.0}


def test_parse_full_config():
    cfg = parse_config(json.dumps({
        "problem": {"id": "quadratic", "params": {"d": 3, "beta": 4, "kappa": 10}},
        "svre": {"n": 300, "n_grad": 15, "delta_thresh": 2.5, "t_max": 50, "seed": 7, "init": "lhs"},
        "smoother": {"P": 0.8, "sigma": 0.01},
        "kernel": {"strategy": "fixed", "length": 4.0},
        "transport": {"normalization": "rmsprop", "base_rate": 0.2, "rate_policy": "adaptive",
                      "det_mode": "trace", "corridor": [0.6, 1.4]},
        "bench": {"runs": 12},
    }))
    assert cfg.svre.kernel.fixed_length == 4.0
    assert cfg.svre.transport.corridor == (0.6, 1.4)
    assert cfg.svre.smoother.P == 0.8
    assert cfg.problem_params["beta"] == 4.0 and isinstance(cfg.problem_params["beta"], float)
    assert cfg.runs == 12


@pytest.mark.parametrize(
    "text,line,key",
    [
        ('{\n  "problem": {"id": "linear"},\n  "svre": {\n    "n_grad": 0\n  }\n}', 4, "svre.n_grad"),
        ('{\n  "problem": {"id": "linear"},\n  "svre": {"colour": 1}\n}', 3, "svre.colour"),
        ('{\n  "problem": {"id": "linear"},\n  "transport": {"normalization": "adam"}\n}', 3,
         "transport.normalization"),
        ('{\n  "problem": {\n    "id": "linear",\n    "params": {"d": 2.5}\n  }\n}', 4, "problem.params.d"),
        ('{\n  "problem": {"id": "spiral"}\n}', 2, "problem.id"),
        ('{\n  "problem": {"id": "linear"},\n  "bench": {"runs": 1}\n}', 3, "bench.runs"),
        ('{\n  "problem": {"id": "linear"},\n  "kernel": {"length": -1}\n}', 3, "kernel.length"),
        ('{\n  "problem": {"id": "linear"},\n  "svre": {"seed": true}\n}', 3, "svre.seed"),
    ],
)
def test_config_errors_name_line_and_key(text, line, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "x.json")
    assert str(exc.value).startswith(f"x.json:{line}: {key}: ")


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError, match=r"^x\.json:3: invalid JSON"):
        parse_config('{\n  "problem": {"id": "linear"},\n  oops\n}', "x.json")


def test_nested_sections_rejected():
    with pytest.raises(ConfigError, match="top-level section"):
        parse_config('{"problem": {"id": "linear"}, "svre": {"kernel": {}}}')


def test_make_problem_defaults():
    assert make_problem("linear").dim == 100
    assert make_problem("quadratic").dim == 2
    assert make_problem("darcy", {"d": 5}).dim == 5
    with pytest.raises(KeyError):
        make_problem("spiral")


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = parse_config(path.read_text(), str(path))
    assert cfg.make_problem().dim >= 2


# benchmark plumbing -----------------------------------------------------------


def test_derived_seeds():
    seeds = [derive_seed(0, i) for i in range(100)]
    assert len(set(seeds)) == 100
    assert derive_seed(0, 3) == derive_seed(0, 3) != derive_seed(1, 3)


def test_benchmark_independent_of_threads():
    cfg = SvreConfig(n=100, n_grad=5)
    mk = lambda: make_problem("linear", {"d": 5, "beta": 2.5})
    one = runs_to_csv(run_benchmark(mk, cfg, 6, seed=3, threads=1))
    three = runs_to_csv(run_benchmark(mk, cfg, 6, seed=3, threads=3))
    assert one == three
    assert one.count("\n") == 7


def test_thread_count_from_environment(monkeypatch):
    from svre.bench import resolve_threads

    monkeypatch.setenv("SVRE_THREADS", "4")
    assert resolve_threads(None) == 4
    assert resolve_threads(2) == 2
    monkeypatch.delenv("SVRE_THREADS")
    assert resolve_threads(None) == 1
    with pytest.raises(ValueError):
        resolve_threads(0)


# CLI --------------------------------------------------------------------------


def test_run_happy_path(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "run", "--config", write(tmp_path, small_linear()))
    report = json.loads(out)
    jsonschema.validate(report, schema("report"))
    assert code == EXIT_OK
    assert report["termination"] == "converged"
    assert report["p_hat"] > 0 and report["seed"] == 1


def test_run_seed_override(tmp_path, capsys):
    path = write(tmp_path, small_linear())
    _, first, _ = run_cli(capsys, "run", "--config", path, "--seed", "5")
    edited = write(tmp_path, small_linear(seed=5), "seed5.json")
    _, second, _ = run_cli(capsys, "run", "--config", edited)
    assert json.loads(first)["seed"] == 5
    assert json.loads(first) == json.loads(second)


def test_run_bad_config(tmp_path, capsys):
    code, out, err = run_cli(capsys, "run", "--config", write(tmp_path, small_linear(n_grad=0)))
    assert code == EXIT_ERROR
    assert out == ""
    assert "svre.n_grad" in err and "cfg.json:" in err


def test_run_missing_file(tmp_path, capsys):
    code, _, err = run_cli(capsys, "run", "--config", str(tmp_path / "nope.json"))
    assert code == EXIT_ERROR and "cannot read config" in err


def test_run_iteration_limit(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "run", "--config", write(tmp_path, small_linear(t_max=1)))
    assert code == EXIT_MAX_ITER
    assert json.loads(out)["termination"] == "max_iterations"


def test_run_aborted(tmp_path, capsys):
    cfg = small_linear()
    cfg["transport"] = {"rate_policy": "adaptive", "base_rate": 1e-3, "min_rate": 1e-2}
    code, out, _ = run_cli(capsys, "run", "--config", write(tmp_path, cfg))
    report = json.loads(out)
    jsonschema.validate(report, schema("report"))
    assert code == EXIT_ABORTED
    assert report["termination"] == "aborted" and report["p_hat"] is None


def test_run_out_and_dump(tmp_path, capsys):
    out_path, csv_path = tmp_path / "r.json", tmp_path / "s.csv"
    code, out, _ = run_cli(capsys, "run", "--config", write(tmp_path, small_linear()),
                           "--out", str(out_path), "--dump-samples", str(csv_path))
    assert code == EXIT_OK and out == ""
    jsonschema.validate(json.loads(out_path.read_text()), schema("report"))
    lines = csv_path.read_text().splitlines()
    assert lines[0].split(",")[-1] == "weight"
    assert len(lines) == 201


def test_bench(tmp_path, capsys):
    path = write(tmp_path, small_linear())
    csv1, csv2 = tmp_path / "a.csv", tmp_path / "b.csv"
    code, out, _ = run_cli(capsys, "bench", "--config", path, "--runs", "4", "--csv", str(csv1))
    summary = json.loads(out)
    jsonschema.validate(summary, schema("bench"))
    assert code == EXIT_OK
    assert summary["runs"] == 4 and summary["rrmse"] >= 0
    rows = csv1.read_text().splitlines()
    assert rows[0] == "run,seed,p_hat,delta_hat,iterations,gradient_calls,model_calls,termination"
    assert len(rows) == 5
    run_cli(capsys, "bench", "--config", path, "--runs", "4", "--csv", str(csv2), "--threads", "2")
    assert csv1.read_bytes() == csv2.read_bytes()


def test_bench_p_ref_override(tmp_path, capsys):
    path = write(tmp_path, small_linear())
    _, out, _ = run_cli(capsys, "bench", "--config", path, "--runs", "2", "--p-ref", "3.17e-5")
    assert json.loads(out)["p_ref"] == 3.17e-5


def test_bench_without_reference(tmp_path, capsys):
    cfg = {"problem": {"id": "darcy", "params": {"d": 5}}, "svre": {"n": 50, "n_grad": 5}}
    code, _, err = run_cli(capsys, "bench", "--config", write(tmp_path, cfg), "--runs", "2")
    assert code == EXIT_ERROR and "--p-ref" in err


def test_bench_degenerate(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "bench", "--config", write(tmp_path, small_linear(t_max=1)), "--runs", "3")
    summary = json.loads(out)
    jsonschema.validate(summary, schema("bench"))
    assert code == EXIT_ERROR
    assert summary["rrmse"] is None and summary["excluded_runs"] == 3


@pytest.mark.parametrize(
    "problem,method",
    [
        ({"id": "linear", "params": {"beta": 4.0}}, "analytic"),
        ({"id": "quadratic"}, "quadrature"),
        ({"id": "fourbranch", "params": {"gamma": 2.0}}, "pinned_mixture_is"),
        ({"id": "darcy"}, "pinned_crude_mc"),
    ],
)
def test_oracle_methods(tmp_path, capsys, problem, method):
    code, out, _ = run_cli(capsys, "oracle", "--config", write(tmp_path, {"problem": problem}))
    payload = json.loads(out)
    jsonschema.validate(payload, schema("oracle"))
    assert code == EXIT_OK and payload["method"] == method and payload["p_ref"] > 0


def test_oracle_forced_sampling(tmp_path, capsys):
    cfg = {"problem": {"id": "linear", "params": {"d": 3, "beta": 1.0}}}
    _, out, _ = run_cli(capsys, "oracle", "--config", write(tmp_path, cfg), "--samples", "20000")
    payload = json.loads(out)
    jsonschema.validate(payload, schema("oracle"))
    assert payload["method"] == "crude_mc" and payload["n_samples"] == 20000
    assert abs(payload["p_ref"] - 0.1587) < 0.01


def test_gradcheck_all_problems(capsys):
    code, out, _ = run_cli(capsys, "gradcheck", "--points", "5")
    payload = json.loads(out)
    jsonschema.validate(payload, schema("gradcheck"))
    assert code == EXIT_OK
    assert {row["problem"] for row in payload["checks"]} == {"linear", "quadratic", "fourbranch", "darcy"}


def test_gradcheck_violation(tmp_path, capsys):
    cfg = {"problem": {"id": "quadratic"}}
    code, out, _ = run_cli(capsys, "gradcheck", "--config", write(tmp_path, cfg), "--tol", "1e-30")
    assert code == EXIT_ERROR
    assert json.loads(out)["checks"][0]["ok"] is False


def test_list_problems(capsys):
    code, out, _ = run_cli(capsys, "list-problems")
    assert code == EXIT_OK
    assert [line.split(":")[0] for line in out.splitlines()] == ["linear", "quadratic", "fourbranch", "darcy"]


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "svre.cli", "run", "--config", write(tmp_path, small_linear(n=1))],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_ERROR
    assert proc.stderr.startswith("error: ") and "svre.n" in proc.stderr
