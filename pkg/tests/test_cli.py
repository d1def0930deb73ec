import json
import os

import pytest

from wzbdsde.cli import RunConfig, load_config_file, main, parse_config
from wzbdsde.errors import ConfigurationError
from wzbdsde.report import ERROR_HEADER

SMALL = ["--outer", "4", "--inner", "128", "--levels", "2..4", "--no-timestamp"]


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(data if isinstance(data, str) else json.dumps(data, indent=1))
    return str(p)


def test_empty_config_gives_defaults(tmp_path):
    cfg = parse_config(["simulate", "--config", _write(tmp_path, "{}")], env={})
    d = RunConfig()
    assert (cfg.problem, cfg.wz_levels, cfg.extra_levels, cfg.outer, cfg.inner, cfg.seed, cfg.delta_slack) == (
        "sine_g", (3, 4, 5, 6, 7), 2, 64, 2048, 42, 0.1
    )
    assert cfg.plan() == d.plan()


def test_flags_override_file(tmp_path):
    path = _write(tmp_path, {"outer": 128, "inner": 300})
    cfg = parse_config(["rate", "--config", path, "--outer", "32"], env={})
    assert cfg.outer == 32 and cfg.inner == 300


def test_negative_extra_levels_rejected(tmp_path):
    path = _write(tmp_path, {"wz_levels": [8], "extra_levels": 0})
    with pytest.raises(ConfigurationError):
        parse_config(["rate", "--config", path, "--extra-levels=-1"], env={})
    assert main(["rate", "--config", path, "--extra-levels=-1"]) == 2


def test_unknown_key_reports_line(tmp_path):
    path = _write(tmp_path, '{\n  "outer": 4,\n  "bogus": 1\n}')
    with pytest.raises(ConfigurationError, match=r":3: unknown key 'bogus'"):
        load_config_file(path)


def test_non_dyadic_horizon_rejected(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(["simulate", "--config", _write(tmp_path, {"horizon": 0.3})], env={})


def test_level_syntax_and_formats():
    cfg = parse_config(["simulate", "--levels", "3,5", "--format", "csv,json"], env={})
    assert cfg.wz_levels == (3, 5) and cfg.format == ("csv", "json")
    with pytest.raises(ConfigurationError):
        parse_config(["simulate", "--format", "png"], env={})
    with pytest.raises(ConfigurationError):
        parse_config(["simulate", "--levels", "5..3"], env={})


def test_workers_from_environment():
    assert parse_config(["simulate"], env={"BDSDE_WORKERS": "3"}).workers == 3
    assert parse_config(["simulate", "--workers", "2"], env={"BDSDE_WORKERS": "3"}).workers == 2


def test_degenerate_inner_count_is_numerical():
    assert main(["simulate", "--problem", "sine_g", "--outer", "1", "--inner", "8", "--basis-degree", "3"]) == 3
    assert main(["simulate", "--outer", "2", "--inner", "3", "--basis-degree", "3", "--levels", "2"]) == 3


def test_identities_zero_g(tmp_path, capsys):
    assert main(["identities", "--problem", "zero_g", "--out", str(tmp_path), *SMALL]) == 0
    rows = (tmp_path / "identities.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 5
    assert all(r.split(",")[6] == "true" for r in rows[1:])


def test_rate_check_const_g():
    assert main(["rate", "--problem", "const_g", "--check", "--outer", "16", "--inner", "256", "--no-timestamp"]) == 0


def test_rate_check_failure_exit_code(monkeypatch):
    import wzbdsde.cli as cli
    from wzbdsde.lab import ConvergenceReport, LevelEstimate

    flat = ConvergenceReport("sine_g", 42, 2, 64, [LevelEstimate(n, n + 2, 0.1, 0.01, 0, 0.1, 0.01) for n in (2, 3, 4)], 0.0)
    monkeypatch.setattr(cli, "estimate_errors", lambda plan, workers: flat)
    args = ["rate", "--outer", "2", "--inner", "64", "--levels", "2..4"]
    assert main(args) == 0
    assert main(args + ["--check"]) == 4


def test_simulate_outputs_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["simulate", "--problem", "tanh_g", "--format", "csv,json,svg", *SMALL]
    assert main(args + ["--out", str(a), "--workers", "1"]) == 0
    assert main(args + ["--out", str(b), "--workers", "2"]) == 0
    for f in ("simulate.csv", "simulate.json", "simulate.svg"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    rows = (a / "simulate.csv").read_text().splitlines()
    assert rows[0] == ",".join(ERROR_HEADER) and len(rows) == 4
    meta = json.loads((a / "simulate.json").read_text())["meta"]
    assert "timestamp" not in meta and "workers" not in meta["config"]


def test_svg_is_self_contained(tmp_path):
    assert main(["plot", "--problem", "const_g", "--out", str(tmp_path), *SMALL]) == 0
    svg = (tmp_path / "plot.svg").read_text()
    assert svg.startswith("<svg") and 'width="800" height="600"' in svg
    assert "href" not in svg and "stroke-dasharray" in svg
    assert not os.path.exists(tmp_path / "plot.csv")


def test_moments_rows(tmp_path):
    assert main(["moments", "--problem", "zero_g", "--out", str(tmp_path), *SMALL]) == 0
    rows = (tmp_path / "moments.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 2


def test_svg_needs_out_dir():
    assert main(["plot", *SMALL]) == 2


def test_stdout_csv(capsys):
    assert main(["simulate", "--problem", "zero_g", *SMALL]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("n,m,outer") and len(out) == 4
