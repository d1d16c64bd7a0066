import numpy as np
import pytest

from gscaec.cli import main
from gscaec.cli_io import (
    ConfigError,
    RunConfig,
    design_spec_from_config,
    emit_config,
    fmt9,
    load_config,
    parse_config,
    read_curve_csv,
    scenario_from_config,
    write_curve_csv,
    write_plant_csv,
)
from gscaec.harness import LearningCurve

BASE_CONFIG = """
[plant]
m = 2
n_h = 16
fs = 8000.0
t_r60 = 0.002
oversample = 4
mic_spacing = 1
seed = 7

[signals]
far_end = ar1
ar_pole = -0.9
variance = 1.0
noise_var = 0.01

[gsc]
n_bf = 4
n_f = 4
n_aec = 16

[policy]
mode = split
mu_aec = 2e-3
mu_bf = 2e-3

[montecarlo]
runs = 5
n_samples = 400
base_seed = 100
"""

SCHEDULE_BLOCK = """
[schedule]
segment.1 = at=150 mu_aec=0.0 mu_bf=2e-3
event.1 = at=150 kind=dtalk_on power=1.0 pole=-0.9 doa_delay=0
event.2 = at=250 kind=dtalk_off
event.3 = at=300 kind=plant_change seed=99
"""


# ---------------------------------------------------------------------------
# Parsing and round trips


def test_parse_and_roundtrip_identity():
    cfg = parse_config(BASE_CONFIG)
    assert cfg.plant.m == 2
    assert cfg.policy.mu_aec == 2e-3
    again = parse_config(emit_config(cfg))
    assert again == cfg
    assert emit_config(again) == emit_config(cfg)


def test_roundtrip_with_schedule_and_design():
    text = BASE_CONFIG + SCHEDULE_BLOCK + """
[design]
target_jinf_db = -20.0
target_at_db = -20.0
at_n = 1000
m_values = 2,4
n_aec_min = 8
n_aec_max = 16
n_aec_step = 4
"""
    cfg = parse_config(text)
    assert cfg.schedule.segments == ((150, 0.0, 2e-3),)
    assert cfg.schedule.events[0][0] == "dtalk_on"
    assert cfg.design.m_values == (2, 4)
    assert parse_config(emit_config(cfg)) == cfg


def test_unknown_key_rejected_with_name():
    with pytest.raises(ConfigError, match="mu_aecc"):
        parse_config(BASE_CONFIG.replace("mu_aec =", "mu_aecc ="))


def test_unknown_section_rejected():
    with pytest.raises(ConfigError, match="plantt"):
        parse_config(BASE_CONFIG.replace("[plant]", "[plantt]"))


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        parse_config(BASE_CONFIG.replace("runs = 5", "runs = five"))
    with pytest.raises(ConfigError):
        parse_config(BASE_CONFIG.replace("seed = 7", "seed = -7"))  # unsigned
    with pytest.raises(ConfigError):
        parse_config(BASE_CONFIG.replace("far_end = ar1", "far_end = pink"))


def test_schedule_entry_validation():
    with pytest.raises(ConfigError):
        parse_config(BASE_CONFIG + "[schedule]\nevent.1 = at=10 kind=nope\n")
    with pytest.raises(ConfigError):
        parse_config(BASE_CONFIG + "[schedule]\nevent.1 = at=10 kind=plant_change\n")
    with pytest.raises(ConfigError):
        parse_config(BASE_CONFIG + "[schedule]\nwhatever = 3\n")


def test_scenario_from_config_shape():
    sc = scenario_from_config(parse_config(BASE_CONFIG + SCHEDULE_BLOCK))
    assert sc.n_samples == 400
    assert len(sc.policy.segments) == 2  # base + schedule segment
    assert len(sc.events) == 3
    assert sc.events[0].interferer.power == 1.0


def test_policy_change_event_becomes_segment():
    text = BASE_CONFIG + "[schedule]\nevent.1 = at=200 kind=policy_change mu_aec=1e-4 mu_bf=1e-4\n"
    sc = scenario_from_config(parse_config(text))
    assert len(sc.policy.segments) == 2
    assert sc.policy.segments[1].start_n == 200
    assert sc.events == ()


def test_trace_budget_policy_resolution():
    text = BASE_CONFIG.replace(
        "mode = split\nmu_aec = 2e-3\nmu_bf = 2e-3",
        "mode = split\ntrace_budget = 0.1\naec_share = 0.5",
    )
    sc = scenario_from_config(parse_config(text))
    seg = sc.policy.segments[0]
    assert seg.mu_aec > 0 and seg.mu_bf > 0
    # both branches carry half the budget: mu_aec * tr(R_u) = 0.05
    assert np.isclose(seg.mu_aec * 16.0, 0.05, rtol=1e-10)


def test_whitening_policy_resolution():
    text = BASE_CONFIG.replace(
        "mode = split\nmu_aec = 2e-3\nmu_bf = 2e-3",
        "mode = whitening\nwhitening_lambda = 0.01",
    )
    sc = scenario_from_config(parse_config(text))
    assert sc.policy.segments[0].is_matrix


def test_design_spec_seconds_resolution():
    text = BASE_CONFIG + """
[design]
target_jinf_db = -20.0
target_at_db = -20.0
at_seconds = 0.5
m_values = 2
n_aec_min = 8
n_aec_max = 12
"""
    spec = design_spec_from_config(parse_config(text))
    assert spec.at_n == 4000  # 0.5 s at fs=8000
    with pytest.raises(ConfigError):
        design_spec_from_config(parse_config(BASE_CONFIG))


# ---------------------------------------------------------------------------
# CSV output


def _curve():
    n = 64
    j = np.geomspace(1.0, 0.01, n)
    return LearningCurve(n_samples=n, warmup=10, J_mc=j, J_model=j * 1.1, runs=3)


def test_curve_csv_format_and_roundtrip(tmp_path):
    path = tmp_path / "curve.csv"
    curve = _curve()
    write_curve_csv(curve, path)
    raw = path.read_bytes()
    assert raw.startswith(b"n,J_mc,J_model,J_mc_dB,J_model_dB,warmup\n")
    assert b"\r" not in raw
    again = read_curve_csv(path)
    assert again.n_samples == curve.n_samples
    assert again.warmup == 10
    assert np.allclose(again.J_mc, curve.J_mc, rtol=1e-8)
    assert np.allclose(again.J_model, curve.J_model, rtol=1e-8)


def test_curve_csv_db_column_definitional(tmp_path):
    curve = _curve()
    # in-memory identity is exact
    assert np.allclose(curve.J_mc_dB, 10 * np.log10(curve.J_mc), atol=1e-12)
    path = tmp_path / "c.csv"
    write_curve_csv(curve, path)
    again = read_curve_csv(path)
    # after 9-significant-digit formatting both columns stay consistent
    assert np.abs(again.J_mc_dB - 10 * np.log10(again.J_mc)).max() < 1e-7


def test_curve_csv_byte_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_curve_csv(_curve(), a)
    write_curve_csv(_curve(), b)
    assert a.read_bytes() == b.read_bytes()


def test_curve_csv_all_warmup(tmp_path):
    curve = LearningCurve(n_samples=5, warmup=10, J_mc=np.ones(5))
    path = tmp_path / "w.csv"
    write_curve_csv(curve, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 6
    assert all(line.endswith(",1") for line in lines[1:])


def test_fmt9():
    assert fmt9(1.0) == "1"
    assert fmt9(float("nan")) == "nan"
    assert fmt9(float("-inf")) == "-inf"
    assert fmt9(0.123456789123) == "0.123456789"
    assert len(fmt9(np.pi).replace(".", "").lstrip("0")) <= 9


def test_plant_csv_one_row_per_tap(tmp_path):
    from gscaec.harness import PlantConfig

    plant = PlantConfig(M=3, N_h=8, T_R60=0.001, F=2, seed=5).build()
    path = tmp_path / "plant.csv"
    write_plant_csv(plant, path)
    rows = path.read_text().strip().splitlines()
    assert len(rows) == 8
    assert all(len(r.split(",")) == 3 for r in rows)


# ---------------------------------------------------------------------------
# CLI


def _write_cfg(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return str(p)


def test_cli_simulate_and_model_and_compare(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, BASE_CONFIG)
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", cfg, "--out", out]) == 0
    assert (tmp_path / "out" / "curve.csv").exists()
    assert main(["model", "--config", cfg, "--out", out]) == 0
    assert main(["compare", "--config", cfg, "--out", out, "--runs", "3"]) == 0
    text = capsys.readouterr().out
    assert "deviation over" in text
    assert (tmp_path / "out" / "report.txt").exists()


def test_cli_stability_synthetic(capsys):
    assert main(["stability", "--lambdas", "0.1,0.2"]) == 0
    out = capsys.readouterr().out
    assert "stable, tr=0.3 < 0.6667" in out
    assert "max|eig(Phi)|" in out


def test_cli_stability_from_config(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, BASE_CONFIG)
    assert main(["stability", "--config", cfg]) == 0
    assert "split:" in capsys.readouterr().out


def test_cli_plant_gen(tmp_path):
    cfg = _write_cfg(tmp_path, BASE_CONFIG)
    assert main(["plant-gen", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "plant.csv").exists()


def test_cli_design_search_feasible_and_infeasible(tmp_path, capsys):
    design = """
[design]
target_jinf_db = -15.0
target_at_db = -15.0
at_n = 2000
m_values = 2
n_aec_min = 16
n_aec_max = 16
budget_points = 5
share_step = 0.3
"""
    cfg = _write_cfg(tmp_path, BASE_CONFIG + design)
    assert main(["design-search", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "design.csv").exists()

    tight = design.replace("target_jinf_db = -15.0", "target_jinf_db = -60.0")
    cfg2 = _write_cfg(tmp_path, BASE_CONFIG + tight)
    assert main(["design-search", "--config", cfg2, "--out", str(tmp_path / "d2")]) == 3
    assert "infeasible" in capsys.readouterr().err


def test_cli_exit_codes(tmp_path, capsys):
    # 1: config error
    bad = _write_cfg(tmp_path, BASE_CONFIG.replace("[plant]", "[plantt]"))
    assert main(["simulate", "--config", bad]) == 1
    # 2: numerical error (all runs divergent)
    div = _write_cfg(
        tmp_path,
        BASE_CONFIG.replace("mu_aec = 2e-3", "mu_aec = 1.0").replace(
            "mu_bf = 2e-3", "mu_bf = 1.0"
        ).replace("n_samples = 400", "n_samples = 3000"),
    )
    assert main(["simulate", "--config", div, "--out", str(tmp_path / "x")]) == 2
    capsys.readouterr()


def test_cli_env_overrides(tmp_path, monkeypatch):
    cfg = _write_cfg(tmp_path, BASE_CONFIG)
    monkeypatch.setenv("GSCAEC_OUT", str(tmp_path / "envout"))
    monkeypatch.setenv("GSCAEC_RUNS", "2")
    assert main(["simulate", "--config", cfg]) == 0
    assert (tmp_path / "envout" / "curve.csv").exists()


def test_cli_seed_changes_output_deterministically(tmp_path):
    cfg = _write_cfg(tmp_path, BASE_CONFIG)
    a, b, c = (str(tmp_path / d) for d in "abc")
    main(["simulate", "--config", cfg, "--out", a, "--seed", "1"])
    main(["simulate", "--config", cfg, "--out", b, "--seed", "2"])
    main(["simulate", "--config", cfg, "--out", c, "--seed", "1"])
    ra = (tmp_path / "a" / "curve.csv").read_bytes()
    rb = (tmp_path / "b" / "curve.csv").read_bytes()
    rc = (tmp_path / "c" / "curve.csv").read_bytes()
    assert ra != rb
    assert ra == rc


def test_default_runconfig_roundtrip():
    cfg = RunConfig()
    assert parse_config(emit_config(cfg)) == cfg


def test_load_config_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/path.ini")
