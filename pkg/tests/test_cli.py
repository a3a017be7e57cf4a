"""Command line behavior: subcommands, exit codes, outputs."""

import xml.etree.ElementTree as ET

import pytest

from homlab.cli import main

CRIT_CFG = """
study.kind = criterion
family.name = regular_sin
schedule.eps = 0.1, 0.05
criterion.exponents = 0.5
criterion.refine = 64
"""


@pytest.fixture
def crit_cfg(tmp_path):
    path = tmp_path / "crit.cfg"
    path.write_text(CRIT_CFG)
    return path


def test_families_lists_catalogue(capsys):
    assert main(["families"]) == 0
    out = capsys.readouterr().out
    for name in ("regular_sin", "sparse_bumps", "almost_periodic",
                 "fractal_2d", "random_rotation"):
        assert name in out


def test_criterion_run_writes_csv(tmp_path, crit_cfg, capsys):
    out = tmp_path / "crit.csv"
    code = main(["criterion", "--config", str(crit_cfg), "--out", str(out)])
    assert code == 0
    text = out.read_text()
    assert text.startswith("# study.kind = criterion")
    header = [l for l in text.splitlines() if not l.startswith("#")][0]
    assert header.split(",")[:3] == ["eps", "eta", "rho1"]
    assert "wrote" in capsys.readouterr().out


def test_stdout_output(crit_cfg, capsys):
    code = main(["criterion", "--config", str(crit_cfg), "--out", "-"])
    assert code == 0
    out = capsys.readouterr().out
    assert "eps,eta,rho1" in out


def test_missing_config_exits_2(tmp_path, capsys):
    code = main(["criterion", "--config", str(tmp_path / "no.cfg")])
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_bad_schedule_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text(CRIT_CFG.replace("0.1, 0.05", "0.05, 0.1"))
    code = main(["criterion", "--config", str(path), "--out", "-"])
    assert code == 2


def test_kind_mismatch_exits_2(tmp_path, crit_cfg):
    assert main(["norm", "--config", str(crit_cfg), "--out", "-"]) == 2


def test_missing_output_exits_2(tmp_path, crit_cfg, capsys):
    code = main(["criterion", "--config", str(crit_cfg)])
    assert code == 2
    assert "no output path" in capsys.readouterr().err


def test_numerical_breach_exits_3(crit_cfg, monkeypatch, capsys):
    import homlab.cli as cli
    from homlab.fem import NumericalBreach

    def boom(*args, **kwargs):
        raise NumericalBreach("synthetic residual failure")

    monkeypatch.setattr(cli, "run_study", boom)
    code = main(["criterion", "--config", str(crit_cfg), "--out", "-"])
    assert code == 3
    assert "numerical breach" in capsys.readouterr().err


def test_power_iteration_failure_exits_3(crit_cfg, monkeypatch, capsys):
    import homlab.cli as cli
    from homlab.norms import PowerIterationError

    def boom(*args, **kwargs):
        raise PowerIterationError("never settled")

    monkeypatch.setattr(cli, "run_study", boom)
    code = main(["criterion", "--config", str(crit_cfg), "--out", "-"])
    assert code == 3


def test_report_writes_wellformed_svg(tmp_path, crit_cfg, capsys):
    csv_path = tmp_path / "crit.csv"
    main(["criterion", "--config", str(crit_cfg), "--out", str(csv_path)])
    svg_path = tmp_path / "crit.svg"
    code = main(["report", "--csv", str(csv_path), "--out", str(svg_path)])
    assert code == 0
    root = ET.parse(svg_path).getroot()
    assert root.tag.endswith("svg")
    out = capsys.readouterr().out
    assert "fit rho1" in out or "fit bound_m1m1" in out


def test_report_unknown_column_exits_2(tmp_path, crit_cfg, capsys):
    csv_path = tmp_path / "crit.csv"
    main(["criterion", "--config", str(crit_cfg), "--out", str(csv_path)])
    code = main(["report", "--csv", str(csv_path), "--columns", "nope"])
    assert code == 2


def test_report_default_svg_name(tmp_path, crit_cfg):
    csv_path = tmp_path / "crit.csv"
    main(["criterion", "--config", str(crit_cfg), "--out", str(csv_path)])
    assert main(["report", "--csv", str(csv_path)]) == 0
    assert (tmp_path / "crit.svg").exists()


def test_seed_and_threads_flags_accepted(tmp_path, crit_cfg):
    out = tmp_path / "a.csv"
    code = main(["criterion", "--config", str(crit_cfg), "--out", str(out),
                 "--seed", "9", "--threads", "2", "--verbose"])
    assert code == 0
