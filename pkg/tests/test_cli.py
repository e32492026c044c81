import json
from pathlib import Path

import pytest

from anosov_lab.cli import load_config, main, parse_config, run
from anosov_lab.errors import ConfigError
from anosov_lab.periodic import lefschetz_count

BASE = {
    "schema_version": 1,
    "map": {"matrix": [[0, 0, 1], [1, 0, -6], [0, 1, 5]], "epsilon": 0.0, "perturbation": []},
    "tasks": ["validate", "periodic"],
    "budgets": {"period_cap": 4},
    "seed": 0,
}


def _write(tmp_path, doc, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def test_empty_task_list_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="tasks"):
        parse_config({**BASE, "tasks": []})
    assert main(["run", _write(tmp_path, {**BASE, "tasks": []})]) == 2


@pytest.mark.parametrize("patch, field", [
    ({"tasks": ["nope"]}, "tasks"),
    ({"map": {**BASE["map"], "matrix": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}}, "map"),
    ({"budgets": {"K": 8, "quad_n": 20}}, "quad_n"),
])
def test_invalid_configs_name_the_field(patch, field):
    with pytest.raises(ConfigError, match=field):
        parse_config({**BASE, **patch})


def test_periodic_counts_and_exit_zero(tmp_path):
    rep = run(parse_config(BASE))
    cards = rep.blocks["periodic"]["values"]["card_F"]
    assert cards[:3] == [1, 13, 91]
    assert cards == [lefschetz_count(BASE["map"]["matrix"], n) for n in range(1, 5)]
    assert rep.exit_code == 0
    assert main(["run", _write(tmp_path, BASE), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "tables" / "periodic_counts.csv").exists()


def test_quick_config_taylor(tmp_path):
    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "quick.json")
    rep = run(cfg)
    checks = {c["name"]: c["passed"] for c in rep.blocks["zeta"]["checks"]}
    assert checks["taylor_matches_exact"]
    assert checks["determinant_identity_count_orientation"]
    assert rep.blocks["zeta"]["values"]["card_F"][:3] == [1, 13, 91]


def test_reports_are_byte_identical(tmp_path):
    cfg = _write(tmp_path, {**BASE, "tasks": ["validate", "periodic", "zeta"]})
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", cfg, "--out", str(a)])
    main(["run", cfg, "--out", str(b), "--workers", "2"])
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    for f in sorted((a / "tables").iterdir()):
        assert f.read_bytes() == (b / "tables" / f.name).read_bytes()


def test_task_error_gives_error_block_and_exit_3(tmp_path):
    doc = {**BASE, "budgets": {"period_cap": 4, "points": 10}}
    rep = run(parse_config(doc))
    assert rep.blocks["periodic"]["status"] == "error"
    assert rep.blocks["periodic"]["error"]["type"] == "BudgetExceeded"
    assert rep.blocks["validate"]["status"] == "ok"
    assert main(["run", _write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 3


def test_unknown_task_flag(tmp_path):
    assert main(["run", _write(tmp_path, BASE), "--tasks", "zeta"]) == 2
