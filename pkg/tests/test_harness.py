from __future__ import annotations

import copy
import csv
import json

import pytest

from levystore import cli, harness
from levystore.decomposition import occupancy_bound

EXP1 = {"family": "exponential", "mean": 1.0}
MINIMAL = {
    "scenario": {
        "up": {"drift": 1.0, "jump_rate": 0.5, "jump_dist": EXP1},
        "policy": {"type": "schedule", "epochs": [[0.0, None]]},
        "horizon": 1000.0,
    }
}


def small_b(horizon=4000.0, replicas=3):
    doc = harness.registry()["B"][1]
    doc["scenario"]["horizon"] = horizon
    doc["replicas"] = replicas
    return doc


def err(doc) -> harness.ConfigError:
    with pytest.raises(harness.ConfigError) as info:
        harness.parse_config(json.dumps(doc) if isinstance(doc, dict) else doc)
    return info.value


# --- parse_config -------------------------------------------------------------------


def test_minimal_config_gets_defaults():
    cfg = harness.parse_config(json.dumps(MINIMAL))
    assert cfg.replicas == 1
    assert cfg.alpha_grid == harness.DEFAULT_ALPHAS
    assert cfg.burn_in_fraction == 0.1
    assert cfg.tolerances == harness.Tolerances(3.0, 1e-3)
    assert cfg.scenario.down.drift == 0.0 and cfg.scenario.down.jump_rate == 0.0
    assert cfg.scenario.w0 == 0.0 and cfg.scenario.seed == 0


def test_negative_jump_rate_message():
    doc = copy.deepcopy(MINIMAL)
    doc["scenario"]["up"]["jump_rate"] = -0.5
    e = err(doc)
    assert e.code == "E_VALUE"
    assert "up.jump_rate: must be ≥ 0" in str(e)


def test_stability_error_names_bound():
    doc = small_b()
    doc["scenario"]["up"] = {"drift": 0.4, "jump_rate": 0.5, "jump_dist": EXP1}  # r <= eta'(0)
    doc["scenario"]["policy"] = {"type": "exhaustive", "down_dist": EXP1}
    e = err(doc)
    assert e.code == "E_STABILITY"
    bound = occupancy_bound(0.4 - 0.5, 0.5)
    assert "phi'(0)/(eta'(0)+phi'(0))" in str(e) and f"{bound:g}" in str(e)


def test_error_codes_are_distinct():
    codes = set()
    codes.add(err("{not json").code)
    codes.add(err({**MINIMAL, "colour": "red"}).code)
    codes.add(err({"scenario": {"up": MINIMAL["scenario"]["up"], "horizon": 1.0}}).code)
    doc = copy.deepcopy(MINIMAL)
    doc["scenario"]["horizon"] = "long"
    codes.add(err(doc).code)
    doc["scenario"]["horizon"] = -1.0
    codes.add(err(doc).code)
    assert codes == {"E_JSON", "E_UNKNOWN_FIELD", "E_MISSING_FIELD", "E_TYPE", "E_VALUE"}


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d.update(alpha_grid=[0.25, 0.5]), "alpha_grid"),
        (lambda d: d.update(alpha_grid=[0.0, 1.0, 0.5]), "alpha_grid"),
        (lambda d: d.update(replicas=0), "replicas"),
        (lambda d: d.update(burn_in_fraction=0.7), "burn_in_fraction"),
        (lambda d: d.update(tolerances={"se_mult": 3}), "tolerances"),
        (lambda d: d["scenario"].update(horizon=0.0), "scenario.horizon"),
        (lambda d: d["scenario"].update(mode="fast"), "scenario.mode"),
        (lambda d: d["scenario"]["up"].update(jump_dist={"family": "pareto"}), "scenario.up.jump_dist.family"),
        (lambda d: d["scenario"]["up"].update(drift=0.0), "scenario.up"),
        (lambda d: d["scenario"].update(policy={"type": "schedule", "epochs": [[3.0, 2.0]]}), "scenario.policy.epochs"),
        (lambda d: d["scenario"].update(policy={"type": "renewal", "down_dist": EXP1}), "scenario.policy.up_dist"),
    ],
)
def test_diagnostics_carry_field_path(mutate, path):
    doc = copy.deepcopy(MINIMAL)
    mutate(doc)
    e = err(doc)
    assert e.path == path
    assert str(e).startswith(path + ":")


def test_config_round_trip():
    for name, (_, doc) in harness.registry().items():
        cfg = harness.parse_config(doc)
        assert harness.parse_config(json.dumps(harness.config_to_dict(cfg))) == cfg, name


def test_expected_occupancy():
    reg = harness.registry()
    assert harness.expected_occupancy(harness.parse_config(reg["B"][1]).scenario.policy, 1e5) == 0.25
    assert harness.expected_occupancy(harness.parse_config(reg["D"][1]).scenario.policy, 1e5) == 0.25
    assert harness.expected_occupancy(harness.parse_config(reg["E"][1]).scenario.policy, 1e5) == 0.75
    assert harness.expected_occupancy(harness.parse_config(reg["A"][1]).scenario.policy, 1e5) == 0.0


# --- run ------------------------------------------------------------------------------


def test_horizon_zero_rejected_before_simulation():
    cfg = harness.parse_config(MINIMAL)
    from dataclasses import replace

    with pytest.raises(harness.ConfigError):
        harness.run(replace(cfg, scenario=replace(cfg.scenario, horizon=0.0)))


def test_up_only_reports_pk_match(tmp_path):
    doc = harness.registry()["A"][1]
    doc["scenario"]["horizon"] = 2e4
    doc["replicas"] = 4
    res = harness.run(harness.parse_config(doc))
    pk = [c for c in res.checks if c.criterion == "pk_match"]
    assert len(pk) == 5 and all(c.passed for c in pk)


@pytest.fixture(scope="module")
def b_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("b")
    cfg = harness.parse_config(small_b())
    res = harness.run(cfg)
    harness.write_outputs(res, out)
    return res, out


def test_run_writes_artifacts(b_run):
    res, out = b_run
    names = {p.name for p in out.iterdir()}
    assert {"decomposition.csv", "summary.json", "lst_time-average.csv", "lst_down-conditional.csv",
            "lst_embedded-S.csv", "lst_embedded-T.csv"} <= names
    criteria = {c.criterion for c in res.checks}
    assert {"identity", "rv_form", "corollary", "pm", "martingale", "delta", "regulator_drift"} <= criteria
    with open(out / "decomposition.csv") as fh:
        rows = list(csv.reader(fh))
    assert [float(r[0]) for r in rows[1:]] == list(harness.DEFAULT_ALPHAS)


def test_run_is_deterministic(b_run, tmp_path):
    res, out = b_run
    again = harness.run(harness.parse_config(small_b()), workers=2)
    harness.write_outputs(again, tmp_path)
    for name in ("decomposition.csv", "summary.json", "lst_down-conditional.csv"):
        assert (out / name).read_bytes() == (tmp_path / name).read_bytes()


def test_verify_agrees_with_run(b_run):
    res, out = b_run
    code, _ = harness.verify(out)
    assert code == (0 if res.passed else 1)
    assert harness.verify(out) == harness.verify(out / "summary.json")  # idempotent


def _copy_report(src, dst):
    for p in src.iterdir():
        (dst / p.name).write_bytes(p.read_bytes())


def test_verify_flags_residual_beyond_tolerance(b_run, tmp_path):
    _, out = b_run
    _copy_report(out, tmp_path)
    summary = json.loads((tmp_path / "summary.json").read_text())
    for c in summary["checks"]:
        c["pass"] = True
    target = next(c for c in summary["checks"] if c["criterion"] == "identity" and c["alpha"] == 1.0)
    target["value"] = 10 * target["tolerance"]
    (tmp_path / "summary.json").write_text(json.dumps(summary))
    code, messages = harness.verify(tmp_path)
    assert code == 1
    assert any("identity" in m and "alpha=1" in m for m in messages if m.startswith("FAIL"))


def test_verify_structural_errors(b_run, tmp_path):
    _, out = b_run
    _copy_report(out, tmp_path)
    lines = (tmp_path / "decomposition.csv").read_text().splitlines()
    (tmp_path / "decomposition.csv").write_text("\n".join(lines[:-1]) + "\n")  # drop the last alpha
    assert harness.verify(tmp_path)[0] == 2
    (tmp_path / "summary.json").write_text("{broken")
    assert harness.verify(tmp_path)[0] == 2
    assert harness.verify(tmp_path / "missing")[0] == 2


def test_unstable_scenario_reports_growth():
    doc = harness.registry()["E"][1]
    doc["scenario"]["horizon"] = 2e4
    doc["replicas"] = 4
    res = harness.run(harness.parse_config(doc))
    assert [c.criterion for c in res.checks] == ["growth_rate", "regulator_vanishes"]
    assert res.check("growth_rate").target == pytest.approx(0.25)


def test_single_replica_uses_delta_method():
    res = harness.run(harness.parse_config(small_b(horizon=2e4, replicas=1)))
    idc = [c for c in res.checks if c.criterion == "identity"]
    assert all(c.se > 0 for c in idc)


# --- CLI ---------------------------------------------------------------------------------


def test_cli_scenarios_list(capsys):
    assert cli.main(["scenarios", "list"]) == 0
    out = capsys.readouterr().out
    assert all(line.split(":")[0] in "ABCDE" for line in out.strip().splitlines())


def test_cli_run_and_verify(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(small_b(horizon=3000.0, replicas=2)))
    code = cli.main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o"), "--emit-paths"])
    assert code in (0, 1)
    assert (tmp_path / "o" / "paths" / "path_000.csv").exists()
    assert cli.main(["verify", str(tmp_path / "o")]) == code
    assert "PASS" in capsys.readouterr().out


def test_cli_seed_override_changes_output(tmp_path):
    for seed, sub in ((1, "a"), (2, "b")):
        cli.main(["simulate", "--scenario", "B", "--horizon", "100", "--seed-override", str(seed),
                  "--out", str(tmp_path / sub)])
    assert (tmp_path / "a" / "path_000.csv").read_bytes() != (tmp_path / "b" / "path_000.csv").read_bytes()


def test_cli_validation_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    doc = copy.deepcopy(MINIMAL)
    doc["scenario"]["up"]["jump_rate"] = -1
    bad.write_text(json.dumps(doc))
    assert cli.main(["run", "--config", str(bad)]) == 2
    assert "up.jump_rate: must be ≥ 0" in capsys.readouterr().err
    assert cli.main(["run", "--scenario", "Z"]) == 2
    assert cli.main(["run", "--scenario", "B", "--horizon", "0"]) == 2
