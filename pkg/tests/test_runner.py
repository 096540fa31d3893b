"""End-to-end orchestration: determinism, budget enforcement, sweeps, CLI."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from cilbench.cli import main as cli_main
from cilbench.datasets import save_dataset, synth_dataset
from cilbench.runner import (DEFAULT_CONFIG, RunRecord, emit_curve,
                             normalize_config, records_to_table, resolve_budget,
                             run_experiment, sweep)

FAST = {
    "dataset": {"classes": 4, "dim": 6, "train_per_class": 12, "test_per_class": 6, "spread": 0.3},
    "split": {"x": 0, "y": 2},
    "model": {"hidden_dim": 6, "num_blocks": 2},
    "learner": {"epochs": 3, "batch_size": 8},
    "budget": {"base_exemplars": 8},
    "seed": 5,
}


def _fast_config(**overrides):
    cfg = json.loads(json.dumps(FAST))
    for key, value in overrides.items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    return cfg


def test_normalize_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config key"):
        normalize_config({"methodd": "replay"})
    with pytest.raises(ValueError, match="unknown keys"):
        normalize_config({"budget": {"bytes_per_exemplars": 3}})
    with pytest.raises(ValueError, match="profile"):
        normalize_config({"profile": "warp"})


def test_profiles_fill_learner_defaults():
    cfg = normalize_config({"profile": "paper"})
    assert cfg["learner"]["epochs"] == 170
    assert cfg["learner"]["lr_schedule"] == [[80, 0.1], [150, 0.1]]
    desk = normalize_config({})
    assert desk["learner"]["epochs"] == 30


def test_run_is_deterministic_modulo_timing():
    cfg = _fast_config(method="memo")
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert a.to_json(include_timing=False) == b.to_json(include_timing=False)
    assert a.config_hash == b.config_hash


def test_different_seed_different_record():
    a = run_experiment(_fast_config(method="replay"))
    b = run_experiment(_fast_config(method="replay", seed=6))
    assert a.to_json(include_timing=False) != b.to_json(include_timing=False)


def test_budget_ledger_within_target_every_method():
    for method in ("replay", "icarl", "wa", "der", "memo"):
        rec = run_experiment(_fast_config(method=method))
        assert rec.ledger.total_bytes <= rec.target_bytes
        assert rec.exemplar_budget >= rec.ledger.exemplar_count


def test_expansion_methods_take_more_model_fewer_exemplars():
    replay = run_experiment(_fast_config(method="replay"))
    der = run_experiment(_fast_config(method="der"))
    memo = run_experiment(_fast_config(method="memo"))
    assert replay.target_bytes == der.target_bytes == memo.target_bytes
    assert der.ledger.model_param_count > memo.ledger.model_param_count
    assert memo.ledger.model_param_count > replay.ledger.model_param_count
    assert replay.exemplar_budget > memo.exemplar_budget > der.exemplar_budget


def test_single_stage_degenerate_run():
    cfg = _fast_config(method="replay", split={"x": 0, "y": 4})
    rec = run_experiment(cfg)
    assert len(rec.stages) == 1
    assert rec.average_accuracy == pytest.approx(round(rec.last_accuracy, 2), abs=0.005)


def test_probes_recorded_when_enabled():
    cfg = _fast_config(method="der", probes={"enabled": True})
    rec = run_experiment(cfg)
    assert rec.probes is not None
    assert set(rec.probes.grad_norms) == {1, 2}
    assert set(rec.probes.shift_mse) == {1, 2}
    assert rec.probes.cka_shallow is not None
    assert len(rec.probes.cka_shallow) == 2


def test_run_from_cild_files(tmp_path):
    ds = synth_dataset(4, 10, 4, 5, 0.3, seed=11)
    save_dataset(ds, tmp_path / "data")
    cfg = _fast_config(method="replay")
    cfg["dataset"] = {"kind": "file", "path": str(tmp_path / "data")}
    cfg["model"] = {"hidden_dim": 6, "num_blocks": 2}
    rec = run_experiment(cfg)
    assert len(rec.stages) == 2


def test_target_budget_too_small_errors():
    cfg = _fast_config(method="der", budget={"target_mb": 0.0001, "base_exemplars": 8})
    with pytest.raises(ValueError, match="below method floor"):
        run_experiment(cfg)


def test_resolve_budget_matches_align_arithmetic():
    cfg = normalize_config(_fast_config(method="replay"))
    ds = synth_dataset(4, 12, 6, 6, 0.3, seed=1)
    from cilbench.stream import SplitSpec
    split = SplitSpec(0, 2, 4)
    target, k, bpp, bpe = resolve_budget(cfg, ds, split)
    assert bpe == 128  # configured cost model (float64 vectors)
    cfg["budget"]["bytes_per_exemplar"] = None
    _, _, _, bpe_default = resolve_budget(cfg, ds, split)
    assert bpe_default == 6  # dataset fallback: one byte per feature
    assert k >= cfg["budget"]["base_exemplars"]
    assert target >= k * bpe


# ---------------------------------------------------------------------------
# curves, sweeps, tables
# ---------------------------------------------------------------------------


def test_sweep_produces_increasing_memory_curve():
    base = _fast_config(method="memo")
    points = resolve_target_points(base)
    records = sweep(base, points)
    curve = emit_curve(records)
    lines = curve.strip().split("\n")
    assert lines[0] == "memory_MB,avg_acc,last_acc"
    xs = [float(line.split(",")[0]) for line in lines[1:]]
    assert xs == sorted(xs) and len(set(xs)) == len(xs)


def resolve_target_points(base_cfg) -> list[float]:
    """Two feasible MB targets above the method floor but below exemplar
    saturation (the tiny dataset caps how many exemplars can be stored)."""
    cfg = normalize_config(base_cfg)
    from cilbench.netblocks import BackboneSpec, predict_param_count
    from cilbench.learners import strategy_for
    from cilbench.stream import SplitSpec
    ds_cfg = cfg["dataset"]
    split = SplitSpec(cfg["split"]["x"], cfg["split"]["y"], ds_cfg["classes"])
    spec = BackboneSpec(ds_cfg["dim"], cfg["model"]["hidden_dim"], cfg["model"]["num_blocks"])
    strategy = strategy_for(cfg["method"])
    stages = split.stage_count if strategy != "single" else 1
    params = predict_param_count(spec, strategy, stages, ds_cfg["classes"])
    bpe = cfg["budget"]["bytes_per_exemplar"] or ds_cfg["dim"]
    floor = params * 4 + cfg["budget"]["base_exemplars"] * bpe
    return [(floor + 8 * bpe) / (1 << 20), (floor + 16 * bpe) / (1 << 20)]


def test_emit_curve_rejects_mixed_methods_and_duplicates():
    a = run_experiment(_fast_config(method="replay"))
    b = run_experiment(_fast_config(method="icarl"))
    with pytest.raises(ValueError, match="mix"):
        emit_curve([a, b])
    with pytest.raises(ValueError, match="duplicate"):
        emit_curve([a, a])


def test_records_to_table_shape():
    recs = [run_experiment(_fast_config(method=m)).to_dict() for m in ("replay", "memo")]
    table = records_to_table(recs)
    lines = table.strip().split("\n")
    assert lines[0].startswith("method,memory_MB,avg,last")
    assert len(lines) == 3
    assert lines[1].split(",")[0] == "memo"
    assert lines[2].split(",")[0] == "replay"


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_run_and_probe_and_metrics(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg = _fast_config(method="der", probes={"enabled": True})
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    assert cli_main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    record_path = out / "record.json"
    assert record_path.exists()
    capsys.readouterr()

    assert cli_main(["probe", "--run", str(record_path), "--figure", "gradnorm"]) == 0
    got = capsys.readouterr().out
    assert got.startswith("block,value,stage")

    assert cli_main(["probe", "--run", str(record_path), "--figure", "cka"]) == 0
    got = capsys.readouterr().out
    assert got.startswith("depth,row,col,value")

    table_path = tmp_path / "table.csv"
    assert cli_main(["metrics", "--runs", str(out), "--table", str(table_path)]) == 0
    assert table_path.read_text().startswith("method,memory_MB,avg,last")


def test_cli_align_prints_reference_value(capsys):
    # target = ten-backbone endpoint + 2000 images; single backbone keeps the rest
    rc = cli_main(["align", "--params", "463504", "--bytes-per-exemplar", "3072",
                   "--target-mb", str((4635040 * 4 + 2000 * 3072) / (1 << 20)),
                   "--base-exemplars", "2000"])
    assert rc == 0
    assert capsys.readouterr().out.strip() == "7431"


def test_cli_sweep_writes_curve(tmp_path, capsys):
    cfg = _fast_config(method="replay")
    points = resolve_target_points(cfg)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "sweep"
    rc = cli_main(["sweep", "--config", str(cfg_path),
                   "--memory-points", ",".join(str(p) for p in points),
                   "--out", str(out)])
    assert rc == 0
    assert (out / "curve_replay.csv").exists()


def test_cli_rerun_is_byte_identical_modulo_timing(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(_fast_config(method="icarl")))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    cli_main(["run", "--config", str(cfg_path), "--out", str(out_a)])
    cli_main(["run", "--config", str(cfg_path), "--out", str(out_b)])

    def strip_timing(path: Path) -> bytes:
        record = json.loads(path.read_text())
        record.pop("wall_time")
        for stage in record["stages"]:
            stage.pop("wall_time")
        return json.dumps(record, sort_keys=True).encode()

    assert strip_timing(out_a / "record.json") == strip_timing(out_b / "record.json")
