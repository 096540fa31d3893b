"""Experiment orchestration: config -> task stream -> staged training -> record.

All randomness flows from the single config seed through documented
sub-seed draws (dataset, class order, model init, then one seed per stage),
so a run is a pure function of its config up to wall-clock fields.

Budget discipline: the exemplar capacity K is fixed before training from the
target byte budget and the method's *final* model size, and the ledger is
checked against the target after every stage.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .datasets import Dataset, load_dataset, synth_dataset
from .exemplars import ExemplarSet
from .learners import (LearnerConfig, StageDataView, StageInputs, StageResult,
                       strategy_for, train_stage)
from .membudget import (MEGABYTE, BudgetLedger, align_budget, exact_megabytes,
                        total_megabytes)
from .metrics import PMCurve, apm, auc, average_accuracy, metrics_table
from .netblocks import (BackboneSpec, BackboneState, ExpandableModel,
                        param_count, predict_param_count)
from .prng import SplitMix64
from .probes import ProbeTrace, cka_matrix
from .stream import SplitSpec, TaskStream, make_stream

PROFILES = {
    # Seconds-scale defaults: enough epochs that replay visibly forgets.
    "desk": {
        "epochs": 30,
        "batch_size": 64,
        "learning_rate": 0.1,
        "momentum": 0.9,
        "lr_schedule": [[15, 0.1], [25, 0.1]],
    },
    # The reference full-scale schedule; impractical for the synthetic bench
    # but shipped for completeness.
    "paper": {
        "epochs": 170,
        "batch_size": 128,
        "learning_rate": 0.1,
        "momentum": 0.9,
        "lr_schedule": [[80, 0.1], [150, 0.1]],
    },
}

DEFAULT_CONFIG = {
    "method": "replay",
    "profile": "desk",
    "dataset": {
        "kind": "synth",
        "classes": 10,
        "dim": 16,
        "train_per_class": 100,
        "test_per_class": 20,
        "spread": 0.35,
        "path": None,               # for kind = "file"
    },
    "split": {"x": 0, "y": 2},
    "budget": {
        "align_to": "der",          # anchor method, used unless target_mb is set
        "target_mb": None,
        "base_exemplars": 10,
        "bytes_per_param": 4,
        # Synthetic instances are float64 vectors, so storing one costs
        # 8 bytes per feature (dim 16 -> 128). Pass None to fall back to the
        # 1-byte-per-value image convention (= feature_dim).
        "bytes_per_exemplar": 128,
    },
    "model": {
        "hidden_dim": 8,
        "num_blocks": 2,
        "decomposition_index": None,
        # "zero" keeps old-class logits bit-exact through an expansion (the
        # inherited block is copied and every new entry starts inert);
        # "random" is available but visibly corrupts old classes at this scale.
        "classifier_init": "zero",
    },
    "learner": {
        "lambda_policy": "class_ratio",
        "lambda_fixed": 0.5,
        "aux_weight": 1.0,
        "freeze_policy": "auto",
        "freeze_threshold": 20,
        "memo_weight_norm": True,
        "wa_align_each_epoch": False,
        "reherd_each_stage": True,
    },
    "probes": {"enabled": False},
    "seed": 0,
    "class_order_seed": None,       # None -> derived from seed
}


def normalize_config(config: dict) -> dict:
    """Merge user config over profile and package defaults; validate keys."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    profile = config.get("profile", cfg["profile"])
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    learner_defaults = dict(cfg["learner"])
    learner_defaults.update(PROFILES[profile])
    cfg["learner"] = learner_defaults
    for key, value in config.items():
        if key not in cfg:
            raise ValueError(f"unknown config key {key!r}")
        if isinstance(value, dict):
            unknown = set(value) - set(cfg[key])
            if unknown:
                raise ValueError(f"unknown keys in config[{key!r}]: {sorted(unknown)}")
            cfg[key].update(value)
        else:
            cfg[key] = value
    cfg["profile"] = profile
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


@dataclass
class RunRecord:
    """Everything one run produced, JSON-serializable and reproducible."""

    config: dict
    config_hash: str
    seed: int
    version: str
    method: str
    target_bytes: int
    exemplar_budget: int
    stages: list[StageResult]
    ledger: BudgetLedger
    probes: ProbeTrace | None
    wall_time: float

    @property
    def stage_accuracies(self) -> list[float]:
        return [s.accuracy for s in self.stages]

    @property
    def average_accuracy(self) -> float:
        return average_accuracy(self.stage_accuracies)

    @property
    def last_accuracy(self) -> float:
        return self.stages[-1].accuracy

    @property
    def memory_mb(self) -> float:
        return exact_megabytes(self.ledger.total_bytes)

    def to_dict(self, include_timing: bool = True) -> dict:
        stages = []
        for s in self.stages:
            d = s.to_dict()
            if not include_timing:
                d.pop("wall_time")
            stages.append(d)
        out = {
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "method": self.method,
            "target_bytes": self.target_bytes,
            "exemplar_budget": self.exemplar_budget,
            "stages": stages,
            "ledger": {
                "model_param_count": self.ledger.model_param_count,
                "exemplar_count": self.ledger.exemplar_count,
                "bytes_per_param": self.ledger.bytes_per_param,
                "bytes_per_exemplar": self.ledger.bytes_per_exemplar,
                "total_bytes": self.ledger.total_bytes,
                "total_mb": exact_megabytes(self.ledger.total_bytes),
                "total_mb_reported": total_megabytes(self.ledger),
            },
            "probes": self.probes.to_dict() if self.probes is not None else None,
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def load(path: Path | str) -> dict:
        return json.loads(Path(path).read_text())


def _build_dataset(cfg: dict, dataset_seed: int) -> Dataset:
    ds = cfg["dataset"]
    if ds["kind"] == "synth":
        return synth_dataset(ds["classes"], ds["train_per_class"], ds["test_per_class"],
                             ds["dim"], ds["spread"], dataset_seed)
    if ds["kind"] == "file":
        return load_dataset(ds["path"])
    raise ValueError(f"unknown dataset kind {ds['kind']!r}")


def resolve_budget(cfg: dict, dataset: Dataset, split: SplitSpec) -> tuple[int, int, int, int]:
    """Returns (target_bytes, exemplar_budget K, bytes_per_param, bytes_per_exemplar)."""
    budget = cfg["budget"]
    bpp = budget["bytes_per_param"]
    bpe = budget["bytes_per_exemplar"] or dataset.default_bytes_per_exemplar
    model_cfg = cfg["model"]
    spec = BackboneSpec(dataset.feature_dim, model_cfg["hidden_dim"], model_cfg["num_blocks"],
                        model_cfg["decomposition_index"])
    stages = split.stage_count
    classes = split.total_classes
    if budget.get("target_mb") is not None:
        target = round(budget["target_mb"] * MEGABYTE)
    else:
        anchor = budget.get("align_to", "der")
        if anchor not in ("der", "memo"):
            raise ValueError("budget.align_to must be 'der' or 'memo'")
        anchor_params = predict_param_count(spec, strategy_for(anchor), stages, classes)
        target = anchor_params * bpp + budget["base_exemplars"] * bpe
    method_params = predict_param_count(spec, strategy_for(cfg["method"]),
                                        stages if strategy_for(cfg["method"]) != "single" else 1,
                                        classes)
    k = align_budget(target, method_params * bpp, bpe, budget["base_exemplars"])
    return target, k, bpp, bpe


def _stage_inputs(dataset: Dataset, stream: TaskStream, stage: int,
                  exemplar_set: ExemplarSet) -> StageInputs:
    classes = stream.stage_classes[stage - 1]
    new_cols = stream.stage_columns(stage)
    total = stream.seen_column_count(stage)
    new_x, new_y = [], []
    by_col: dict[int, list[tuple[float, ...]]] = {c: [] for c in new_cols}
    for idx in stream.stage_train_indices[stage - 1]:
        col = stream.column_of[dataset.train_y[idx]]
        x = tuple(dataset.train_x[idx])
        new_x.append(x)
        new_y.append(col)
        by_col[col].append(x)
    eval_sets = []
    for t in range(stage):
        xs, ys = [], []
        for idx in stream.stage_test_indices[t]:
            col = stream.column_of[dataset.test_y[idx]]
            if col >= total:
                raise RuntimeError("evaluation touched a class beyond the seen set")
            xs.append(tuple(dataset.test_x[idx]))
            ys.append(col)
        eval_sets.append((xs, ys))
    view = StageDataView.for_stage(new_x, new_y, exemplar_set if stage >= 2 else None)
    return StageInputs(
        stage=stage,
        view=view,
        new_columns=new_cols,
        total_columns=total,
        base_class_count=len(stream.stage_classes[0]),
        new_instances_by_column=by_col,
        eval_sets=eval_sets,
    )


def _compose_backbones(model: ExpandableModel) -> list[BackboneState]:
    """One full backbone per task (trunk spliced onto each suffix if shared)."""
    if model.trunk is None:
        return list(model.branches)
    return [BackboneState(model.trunk.blocks + br.blocks, br.creation_stage)
            for br in model.branches]


def run_experiment(config: dict) -> RunRecord:
    start = time.perf_counter()
    cfg = normalize_config(config)
    master = SplitMix64(cfg["seed"])
    dataset_seed = master.spawn_seed()
    derived_order_seed = master.spawn_seed()
    model_seed = master.spawn_seed()

    dataset = _build_dataset(cfg, dataset_seed)
    split = SplitSpec(cfg["split"]["x"], cfg["split"]["y"], dataset.n_classes)
    order_seed = cfg["class_order_seed"]
    stream = make_stream(dataset, split, derived_order_seed if order_seed is None else order_seed)
    stage_seeds = [master.spawn_seed() for _ in range(split.stage_count)]

    target_bytes, k, bpp, bpe = resolve_budget(cfg, dataset, split)
    model_cfg = cfg["model"]
    spec = BackboneSpec(dataset.feature_dim, model_cfg["hidden_dim"], model_cfg["num_blocks"],
                        model_cfg["decomposition_index"])
    learner = LearnerConfig(
        method=cfg["method"],
        seed=cfg["seed"],
        classifier_init=model_cfg["classifier_init"],
        **cfg["learner"],
    )
    model = ExpandableModel(strategy_for(cfg["method"]), spec, len(stream.stage_classes[0]),
                            model_seed, model_cfg["classifier_init"])
    exemplar_set = ExemplarSet(k)
    probe_trace = ProbeTrace() if cfg["probes"]["enabled"] else None

    stages: list[StageResult] = []
    ledger = None
    for b in range(1, split.stage_count + 1):
        inputs = _stage_inputs(dataset, stream, b, exemplar_set)
        model, result = train_stage(model, inputs, exemplar_set, learner,
                                    stage_seeds[b - 1], probe_trace)
        ledger = BudgetLedger(param_count(model), exemplar_set.total_count, bpp, bpe)
        if ledger.total_bytes > target_bytes:
            raise RuntimeError(
                f"stage {b} exceeded the budget: {ledger.total_bytes} B > {target_bytes} B")
        stages.append(result)

    if probe_trace is not None and len(model.branches) >= 2:
        backbones = _compose_backbones(model)
        xs = [x for t in range(stream.stage_count) for x in
              ( tuple(dataset.test_x[i]) for i in stream.stage_test_indices[t] )]
        batch_rows = xs[:128]
        from .diffcore import Tensor
        batch = Tensor([v for row in batch_rows for v in row], (len(batch_rows), dataset.feature_dim))
        probe_trace.cka_shallow = cka_matrix(backbones, "shallow", batch)
        probe_trace.cka_deep = cka_matrix(backbones, "deep", batch)

    return RunRecord(
        config=cfg,
        config_hash=config_hash(cfg),
        seed=cfg["seed"],
        version=__version__,
        method=cfg["method"],
        target_bytes=target_bytes,
        exemplar_budget=k,
        stages=stages,
        ledger=ledger,
        probes=probe_trace,
        wall_time=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# curves, sweeps and metric tables over saved records
# ---------------------------------------------------------------------------


def emit_curve(records: list) -> str:
    """CSV of (memory_MB, avg_acc, last_acc) for one method, sorted by memory."""
    if not records:
        raise ValueError("no records")
    methods = {r.method if isinstance(r, RunRecord) else r["method"] for r in records}
    if len(methods) != 1:
        raise ValueError(f"records mix methods: {sorted(methods)}")
    points = []
    for r in records:
        if isinstance(r, RunRecord):
            points.append((r.memory_mb, r.average_accuracy, r.last_accuracy))
        else:
            accs = [s["accuracy"] for s in r["stages"]]
            points.append((r["ledger"]["total_mb"], average_accuracy(accs), accs[-1]))
    points.sort()
    for a, b in zip(points, points[1:]):
        if a[0] == b[0]:
            raise ValueError(f"duplicate memory point {a[0]} MB")
    lines = ["memory_MB,avg_acc,last_acc"]
    lines += [f"{mb:.6g},{avg:.6g},{last:.6g}" for mb, avg, last in points]
    return "\n".join(lines) + "\n"


def sweep(config: dict, memory_points_mb: list[float]) -> list[RunRecord]:
    """Run the same config at several total-memory targets."""
    if len(set(memory_points_mb)) != len(memory_points_mb):
        raise ValueError("duplicate memory points")
    records = []
    for mb in memory_points_mb:
        cfg = copy.deepcopy(config)
        budget = dict(cfg.get("budget", {}))
        budget.pop("align_to", None)
        budget["target_mb"] = mb
        cfg["budget"] = budget
        records.append(run_experiment(cfg))
    return records


def records_to_table(record_dicts: list[dict]) -> str:
    """Aggregate saved records into the metrics CSV (one row per method)."""
    by_method: dict[str, list[dict]] = {}
    for r in record_dicts:
        by_method.setdefault(r["method"], []).append(r)
    entries = []
    for method in sorted(by_method):
        group = sorted(by_method[method], key=lambda r: r["ledger"]["total_mb"])
        points = []
        for r in group:
            accs = [s["accuracy"] for s in r["stages"]]
            points.append((r["ledger"]["total_mb"], average_accuracy(accs), accs[-1]))
        entry = {
            "method": method,
            "memory_MB": points[-1][0],
            "avg": points[-1][1],
            "last": points[-1][2],
            "apm_s": apm(points[0][1], points[0][0]),
            "apm_e": apm(points[-1][1], points[-1][0]),
            "auc_a": None,
            "auc_l": None,
        }
        if len(points) >= 2:
            curve = PMCurve(points)
            entry["auc_a"] = auc(curve, "average")
            entry["auc_l"] = auc(curve, "last")
        entries.append(entry)
    return metrics_table(entries)
