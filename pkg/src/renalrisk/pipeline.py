"""Staged pipeline: synth -> triggers -> featurize -> train -> predict -> evaluate.

Every artifact is a flat file under the configured work directory and starts
with a lineage line

    #! {"stage": ..., "stage_version": ..., "seed": ..., "config_sha256": ...,
        "inputs": {name: sha256-of-file, ...}}

(for binary model files the same record lives in the embedded header).
A stage is up to date when all its outputs exist and their lineage equals the
lineage recomputed from the current config and input files; rerunning it is
then a no-op. Stages refuse to run on missing or stale upstream artifacts.
Outputs are written to a temp file and renamed into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, replace
from datetime import date
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import claims as claims_mod
from . import evaluation as eval_mod
from . import features as feat_mod
from . import model as model_mod
from . import synth as synth_mod
from . import triggers as trig_mod
from .errors import ConfigError, DataError
from .triggers import TASKS


@dataclass
class PipelineConfig:
    workdir: Path
    seed: int
    synth: synth_mod.SynthConfig | None
    claims_path: Path | None
    dataset_range: tuple[date, date]
    trigger_range: tuple[date, date]
    codesets_path: Path | None
    split_ratios: tuple[float, float, float]
    split_seed: int
    min_count: int
    tasks: tuple[str, ...]
    hyperparams: model_mod.HyperParams | None
    grid: tuple[model_mod.HyperParams, ...] | None
    target_sensitivities: tuple[float, ...]
    workers: int = 1

    def library(self) -> claims_mod.CodeSetLibrary:
        return claims_mod.load_codeset_library(self.codesets_path)


def _parse_date_pair(raw, what: str) -> tuple[date, date]:
    try:
        lo, hi = raw
        return date.fromisoformat(lo), date.fromisoformat(hi)
    except (ValueError, TypeError):
        raise ConfigError(f"{what} must be a [start, end] pair of ISO dates, got {raw!r}")


def _hp_from_dict(raw: dict, default_seed: int) -> model_mod.HyperParams:
    known = set(model_mod.HyperParams.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown hyperparameter fields: {sorted(unknown)}")
    data = {"seed": default_seed}
    data.update(raw)
    hp = model_mod.HyperParams(**data)
    hp.validate()
    return hp


def load_pipeline_config(
    path: str | Path,
    seed_override: int | None = None,
    workers: int = 1,
) -> PipelineConfig:
    """Parse and validate the JSON pipeline config; fail before any work."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON ({exc})")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {
        "workdir",
        "seed",
        "synth",
        "claims",
        "dataset_range",
        "trigger_range",
        "codesets",
        "split",
        "features",
        "train",
        "evaluate",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    if "workdir" not in raw:
        raise ConfigError("config requires workdir")
    if "seed" not in raw:
        raise ConfigError("config requires a top-level seed")
    seed = int(raw["seed"]) if seed_override is None else seed_override

    synth_cfg = None
    claims_path = None
    if raw.get("synth"):
        synth_raw = dict(raw["synth"])
        synth_raw.setdefault("seed", seed)
        if seed_override is not None:
            synth_raw["seed"] = seed_override
        synth_cfg = synth_mod.config_from_dict(synth_raw)
        dataset_range = synth_cfg.date_range
    elif raw.get("claims"):
        claims_path = Path(raw["claims"])
        if "dataset_range" not in raw:
            raise ConfigError("external claims input requires dataset_range")
        dataset_range = _parse_date_pair(raw["dataset_range"], "dataset_range")
    else:
        raise ConfigError("config needs either a synth section or a claims path")

    if "trigger_range" not in raw:
        raise ConfigError("config requires trigger_range")
    trigger_range = _parse_date_pair(raw["trigger_range"], "trigger_range")
    if trigger_range[0] > trigger_range[1]:
        raise ConfigError("trigger_range start must not follow end")

    split_raw = raw.get("split", {})
    ratios = tuple(split_raw.get("ratios", (0.8, 0.1, 0.1)))
    if len(ratios) != 3:
        raise ConfigError("split.ratios must have three entries")
    split_seed = int(split_raw.get("seed", seed + 1))
    if seed_override is not None:
        split_seed = seed_override + 1

    feat_raw = raw.get("features", {})
    min_count = int(feat_raw.get("min_count", 1))
    if min_count < 1:
        raise ConfigError("features.min_count must be >= 1")

    train_raw = raw.get("train", {})
    tasks = tuple(train_raw.get("tasks", TASKS))
    for task in tasks:
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r} (expected subset of {TASKS})")
    hp = None
    grid = None
    hp_seed = seed + 2 if seed_override is None else seed_override + 2
    if "grid" in train_raw:
        grid = tuple(_hp_from_dict(g, hp_seed) for g in train_raw["grid"])
        if not grid:
            raise ConfigError("train.grid must not be empty")
    else:
        hp = _hp_from_dict(train_raw.get("hyperparams", {}), hp_seed)

    eval_raw = raw.get("evaluate", {})
    targets = tuple(float(t) for t in eval_raw.get("target_sensitivities", (0.6, 0.7, 0.8)))
    for t in targets:
        if not (0 < t <= 1):
            raise ConfigError(f"target sensitivity {t} outside (0, 1]")

    codesets = raw.get("codesets")
    return PipelineConfig(
        workdir=Path(raw["workdir"]),
        seed=seed,
        synth=synth_cfg,
        claims_path=claims_path,
        dataset_range=dataset_range,
        trigger_range=trigger_range,
        codesets_path=Path(codesets) if codesets else None,
        split_ratios=ratios,  # type: ignore[arg-type]
        split_seed=split_seed,
        min_count=min_count,
        tasks=tasks,
        hyperparams=hp,
        grid=grid,
        target_sensitivities=targets,
        workers=workers,
    )


# ---------------------------------------------------------------------------
# Artifact paths and lineage


def artifact_paths(cfg: PipelineConfig) -> dict[str, Path]:
    w = cfg.workdir
    paths = {
        "claims": cfg.claims_path if cfg.claims_path else w / "claims.tsv",
        "ground_truth": w / "ground_truth.tsv",
        "triggers": w / "triggers.tsv",
        "split": w / "split.tsv",
        "vocab": w / "vocab.tsv",
        "features_train": w / "features_train.tsv",
        "features_valid": w / "features_valid.tsv",
        "features_test": w / "features_test.tsv",
        "report_json": w / "report.json",
        "report_text": w / "report.txt",
    }
    for task in TASKS:
        paths[f"model_{task}"] = w / f"model_{task}.bin"
        paths[f"train_log_{task}"] = w / f"train_log_{task}.tsv"
        paths[f"predictions_{task}"] = w / f"predictions_{task}.tsv"
    return paths


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class _HashCache:
    def __init__(self):
        self._cache: dict[tuple[str, float, int], str] = {}

    def file_sha256(self, path: Path) -> str:
        stat = path.stat()
        key = (str(path), stat.st_mtime, stat.st_size)
        if key not in self._cache:
            digest = hashlib.sha256()
            with open(path, "rb") as handle:
                for block in iter(lambda: handle.read(1 << 20), b""):
                    digest.update(block)
            self._cache[key] = digest.hexdigest()
        return self._cache[key]


LINEAGE_PREFIX = "#! "


def read_text_lineage(path: Path) -> dict | None:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            first = handle.readline()
    except OSError:
        return None
    if not first.startswith(LINEAGE_PREFIX):
        return None
    try:
        return json.loads(first[len(LINEAGE_PREFIX) :])
    except json.JSONDecodeError:
        return None


def read_artifact_lineage(path: Path) -> dict | None:
    if path.suffix == ".bin":
        try:
            return model_mod.read_model_header(path).get("lineage")
        except (DataError, OSError):
            return None
    if path.suffix == ".json":
        try:
            return json.loads(path.read_text(encoding="utf-8")).get("lineage")
        except (OSError, json.JSONDecodeError, AttributeError):
            return None
    return read_text_lineage(path)


def write_text_artifact(path: Path, lineage: dict, body: Iterable[str]) -> None:
    """Write lineage line plus body lines atomically (temp file + rename)."""
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(LINEAGE_PREFIX + _canonical(lineage) + "\n")
        for line in body:
            handle.write(line)
            if not line.endswith("\n"):
                handle.write("\n")
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# Stage registry


@dataclass(frozen=True)
class StageSpec:
    name: str
    version: int
    config_subset: Callable[[PipelineConfig], dict]
    inputs: Callable[[PipelineConfig], dict[str, str]]  # input name -> producing stage
    outputs: Callable[[PipelineConfig], list[str]]


def _synth_subset(cfg: PipelineConfig) -> dict:
    assert cfg.synth is not None
    d = asdict(cfg.synth)
    d["date_range"] = [x.isoformat() for x in cfg.synth.date_range]
    return d


def _codesets_blob(cfg: PipelineConfig) -> dict:
    lib = cfg.library()
    return {
        name: sorted((s.value, c) for s, c in getattr(lib, name).codes)
        for name in ("ckd", "dialysis", "transplant", "access_creation")
    }


def _triggers_subset(cfg: PipelineConfig) -> dict:
    return {
        "trigger_range": [d.isoformat() for d in cfg.trigger_range],
        "dataset_end": cfg.dataset_range[1].isoformat(),
        "codesets": _codesets_blob(cfg),
    }


def _featurize_subset(cfg: PipelineConfig) -> dict:
    return {
        "split_ratios": list(cfg.split_ratios),
        "split_seed": cfg.split_seed,
        "min_count": cfg.min_count,
    }


def _train_subset(cfg: PipelineConfig) -> dict:
    return {
        "tasks": list(cfg.tasks),
        "hyperparams": asdict(cfg.hyperparams) if cfg.hyperparams else None,
        "grid": [asdict(g) for g in cfg.grid] if cfg.grid else None,
    }


def _eval_subset(cfg: PipelineConfig) -> dict:
    return {
        "target_sensitivities": list(cfg.target_sensitivities),
        "tasks": list(cfg.tasks),
        "codesets": _codesets_blob(cfg),
    }


def _task_outputs(prefix: str):
    def fn(cfg: PipelineConfig) -> list[str]:
        return [f"{prefix}_{task}" for task in cfg.tasks] + (
            [f"train_log_{task}" for task in cfg.tasks] if prefix == "model" else []
        )

    return fn


STAGES: dict[str, StageSpec] = {
    "synth": StageSpec(
        "synth",
        1,
        _synth_subset,
        lambda cfg: {},
        lambda cfg: ["claims", "ground_truth"],
    ),
    "triggers": StageSpec(
        "triggers",
        1,
        _triggers_subset,
        lambda cfg: {"claims": "synth"},
        lambda cfg: ["triggers"],
    ),
    "featurize": StageSpec(
        "featurize",
        1,
        _featurize_subset,
        lambda cfg: {"claims": "synth", "triggers": "triggers"},
        lambda cfg: ["split", "vocab", "features_train", "features_valid", "features_test"],
    ),
    "train": StageSpec(
        "train",
        1,
        _train_subset,
        lambda cfg: {
            "vocab": "featurize",
            "features_train": "featurize",
            "features_valid": "featurize",
        },
        _task_outputs("model"),
    ),
    "predict": StageSpec(
        "predict",
        1,
        lambda cfg: {"tasks": list(cfg.tasks)},
        lambda cfg: {"features_test": "featurize", "vocab": "featurize"}
        | {f"model_{task}": "train" for task in cfg.tasks},
        _task_outputs("predictions"),
    ),
    "evaluate": StageSpec(
        "evaluate",
        1,
        _eval_subset,
        lambda cfg: {"triggers": "triggers", "features_test": "featurize", "claims": "synth"}
        | {f"predictions_{task}": "predict" for task in cfg.tasks},
        lambda cfg: ["report_json", "report_text"],
    ),
}

STAGE_ORDER = ("synth", "triggers", "featurize", "train", "predict", "evaluate")


def expected_lineage(cfg: PipelineConfig, stage: str, cache: _HashCache) -> dict:
    spec = STAGES[stage]
    paths = artifact_paths(cfg)
    inputs = {}
    for name, producer in spec.inputs(cfg).items():
        path = paths[name]
        if not path.exists():
            if producer == "synth" and cfg.synth is None:
                hint = "provide the configured claims file"
            else:
                hint = f"run the {producer} stage first"
            raise DataError(f"{stage}: missing input {path} ({hint})")
        inputs[name] = cache.file_sha256(path)
    return {
        "stage": stage,
        "stage_version": spec.version,
        "seed": cfg.seed,
        "config_sha256": _sha256_text(_canonical(spec.config_subset(cfg))),
        "inputs": inputs,
    }


def stage_is_fresh(cfg: PipelineConfig, stage: str, cache: _HashCache) -> bool:
    spec = STAGES[stage]
    paths = artifact_paths(cfg)
    try:
        want = expected_lineage(cfg, stage, cache)
    except DataError:
        return False
    for name in spec.outputs(cfg):
        have = read_artifact_lineage(paths[name])
        if have != want:
            return False
    return True


def _transitive_producers(cfg: PipelineConfig, stage: str) -> set[str]:
    seen: set[str] = set()
    frontier = set(STAGES[stage].inputs(cfg).values())
    while frontier:
        producer = frontier.pop()
        if producer in seen or producer not in STAGES:
            continue
        seen.add(producer)
        frontier |= set(STAGES[producer].inputs(cfg).values())
    if cfg.synth is None:
        seen.discard("synth")
    return seen


def _check_upstream(cfg: PipelineConfig, stage: str, cache: _HashCache) -> None:
    """Refuse to run on stale or missing upstream artifacts.

    Walks producers in pipeline order so the error names the earliest missing
    artifact (e.g. the model file when evaluate runs before train).
    """
    producers = _transitive_producers(cfg, stage)
    paths = artifact_paths(cfg)
    for upstream in STAGE_ORDER[: STAGE_ORDER.index(stage)]:
        if upstream not in producers:
            continue
        if stage_is_fresh(cfg, upstream, cache):
            continue
        missing = [
            paths[name] for name in STAGES[upstream].outputs(cfg) if not paths[name].exists()
        ]
        if missing:
            raise DataError(
                f"{stage}: missing {missing[0]} (run the {upstream} stage first)"
            )
        raise DataError(
            f"{stage}: artifacts from the {upstream} stage are stale against the "
            f"current config/inputs; rerun that stage (or `reproduce`)"
        )


# ---------------------------------------------------------------------------
# Stage bodies


def _run_synth(cfg: PipelineConfig, lineage: dict, paths: dict[str, Path]) -> None:
    assert cfg.synth is not None
    claims_tmp = paths["claims"].with_name(paths["claims"].name + ".tmp")
    truth_tmp = paths["ground_truth"].with_name(paths["ground_truth"].name + ".tmp")
    header = LINEAGE_PREFIX + _canonical(lineage) + "\n"
    with open(claims_tmp, "w", encoding="utf-8") as ch, open(
        truth_tmp, "w", encoding="utf-8"
    ) as th:
        ch.write(header)
        th.write(header)
        summary = synth_mod.generate(cfg.synth, ch, th, workers=cfg.workers)
    os.replace(claims_tmp, paths["claims"])
    os.replace(truth_tmp, paths["ground_truth"])
    print(
        f"synth: {summary.n_beneficiaries} beneficiaries, {summary.n_claims} claims, "
        f"{summary.n_dialysis} dialysis / {summary.n_transplant} transplant onsets, "
        f"{summary.n_access} access procedures "
        f"(hazard multiplier {summary.hazard_multiplier:.3g}, "
        f"predicted 365d prevalence {summary.predicted_prevalence:.4f})"
    )


def _run_triggers(cfg: PipelineConfig, lineage: dict, paths: dict[str, Path]) -> None:
    library = cfg.library()
    start, end = cfg.trigger_range

    def rows():
        n_eligible = 0
        for timeline in claims_mod.iter_timelines(paths["claims"]):
            for trig in trig_mod.enumerate_triggers(
                timeline, (start, end), library, cfg.dataset_range[1]
            ):
                if trig.eligible:
                    n_eligible += 1
                yield trig_mod.trigger_row(trig)
        print(f"triggers: {n_eligible} eligible")

    write_text_artifact(paths["triggers"], lineage, rows())


def _class_from_bits(bits: tuple[int, ...]) -> int:
    return bits.index(1)


def _run_featurize(cfg: PipelineConfig, lineage: dict, paths: dict[str, Path]) -> None:
    # eligible trigger dates and labels per beneficiary
    triggers_by_bid: dict[str, list[tuple[str, dict[str, int]]]] = {}
    all_ids: list[str] = []
    last_bid = None
    for trig in trig_mod.iter_trigger_rows(paths["triggers"]):
        if trig.beneficiary_id != last_bid:
            all_ids.append(trig.beneficiary_id)
            last_bid = trig.beneficiary_id
        if not trig.eligible:
            continue
        classes = {task: _class_from_bits(trig.labels[task]) for task in TASKS}
        triggers_by_bid.setdefault(trig.beneficiary_id, []).append(
            (trig.trigger_date.isoformat(), classes)
        )
    train_ids, valid_ids, test_ids = trig_mod.split_beneficiaries(
        all_ids, cfg.split_ratios, cfg.split_seed
    )

    def split_of(bid: str) -> str:
        if bid in train_ids:
            return "train"
        if bid in valid_ids:
            return "valid"
        return "test"

    write_text_artifact(
        paths["split"], lineage, (f"{bid}\t{split_of(bid)}" for bid in sorted(all_ids))
    )

    # single parse: compile timelines that have at least one eligible trigger
    interner = feat_mod.ClaimInterner()
    compiled: dict[str, feat_mod.CompiledTimeline] = {}
    for timeline in claims_mod.iter_timelines(paths["claims"]):
        bid = timeline.beneficiary.id
        if bid in triggers_by_bid:
            compiled[bid] = feat_mod.CompiledTimeline(timeline, interner)

    counts: dict[int, int] = {}
    n_train_triggers = 0
    for bid, trigs in triggers_by_bid.items():
        if bid not in train_ids:
            continue
        ct = compiled[bid]
        for tdate, _ in trigs:
            n_train_triggers += 1
            for pb in ct.active_pair_buckets(date.fromisoformat(tdate)):
                pb = int(pb)
                counts[pb] = counts.get(pb, 0) + 1
    if n_train_triggers == 0:
        raise DataError("featurize: no eligible training triggers to build a vocabulary from")
    vocab = feat_mod.vocabulary_from_counts(counts, interner, cfg.min_count)
    vocab_hash = vocab.content_hash()
    write_text_artifact(
        paths["vocab"],
        lineage,
        (f"{key}\t{vocab.index[key]}" for key in vocab.keys()),
    )
    colmap = feat_mod.column_map(vocab, interner)

    handles = {}
    tmp_names = {}
    for split in ("train", "valid", "test"):
        path = paths[f"features_{split}"]
        tmp = path.with_name(path.name + ".tmp")
        tmp_names[split] = (tmp, path)
        handles[split] = open(tmp, "w", encoding="utf-8")
        handles[split].write(LINEAGE_PREFIX + _canonical(lineage) + "\n")
        handles[split].write(f"# vocab={vocab_hash}\n")
    n_rows = {"train": 0, "valid": 0, "test": 0}
    try:
        for bid in sorted(triggers_by_bid):
            split = split_of(bid)
            ct = compiled[bid]
            out = handles[split]
            for tdate, classes in triggers_by_bid[bid]:
                indices = ct.active_indices(date.fromisoformat(tdate), vocab, colmap)
                out.write(feat_mod.feature_row(bid, tdate, classes, indices) + "\n")
                n_rows[split] += 1
    finally:
        for handle in handles.values():
            handle.close()
    for split, (tmp, path) in tmp_names.items():
        os.replace(tmp, path)
    print(
        f"featurize: vocab {len(vocab)} columns; rows "
        f"train={n_rows['train']} valid={n_rows['valid']} test={n_rows['test']}"
    )


def _feature_file_vocab_hash(path: Path) -> str | None:
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                return None
            if line.startswith("# vocab="):
                return line[len("# vocab=") :].strip()
    return None


def _load_matrix(path: Path, vocab: feat_mod.Vocabulary) -> feat_mod.FeatureMatrix:
    return feat_mod.read_feature_matrix(path, len(vocab), _feature_file_vocab_hash(path))


def _run_train(cfg: PipelineConfig, lineage: dict, paths: dict[str, Path], only_task=None) -> None:
    vocab = feat_mod.Vocabulary.from_file(paths["vocab"])
    vocab_hash = vocab.content_hash()
    train_matrix = _load_matrix(paths["features_train"], vocab)
    valid_matrix = _load_matrix(paths["features_valid"], vocab)
    for m, name in ((train_matrix, "features_train"), (valid_matrix, "features_valid")):
        if m.vocab_hash and m.vocab_hash != vocab_hash:
            raise DataError(f"{name} was built against a different vocabulary")
    started = time.monotonic()
    for ti, task in enumerate(cfg.tasks):
        if only_task and task != only_task:
            continue
        y_train = train_matrix.y[task]
        y_valid = valid_matrix.y[task]
        if cfg.grid:
            grid = tuple(replace(hp, seed=hp.seed + ti) for hp in cfg.grid)
            hp, result, _ = model_mod.tune(
                grid, train_matrix, y_train, valid_matrix, y_valid, vocab_hash=vocab_hash
            )
        else:
            assert cfg.hyperparams is not None
            hp = replace(cfg.hyperparams, seed=cfg.hyperparams.seed + ti)
            result = model_mod.train(
                train_matrix, y_train, valid_matrix, y_valid, hp, vocab_hash=vocab_hash
            )
        model_path = paths[f"model_{task}"]
        tmp = model_path.with_name(model_path.name + ".tmp")
        model_mod.save_model(tmp, result.params, hp, task, lineage)
        os.replace(tmp, model_path)
        log_lines = ["epoch\tstep\tlearning_rate\ttrain_loss\tvalid_loss"]
        log_lines += [
            f"{s.epoch}\t{s.steps}\t{s.learning_rate!r}\t{s.train_loss!r}\t{s.valid_loss!r}"
            for s in result.log
        ]
        write_text_artifact(paths[f"train_log_{task}"], lineage, log_lines)
        nnz = int(np.count_nonzero(result.params.weights))
        print(
            f"train[{task}]: best epoch {result.best_epoch} "
            f"valid_ce {result.best_valid_loss:.5f}, {nnz} nonzero weights "
            f"({time.monotonic() - started:.1f}s elapsed)"
        )


def _run_predict(cfg: PipelineConfig, lineage: dict, paths: dict[str, Path], only_task=None) -> None:
    vocab = feat_mod.Vocabulary.from_file(paths["vocab"])
    vocab_hash = vocab.content_hash()
    test_matrix = _load_matrix(paths["features_test"], vocab)
    for task in cfg.tasks:
        if only_task and task != only_task:
            continue
        params, _, _ = model_mod.load_model(paths[f"model_{task}"], vocab_hash)
        s, p = model_mod.predict_matrix(params, test_matrix)

        def rows():
            for i, (bid, tdate) in enumerate(test_matrix.ids):
                s_txt = ",".join(repr(float(v)) for v in s[i])
                p_txt = ",".join(repr(float(v)) for v in p[i])
                yield f"{bid}\t{tdate}\t{s_txt}\t{p_txt}"

        write_text_artifact(paths[f"predictions_{task}"], lineage, rows())
        print(f"predict[{task}]: {len(test_matrix)} rows")


def read_predictions(path: Path) -> tuple[list[tuple[str, str]], np.ndarray, np.ndarray]:
    ids = []
    s_rows = []
    p_rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("#") or not line.strip():
                continue
            bid, tdate, s_txt, p_txt = line.rstrip("\n").split("\t")
            ids.append((bid, tdate))
            s_rows.append([float(v) for v in s_txt.split(",")])
            p_rows.append([float(v) for v in p_txt.split(",")])
    return ids, np.asarray(s_rows), np.asarray(p_rows)


def _run_evaluate(cfg: PipelineConfig, lineage: dict, paths: dict[str, Path], only_task=None) -> None:
    horizons = trig_mod.DEFAULT_HORIZONS
    tasks = [t for t in cfg.tasks if (not only_task or t == only_task)]

    # prevalence over all eligible triggers
    all_classes: dict[str, list[int]] = {task: [] for task in TASKS}
    for trig in trig_mod.iter_trigger_rows(paths["triggers"]):
        if not trig.eligible:
            continue
        for task in TASKS:
            all_classes[task].append(_class_from_bits(trig.labels[task]))
    prevalence = eval_mod.prevalence_table(
        {task: np.asarray(v, dtype=np.int64) for task, v in all_classes.items()}, horizons
    )

    test_rows = list(feat_mod.iter_feature_rows(paths["features_test"]))
    test_ids = [(bid, tdate) for bid, tdate, _, _ in test_rows]
    classes_by_task = {
        task: np.asarray([classes[task] for _, _, classes, _ in test_rows], dtype=np.int64)
        for task in TASKS
    }

    performance = {}
    dialysis_scores = None
    for task in tasks:
        ids, _, p = read_predictions(paths[f"predictions_{task}"])
        if ids != test_ids:
            raise DataError(
                f"predictions_{task} rows do not line up with features_test "
                "(stale artifact lineage?)"
            )
        performance[task] = eval_mod.horizon_metrics(p, classes_by_task[task], horizons)
        if task == "dialysis":
            dialysis_scores = p[:, -1]

    impact_rows = None
    if dialysis_scores is not None and len(test_ids):
        last_window = len(horizons.overlapping) - 1
        positives = classes_by_task["dialysis"] <= last_window
        needed = {bid for (bid, _), pos in zip(test_ids, positives) if pos}
        library = cfg.library()
        had_access: dict[str, bool] = {}
        if needed:
            for timeline in claims_mod.iter_timelines(paths["claims"]):
                bid = timeline.beneficiary.id
                if bid in needed:
                    flag = eval_mod.access_before_onset(
                        timeline, library.dialysis, library.access_creation
                    )
                    had_access[bid] = bool(flag)
        triggers = [
            eval_mod.ImpactTrigger(
                bid, date.fromisoformat(tdate), float(score), bool(pos)
            )
            for (bid, tdate), score, pos in zip(test_ids, dialysis_scores, positives)
        ]
        try:
            impact = eval_mod.impact_analysis(triggers, had_access, cfg.target_sensitivities)
            impact_rows = [
                {
                    "target_sensitivity": r.target_sensitivity,
                    "threshold": r.operating_point.threshold,
                    "sensitivity": r.operating_point.sensitivity,
                    "specificity": r.operating_point.specificity,
                    "n_identified": r.n_identified,
                    "pct_without_prior_access": r.pct_without_prior_access,
                }
                for r in impact
            ]
        except DataError:
            impact_rows = None  # no dialysis positives in the test window

    report = {
        "horizon_days": list(horizons.overlapping),
        "n_test_triggers": len(test_ids),
        "prevalence": prevalence,
        "performance": performance,
        "impact": impact_rows,
        "lineage": lineage,
    }
    tmp = paths["report_json"].with_name(paths["report_json"].name + ".tmp")
    tmp.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    os.replace(tmp, paths["report_json"])
    text = eval_mod.render_report_text(report)
    write_text_artifact(paths["report_text"], lineage, [text])
    print(text)


# ---------------------------------------------------------------------------
# Stage runner


_BODIES = {
    "synth": _run_synth,
    "triggers": _run_triggers,
    "featurize": _run_featurize,
    "train": _run_train,
    "predict": _run_predict,
    "evaluate": _run_evaluate,
}


def run_stage(cfg: PipelineConfig, stage: str, only_task: str | None = None) -> bool:
    """Run one stage if stale; returns True when work was done."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    if stage == "synth" and cfg.synth is None:
        raise ConfigError("synth stage requires a synth section in the config")
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    cache = _HashCache()
    _check_upstream(cfg, stage, cache)
    lineage = expected_lineage(cfg, stage, cache)
    if stage_is_fresh(cfg, stage, cache):
        print(f"{stage}: up to date")
        return False
    paths = artifact_paths(cfg)
    body = _BODIES[stage]
    if stage in ("train", "predict", "evaluate"):
        body(cfg, lineage, paths, only_task)
    else:
        body(cfg, lineage, paths)
    return True


def run_reproduce(cfg: PipelineConfig) -> None:
    for stage in STAGE_ORDER:
        if stage == "synth" and cfg.synth is None:
            continue
        run_stage(cfg, stage)
