"""End-to-end orchestration of the supervised and semi-supervised arms.

One *run* draws its own split (and, for the semi-supervised scenario, its own
labeled subset) and trains every arm of the scenario on it. Randomness for
every stage comes from :func:`derive_seed`, so results depend only on the
configuration.

Models and synthetic sets that two arms of the same run would build
identically (the generator of ``G_F`` and ``F+G_F``, the labeled-only
predictor of ``S`` that also produces the pseudo-labels) are built once per
run and shared.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .arms import SCENARIO_ARMS, ArmSpec, Scenario
from .data import (
    DatasetHandle,
    DatasetMeta,
    LabeledPartition,
    PropertyRecord,
    SplitAssignment,
    composition,
    merge_datasets,
    read_jsonl,
    split_dataset,
    subsample_labeled,
)
from .evaluation import mae
from .exceptions import ConfigError
from .generator import GeneratorConfig, generate_synthetic_set, save_generator, train_generator
from .graph import NeighborParams, build_graph
from .kde import fit_kde
from .predictor import (
    PredictorConfig,
    _predict_graphs,
    fit_graphs,
    init_predictor,
    save_predictor,
)
from .utils import mix_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    meta: DatasetMeta
    dataset_path: str | None = None
    split_ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    labeled_fraction: float = 0.10
    n_synthetic: int = 1000
    n_runs: int = 5
    base_seed: int = 0
    rounds: int = 1
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    neighbor: NeighborParams = field(default_factory=NeighborParams)
    include_pseudo_in_final: bool = False
    fixed_split: bool = False
    shared_synthetic: bool = False
    relabel_synthetic: bool = False
    external_pool_path: str | None = None
    save_checkpoints: bool = True

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ConfigError("must be in (0, 1]", "labeled_fraction")
        if self.n_synthetic < 1:
            raise ConfigError("must be >= 1", "n_synthetic")
        if self.n_runs < 1:
            raise ConfigError("must be >= 1", "n_runs")
        if self.rounds < 1:
            raise ConfigError("must be >= 1", "rounds")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError("must be three numbers summing to 1", "split_ratios")
        if self.generator.max_atoms != self.meta.max_atoms:
            raise ConfigError(
                f"must equal meta.max_atoms ({self.meta.max_atoms})", "generator.max_atoms")
        if self.shared_synthetic and not self.fixed_split:
            raise ConfigError("requires fixed_split, otherwise synthetic data leaks across splits",
                              "shared_synthetic")


@dataclass
class ArmResult:
    arm: ArmSpec
    run_index: int
    seed: int
    test_metric: float
    train_set_composition: dict
    round: int = 1
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["arm"] = self.arm.value
        return out

    @classmethod
    def from_dict(cls, blob) -> "ArmResult":
        blob = dict(blob)
        blob["arm"] = ArmSpec(blob["arm"])
        return cls(**blob)


def derive_seed(base_seed: int, arm, run_index: int, round: int = 1) -> int:
    """Seed for one (arm or stage, run, round) cell.

    BLAKE2b-64 of ``"matwheel|base|arm|run|round"``, top bit cleared.
    ``arm`` may be an :class:`ArmSpec` or a stage name such as ``"split"``.
    """
    tag = arm.value if isinstance(arm, ArmSpec) else str(arm)
    return mix_seed("matwheel", int(base_seed), tag, int(run_index), int(round))


@dataclass
class RunState:
    """Everything one run shares between its arms."""

    handle: DatasetHandle
    splits: SplitAssignment
    partition: LabeledPartition | None
    run_index: int
    external: list = field(default_factory=list)
    graphs: dict = field(default_factory=dict)
    predictors: dict = field(default_factory=dict)
    synthetic: dict = field(default_factory=dict)
    generators: dict = field(default_factory=dict)
    kdes: dict = field(default_factory=dict)
    pseudo: dict = field(default_factory=dict)

    def graph_list(self, structures, neighbor):
        out = []
        for s in structures:
            g = self.graphs.get(s.id)
            if g is None:
                g = self.graphs[s.id] = build_graph(s, neighbor)
            out.append(g)
        return out


def prepare_run(handle: DatasetHandle, config: RunConfig, run_index: int, scenario: Scenario,
                external=()) -> RunState:
    split_run = 0 if config.fixed_split else run_index
    splits = split_dataset(handle.records, config.split_ratios, derive_seed(config.base_seed, "split", split_run))
    partition = None
    if scenario == Scenario.SEMI:
        partition = subsample_labeled(
            splits.train_ids, config.labeled_fraction, derive_seed(config.base_seed, "subsample", split_run))
    return RunState(handle, splits, partition, run_index, list(external))


def _generator_key(scenario: Scenario, rnd: int):
    return (scenario.value, rnd)


def _train_predictor_on(state: RunState, records, config: RunConfig, seed: int):
    pconf = PredictorConfig(**{**asdict(config.predictor), "seed": seed})
    model = init_predictor(pconf, config.neighbor)
    g_train = state.graph_list([r.structure for r in records], config.neighbor)
    val_ids = state.splits.val_ids
    g_val = state.graph_list(state.handle.structures(val_ids), config.neighbor)
    y_val = state.handle.labels(val_ids, "validate")
    return fit_graphs(model, g_train, [r.property for r in records], g_val, y_val, pconf)


def _labeled_predictor(state: RunState, config: RunConfig, rnd: int):
    """The labeled-subset-only predictor (arm S) for this run and round."""
    key = (ArmSpec.S, rnd)
    if key not in state.predictors:
        seed = derive_seed(config.base_seed, ArmSpec.S, state.run_index, rnd)
        labeled = state.handle.labeled(state.partition.labeled_ids, "train:S")
        state.predictors[key] = _train_predictor_on(state, labeled, config, seed)
    return state.predictors[key]


def pseudo_labeled_pool(state: RunState, config: RunConfig, rnd: int) -> list[PropertyRecord]:
    """Pseudo-label the unlabeled training records (plus any external pool).

    Round 1 labels with the labeled-only predictor; later rounds with the
    previous round's ``S+G_S`` predictor.
    """
    if rnd in state.pseudo:
        return state.pseudo[rnd]
    if rnd == 1:
        model, _ = _labeled_predictor(state, config, 1)
    else:
        if (ArmSpec.S_plus_GS, rnd - 1) not in state.predictors:
            run_arm(ArmSpec.S_plus_GS, state, config, state.run_index, rnd - 1)
        model, _ = state.predictors[(ArmSpec.S_plus_GS, rnd - 1)]
    structures = state.handle.structures(state.partition.unlabeled_ids)
    if rnd > 1:
        structures = structures + [r.structure for r in state.external]
    values = _predict_graphs(model, state.graph_list(structures, config.neighbor))
    state.pseudo[rnd] = [PropertyRecord(s, float(v), "pseudo") for s, v in zip(structures, values)]
    return state.pseudo[rnd]


def synthetic_set(state: RunState, scenario: Scenario, config: RunConfig, rnd: int):
    """Train the generator for this scenario/round and sample the synthetic set."""
    key = _generator_key(scenario, rnd)
    if key in state.synthetic:
        return state.synthetic[key]
    gen_run = 0 if config.shared_synthetic else state.run_index
    if scenario == Scenario.FULL:
        gen_train = state.handle.labeled(state.splits.train_ids, "train:generator")
    else:
        labeled = state.handle.labeled(state.partition.labeled_ids, "train:generator")
        gen_train = merge_datasets(labeled, pseudo_labeled_pool(state, config, rnd))
    gen_seed = derive_seed(config.base_seed, f"generator-{scenario.value}", gen_run, rnd)
    gconf = GeneratorConfig(**{**asdict(config.generator), "seed": gen_seed})
    kde = fit_kde([r.property for r in gen_train])
    gen = train_generator(gen_train, gconf)
    records = generate_synthetic_set(
        gen, kde, config.n_synthetic, config.meta.max_atoms,
        seed=derive_seed(config.base_seed, f"sample-{scenario.value}", gen_run, rnd),
        prefix=f"syn-{scenario.value}-run{state.run_index}-round{rnd}",
    )
    if config.relabel_synthetic:
        labeler = (_arm_model(state, ArmSpec.F, config, rnd) if scenario == Scenario.FULL
                   else _labeled_predictor(state, config, rnd)[0])
        values = _predict_graphs(labeler, state.graph_list([r.structure for r in records], config.neighbor))
        records = [PropertyRecord(r.structure, float(v), "synthetic") for r, v in zip(records, values)]
    state.kdes[key] = kde
    state.generators[key] = gen
    state.synthetic[key] = records
    return records


def _arm_model(state, arm, config, rnd):
    if (arm, rnd) not in state.predictors:
        run_arm(arm, state, config, state.run_index, rnd)
    return state.predictors[(arm, rnd)][0]


def arm_training_set(arm: ArmSpec, state: RunState, config: RunConfig, rnd: int) -> list[PropertyRecord]:
    stage = f"train:{arm.value}"
    if arm in SCENARIO_ARMS[Scenario.SEMI] and state.partition is None:
        raise ConfigError(f"arm {arm.value} needs a labeled/unlabeled partition of the training split")
    if arm == ArmSpec.F:
        return state.handle.labeled(state.splits.train_ids, stage)
    if arm == ArmSpec.GF:
        return list(synthetic_set(state, Scenario.FULL, config, rnd))
    if arm == ArmSpec.F_plus_GF:
        real = state.handle.labeled(state.splits.train_ids, stage)
        return merge_datasets(real, synthetic_set(state, Scenario.FULL, config, rnd))
    if arm == ArmSpec.S:
        return state.handle.labeled(state.partition.labeled_ids, stage)
    if arm == ArmSpec.GS:
        return list(synthetic_set(state, Scenario.SEMI, config, rnd))
    real = state.handle.labeled(state.partition.labeled_ids, stage)
    mixed = merge_datasets(real, synthetic_set(state, Scenario.SEMI, config, rnd))
    if config.include_pseudo_in_final:
        mixed = merge_datasets(mixed, pseudo_labeled_pool(state, config, rnd))
    return mixed


def run_arm(arm: ArmSpec, state: RunState, config: RunConfig, run_index: int, round: int = 1) -> ArmResult:
    """Train one arm's predictor and score it on the untouched test split."""
    arm = ArmSpec(arm)
    seed = derive_seed(config.base_seed, arm, run_index, round)
    train = arm_training_set(arm, state, config, round)
    if arm == ArmSpec.S:
        model, report = _labeled_predictor(state, config, round)
    else:
        model, report = _train_predictor_on(state, train, config, seed)
        state.predictors[(arm, round)] = (model, report)

    test_ids = state.splits.test_ids
    preds = _predict_graphs(model, state.graph_list(state.handle.structures(test_ids), config.neighbor))
    metric = mae(preds, state.handle.labels(test_ids, "evaluate"))
    details = {"best_epoch": report.best_epoch, "best_val_mae": report.best_val_mae,
               "epochs_run": len(report.epoch_losses)}
    if arm.uses_generator:
        syn = state.synthetic[_generator_key(arm.scenario, round)]
        low, high = config.meta.property_range
        details["conditions_out_of_range"] = sum(1 for r in syn if not low <= r.property <= high)
    result = ArmResult(arm, run_index, seed, metric, composition(train), round, details)
    log.info("stage=arm arm=%s run=%d round=%d seed=%d mae=%.6f composition=%s",
             arm.value, run_index, round, seed, metric, result.train_set_composition)
    return result


def load_records(config: RunConfig):
    if config.dataset_path is None:
        raise ConfigError("no dataset given", "dataset_path")
    records, _ = read_jsonl(config.dataset_path, config.meta, strict=True)
    return records


def _load_external(config: RunConfig):
    if not config.external_pool_path:
        return []
    records, _ = read_jsonl(config.external_pool_path, config.meta, strict=True)
    return records


def _save_run_artifacts(state: RunState, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    for (arm, rnd), (model, _) in sorted(state.predictors.items(), key=lambda kv: (kv[0][1], kv[0][0].value)):
        save_predictor(model, out / f"predictor_{arm.value}_round{rnd}.json")
    for (scen, rnd), gen in sorted(state.generators.items()):
        save_generator(gen, out / f"generator_{scen}_round{rnd}.json")
    kdes = {f"{scen}_round{rnd}": kde.to_dict() for (scen, rnd), kde in sorted(state.kdes.items())}
    with open(out / "kde.json", "w", encoding="utf-8") as fh:
        json.dump(kdes, fh, indent=1)


def _execute_run(scenario: Scenario, config: RunConfig, records, run_index: int, rounds: int,
                 handle: DatasetHandle | None = None, artifact_dir=None, external=()):
    handle = handle if handle is not None else DatasetHandle(records)
    state = prepare_run(handle, config, run_index, scenario, external)
    results = []
    for rnd in range(1, rounds + 1):
        for arm in SCENARIO_ARMS[scenario]:
            results.append(run_arm(arm, state, config, run_index, rnd))
    if artifact_dir is not None and config.save_checkpoints:
        _save_run_artifacts(state, Path(artifact_dir) / f"{scenario.value}_run{run_index}")
    return results


def _sort_results(results):
    order = {arm: i for i, arm in enumerate(ArmSpec)}
    return sorted(results, key=lambda r: (r.round, order[r.arm], r.run_index))


def _run_many(scenario, config, records, rounds, handle, artifact_dir, jobs):
    external = _load_external(config) if rounds > 1 else []
    if jobs <= 1 or config.n_runs == 1:
        results = []
        for run_index in range(config.n_runs):
            results += _execute_run(scenario, config, records, run_index, rounds, handle, artifact_dir, external)
        return _sort_results(results)
    results = []
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_execute_run, scenario, config, records, i, rounds, None, artifact_dir, external)
                   for i in range(config.n_runs)]
        for fut in futures:
            results += fut.result()
    return _sort_results(results)


def run_scenario(scenario, config: RunConfig, records=None, handle: DatasetHandle | None = None,
                 artifact_dir=None, jobs: int = 1) -> list[ArmResult]:
    """Run the scenario's three arms ``n_runs`` times (round 1 only)."""
    scenario = Scenario(scenario)
    if records is None:
        records = handle.records if handle is not None else load_records(config)
    return _run_many(scenario, config, records, 1, handle, artifact_dir, jobs)


def run_flywheel_iterations(config: RunConfig, records=None, handle: DatasetHandle | None = None,
                            artifact_dir=None, jobs: int = 1) -> dict[int, list[ArmResult]]:
    """Semi-supervised scenario repeated for ``config.rounds`` rounds.

    From round 2 on, pseudo-labels come from the previous round's ``S+G_S``
    predictor, then the generator, synthetic set and predictors are rebuilt.
    """
    if records is None:
        records = handle.records if handle is not None else load_records(config)
    results = _run_many(Scenario.SEMI, config, records, config.rounds, handle, artifact_dir, jobs)
    by_round = {rnd: [] for rnd in range(1, config.rounds + 1)}
    for r in results:
        by_round[r.round].append(r)
    return by_round


def seed_table(config: RunConfig, scenarios) -> list[dict]:
    rows = []
    for scenario in scenarios:
        rounds = config.rounds if scenario == Scenario.SEMI else 1
        for run_index in range(config.n_runs):
            split_run = 0 if config.fixed_split else run_index
            rows.append({"scenario": scenario.value, "run": run_index, "stage": "split",
                         "seed": derive_seed(config.base_seed, "split", split_run)})
            for rnd in range(1, rounds + 1):
                for arm in SCENARIO_ARMS[scenario]:
                    rows.append({"scenario": scenario.value, "run": run_index, "round": rnd,
                                 "stage": arm.value,
                                 "seed": derive_seed(config.base_seed, arm, run_index, rnd)})
    return rows
