import numpy as np
import pytest
from conftest import tiny_run_config

from matwheel.arms import SCENARIO_ARMS, ArmSpec, Scenario
from matwheel.data import DatasetHandle, validate_structure
from matwheel.exceptions import ConfigError
from matwheel.flywheel import (
    ArmResult,
    derive_seed,
    prepare_run,
    pseudo_labeled_pool,
    run_arm,
    run_flywheel_iterations,
    run_scenario,
    seed_table,
    synthetic_set,
)
from matwheel.generator import GeneratorConfig
from matwheel.toy import make_toy_dataset


@pytest.fixture(scope="module")
def small():
    return make_toy_dataset(100, seed=5)


def test_derive_seed_distinct_and_stable():
    seeds = {derive_seed(0, arm, run, rnd) for arm in ArmSpec for run in range(5) for rnd in (1, 2)}
    assert len(seeds) == 60
    assert derive_seed(0, ArmSpec.F, 1) == derive_seed(0, "F", 1, 1)
    assert derive_seed(0, ArmSpec.F, 1) != derive_seed(1, ArmSpec.F, 1)
    assert all(0 <= s < 2 ** 63 for s in seeds)


class TestConfig:
    def test_labeled_fraction(self, small):
        with pytest.raises(ConfigError) as err:
            tiny_run_config(small[1], labeled_fraction=0.0)
        assert err.value.path == "labeled_fraction"

    def test_max_atoms_must_match(self, small):
        with pytest.raises(ConfigError):
            tiny_run_config(small[1], generator=GeneratorConfig(max_atoms=9))

    def test_shared_synthetic_needs_fixed_split(self, small):
        with pytest.raises(ConfigError):
            tiny_run_config(small[1], shared_synthetic=True)


class TestArms:
    def test_training_set_composition(self, small):
        records, meta = small
        config = tiny_run_config(meta)
        handle = DatasetHandle(records)
        full = prepare_run(handle, config, 0, Scenario.FULL)
        semi = prepare_run(handle, config, 0, Scenario.SEMI)
        n_train = len(full.splits.train_ids)
        n_lab = len(semi.partition.labeled_ids)
        assert (n_train, n_lab) == (70, 7)
        expected = {
            ArmSpec.F: {"real": n_train, "pseudo": 0, "synthetic": 0},
            ArmSpec.GF: {"real": 0, "pseudo": 0, "synthetic": 30},
            ArmSpec.F_plus_GF: {"real": n_train, "pseudo": 0, "synthetic": 30},
            ArmSpec.S: {"real": n_lab, "pseudo": 0, "synthetic": 0},
            ArmSpec.GS: {"real": 0, "pseudo": 0, "synthetic": 30},
            ArmSpec.S_plus_GS: {"real": n_lab, "pseudo": 0, "synthetic": 30},
        }
        for arm, comp in expected.items():
            state = full if arm.scenario == Scenario.FULL else semi
            assert run_arm(arm, state, config, 0).train_set_composition == comp, arm

    def test_pseudo_in_final_set(self, small):
        records, meta = small
        config = tiny_run_config(meta, include_pseudo_in_final=True)
        state = prepare_run(DatasetHandle(records), config, 0, Scenario.SEMI)
        comp = run_arm(ArmSpec.S_plus_GS, state, config, 0).train_set_composition
        assert comp == {"real": 7, "pseudo": 63, "synthetic": 30}

    def test_semi_arm_needs_partition(self, small):
        records, meta = small
        config = tiny_run_config(meta)
        state = prepare_run(DatasetHandle(records), config, 0, Scenario.FULL)
        with pytest.raises(ConfigError):
            run_arm(ArmSpec.S, state, config, 0)

    def test_pseudo_pool_covers_unlabeled(self, small):
        records, meta = small
        config = tiny_run_config(meta)
        state = prepare_run(DatasetHandle(records), config, 0, Scenario.SEMI)
        pool = pseudo_labeled_pool(state, config, 1)
        assert len(pool) + len(state.partition.labeled_ids) == len(state.splits.train_ids)
        assert {r.id for r in pool} == set(state.partition.unlabeled_ids)
        assert all(r.label_kind == "pseudo" for r in pool)


@pytest.mark.parametrize("scenario", list(Scenario))
def test_test_split_is_isolated(small, scenario):
    records, meta = small
    config = tiny_run_config(meta, n_runs=1)
    handle = DatasetHandle(records)
    run_scenario(scenario, config, handle=handle)
    state = prepare_run(handle, config, 0, scenario)
    assert handle.label_readers(state.splits.test_ids) == {"evaluate"}
    assert handle.label_readers(state.splits.val_ids) == {"validate"}
    if scenario == Scenario.SEMI:
        assert handle.label_readers(state.partition.unlabeled_ids) == set()


class TestScenario:
    def test_result_count_and_order(self, small):
        records, meta = small
        config = tiny_run_config(meta, n_runs=2)
        results = run_scenario("full", config, records)
        assert len(results) == 6
        assert [r.arm for r in results] == [a for a in SCENARIO_ARMS[Scenario.FULL] for _ in range(2)]
        assert all(np.isfinite(r.test_metric) for r in results)

    def test_deterministic(self, small):
        records, meta = small
        config = tiny_run_config(meta, n_runs=1)
        a = [r.to_dict() for r in run_scenario("semi", config, records)]
        b = [r.to_dict() for r in run_scenario("semi", config, records)]
        assert a == b

    def test_parallel_matches_serial(self, small):
        records, meta = small
        config = tiny_run_config(meta, n_runs=2)
        serial = [r.to_dict() for r in run_scenario("full", config, records)]
        parallel = [r.to_dict() for r in run_scenario("full", config, records, jobs=2)]
        assert serial == parallel

    def test_result_round_trip(self, small):
        records, meta = small
        r = run_scenario("full", tiny_run_config(meta, n_runs=1), records)[1]
        assert ArmResult.from_dict(r.to_dict()) == r

    def test_checkpoints_written(self, small, tmp_path):
        records, meta = small
        config = tiny_run_config(meta, n_runs=1, save_checkpoints=True)
        run_scenario("semi", config, records, artifact_dir=tmp_path)
        names = {p.name for p in (tmp_path / "semi_run0").iterdir()}
        assert {"predictor_S_round1.json", "generator_semi_round1.json", "kde.json"} <= names


class TestRounds:
    def test_one_round_equals_semi_scenario(self, small):
        records, meta = small
        config = tiny_run_config(meta, n_runs=1)
        by_round = run_flywheel_iterations(config, records)
        assert list(by_round) == [1]
        assert [r.to_dict() for r in by_round[1]] == [r.to_dict() for r in run_scenario("semi", config, records)]

    def test_second_round_relabels(self, small):
        records, meta = small
        config = tiny_run_config(meta, n_runs=1, rounds=2)
        state = prepare_run(DatasetHandle(records), config, 0, Scenario.SEMI)
        first = [r.property for r in pseudo_labeled_pool(state, config, 1)]
        second = [r.property for r in pseudo_labeled_pool(state, config, 2)]
        assert len(first) == len(second) and first != second

    def test_three_rounds(self, small):
        records, meta = small
        config = tiny_run_config(meta, n_runs=1, rounds=3)
        handle = DatasetHandle(records)
        by_round = run_flywheel_iterations(config, handle=handle)
        assert [len(by_round[k]) for k in (1, 2, 3)] == [3, 3, 3]
        assert all(r.round == k for k in by_round for r in by_round[k])
        state = prepare_run(handle, config, 0, Scenario.SEMI)
        assert handle.label_readers(state.splits.test_ids) == {"evaluate"}

    def test_synthetic_structures_stay_valid(self, small):
        records, meta = small
        config = tiny_run_config(meta, n_runs=1, rounds=3)
        state = prepare_run(DatasetHandle(records), config, 0, Scenario.SEMI)
        for rnd in (1, 2, 3):
            for r in synthetic_set(state, Scenario.SEMI, config, rnd):
                validate_structure(r.structure, meta)


def test_seed_table(small):
    config = tiny_run_config(small[1], n_runs=2)
    rows = seed_table(config, [Scenario.FULL, Scenario.SEMI])
    assert len(rows) == 2 * 2 * (1 + 3)
    assert len({(r["scenario"], r["run"], r["stage"]) for r in rows}) == len(rows)
