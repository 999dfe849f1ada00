import statistics

import numpy as np
import pytest

from matwheel.arms import ArmSpec
from matwheel.evaluation import (
    AggregateCell,
    aggregate,
    emit_report,
    format_cell,
    mae,
    mean_std,
    parse_csv,
    render_csv,
    render_markdown,
)
from matwheel.exceptions import EmptyInput, LengthMismatch
from matwheel.flywheel import ArmResult


def results_for(values_by_arm):
    out = []
    for arm, values in values_by_arm.items():
        out += [ArmResult(arm, i, 0, v, {}) for i, v in enumerate(values)]
    return out


ALL_ARMS = {arm: [1.0 + k, 2.0 + k, 4.0 + k] for k, arm in enumerate(ArmSpec)}


class TestMae:
    def test_examples(self):
        assert mae([1, 2, 3], [1, 2, 3]) == 0.0
        assert mae([0, 0], [1, -3]) == 2.0

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(0)
        p, t = rng.normal(0, 100, 1000), rng.normal(0, 100, 1000)
        expected = sum(abs(a - b) for a, b in zip(p.tolist(), t.tolist())) / 1000
        assert mae(p, t) == pytest.approx(expected, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        p, t = rng.normal(size=50), rng.normal(size=50)
        assert mae(p, t) == mae(t, p)

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            mae([1, 2], [1])
        with pytest.raises(EmptyInput):
            mae([], [])


class TestAggregate:
    def test_one_to_five(self):
        (cell,) = aggregate(results_for({ArmSpec.F: [1, 2, 3, 4, 5]}))
        assert cell.mean == 3.0
        assert cell.std == pytest.approx(statistics.stdev([1, 2, 3, 4, 5]), rel=1e-12)
        assert cell.std == pytest.approx(np.sqrt(2.5), rel=1e-12)
        assert cell.n == 5

    def test_single_run(self):
        assert mean_std([7.25]) == (7.25, 0.0)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        results = results_for({arm: rng.normal(50, 10, 5).tolist() for arm in ArmSpec})
        ref = aggregate(results)
        for _ in range(10):
            shuffled = [results[i] for i in rng.permutation(len(results))]
            assert aggregate(shuffled) == ref

    def test_one_cell_per_arm(self):
        cells = aggregate(results_for(ALL_ARMS), dataset="toy")
        assert [c.arm for c in cells] == list(ArmSpec)
        assert {c.scenario for c in cells} == {"full", "semi"}

    def test_empty(self):
        with pytest.raises(EmptyInput):
            aggregate([])


def test_format_cell():
    assert format_cell(57.4912, 13.5079) == "57.49 (13.51)"


class TestRender:
    cells = aggregate(results_for(ALL_ARMS), dataset="toy")

    def test_csv_shape(self):
        lines = render_csv(self.cells).splitlines()
        assert lines[0] == "dataset,scenario,arm,mean,std,n"
        assert len(lines) == 7
        assert lines[1] == "toy,full,F,2.333333,1.527525,3"

    def test_csv_round_trip(self):
        back = parse_csv(render_csv(self.cells))
        for a, b in zip(back, self.cells):
            assert a.arm == b.arm and a.n == b.n and a.scenario == b.scenario
            assert a.mean == pytest.approx(b.mean, abs=1e-6) and a.std == pytest.approx(b.std, abs=1e-6)

    def test_csv_rounds(self):
        cells = [AggregateCell(ArmSpec.S, 1.0, 0.5, 5, "toy", "semi", 2)]
        text = render_csv(cells)
        assert "semi@round2" in text
        assert parse_csv(text) == cells

    def test_markdown_columns(self):
        md = render_markdown(self.cells)
        assert "| Dataset | F | G_F | F+G_F |" in md
        assert "| Dataset | S | G_S | S+G_S |" in md
        assert "| toy | 2.33 (1.53) |" in md
        assert "n-1" in md

    def test_markdown_missing_arm(self):
        md = render_markdown([c for c in self.cells if c.arm != ArmSpec.GF])
        assert "| - |" in md

    @pytest.mark.parametrize("fmt", ["csv", "markdown"])
    def test_emit_is_byte_identical(self, tmp_path, fmt):
        a, b = tmp_path / "a", tmp_path / "b"
        emit_report(self.cells, fmt, a)
        emit_report(self.cells, fmt, b)
        assert a.read_bytes() == b.read_bytes()
        assert b"\r" not in a.read_bytes()

    def test_emit_errors(self, tmp_path):
        with pytest.raises(EmptyInput):
            emit_report([], "csv", tmp_path / "x")
        with pytest.raises(ValueError):
            emit_report(self.cells, "html", tmp_path / "x")

    def test_parse_rejects_other_csv(self):
        with pytest.raises(ValueError):
            parse_csv("a,b\n1,2\n")
