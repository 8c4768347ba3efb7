"""Raster emission, timing CSV and figure rendering."""

import os

import numpy as np
import pytest

from blockswe.balance import GPU_REFERENCE_MODEL, equal_cell_plan
from blockswe.grid import GridLevel, NestedGridSystem
from blockswe.report import (
    emit_rasters,
    level_mosaic,
    read_raster,
    write_raster,
    write_timing_csv,
)
from blockswe.runner import Simulation
from blockswe import plots
from conftest import flat_block, hump_settings


@pytest.fixture
def mini_sim(chain_level_system):
    lvl = chain_level_system.levels[0]
    settings = hump_settings(0.5, 60.0, (110.0, 50.0))
    plan = equal_cell_plan(
        [b.cell_count for _, b in chain_level_system.all_blocks()], 2)
    sim = Simulation(chain_level_system, settings, plan)
    report = sim.run(8, threaded=True)
    return sim, report


class TestRasters:
    def test_two_by_two_exact_content(self, tmp_path):
        system = NestedGridSystem(levels=[
            GridLevel(1, 5.0, [flat_block(7, (10.0, 20.0), 2, 2, 3.0)])])

        class Acc:
            max_eta = np.array([[1.5, 2.5], [3.5, 4.5]])

        mosaic, header = level_mosaic(system.levels[0],
                                      lambda b: Acc.max_eta)
        path = tmp_path / "r.txt"
        write_raster(str(path), mosaic, header)
        text = path.read_text()
        assert text == "2 2 5 10 20\n1.5 2.5\n3.5 4.5\n"

    def test_header_matches_value_count(self, mini_sim, tmp_path):
        sim, _ = mini_sim
        paths = emit_rasters(sim.system, sim.accumulators, str(tmp_path))
        assert len(paths) == 3          # one level, three accumulators
        for p in paths:
            arr, (ni, nj, dx, x0, y0) = read_raster(p)
            assert arr.shape == (ni, nj)
            assert dx == 10.0

    def test_gap_between_blocks_is_nan(self, mini_sim, tmp_path):
        sim, _ = mini_sim
        paths = emit_rasters(sim.system, sim.accumulators, str(tmp_path))
        arr, _ = read_raster(paths[0])
        # blocks cover x-cells [0,8)+[8,20)+[22,28): the 2-cell gap is nan
        assert np.all(np.isnan(arr[20:22, :]))
        assert not np.any(np.isnan(arr[:20, :]))

    def test_rerun_byte_identical(self, chain_level_system, tmp_path):
        settings = hump_settings(0.5, 60.0, (110.0, 50.0))
        blobs = []
        for it in range(2):
            plan = equal_cell_plan(
                [b.cell_count for _, b in chain_level_system.all_blocks()], 3)
            sim = Simulation(chain_level_system, settings, plan)
            sim.run(10, threaded=True)
            out = tmp_path / f"run{it}"
            paths = emit_rasters(sim.system, sim.accumulators, str(out))
            blobs.append([open(p, "rb").read() for p in sorted(paths)])
        assert blobs[0] == blobs[1]


class TestTimingCSV:
    def test_structure(self, mini_sim, tmp_path):
        _, report = mini_sim
        path = tmp_path / "timing.csv"
        write_timing_csv(report, str(path))
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("rank,steps,mass,momentum,restrict")
        assert len(lines) == 1 + report.n_ranks + 1   # header + ranks + total
        assert lines[1].split(",")[0] == "0"
        assert lines[-1].split(",")[0] == "all"


class TestFigures:
    def test_figures_written(self, mini_sim, tmp_path):
        sim, report = mini_sim
        p1 = tmp_path / "breakdown.png"
        plots.plot_timing_breakdown(report, str(p1))
        mosaic, header = level_mosaic(
            sim.system.levels[0],
            lambda b: sim.accumulators[b.block_id].max_eta)
        p2 = tmp_path / "field.png"
        plots.plot_field(mosaic, header, str(p2), title="max eta")
        samples = [(1000.0, 46.5), (1e6, 155.0), (2e6, 270.0)]
        from blockswe.balance import fit_cost_model
        p3 = tmp_path / "fit.png"
        plots.plot_cost_fit(samples, fit_cost_model(samples), str(p3))
        plans = {"equal": equal_cell_plan((10, 10, 10, 70), 2),
                 "optimized": equal_cell_plan((10, 10, 10, 70), 2)}
        p4 = tmp_path / "ranks.png"
        plots.plot_rank_costs(plans, GPU_REFERENCE_MODEL, str(p4))
        for p in (p1, p2, p3, p4):
            assert p.stat().st_size > 1000
