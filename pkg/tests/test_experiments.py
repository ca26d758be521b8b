import numpy as np
import pytest

from iquant.csvio import read_csv
from iquant.exceptions import ConfigError
from iquant.experiments import (
    PRESETS,
    build_model,
    load_config,
    parse_config,
    run_designer,
    run_experiment,
    with_overrides,
)

SMALL = """
[experiment]
name = small
designers = iterative, dp-indirect-threshold, naive-two-step, dp-indirect-rate
T = 0, 1, 3

[model]
kind = gaussian-mixture
s_num = 65
x_num = 512

[designer]
grid_size = 121
grid_lo = -15
grid_hi = 15
iterative_grid = yes
traces = yes
"""

VECTOR = """
[experiment]
name = vec
designers = iterative, vector-iterative
T = 1, 2
n = 1, 2, 3

[model]
kind = gaussian-mixture
s_num = 33
x_num = 256

[designer]
type_tables = yes
"""


class TestConfig:
    @pytest.mark.parametrize("name", PRESETS)
    def test_presets_load(self, name):
        cfg = load_config(name)
        assert cfg.name == name
        build_model(cfg.model)

    @pytest.mark.parametrize("text,fragment", [
        ("[model]\nkind = gaussian-mixture\n", "experiment"),
        (SMALL.replace("kind = gaussian-mixture", "kind = cauchy"), "model.kind"),
        (SMALL.replace("s_num = 65", "sigma = 2"), "model.sigma"),
        (SMALL.replace("T = 0, 1, 3", "T = 1, x"), "experiment.T"),
        (SMALL.replace("T = 0, 1, 3", "T = -1"), "experiment.T"),
        (SMALL.replace("naive-two-step", "kmeans"), "designers"),
        (SMALL.replace("grid_size = 121", "grid_size = 3"), "grid_size"),
        (SMALL.replace("grid_hi = 15", "grid_hi = -20"), "grid_lo"),
        (SMALL.replace("grid_hi = 15\n", ""), "grid_lo"),
        (SMALL.replace("traces = yes", "traces = perhaps"), "designer.traces"),
        (SMALL.replace("traces = yes", "colour = red"), "designer.colour"),
        (VECTOR.replace("n = 1, 2, 3\n", ""), "experiment.n"),
        ("not an ini file", "malformed"),
    ])
    def test_errors_name_the_key(self, text, fragment):
        with pytest.raises(ConfigError, match=fragment):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.ini")

    def test_overrides(self):
        cfg = with_overrides(load_config("fig9"), grid_size=51, eps=None)
        assert cfg.grid_size == 51 and cfg.eps == load_config("fig9").eps
        with pytest.raises(ConfigError):
            with_overrides(cfg, max_iter=0)

    def test_density_file_model(self, tmp_path, small_mixture):
        from iquant.model import save_density_file

        save_density_file(small_mixture, tmp_path / "d.txt")
        (tmp_path / "c.ini").write_text(
            "[experiment]\ndesigners = iterative\nT = 1\n[model]\nkind = density-file\npath = d.txt\n")
        model = build_model(load_config(tmp_path / "c.ini").model)
        assert model.mmse_floor() == pytest.approx(small_mixture.mmse_floor(), rel=1e-12)


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    return run_experiment(parse_config(SMALL), out), out


class TestRun:
    def test_all_checks_pass(self, small):
        bundle, _ = small
        assert bundle.checks and all(c.ok for c in bundle.checks)

    def test_zero_thresholds_row(self, small):
        bundle, _ = small
        for d in bundle.config.designers:
            assert bundle.scalar[d, 0].mse == pytest.approx(bundle.var_s, abs=1e-15)

    def test_files(self, small):
        bundle, out = small
        cols, rows = read_csv(out / "small_mse.csv")
        assert cols == ["T", "mse_iterative", "mse_dp_threshold", "mse_naive",
                        "mse_dp_rate", "mmse_floor", "var_s"]
        assert [r[0] for r in rows] == ["0", "1", "3"]
        assert (out / "small_iterative_T3.quant").is_file()
        assert (out / "small_trace_iterative_T3.csv").is_file()
        assert (out / "small_checks.csv").is_file()
        from iquant.quantizer import Quantizer

        q = Quantizer.from_record((out / "small_dp-indirect-rate_T1.quant").read_text())
        assert q.domain == "u"

    def test_deterministic_and_thread_invariant(self, small, tmp_path):
        bundle, out = small
        run_experiment(parse_config(SMALL), tmp_path, threads=4)
        for name in ("small_mse.csv", "small_thresholds.csv", "small_checks.csv"):
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()

    def test_vector_experiment(self, tmp_path):
        bundle = run_experiment(parse_config(VECTOR), tmp_path, threads=2)
        assert all(c.ok for c in bundle.checks)
        cols, rows = read_csv(tmp_path / "vec_vector.csv")
        assert cols == ["n", "T", "mse_vector_iterative"] and len(rows) == 6
        assert (tmp_path / "vec_types_n3_T2.csv").is_file()

    def test_vector_needs_joint_model(self):
        cfg = load_config("fig6")
        with pytest.raises(ConfigError):
            run_designer(build_model(cfg.model), "vector-iterative", 1, cfg)

    def test_random_init_seeded(self):
        cfg = with_overrides(parse_config(SMALL), init="random", seed=7)
        model = build_model(cfg.model)
        a = run_designer(model, "iterative", 3, cfg)
        b = run_designer(model, "iterative", 3, cfg)
        np.testing.assert_array_equal(a.quantizer.thresholds, b.quantizer.thresholds)
