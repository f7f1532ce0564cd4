import json
from pathlib import Path

import pytest

from bermudan_lpr.config import (
    ConfigError,
    RunConfig,
    build_experiment,
    dp_config,
    load_config,
    oracle_model,
    parse_config,
    regression_plan,
)
from bermudan_lpr.errors import Unsupported

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """\
[model]
kind = "gbm"
d = 2
rate = 0.05
dividend = 0.1
sigma = 0.2
x0 = 90.0

[grid]
maturity = 3.0
dates = 9

[payoff]
kind = "max_call"
strike = 100.0

[simulation]
M = 100
N = 100

[regression]
bandwidth = 50.0
"""


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    assert cfg.source == name


def test_benchmark_config_values():
    cfg = load_config(CONFIGS / "benchmark.toml")
    dp = dp_config(cfg)
    assert dp.discount_per_step == pytest.approx(0.9834714538216174)
    assert dp.kernel.kind == "triangle" and dp.kernel.bandwidth == 90.0 and not dp.truncation
    assert cfg.simulation.M == cfg.simulation.N == 4000


def test_scalar_x0_broadcasts():
    exp = build_experiment(parse_config(MINIMAL))
    paths = exp.simulate(3, 0, 0)
    assert paths.x0.tolist() == [90.0, 90.0]


def _error(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "run.toml")
    return info.value


def test_errors_name_the_line_of_the_bad_key():
    err = _error(MINIMAL.replace("sigma = 0.2", "sigma = -0.2"))
    assert err.line == 6 and str(err).startswith("run.toml:6:")
    assert _error(MINIMAL.replace("dates = 9", "dates = 9.5")).line == 11
    assert _error(MINIMAL.replace('kind = "max_call"', 'kind = "asian"')).line == 14
    assert _error(MINIMAL + "volatility = 3\n").line == 23
    assert _error(MINIMAL + "[extras]\n").line == 23


def test_toml_syntax_error_has_line():
    err = _error(MINIMAL.replace("M = 100", "M = = 100"))
    assert err.line == 18


def test_basis_size_checked_before_simulation():
    err = _error(MINIMAL.replace("M = 100", "M = 5") + "degree = 2\n")
    assert "smaller than the 6 monomials" in str(err) and err.line == 18


def test_one_dimensional_payoff_needs_d_one():
    err = _error(MINIMAL.replace('kind = "max_call"', 'kind = "vanilla_put"'))
    assert "one-dimensional" in str(err)


def test_json_equivalent_to_toml(tmp_path):
    toml_cfg = parse_config(MINIMAL)
    f = tmp_path / "run.json"
    f.write_text(json.dumps(toml_cfg.to_dict(), indent=2))
    json_cfg = load_config(f)
    assert json_cfg.to_dict() == toml_cfg.to_dict()


def test_json_errors_have_lines(tmp_path):
    doc = parse_config(MINIMAL).to_dict()
    doc["regression"]["kernel"] = "box"
    f = tmp_path / "run.json"
    f.write_text(json.dumps(doc, indent=2))
    with pytest.raises(ConfigError) as info:
        load_config(f)
    line = f.read_text().splitlines()[info.value.line - 1]
    assert '"kernel"' in line
    f.write_text("{\n  \"model\": \n}")
    with pytest.raises(ConfigError) as info:
        load_config(f)
    assert info.value.line == 3


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_echo_round_trips(name):
    cfg = load_config(CONFIGS / name)
    again = parse_config(json.dumps(cfg.to_dict()), fmt="json")
    assert again.to_dict() == cfg.to_dict()


def test_overrides():
    cfg = parse_config(MINIMAL).with_overrides(seed=9, replications=4, out_dir="elsewhere")
    assert (cfg.simulation.seed, cfg.simulation.replications, cfg.output.dir) == (9, 4, "elsewhere")
    with pytest.raises(ConfigError):
        parse_config(MINIMAL).with_overrides(seed=-1)
    with pytest.raises(ConfigError):
        parse_config(MINIMAL).with_overrides(replications=0)


def test_grid_tables_expand():
    cfg = parse_config(MINIMAL + '[study]\nM_grid = { start = 512, stop = 4096, num = 4, log = true }\n')
    assert cfg.study.M_grid == (512, 1024, 2048, 4096)
    assert _error(MINIMAL + '[study]\nM_grid = { start = 1, num = 4 }\n').line == 24


def test_oracle_models():
    assert oracle_model(load_config(CONFIGS / "digital.toml")).gap > 0
    chain = load_config(CONFIGS / "linear_margin_chain.toml")
    assert regression_plan(chain).bandwidth == pytest.approx(0.5 / 49)
    with pytest.raises(Unsupported):
        oracle_model(parse_config(MINIMAL))


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_defaults_are_a_valid_config():
    assert isinstance(RunConfig(), RunConfig)
