import pytest

from scalarlab.config import (
    ConfigError,
    ExperimentConfig,
    apply_override,
    config_from_dict,
    derive_seed,
    dump_config,
    parse_config,
    to_dict,
)


def test_minimal_document_gives_defaults():
    cfg = parse_config('experiment = "solve"\n')
    assert cfg == ExperimentConfig(experiment="solve")
    assert cfg.solver.dt == "auto" and cfg.sweep.epsilons[0] == 2.0**-6
    assert parse_config("") == ExperimentConfig()


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError) as err:
        parse_config('master_seed = 3\n\n[solver]\nepsilom = 0.1\n')
    assert err.value.key == "solver.epsilom" and err.value.line == 4
    with pytest.raises(ConfigError) as err:
        parse_config('colour = "red"\n')
    assert err.value.key == "colour" and err.value.line == 1


def test_duplicate_key_is_named():
    with pytest.raises(ConfigError) as err:
        parse_config("[field]\nresolution = 32\nkind = 'zero'\nresolution = 64\n")
    assert err.value.key == "resolution" and err.value.line == 4
    with pytest.raises(ConfigError):
        parse_config("[field]\n[field]\n")


def test_type_mismatch():
    with pytest.raises(ConfigError) as err:
        parse_config("[field]\nresolution = 32.5\n")
    assert err.value.key == "field.resolution" and err.value.line == 2
    with pytest.raises(ConfigError):
        parse_config("[solver]\ndealias = 1\n")


@pytest.mark.parametrize("eps", ["[0.1, 0.1, 0.01, 0.001]", "[0.001, 0.01, 0.1, 1.0]", "[0.1, 0.09, 0.01, 0.001]"])
def test_epsilon_list_constraints(eps):
    with pytest.raises(ConfigError) as err:
        parse_config(f"[sweep]\nepsilons = {eps}\n")
    assert err.value.key == "sweep.epsilons" and err.value.line == 2


def test_other_constraints():
    for doc in ("[field]\nresolution = 48\n", "[solver]\ncfl_safety = 2.0\n", "experiment = 'plot'\n",
                "[field]\nkind = 'constant'\n", "[sard]\nalpha_source = 'guess'\n",
                "experiment = 'boxdim'\n[field]\nkind = 'zero'\n"):
        with pytest.raises(ConfigError):
            parse_config(doc)


def test_malformed_document():
    with pytest.raises(ConfigError) as err:
        parse_config("[field\nkind = 1\n")
    assert err.value.line == 1


def test_round_trip_is_lossless():
    text = """
experiment = "full_report"
master_seed = 18446744073709551615
workers = 2
[field]
kind = "gaussian"
dimension = 3
resolution = 64
max_wavenumber = 15
alpha_target = 0.25
velocity_rms = 0.1
[initial]
kind = "single_mode"
mode = [1, 0, 0]
[solver]
dt = 0.001
[sweep]
epsilons = [0.1, 0.05, 0.01, 0.001]
fit_tail = 3
[sard]
alpha_source = "fixed:0.25"
levels = [0, 1, 2, 3]
"""
    cfg = parse_config(text)
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config(dump_config(ExperimentConfig())) == ExperimentConfig()


def test_overrides():
    doc = to_dict(ExperimentConfig())
    apply_override(doc, "sweep.epsilons=[0.1, 0.05, 0.02, 0.01]")
    apply_override(doc, "field.kind=zero")
    apply_override(doc, "solver.epsilon=0.5")
    cfg = config_from_dict(doc)
    assert cfg.sweep.epsilons[-1] == 0.01 and cfg.field.kind == "zero" and cfg.solver.epsilon == 0.5
    with pytest.raises(ConfigError):
        apply_override(doc, "no-equals-sign")


def test_seed_derivation():
    a = derive_seed(1, "sweep_dissipation", 0, "field")
    assert a == derive_seed(1, "sweep_dissipation", 0, "field")
    assert 0 <= a < 2**64
    others = {derive_seed(1, "sweep_dissipation", 1, "field"), derive_seed(1, "sweep_dissipation", 0, "noise"),
              derive_seed(2, "sweep_dissipation", 0, "field"), derive_seed(1, "yaglom", 0, "field")}
    assert a not in others and len(others) == 4
