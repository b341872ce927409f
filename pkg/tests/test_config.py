import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coclr.config import SCHEMA, ConfigError, dump_config, parse_config, parse_value
from coclr.cotrain import Stage

BASE = """\
schema_version = 1
run.tag = "demo"
run.seeds = [0, 1]
plan.stages = [["infonce", "both", 2, "init"], ["coclr", "1", 1], ["coclr", "2", 1]]
plan.k = 5
plan.tau = 0.07
plan.momentum = 0.999
plan.queue_capacity = 64
plan.batch_size = 16
plan.lr = 1.0
"""


def test_parse_defaults_and_plan():
    cfg = parse_config(BASE)
    assert cfg.tag == "demo" and cfg.seeds == [0, 1]
    plan = cfg.plan(3)
    assert plan.seed == 3 and plan.k == 5 and plan.queue_capacity == 64
    assert plan.stages[0] == Stage("infonce", "both", 2, "init")
    assert cfg["dataset.n_classes"] == 10
    assert cfg.dataset_spec(2).seed == cfg["dataset.seed"] + 2


def test_round_trip_is_lossless():
    cfg = parse_config(BASE + "# comment\ndataset.sigma2 = 0.2\naugment.dropout = 0.25\n")
    text = dump_config(cfg)
    again = parse_config(text)
    assert again == cfg and dump_config(again) == text


@settings(max_examples=30, deadline=None)
@given(k=st.integers(0, 50), tau=st.floats(0.01, 2.0), lr=st.floats(1e-3, 5.0), seeds=st.lists(st.integers(0, 99),
                                                                                                min_size=1, max_size=4))
def test_round_trip_property(k, tau, lr, seeds):
    cfg = parse_config(BASE).with_value("plan.k", k).with_value("plan.tau", tau).with_value("plan.lr", lr)
    cfg = cfg.with_value("run.seeds", seeds)
    assert parse_config(dump_config(cfg)) == cfg


def test_missing_required_field_names_it():
    text = "\n".join(line for line in BASE.splitlines() if not line.startswith("plan.k"))
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == "plan.k" and "plan.k" in str(err.value)


@pytest.mark.parametrize("extra, key", [
    ("plan.kk = 3", "plan.kk"),
    ("plan.k = 4", "plan.k"),
    ('plan.tau = "hot"', "plan.tau"),
    ("plan.tau = -1", "plan.tau"),
    ("plan.tau = ", "plan.tau"),
])
def test_schema_errors_carry_the_key(extra, key):
    with pytest.raises(ConfigError) as err:
        parse_config(BASE + extra + "\n")
    assert err.value.key == key


def test_stage_errors_carry_the_index():
    bad = BASE.replace('["coclr", "1", 1]', '["coclr", "1"]')
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    assert err.value.key == "plan.stages[1]"
    bad = BASE.replace('["infonce", "both", 2, "init"], ', "")
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    assert err.value.key.startswith("plan.stages[0]")


def test_version_and_seeds_checked():
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config(BASE.replace("schema_version = 1", "schema_version = 2"))
    with pytest.raises(ConfigError, match="run.seeds"):
        parse_config(BASE.replace("run.seeds = [0, 1]", "run.seeds = []"))


def test_parse_value_and_with_value():
    assert parse_value("plan.k", "50") == 50
    assert parse_value("plan.tau", "0.5") == 0.5
    assert parse_value("run.tag", "plain") == "plain"
    with pytest.raises(ConfigError):
        parse_value("plan.nope", "1")
    with pytest.raises(ConfigError):
        parse_config(BASE).with_value("plan.nope", 1)
    assert set(SCHEMA) >= {"plan.k", "plan.tau", "dataset.sigma_nuis", "eval.every"}
