import math
import subprocess
import sys
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cpnlab.cli import (emit_record, format_value, load_config, main, parse_box, parse_kernel,
                        parse_potential, parse_record, parse_t_grid, parse_test_function, record_floats,
                        run_experiment, validate_config)
from cpnlab.noise import FiniteSum, GaussianBump

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.ini"))

SWEEP = """
[experiment]
kind = ecf-sweep
seed = 3
samples = 300

[model]
box = 0:4, 0:4
z_list = 1, 10, 100
law = two_point_symmetric(1.0)

[probe]
target = noise
f = bump(2, 2; 0.5)
t_grid = auto
"""

GCE = """
[experiment]
kind = gce
seed = 11
steps = 3000
burn_in = 100

[model]
box = 0:2, 0:2
z = 1.5
lambda = 0
kernel = indicator(0.4)
potential = hard_wall(2)
"""


def fields(errors):
    return [k for k, _ in errors]


# -- parsers -------------------------------------------------------------------

def test_parsers():
    assert parse_box("0:4, -1:2").lower == (0.0, -1.0)
    f = parse_test_function("bump(1, 2; 0.5; 3) + indicator(0:1,0:1)")
    assert isinstance(f, FiniteSum) and len(f.terms()) == 2
    assert parse_test_function("bump(1,2; 0.5)") == GaussianBump((1.0, 2.0), 0.5)
    assert parse_test_function("zero").terms() == []
    assert parse_kernel("mollified(0.5)") == ("mollified", 0.5)
    assert parse_potential("trigonometric(1:2, 0.5:3)") == ("trigonometric", ((1.0, 2.0), (0.5, 3.0)))
    assert parse_t_grid("auto") is None
    assert len(parse_t_grid("linspace(-1, 1, 5)")) == 5
    for fn, bad in ((parse_box, "0:1:2"), (parse_kernel, "indicator(-1)"), (parse_potential, "hard_wall(0)"),
                    (parse_t_grid, "linspace(0,1,2.5)"), (parse_test_function, "bump(1,2)")):
        with pytest.raises(ValueError):
            fn(bad)


# -- validation -----------------------------------------------------------------

@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    assert validate_config(path.read_text()) == []


def test_missing_seed_is_named():
    errors = validate_config(GCE.replace("seed = 11\n", ""))
    assert fields(errors) == ["seed"]


def test_negative_activity_is_named():
    errors = validate_config(GCE.replace("z = 1.5", "z = -1"))
    assert len(errors) == 1
    key, msg = errors[0]
    assert key == "z" and "positive" in msg


def test_unknown_and_misplaced_keys():
    assert "colour" in " ".join(fields(validate_config(GCE + "colour = red\n")))
    moved = GCE.replace("z = 1.5\n", "").replace("burn_in = 100\n", "burn_in = 100\nz = 1.5\n")
    assert "z" in " ".join(fields(validate_config(moved)))
    assert validate_config("[nonsense]\nx = 1\n")


def test_cross_checks():
    assert "burn_in" in fields(validate_config(GCE.replace("burn_in = 100", "burn_in = 5000")))
    assert fields(validate_config(SWEEP.replace("two_point_symmetric(1.0)", "point_mass(1.0)")))
    assert fields(validate_config(SWEEP.replace("samples = 300", "samples = 10")))


def test_loaded_values_are_typed():
    cfg, errors = load_config(GCE)
    assert not errors and cfg.kind == "gce" and cfg.seed == 11 and cfg.z == 1.5


# -- records --------------------------------------------------------------------

values = st.one_of(st.floats(allow_nan=False), st.integers(-10 ** 12, 10 ** 12),
                   st.text(st.characters(min_codepoint=33, max_codepoint=126, blacklist_characters="="),
                           min_size=1, max_size=8))


@given(st.dictionaries(st.from_regex(r"[a-z_]{1,8}", fullmatch=True), values, min_size=1, max_size=6))
def test_record_round_trip(rec):
    back = record_floats(parse_record(emit_record(rec)))
    for k, v in rec.items():
        if isinstance(v, float):
            assert back[k] == v
        elif isinstance(v, int):
            assert back[k] == float(v)
        else:
            assert str(back[k]) == v or back[k] == float(v)


def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(True) == "true"
    assert format_value(float("nan")) == "nan"
    with pytest.raises(ValueError):
        format_value("two words")


# -- runs -----------------------------------------------------------------------

def test_sweep_emits_one_record_per_z_and_t():
    res = run_experiment(SWEEP)
    assert res.status == 0
    assert len(res.records) == 63
    assert {r["z"] for r in res.records} == {1.0, 10.0, 100.0}


def test_reruns_are_byte_identical_and_worker_independent():
    a = [emit_record(r) for r in run_experiment(SWEEP).records]
    b = [emit_record(r) for r in run_experiment(SWEEP).records]
    c = [emit_record(r) for r in run_experiment(SWEEP, workers=3).records]
    assert a == b == c


def test_gce_free_reference_column():
    res = run_experiment(GCE)
    assert res.status == 0
    n_rec = next(r for r in res.records if r["observable"] == "N")
    assert n_rec["analytic"] == 1.5 * 4.0 and n_rec["truncation_bound"] == 0.0
    assert abs(n_rec["estimate"] - 6.0) < 6 * n_rec["stderr"]


def test_config_error_status():
    assert run_experiment(GCE.replace("seed = 11\n", "")).status == 2


def test_main_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(GCE.replace("z = 1.5", "z = -1"))
    assert main(["--config", str(bad)]) != 0
    assert "z" in capsys.readouterr().err
    good = tmp_path / "good.ini"
    good.write_text(GCE)
    assert main(["--config", str(good), "--check"]) == 0
    out = tmp_path / "out.txt"
    assert main(["--config", str(good), "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines and all("experiment=gce" in line for line in lines)
    assert main(["--config", str(tmp_path / "missing.ini")]) == 2


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[experiment]\nkind = gce\n")
    proc = subprocess.run([sys.executable, "-m", "cpnlab.cli", "--config", str(cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "seed" in proc.stderr


@pytest.mark.slow
@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_run(path):
    res = run_experiment(path.read_text())
    assert res.status == 0 and res.records
    for rec in res.records:
        assert all(not isinstance(v, float) or not math.isinf(v) for v in rec.values())
