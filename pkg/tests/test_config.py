import math

import numpy as np
import pytest

from vkdelay.config import DEFAULTS, field_from_spec, parse_config, parse_text
from vkdelay.discretization import Grid
from vkdelay.errors import ConfigError


def test_defaults_parse():
    rc = parse_text("")
    assert rc.grid() == Grid(1.0, 1.0, 31, 31)
    assert rc.physics().k == DEFAULTS["physics"]["k"][1]
    cfg = rc.delay()
    assert cfg.dt <= rc.grid().h
    assert cfg.t_star == pytest.approx(math.sqrt(2))


def test_dt_rounded_to_divide_t_star():
    rc = parse_text("[grid]\nnx = 15\nny = 15\n[physics]\nU = 0.5\n[delay]\ndt = 0.05\n")
    cfg = rc.delay()
    assert cfg.dt <= 0.05
    assert cfg.t_star / cfg.dt == pytest.approx(round(cfg.t_star / cfg.dt), abs=1e-9)


def test_values_and_comments():
    rc = parse_text("""
# header comment
[physics]
k = 0.25   # trailing
use_reduced_damping = yes
p0 = bump:1.0, 0.5, 0.5, 0.2
[ensemble]
radii = 1, 3
""")
    assert rc.get("physics", "k") == 0.25
    assert rc.get("physics", "use_reduced_damping") is True
    assert rc.get("ensemble", "radii") == (1.0, 3.0)
    assert rc.physics().p0 is not None


@pytest.mark.parametrize("text, key, line", [
    ("[physics]\nU = 1.0\n", "physics.U", 2),
    ("[grid]\nnx = 3\n", "grid.nx", 2),
    ("[grid]\n\nbogus = 1\n", "grid.bogus", 3),
    ("[run]\nhorizon = abc\n", "run.horizon", 2),
    ("[delay]\nn_theta = 4\n", "delay.n_theta", 2),
    ("[physics]\nU = 3\n[delay]\ndt = 0.05\n", "delay.dt", 4),
])
def test_errors_carry_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as exc:
        parse_text(text)
    assert exc.value.key == key
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_unknown_section_and_strictness():
    with pytest.raises(ConfigError):
        parse_text("[nope]\na = 1\n")
    rc = parse_text("[nope]\na = 1\n[grid]\nzz = 2\n", strict=False)
    assert rc.grid().nx == 31


def test_field_specs(tmp_path):
    g = Grid.square(7)
    assert field_from_spec("zero", g) is None
    assert np.all(field_from_spec("constant:2.5", g).values == 2.5)
    arr = np.arange(49.0).reshape(7, 7)
    np.save(tmp_path / "f.npy", arr)
    np.savetxt(tmp_path / "f.txt", arr)
    assert np.array_equal(field_from_spec("file:f.npy", g, tmp_path).values, arr)
    assert np.array_equal(field_from_spec("file:f.txt", g, tmp_path).values, arr)
    with pytest.raises(ValueError):
        field_from_spec("file:missing.npy", g, tmp_path)
    with pytest.raises(ValueError):
        field_from_spec("bump:1,2", g)
    with pytest.raises(ValueError):
        field_from_spec("spiral:1", g)


def test_parse_config_file_and_dump(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("[grid]\nnx = 9\nny = 9\n")
    rc = parse_config(p)
    again = parse_text(rc.dump())
    assert again.values == rc.values
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "absent.cfg")
