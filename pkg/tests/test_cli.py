import csv
import io
import json
import math

import numpy as np
import pytest

from hpinterp.cli import main
from hpinterp.config import ConfigError, MeshSpec, SweepConfig, load_config, parse_config
from hpinterp.fracnorm import gen_eig
from hpinterp.hpspace import HpSpace, assemble_mass, assemble_stiffness
from hpinterp.mesh import mixed_strip, quad_grid, save_mesh
from hpinterp.sweeps import (
    corollary_constant,
    format_csv,
    inverse_constant,
    loglog_slope,
    normalized_gram,
    run_inverse_sweep,
)


def _toml(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


# ----------------------------------------------------------------- config

def test_parse_full_config(tmp_path):
    save_mesh(quad_grid(1), tmp_path / "box.json")
    cfg = load_config(_toml(tmp_path, """
seed = 3
out = "x.csv"
[[mesh]]
generator = "criss_cross"
n = 2
[[mesh]]
generator = "file"
path = "box.json"
[sweep]
degrees = [1, 2]
theta = [0.25, 0.5]
variant = "seminorm"
dirichlet = true
corollary = [[0.25, 0.75]]
"""))
    assert cfg.seed == 3 and cfg.out == "x.csv"
    assert [m.label for m in cfg.meshes] == ["criss_cross-2", "box"]
    assert cfg.meshes[1].path == str(tmp_path / "box.json")
    assert cfg.theta == [0.25, 0.5] and cfg.variant == "seminorm" and cfg.dirichlet
    assert cfg.corollary == [(0.25, 0.75)]
    assert cfg.meshes[1].build(3).degrees.max() == 3


def test_defaults():
    cfg = parse_config({})
    assert cfg == SweepConfig()
    assert cfg.meshes == [MeshSpec("quad_grid", 1)]


@pytest.mark.parametrize("doc,match", [
    ({"bogus": 1}, "top-level"),
    ({"sweep": {"thetas": [0.5]}}, r"\[sweep\]"),
    ({"mesh": [{"generator": "hex"}]}, "generator"),
    ({"mesh": [{"generator": "file"}]}, "path"),
    ({"mesh": [{"generator": "quad_grid", "n": "2"}]}, "integer"),
    ({"mesh": [{"generator": "quad_grid", "n": 0}]}, ">= 1"),
    ({"mesh": [{"generator": "single", "kind": "hex"}]}, "kind"),
    ({"mesh": [{"generator": "quad_grid", "size": 2}]}, "unknown mesh keys"),
])
def test_parse_errors(doc, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(doc)


@pytest.mark.parametrize("kw,match", [
    ({"degrees": [0]}, "degrees"),
    ({"theta": [0.95]}, "theta"),
    ({"variant": "weird"}, "variant"),
    ({"oracle_levels": -1}, "oracle_levels"),
    ({"corollary": [(0.6, 0.4)]}, "corollary"),
])
def test_validate_errors(kw, match):
    with pytest.raises(ConfigError, match=match):
        SweepConfig(**kw).validate()


def test_inverse_theta_range():
    SweepConfig(theta=[0.0, 1.0]).validate((0.0, 1.0))
    with pytest.raises(ConfigError):
        SweepConfig(theta=[0.0]).validate()


def test_bad_toml(tmp_path):
    with pytest.raises(ConfigError):
        load_config(_toml(tmp_path, "seed = = 1"))


# ------------------------------------------------------------------ csv

def test_csv_format():
    text = format_csv([{"a": 0.1, "b": True, "c": 3}, {"a": 1 / 3, "b": False, "c": ""}], ["a", "b", "c"])
    lines = text.splitlines()
    assert lines[0] == "a,b,c"
    assert lines[1] == "0.1,true,3"
    assert float(lines[2].split(",")[0]) == 1 / 3
    assert lines[2].endswith("false,")
    timed = format_csv([{"a": 1.0, "runtime_ms": 2.5}], ["a"])
    assert timed.splitlines()[0] == "a,runtime_ms"


# ---------------------------------------------------------------- inverse

def test_inverse_theta0_brute_force_q1():
    # one unit square, Q1: h^2 lambda_max(Kx (x) My + Mx (x) Ky, Mx (x) My)
    K1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    M1 = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    S = np.kron(K1, M1) + np.kron(M1, K1)
    M = np.kron(M1, M1)
    lam = np.max(np.linalg.eigvals(np.linalg.solve(M, S)).real)
    expected = math.sqrt(2.0 * lam)
    assert expected == pytest.approx(math.sqrt(48.0))
    assert inverse_constant(HpSpace(quad_grid(1, 1)), 0.0) == pytest.approx(expected, rel=1e-12)


def test_normalized_gram_endpoints():
    sp = HpSpace(quad_grid(2, 2))
    M = assemble_mass(sp).toarray()
    S = assemble_stiffness(sp).toarray()
    b = gen_eig(M, M + S)
    np.testing.assert_allclose(normalized_gram(b, 0.0), M, atol=1e-12)
    np.testing.assert_allclose(normalized_gram(b, 1.0), M + S, atol=1e-10)


@pytest.mark.parametrize("p", [1, 3, 5])
def test_inverse_theta1_at_most_one(p):
    assert inverse_constant(HpSpace(quad_grid(2, p)), 1.0) <= 1 + 1e-9


def test_corollary_requires_uniform_degree():
    with pytest.raises(ValueError):
        corollary_constant(HpSpace(mixed_strip(2, 3)), 0.25, 0.75)
    assert corollary_constant(HpSpace(quad_grid(2, 2)), 0.5, 1.0) > 0


def test_loglog_slope():
    ps = np.array([1, 2, 4, 8])
    assert loglog_slope(ps, 3 * ps ** 1.5) == pytest.approx(1.5)
    assert loglog_slope([2, 2], [1, 5]) == 0.0


def test_inverse_sweep_threads_deterministic():
    cfg = SweepConfig(meshes=[MeshSpec("quad_grid", 2)], degrees=[1, 2, 3], theta=[0.0, 0.5],
                      corollary=[(0.5, 1.0)])
    a = run_inverse_sweep(cfg, threads=1)
    b = run_inverse_sweep(cfg, threads=3)
    assert format_csv(a, list(a[0])) == format_csv(b, list(b[0]))
    assert [r["mode"] for r in a] == ["inverse"] * 6 + ["corollary"] * 3


# -------------------------------------------------------------------- cli

def test_cli_check_mesh(tmp_path, capsys):
    save_mesh(quad_grid(2), tmp_path / "m.json")
    assert main(["check-mesh", "--mesh", str(tmp_path / "m.json")]) == 0
    rows = _rows(capsys.readouterr().out)
    assert rows[0]["admissible"] == "true" and rows[0]["elements"] == "4"


def test_cli_check_mesh_failure(tmp_path, capsys):
    data = {"vertices": [[0, 0], [1, 0], [1, 1], [0, 1], [1, 0.5], [2, 0], [2, 1]],
            "elements": [{"kind": "quad", "verts": [0, 1, 2, 3]}, {"kind": "tri", "verts": [1, 5, 4]},
                         {"kind": "tri", "verts": [4, 5, 6]}, {"kind": "tri", "verts": [4, 6, 2]}]}
    (tmp_path / "h.json").write_text(json.dumps(data))
    assert main(["check-mesh", "--mesh", str(tmp_path / "h.json")]) == 1
    assert _rows(capsys.readouterr().out)[0]["admissible"] == "false"


def test_cli_error_exit_codes(tmp_path):
    assert main(["check-mesh", "--mesh", str(tmp_path / "missing.json")]) == 2
    assert main(["sweep-equivalence", "--config", str(_toml(tmp_path, "[sweep]\ntheta = [0.0]\n"))]) == 2
    with pytest.raises(SystemExit):
        main(["no-such-command"])


def test_cli_sweep_equivalence_deterministic(tmp_path):
    cfg = _toml(tmp_path, """
[[mesh]]
generator = "quad_grid"
n = 1
[sweep]
degrees = [1, 2]
theta = [0.5]
oracle_levels = 1
""")
    outs = []
    for i, threads in enumerate(("1", "2")):
        path = tmp_path / f"eq{i}.csv"
        assert main(["sweep-equivalence", "--config", str(cfg), "--out", str(path), "--threads", threads]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    rows = _rows(outs[0].decode())
    assert list(rows[0]) == ["mesh", "theta", "h_max", "p", "N", "C_low", "C_high", "oracle_levels"]
    assert all(float(r["C_low"]) >= 1 - 1e-6 for r in rows)
    main(["sweep-equivalence", "--config", str(cfg), "--out", str(tmp_path / "t.csv"), "--timing"])
    assert "runtime_ms" in (tmp_path / "t.csv").read_text().splitlines()[0]


def test_cli_sweep_inverse(tmp_path, capsys):
    cfg = _toml(tmp_path, """
[[mesh]]
generator = "quad_grid"
n = 2
[sweep]
degrees = [1, 2]
theta = [0.0, 1.0]
corollary = [[0.25, 0.75]]
""")
    assert main(["sweep-inverse", "--config", str(cfg)]) == 0
    rows = _rows(capsys.readouterr().out)
    assert len(rows) == 6
    assert all(float(r["constant"]) <= 1 + 1e-9 for r in rows if r["mode"] == "inverse" and r["theta"] == "1.0")


def test_cli_lift_verify(tmp_path):
    out = tmp_path / "lift.csv"
    assert main(["lift-verify", "--draws", "14", "--max-degree", "7", "--out", str(out)]) == 0
    rows = _rows(out.read_text())
    assert len(rows) == 14 and all(r["degree_ok"] == "true" for r in rows)


def test_cli_decomp_verify(tmp_path, capsys):
    cfg = _toml(tmp_path, """
seed = 4
[[mesh]]
generator = "mixed_strip"
[sweep]
degrees = [2]
samples = 2
""")
    assert main(["decomp-verify", "--config", str(cfg)]) == 0
    rows = _rows(capsys.readouterr().out)
    assert len(rows) == 2
    assert all(float(r["reconstruction"]) < 1e-10 and float(r["v0_residual"]) < 1e-10 for r in rows)
    assert all(float(r["R"]) > 0 for r in rows)


def test_cli_assemble_and_norm(tmp_path, capsys):
    cfg = _toml(tmp_path, """
[sweep]
degrees = [1]
samples = 2
oracle_levels = 1
""")
    assert main(["assemble", "--config", str(cfg)]) == 0
    rows = _rows(capsys.readouterr().out)
    M = [r for r in rows if r["matrix"] == "M"]
    assert sum(float(r["value"]) for r in M) == pytest.approx(1.0)
    assert main(["norm", "--config", str(cfg), "--seed", "1"]) == 0
    rows = _rows(capsys.readouterr().out)
    for r in rows:
        assert float(r["tquad"]) == pytest.approx(float(r["discrete"]), rel=1e-8)
        assert float(r["oracle"]) <= float(r["discrete"]) * (1 + 1e-9)


def test_equivalence_h_sweep_band():
    from hpinterp.fracnorm import equivalence_band
    highs = [equivalence_band(HpSpace(quad_grid(n, 2)), 0.5, levels=2)[1] for n in (1, 2)]
    assert 1 / 1.5 <= highs[1] / highs[0] <= 1.5
