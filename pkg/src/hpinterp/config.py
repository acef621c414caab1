"""Sweep configuration files (TOML).

Example::

    seed = 7
    out = "equivalence.csv"

    [[mesh]]
    generator = "quad_grid"     # quad_grid | criss_cross | mixed_strip | single | file
    n = 2

    [[mesh]]
    generator = "file"
    path = "meshes/l_shape.json"

    [sweep]
    degrees = [1, 2, 3]
    theta = [0.3, 0.5, 0.7]
    oracle_levels = 2
    variant = "full"            # full | seminorm
    dirichlet = false
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .mesh import Mesh, criss_cross, load_mesh, mixed_strip, quad_grid, single_element

__all__ = ["ConfigError", "MeshSpec", "SweepConfig", "load_config", "parse_config"]

GENERATORS = ("quad_grid", "criss_cross", "mixed_strip", "single", "file")


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


@dataclass(frozen=True)
class MeshSpec:
    """Mesh source: a built-in generator or a JSON mesh file.

    ``degree`` is filled in per sweep point; for ``mixed_strip`` the
    triangles get ``degree + tri_offset`` (default 0).
    """

    generator: str
    n: int = 1
    kind: str = "quad"
    path: str | None = None
    length: int = 2
    tri_offset: int = 0

    def build(self, degree: int) -> Mesh:
        g = self.generator
        if g == "quad_grid":
            return quad_grid(self.n, degree)
        if g == "criss_cross":
            return criss_cross(self.n, degree)
        if g == "mixed_strip":
            return mixed_strip(degree, max(degree + self.tri_offset, 1), self.length)
        if g == "single":
            return single_element(self.kind, degree)
        return load_mesh(self.path).with_degrees(degree)

    @property
    def label(self):
        if self.generator == "file":
            return Path(self.path).stem
        if self.generator == "single":
            return f"single-{self.kind}"
        if self.generator == "mixed_strip":
            return f"mixed_strip-{self.length}"
        return f"{self.generator}-{self.n}"


@dataclass
class SweepConfig:
    meshes: list = field(default_factory=lambda: [MeshSpec("quad_grid", 1)])
    degrees: list = field(default_factory=lambda: [1, 2, 3])
    theta: list = field(default_factory=lambda: [0.5])
    oracle_levels: int = 2
    variant: str = "full"
    dirichlet: bool = False
    seed: int = 0
    out: str | None = None
    samples: int = 10
    corollary: list = field(default_factory=list)
    max_dense: int = 4000

    def validate(self, theta_range=(0.1, 0.9)):
        lo, hi = theta_range
        if not self.degrees or any(int(p) < 1 for p in self.degrees):
            raise ConfigError("degrees must be a nonempty list of integers >= 1")
        if not self.theta or any(not lo <= t <= hi for t in self.theta):
            raise ConfigError(f"theta values must lie in [{lo}, {hi}]")
        if self.oracle_levels < 0:
            raise ConfigError("oracle_levels must be >= 0")
        if self.variant not in ("full", "seminorm"):
            raise ConfigError("variant must be 'full' or 'seminorm'")
        for pair in self.corollary:
            if len(pair) != 2 or not 0.0 <= pair[0] < pair[1] <= 1.0:
                raise ConfigError(f"corollary pairs must be [theta, mu] with 0 <= theta < mu <= 1, got {pair}")
        return self

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _mesh_spec(d, base: Path):
    d = dict(d)
    g = d.pop("generator", None)
    if g not in GENERATORS:
        raise ConfigError(f"mesh generator must be one of {GENERATORS}, got {g!r}")
    if g == "file":
        if "path" not in d:
            raise ConfigError("file meshes need a path")
        path = Path(d.pop("path"))
        d["path"] = str(path if path.is_absolute() else base / path)
    unknown = set(d) - {"n", "kind", "path", "length", "tri_offset"}
    if unknown:
        raise ConfigError(f"unknown mesh keys {sorted(unknown)}")
    for key in ("n", "length", "tri_offset"):
        if key in d and (not isinstance(d[key], int) or isinstance(d[key], bool)):
            raise ConfigError(f"mesh key {key!r} must be an integer")
    if d.get("n", 1) < 1 or d.get("length", 2) < 1:
        raise ConfigError("mesh sizes must be >= 1")
    if d.get("kind", "quad") not in ("tri", "quad"):
        raise ConfigError("mesh kind must be 'tri' or 'quad'")
    return MeshSpec(g, **d)


def parse_config(data: dict, base=".") -> SweepConfig:
    """Build a :class:`SweepConfig` from a parsed TOML document."""
    base = Path(base)
    data = dict(data)
    meshes = [_mesh_spec(m, base) for m in data.pop("mesh", [])] or [MeshSpec("quad_grid", 1)]
    sweep = dict(data.pop("sweep", {}))
    kw = {}
    for key in ("seed", "out"):
        if key in data:
            kw[key] = data.pop(key)
    if data:
        raise ConfigError(f"unknown top-level keys {sorted(data)}")
    allowed = {"degrees", "theta", "oracle_levels", "variant", "dirichlet", "samples", "corollary", "max_dense"}
    unknown = set(sweep) - allowed
    if unknown:
        raise ConfigError(f"unknown [sweep] keys {sorted(unknown)}")
    kw.update(sweep)
    if "theta" in kw:
        kw["theta"] = [float(t) for t in kw["theta"]]
    if "degrees" in kw:
        kw["degrees"] = [int(p) for p in kw["degrees"]]
    if "corollary" in kw:
        kw["corollary"] = [tuple(float(x) for x in pair) for pair in kw["corollary"]]
    return SweepConfig(meshes=meshes, **kw)


def load_config(path) -> SweepConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, path.parent)
