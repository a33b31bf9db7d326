"""Scenario files: TOML text describing the torus, the forms, the flow and the checks.

Example::

    name = "kahler-n1"
    kind = "MAF1"
    t_end = 20.0

    [grid]
    n = 1
    N = 64

    [omega0]
    matrix = [[1.0]]
    density = [[[1, 0], 0.5, 0.0]]     # n = 1: adds 0.5 cos(2 pi x) to the density

    [omegaInf]
    matrix = [[1.0]]

    [Omega]
    constant = 1.0
    waves = [[[0, 1], 0.3, 0.0]]
    normalize = true

Wave lists hold ``[k-vector, amplitude, phase]`` triples with ``k`` over the
real axes ``(x1, y1[, x2, y2])``.  ``potential`` waves enter the form through
``i ddbar``; ``density`` waves (n = 1 only) are converted to the potential
whose Hessian reproduces them.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .flow import FlowConfig, FlowKind
from .forms import Background, Pencil
from .grid import PI2, Grid, ScalarField, make_grid, synth

PRESET_DIR = Path(__file__).with_name("scenarios")


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    n: int
    N: int
    kind: FlowKind
    T_end: float
    omega0: dict
    omegaInf: dict
    Omega: dict
    mask: dict = field(default_factory=lambda: {"tau": 0.05, "radius": 0.05})
    flow: dict = field(default_factory=dict)
    elliptic: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)
    integral_class: bool | None = None
    source: str = ""

    @property
    def checks(self) -> list[str]:
        return list(self.expected.get("checks", []))

    def grid(self) -> Grid:
        return make_grid(self.n, self.N)

    def with_overrides(self, N: int | None = None, T_end: float | None = None) -> "Scenario":
        s = Scenario(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        if N is not None:
            s.N = int(N)
        if T_end is not None:
            s.T_end = float(T_end)
        return s

    def background(self, which: str, grid: Grid) -> Background:
        spec = getattr(self, which)
        return build_background(spec, grid, which)

    def pencil(self, grid: Grid | None = None) -> Pencil:
        grid = grid or self.grid()
        return Pencil(self.background("omega0", grid), self.background("omegaInf", grid),
                      build_density(self.Omega, grid),
                      normalized_class=bool(self.expected.get("normalized_class", True)),
                      integral_class=self.integral_class)

    def flow_config(self, pencil: Pencil) -> FlowConfig:
        f = dict(self.flow)
        cps = f.pop("checkpoint_times", None)
        allowed = {"method", "dt0", "dt_min", "dt_max", "eig_floor", "safety", "record_every"}
        unknown = set(f) - allowed
        if unknown:
            raise ConfigError(f"unknown [flow] keys: {sorted(unknown)}")
        return FlowConfig(pencil, self.kind, self.T_end,
                          checkpoint_times=None if cps is None else tuple(cps), **f)


def _matrix(spec: dict, n: int, where: str) -> np.ndarray:
    if "matrix" not in spec:
        raise ConfigError(f"[{where}] needs a 'matrix'")
    A = np.array(spec["matrix"], dtype=float).reshape(n, n).astype(complex)
    if "matrix_imag" in spec:
        A = A + 1j * np.array(spec["matrix_imag"], dtype=float).reshape(n, n)
    return A


def _waves(raw, grid: Grid, where: str) -> list[tuple]:
    out = []
    for item in raw or []:
        try:
            k, a, theta = item
            out.append((tuple(int(x) for x in k), float(a), float(theta)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{where}] malformed wave {item!r}") from exc
    return out


def build_background(spec: dict, grid: Grid, where: str = "form") -> Background:
    A = _matrix(spec, grid.n, where)
    waves = _waves(spec.get("potential"), grid, where)
    dens = _waves(spec.get("density"), grid, where)
    if dens:
        if grid.n != 1:
            raise ConfigError(f"[{where}] density waves are only defined for n = 1")
        for k, a, theta in dens:
            k2 = sum(x * x for x in k)
            if k2 == 0:
                raise ConfigError(f"[{where}] density waves need nonzero frequency")
            waves.append((k, -a / (PI2 * k2), theta))
    try:
        psi0 = synth(grid, waves) if waves else None
    except ValueError as exc:
        raise ConfigError(f"[{where}] {exc}") from exc
    return Background.from_parts(grid, A, psi0)


def build_density(spec: dict, grid: Grid) -> ScalarField:
    try:
        f = synth(grid, _waves(spec.get("waves"), grid, "Omega")) + float(spec.get("constant", 1.0))
    except ValueError as exc:
        raise ConfigError(f"[Omega] {exc}") from exc
    if spec.get("normalize", True):
        f = f * (1.0 / float(np.mean(f.values)))
    return f


def parse_scenario(text: str) -> Scenario:
    try:
        d = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"scenario is not valid TOML: {exc}") from exc
    try:
        g = d["grid"]
        sc = Scenario(
            name=str(d["name"]),
            n=int(g["n"]),
            N=int(g["N"]),
            kind=FlowKind(d.get("kind", "MAF1")),
            T_end=float(d.get("t_end", 20.0)),
            omega0=d["omega0"],
            omegaInf=d["omegaInf"],
            Omega=d.get("Omega", {"constant": 1.0}),
            mask={"tau": 0.05, "radius": 0.05, **d.get("mask", {})},
            flow=d.get("flow", {}),
            elliptic=d.get("elliptic", {}),
            expected=d.get("expected", {}),
            integral_class=d.get("integral_class"),
            source=text,
        )
    except KeyError as exc:
        raise ConfigError(f"scenario is missing required key {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        make_grid(sc.n, sc.N)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not math.isfinite(sc.T_end) or sc.T_end <= 0:
        raise ConfigError("t_end must be positive")
    return sc


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Load a scenario file, or a shipped preset by name (``kahler-n1``)."""
    p = Path(path_or_name)
    if not p.exists():
        preset = PRESET_DIR / f"{path_or_name}.cfg"
        if not preset.exists():
            raise ConfigError(f"no scenario file or preset named {str(path_or_name)!r}")
        p = preset
    return parse_scenario(p.read_text())


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.cfg"))
