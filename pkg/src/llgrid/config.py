"""Flat key=value experiment configuration.

One experiment is described by a text file of `key=value` lines (blank lines
and `#` comments ignored). Floats are parsed as decimals and printed with
round-trip repr everywhere, so identical configs reproduce identical output
bytes. A sha256 over the canonical sorted key=value lines is embedded in
every artifact an experiment writes.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .functionals import CostSpec
from .grids import (GridSpec, OneBodyDensity, gaussian_density, load_density,
                    uniform_density, with_particle_count)
from .solver import SolverConfig

_KNOWN_KEYS = {
    "grid.d", "grid.N", "grid.M", "grid.box.a", "grid.box.b", "grid.max_states",
    "marginal.family", "marginal.sigma", "marginal.table.path",
    "cost.family", "cost.power.s", "cost.cap.scale", "cost.table.path",
    "eps.list", "alpha", "beta", "seed", "output.dir",
    "solver.max_outer_iters", "solver.tol_marginal", "solver.tol_energy",
    "solver.symmetrize", "solver.step.initial", "solver.step.shrink",
    "solver.step.sufficient_decrease",
    "sweep.warm_start", "smallness.factor",
    "competitor.delta",
}

_DEFAULTS = {
    "grid.d": "1",
    "grid.box.a": "0.0",
    "grid.box.b": "1.0",
    "marginal.family": "uniform",
    "cost.family": "coulomb",
    "cost.cap.scale": "0.5",
    "seed": "0",
    "output.dir": "out",
    "solver.tol_marginal": "1e-8",
    "solver.tol_energy": "1e-10",
    "solver.symmetrize": "true",
    "solver.step.shrink": "0.5",
    "solver.step.sufficient_decrease": "1e-4",
    "sweep.warm_start": "true",
    "smallness.factor": "0.01",
    "competitor.delta": "0.5",
}


def _parse_lines(text: str) -> dict:
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        out[key] = value
    return out


@dataclass
class ExperimentConfig:
    entries: dict
    base_dir: str = "."

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        entries = dict(_DEFAULTS)
        entries.update(_parse_lines(text))
        return cls(entries=entries, base_dir=os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_dict(cls, overrides: dict, base_dir: str = ".") -> "ExperimentConfig":
        entries = dict(_DEFAULTS)
        for k, v in overrides.items():
            if k not in _KNOWN_KEYS:
                raise ConfigError(f"unknown key {k!r}")
            entries[k] = str(v)
        return cls(entries=entries, base_dir=base_dir)

    # -- raw access ---------------------------------------------------------

    def _get(self, key: str, required: bool = True):
        val = self.entries.get(key, "")
        if val == "" and required:
            raise ConfigError(f"missing required config key {key!r}")
        return val

    def _float(self, key: str, required: bool = True):
        val = self._get(key, required)
        if val == "":
            return None
        try:
            return float(val)
        except ValueError as exc:
            raise ConfigError(f"{key}: not a decimal float: {val!r}") from exc

    def _int(self, key: str, required: bool = True):
        val = self._get(key, required)
        if val == "":
            return None
        try:
            return int(val)
        except ValueError as exc:
            raise ConfigError(f"{key}: not an integer: {val!r}") from exc

    def _bool(self, key: str) -> bool:
        val = self._get(key).lower()
        if val in ("true", "1", "yes"):
            return True
        if val in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {val!r}")

    def _path(self, key: str) -> str:
        rel = self._get(key)
        path = rel if os.path.isabs(rel) else os.path.join(self.base_dir, rel)
        if not os.path.exists(path):
            raise ConfigError(f"{key}: referenced file {path} does not exist")
        return path

    # -- derived objects ----------------------------------------------------

    def config_hash(self) -> str:
        canon = "\n".join(f"{k}={self.entries[k]}" for k in sorted(self.entries))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def grid(self) -> GridSpec:
        kwargs = {}
        ms = self._int("grid.max_states", required=False)
        if ms is not None:
            kwargs["max_states"] = ms
        return GridSpec(d=self._int("grid.d"), N=self._int("grid.N"),
                        a=self._float("grid.box.a"), b=self._float("grid.box.b"),
                        M=self._int("grid.M"), **kwargs)

    def marginal(self) -> OneBodyDensity:
        grid = self.grid()
        family = self._get("marginal.family")
        if family == "uniform":
            return uniform_density(grid)
        if family == "gaussian":
            return gaussian_density(grid, sigma=self._float("marginal.sigma"))
        if family == "table":
            dens = load_density(self._path("marginal.table.path"))
            if not isinstance(dens, OneBodyDensity):
                raise ConfigError("marginal.table.path must hold a one-body density")
            if dens.grid.d != grid.d or dens.grid.M != grid.M or \
                    (dens.grid.a, dens.grid.b) != (grid.a, grid.b):
                raise ConfigError("marginal table grid does not match grid.* keys")
            return with_particle_count(dens, grid.N)
        raise ConfigError(f"unknown marginal family {family!r}")

    def cost(self) -> CostSpec:
        family = self._get("cost.family")
        cap = self._float("cost.cap.scale", required=False)
        if family == "coulomb":
            return CostSpec.coulomb(cap_scale=cap)
        if family == "power":
            return CostSpec.inverse_power(self._float("cost.power.s"), cap_scale=cap)
        if family == "table":
            data = np.loadtxt(self._path("cost.table.path"), ndmin=2)
            if data.shape[1] != 2:
                raise ConfigError("cost table must have two columns: t c")
            return CostSpec.tabulated(data[:, 0], data[:, 1], cap_scale=cap)
        raise ConfigError(f"unknown cost family {family!r}")

    def eps_list(self) -> list:
        raw = self._get("eps.list")
        vals = [v for v in (s.strip() for s in raw.split(",")) if v]
        if not vals:
            raise ConfigError("eps.list is empty")
        try:
            out = [float(v) for v in vals]
        except ValueError as exc:
            raise ConfigError(f"eps.list: bad float in {raw!r}") from exc
        if any(e <= 0 for e in out):
            raise ConfigError("eps.list entries must be positive")
        return out

    def solver_config(self, eps: float) -> SolverConfig:
        return SolverConfig(
            eps=eps,
            max_outer_iters=self._int("solver.max_outer_iters", required=False),
            step_initial=self._float("solver.step.initial", required=False),
            step_shrink=self._float("solver.step.shrink"),
            sufficient_decrease=self._float("solver.step.sufficient_decrease"),
            tol_marginal=self._float("solver.tol_marginal"),
            tol_energy=self._float("solver.tol_energy"),
            symmetrize_each_iter=self._bool("solver.symmetrize"),
            seed=self._int("seed"),
        )

    @property
    def alpha(self) -> float:
        return self._float("alpha")

    @property
    def beta(self) -> float:
        return self._float("beta")

    @property
    def seed(self) -> int:
        return self._int("seed")

    @property
    def smallness_factor(self) -> float:
        return self._float("smallness.factor")

    @property
    def competitor_delta(self) -> float:
        return self._float("competitor.delta")

    @property
    def warm_start(self) -> bool:
        return self._bool("sweep.warm_start")

    def output_dir(self) -> str:
        rel = self._get("output.dir")
        return rel if os.path.isabs(rel) else os.path.join(self.base_dir, rel)
