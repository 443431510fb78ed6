"""Numerical tolerances shared by every stage of the pipeline.

All the epsilons live in one place so scenario files can override them
through a single ``tolerances`` table.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Mapping


class ConfigurationError(ValueError):
    """Invalid geometry, resolution, system name or parameter."""


@dataclass(frozen=True)
class Tolerances:
    # sign / measure proxies for the coupling conditions
    eps_sign: float = 1e-12
    eps_pos: float = 1e-12
    mu_min: float = 1e-6
    # Newton
    tol_res: float = 1e-9
    max_iter: int = 50
    armijo: float = 0.5
    sigma_min: float = 1e-10
    # spectra
    eps_eig_rel: float = 1e-7
    eps_eig_abs: float = 1e-10
    eig_tol: float = 1e-13
    power_tol: float = 1e-12
    power_max_iter: int = 20000
    eps_mp: float = 1e-8
    # symmetry diagnostics
    tol_radial: float = 1e-4
    tol_axial: float = 1e-4
    tol_mono: float = 1e-4
    tol_sym: float = 1e-6
    tol_form_rel: float = 1e-6
    quad_order: int = 8

    def eps_eig(self, lam1: float) -> float:
        """Threshold below which an eigenvalue counts as negative."""
        return self.eps_eig_rel * abs(lam1) + self.eps_eig_abs

    def override(self, values: Mapping[str, Any]) -> "Tolerances":
        known = {f.name: f.type for f in fields(self)}
        clean = {}
        for key, val in values.items():
            if key not in known:
                raise ConfigurationError(f"unknown tolerance {key!r}")
            clean[key] = int(val) if key in ("max_iter", "power_max_iter", "quad_order") else float(val)
        return replace(self, **clean)

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT = Tolerances()
