"""Central table of default tolerances, floors and seeds.

Every run manifest written by the CLI records the effective values of this
table (after overrides), so a CSV can always be traced back to the numbers
that produced it.

=========================  ==========  =============================================
name                       value       meaning
=========================  ==========  =============================================
neumann_exponent           2.0         Neumann hole radius a = eps**p
resolvable_floor_rel       1e-6        smallest meshable hole radius / diam(Omega)
tol_geo_rel                1e-12       on-circle placement tolerance, relative to a
hole_area_tol_rel          1e-2        polygon area defect allowed per hole
min_hole_segments          16          lower bound on hole polygon segments
hole_element_factor        0.25        target element size at the hole, times a
grading                    1.5         adjacent element size ratio bound
min_angle_deg              20.0        mesh quality floor
max_triangles              2_000_000   resource cap for any single mesh
solve_tol                  1e-10       relative residual for linear solves
direct_max_unknowns        200_000     above this, iterative solvers are used
eig_tol                    1e-8        eigen-residual bound
eig_cluster_tol            1e-8        relative eigenvalue clustering threshold
opnorm_tol                 1e-3        relative tolerance of power iteration
opnorm_maxiter             2000        power iteration cap (operator norms)
semigroup_power_iters      30          power iteration cap for ||exp(-tB)||
expm_tol                   1e-6        Crank-Nicolson error target (relative)
expm_base_step             0.05        initial Crank-Nicolson step
expm_chunk                 0.5         longest interval per step-controlled chunk
decay_tol_disc             0.05        discretisation slack on weighted estimates
numrange_tol               1e-12       sector membership slack
seed                       0           default RNG seed
=========================  ==========  =============================================
"""

from __future__ import annotations

DEFAULTS: dict[str, float | int] = {
    "neumann_exponent": 2.0,
    "resolvable_floor_rel": 1e-6,
    "tol_geo_rel": 1e-12,
    "hole_area_tol_rel": 1e-2,
    "min_hole_segments": 16,
    "hole_element_factor": 0.25,
    "grading": 1.5,
    "min_angle_deg": 20.0,
    "max_triangles": 2_000_000,
    "solve_tol": 1e-10,
    "direct_max_unknowns": 200_000,
    "eig_tol": 1e-8,
    "eig_cluster_tol": 1e-8,
    "opnorm_tol": 1e-3,
    "opnorm_maxiter": 2000,
    "semigroup_power_iters": 30,
    "expm_tol": 1e-6,
    "expm_base_step": 0.05,
    "expm_chunk": 0.5,
    "decay_tol_disc": 0.05,
    "numrange_tol": 1e-12,
    "seed": 0,
}


def effective(overrides: dict | None = None) -> dict:
    """Return a copy of :data:`DEFAULTS` with ``overrides`` applied."""
    out = dict(DEFAULTS)
    for key, value in (overrides or {}).items():
        if key not in out:
            raise KeyError(f"unknown default {key!r}")
        out[key] = value
    return out
