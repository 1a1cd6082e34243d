"""Decay rate of a single heat mode against the continuous rate pi^2.

For each integrator the CFL factor is halved a few times; the error of the
fitted rate should fall like dt for Euler; RK4 sits at rounding level
already at c_cfl = 1.
"""

import math

import numpy as np

from torusflow.cone import OperatorSpec, index_sets
from torusflow.convergence import decay_fit, record_series
from torusflow.flow import DataSpec, FlowConfig, run_flow
from torusflow.torus import ScalarField, TorusGrid


def fitted_rate(integrator, c_cfl, res=16):
    grid = TorusGrid(1, (res, res))
    ls = index_sets(1, 1)
    op = OperatorSpec(ls, "sigma_k_root", k=1, cone_order=0)
    phi0 = ScalarField.from_function(grid, lambda x, y: 0.1 * np.sin(2 * np.pi * x))
    cfg = FlowConfig(ls, op, DataSpec(), grid, phi0, integrator=integrator, c_cfl=c_cfl, t_max=0.5, tol_osc=0.0, sample_interval=0.05)
    res = run_flow(cfg)
    return decay_fit(record_series(res.records, "t"), record_series(res.records, "osc_phi")).beta


def main():
    exact = math.pi**2
    for integrator in ("euler", "rk4"):
        prev = None
        for c in (1.0, 0.5, 0.25, 0.125):
            err = abs(fitted_rate(integrator, c) - exact) / exact
            order = "" if prev is None or err == 0 else f"  observed order {math.log2(prev / err):.2f}"
            print(f"{integrator:5s} c_cfl={c:<6g} rel error {err:.3e}{order}")
            prev = err


if __name__ == "__main__":
    main()
