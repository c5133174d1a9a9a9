"""Independent power-flow oracle for cross-checking the shipped solver.

Deliberately shares no code path with gridsigma.grid: bus power balances
are accumulated branch by branch in explicit loops (no admittance matrix),
and the nonlinear system is solved by scipy.optimize.root instead of a
hand-rolled Newton iteration.
"""

from __future__ import annotations

import cmath

import numpy as np
from scipy.optimize import root

from gridsigma.grid import PQ, PV, SLACK, GridCase


def _branch_currents(case, idx, v):
    """Complex current into each branch end, computed per branch."""
    flows = {i: 0j for i in range(len(case.buses))}
    for br in case.branches:
        if not br.in_service:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        half_charge = complex(0.0, br.b_charging / 2.0)
        a = br.tap * cmath.exp(1j * br.shift)
        i_f = (y + half_charge) / (a * a.conjugate()) * v[f] - y / a.conjugate() * v[t]
        i_t = -y / a * v[f] + (y + half_charge) * v[t]
        flows[f] += i_f
        flows[t] += i_t
    for i, bus in enumerate(case.buses):
        flows[i] += complex(bus.g_shunt, bus.b_shunt) * v[i]
    return flows


def solve_reference(case: GridCase, load_scale=None, xtol: float = 1e-12):
    """Solve the power-flow equations; returns (v_mag, v_ang) per bus."""
    n = len(case.buses)
    if load_scale is None:
        load_scale = np.ones(n)
    idx = case.bus_index()

    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    for i, bus in enumerate(case.buses):
        p_spec[i] -= bus.p_load * load_scale[i]
        q_spec[i] -= bus.q_load * load_scale[i]
    vset = {}
    for g in case.gens:
        p_spec[idx[g.bus]] += g.p_set
        vset[idx[g.bus]] = g.v_set

    kinds = [b.kind for b in case.buses]
    slack = kinds.index(SLACK)
    non_slack = [i for i in range(n) if i != slack]
    pq = [i for i in range(n) if kinds[i] == PQ]

    vm0 = np.array([b.v_mag_init for b in case.buses], dtype=float)
    va0 = np.array([b.v_ang_init for b in case.buses], dtype=float)
    va0[slack] = 0.0
    for i in range(n):
        if kinds[i] in (SLACK, PV) and i in vset:
            vm0[i] = vset[i]

    def residual(x):
        va = va0.copy()
        vm = vm0.copy()
        va[non_slack] = x[: len(non_slack)]
        vm[pq] = x[len(non_slack) :]
        v = [vm[i] * cmath.exp(1j * va[i]) for i in range(n)]
        flows = _branch_currents(case, idx, v)
        res = []
        for i in non_slack:
            s = v[i] * flows[i].conjugate()
            res.append(s.real - p_spec[i])
        for i in pq:
            s = v[i] * flows[i].conjugate()
            res.append(s.imag - q_spec[i])
        return np.asarray(res)

    x0 = np.concatenate([va0[non_slack], vm0[pq]])
    sol = root(residual, x0, method="hybr", options={"xtol": xtol})
    assert sol.success, f"reference solver failed: {sol.message}"
    va = va0.copy()
    vm = vm0.copy()
    va[non_slack] = sol.x[: len(non_slack)]
    vm[pq] = sol.x[len(non_slack) :]
    return vm, va


def two_bus_receiving_voltage(p_load, q_load, r, x, v1=1.0):
    """Closed-form |V2| for a slack + PQ pair over one series branch.

    From S = V2 * conj((V1 - V2) / Z): |V2|^2 solves a quadratic whose
    high-voltage root is the stable operating point.
    """
    half = v1**2 / 2.0 - (p_load * r + q_load * x)
    disc = half**2 - (p_load**2 + q_load**2) * (r**2 + x**2)
    assert disc >= 0, "load beyond the nose point"
    return float(np.sqrt(half + np.sqrt(disc)))
