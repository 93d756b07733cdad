"""Coarse-grid steady-state airflow and temperature solver.

Flow: incompressible potential flow, div(grad phi) = 0 with Neumann fluxes on
ACU and server faces, discretized finite-volume on the structured grid. The
resulting face fluxes are exactly divergence-free per cell up to the linear
tolerance, which is what the transport solve needs.

Temperature: steady advection-diffusion with first-order upwind advection on
the potential-flow face fluxes and central-difference diffusion (constant
effective diffusivity). ACU supply faces are Dirichlet; returns and walls are
zero-gradient; each server couples its outlet to its inlet through
T_out = T_in + P / (rho cp Q), iterated to a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import ALPHA_EFF, CP_AIR, RHO_AIR, server_delta_t
from .errors import ConvergenceError, IncompatibleFluxError
from .grid import Grid
from .solvers import StencilOperator, bicgstab, cg

FLUX_BALANCE_TOL = 1e-12
DIVERGENCE_TOL = 1e-8       # m^3/s per cell
LINEAR_TOL = 1e-8           # relative residual for both solves
SERVER_FIXED_POINT_TOL = 1e-4   # K
SERVER_FIXED_POINT_CAP = 50


@dataclass
class FlowSolution:
    velocity: np.ndarray          # (3, nz, ny, nx) cell-center m/s, 0 in solids
    face_flux: tuple[np.ndarray, np.ndarray, np.ndarray]  # plane arrays, m^3/s
    max_divergence: float         # m^3/s
    linear_residual: float
    iterations: int


@dataclass
class TemperatureSolution:
    temperature: np.ndarray       # (nz, ny, nx) degC, 0 in solids
    server_inlet_c: np.ndarray    # flux-weighted inlet temp per server
    server_outlet_c: np.ndarray   # coupled outlet temp per server
    linear_residual: float
    outer_iterations: int


@dataclass
class ConservationReport:
    mass_rel: float
    energy_rel: float
    per_server_dt: list[tuple[float, float]] = field(default_factory=list)


def _face_flux_entries(grid, scenario):
    """Yield (group, signed_total_flow) with + meaning injection into fluid."""
    for g in grid.face_groups:
        if g.kind in ("acu_supply", "acu_return"):
            q = scenario.acu_flow_m3s[g.entity]
        else:
            q = scenario.server_flow_m3s[g.entity]
        yield g, g.flow_sign * q


def _source_vector(grid, scenario):
    b = np.zeros(grid.shape, dtype=np.float64).ravel()
    for g, signed_q in _face_flux_entries(grid, scenario):
        np.add.at(b, g.cells, signed_q * g.weights)
    return b.reshape(grid.shape)


def build_flow_operator(grid: Grid):
    """SPD operator M = -L for the Neumann Laplacian on fluid cells."""
    h = grid.resolution
    op = StencilOperator.zeros(grid.shape)
    pairs = ((op.cxm, op.cxp), (op.cym, op.cyp), (op.czm, op.czp))

    for axis in range(3):
        conn = grid.conn[axis]
        lo_sl, hi_sl = _axis_face_slices(axis)
        w = conn.astype(np.float64) * h
        clo, chi = pairs[axis]
        chi[lo_sl] -= w          # low cell couples to its +axis neighbor
        clo[hi_sl] -= w
        op.diag[lo_sl] += w
        op.diag[hi_sl] += w
    return op


def _axis_face_slices(axis):
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    a3 = 2 - axis  # axis 0=x is the last array dimension
    lo[a3] = slice(None, -1)
    hi[a3] = slice(1, None)
    return tuple(lo), tuple(hi)


def solve_flow(grid: Grid, scenario, tol_rel=LINEAR_TOL):
    """Solve the potential-flow system; returns FlowSolution."""
    scenario_total = 0.0
    throughflow = 0.0
    for g, signed_q in _face_flux_entries(grid, scenario):
        scenario_total += signed_q
        throughflow += max(signed_q, 0.0)
    if abs(scenario_total) > FLUX_BALANCE_TOL * max(1.0, throughflow):
        raise IncompatibleFluxError(
            f"net boundary flux {scenario_total:.3e} m^3/s is not zero; "
            "sources and sinks must pair up")

    b = _source_vector(grid, scenario)
    op = build_flow_operator(grid)
    fluid = grid.fluid
    nf = max(grid.n_fluid, 1)

    def project(v):
        v[fluid] -= v[fluid].sum() / nf

    rhs = -b
    if not np.any(rhs):
        zero3 = np.zeros((3,) + grid.shape, dtype=np.float64)
        empty = tuple(np.zeros(_plane_shape(grid.shape, a)) for a in range(3))
        return FlowSolution(zero3, empty, 0.0, 0.0, 0)

    phi, rel, iters = cg(op, rhs, tol_rel=tol_rel,
                         abs_cap=DIVERGENCE_TOL * 0.5, project=project)

    # residual of L phi = b is exactly the per-cell volumetric imbalance
    resid = op.matvec(phi) - rhs
    max_div = float(np.abs(resid[fluid]).max()) if grid.n_fluid else 0.0

    flux = _face_flux_planes(grid, scenario, phi)
    vel = _cell_velocities(grid, flux)
    return FlowSolution(vel, flux, max_div, rel, iters)


def _plane_shape(shape, axis):
    nz, ny, nx = shape
    return ((nz, ny, nx + 1), (nz, ny + 1, nx), (nz + 1, ny, nx))[axis]


def _face_flux_planes(grid, scenario, phi):
    """Signed volumetric flux (+axis direction) on every grid face plane,
    including prescribed boundary-face fluxes."""
    h = grid.resolution
    planes = []
    for axis in range(3):
        arr = np.zeros(_plane_shape(grid.shape, axis), dtype=np.float64)
        conn = grid.conn[axis]
        lo_sl, hi_sl = _axis_face_slices(axis)
        interior = _interior_plane_slice(axis)
        arr[interior] = np.where(conn, (phi[hi_sl] - phi[lo_sl]) * h, 0.0)
        planes.append(arr)

    nx, ny, _ = grid.dims
    for g, signed_q in _face_flux_entries(grid, scenario):
        # direction of physical flow along the axis
        direction = g.normal_sign * (1.0 if g.is_source else -1.0)
        i = g.cells % nx
        j = (g.cells // nx) % ny
        k = g.cells // (nx * ny)
        idx = [k.copy(), j.copy(), i.copy()]
        a3 = 2 - g.axis
        if g.normal_sign < 0:
            idx[a3] += 1  # face on the high side of the receiving cell
        np.add.at(planes[g.axis], tuple(idx), direction * abs(signed_q) * g.weights)
    return tuple(planes)


def _interior_plane_slice(axis):
    sl = [slice(None)] * 3
    sl[2 - axis] = slice(1, -1)
    return tuple(sl)


def _cell_velocities(grid, flux_planes):
    h2 = grid.resolution ** 2
    vel = np.zeros((3,) + grid.shape, dtype=np.float64)
    for axis in range(3):
        arr = flux_planes[axis]
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        a3 = 2 - axis
        lo[a3] = slice(None, -1)
        hi[a3] = slice(1, None)
        vel[axis] = (arr[tuple(lo)] + arr[tuple(hi)]) / (2.0 * h2)
    vel[:, ~grid.fluid] = 0.0
    return vel


def build_transport_operator(grid: Grid, scenario, flux_planes):
    """Upwind advection + central diffusion operator (nonsymmetric)."""
    h = grid.resolution
    diff = ALPHA_EFF * h  # alpha * A / h with A = h^2
    op = StencilOperator.zeros(grid.shape)

    for axis in range(3):
        conn = grid.conn[axis]
        lo_sl, hi_sl = _axis_face_slices(axis)
        interior = _interior_plane_slice(axis)
        f = np.where(conn, flux_planes[axis][interior], 0.0)
        f_pos = np.maximum(f, 0.0)   # flow low -> high
        f_neg = np.maximum(-f, 0.0)  # flow high -> low
        d = conn.astype(np.float64) * diff

        clo, chi = ((op.cxm, op.cxp), (op.cym, op.cyp), (op.czm, op.czp))[axis]
        op.diag[lo_sl] += f_pos + d
        chi[lo_sl] += -f_neg - d
        op.diag[hi_sl] += f_neg + d
        clo[hi_sl] += -f_pos - d

    flat_diag = op.diag.reshape(-1)
    for g, signed_q in _face_flux_entries(grid, scenario):
        if not g.is_source:
            # advective outflow leaves at the cell's own temperature
            np.add.at(flat_diag, g.cells, abs(signed_q) * g.weights)
        elif g.kind == "acu_supply":
            # Dirichlet half-cell diffusive link to the supply temperature
            cond = 2.0 * ALPHA_EFF * g.areas / h
            np.add.at(flat_diag, g.cells, cond)

    # solid cells: identity rows
    solid = ~grid.fluid
    op.diag[solid] = 1.0
    for c in (op.cxm, op.cxp, op.cym, op.cyp, op.czm, op.czp):
        c[solid] = 0.0
    return op


def _transport_rhs_fixed(grid, scenario):
    """RHS terms that do not change across server fixed-point iterations."""
    h = grid.resolution
    rhs = np.zeros(grid.shape, dtype=np.float64).ravel()
    for g in grid.groups_for("acu_supply"):
        q = scenario.acu_flow_m3s[g.entity]
        t_sup = scenario.acu_supply_temp_c[g.entity]
        np.add.at(rhs, g.cells, q * g.weights * t_sup)
        cond = 2.0 * ALPHA_EFF * g.areas / h
        np.add.at(rhs, g.cells, cond * t_sup)
    return rhs.reshape(grid.shape)


def solve_temperature(grid: Grid, scenario, flow: FlowSolution,
                      tol_rel=LINEAR_TOL):
    """Solve steady transport with server couplings; returns
    TemperatureSolution. Raises ConvergenceError if either loop stalls."""
    n_srv = len(scenario.server_power_w)
    dt_closed = np.array([
        server_delta_t(scenario.server_power_w[s], scenario.server_flow_m3s[s])
        for s in range(n_srv)])

    op = build_transport_operator(grid, scenario, flow.face_flux)
    rhs_fixed = _transport_rhs_fixed(grid, scenario)

    inlet_groups = [grid.groups_for("server_inlet", s)[0] for s in range(n_srv)]
    outlet_groups = [grid.groups_for("server_outlet", s)[0] for s in range(n_srv)]

    q_total = sum(scenario.acu_flow_m3s)
    t_mix = (sum(t * q for t, q in zip(scenario.acu_supply_temp_c,
                                       scenario.acu_flow_m3s)) / q_total
             if q_total > 0 else 20.0)
    temp = np.full(grid.shape, t_mix, dtype=np.float64)
    temp[~grid.fluid] = 0.0
    t_out = t_mix + dt_closed

    rel = 0.0
    for outer in range(1, SERVER_FIXED_POINT_CAP + 1):
        rhs = rhs_fixed.copy().ravel()
        for s in range(n_srv):
            g = outlet_groups[s]
            q = scenario.server_flow_m3s[s]
            np.add.at(rhs, g.cells, q * g.weights * t_out[s])
        rhs = rhs.reshape(grid.shape)

        temp, rel, _ = bicgstab(op, rhs, x0=temp, tol_rel=tol_rel)

        flat = temp.ravel()
        t_in = np.array([float(np.dot(flat[g.cells], g.weights))
                         for g in inlet_groups])
        t_out_new = t_in + dt_closed
        change = float(np.abs(t_out_new - t_out).max()) if n_srv else 0.0
        t_out = t_out_new
        if change < SERVER_FIXED_POINT_TOL:
            break
    else:
        raise ConvergenceError(
            f"server coupling did not reach {SERVER_FIXED_POINT_TOL} K in "
            f"{SERVER_FIXED_POINT_CAP} iterations (last change {change:.2e} K)")

    temp[~grid.fluid] = 0.0
    t_in = np.array([float(np.dot(temp.ravel()[g.cells], g.weights))
                     for g in inlet_groups]) if n_srv else np.zeros(0)
    return TemperatureSolution(
        temperature=temp, server_inlet_c=t_in, server_outlet_c=t_out,
        linear_residual=rel, outer_iterations=outer if n_srv else 1)


def check_conservation(grid: Grid, scenario, flow: FlowSolution,
                       temp: TemperatureSolution) -> ConservationReport:
    """Server-level and hall-level mass/energy balance of a converged solve."""
    inflow = outflow = 0.0
    for _, signed_q in _face_flux_entries(grid, scenario):
        if signed_q > 0:
            inflow += signed_q
        else:
            outflow -= signed_q
    throughflow = max(inflow, outflow, 1e-300)
    mass_rel = abs(inflow - outflow) / throughflow

    total_power = sum(scenario.server_power_w)
    flat = temp.temperature.ravel()
    extracted = 0.0
    for g in grid.groups_for("acu_return"):
        q = scenario.acu_flow_m3s[g.entity]
        t_ret = float(np.dot(flat[g.cells], g.weights))
        extracted += RHO_AIR * CP_AIR * q * (t_ret - scenario.acu_supply_temp_c[g.entity])
    energy_rel = abs(total_power - extracted) / total_power if total_power > 0 else 0.0

    per_server = []
    for s in range(len(scenario.server_power_w)):
        g_in = grid.groups_for("server_inlet", s)[0]
        g_out = grid.groups_for("server_outlet", s)[0]
        t_in = float(np.dot(flat[g_in.cells], g_in.weights))
        t_out = float(np.dot(flat[g_out.cells], g_out.weights))
        closed = server_delta_t(scenario.server_power_w[s], scenario.server_flow_m3s[s])
        per_server.append((t_out - t_in, closed))

    return ConservationReport(mass_rel=mass_rel, energy_rel=energy_rel,
                              per_server_dt=per_server)
