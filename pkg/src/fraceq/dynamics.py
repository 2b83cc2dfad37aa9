"""Causal time-domain simulation in generalized coordinates.

Unknowns are the tree-branch fluxes and cotree loop charges; both Kirchhoff
laws hold identically through the coordinate map, so each time step solves one
constitutive balance equation per branch.  Stepping is first-order implicit
(backward difference) with full-history GL convolutions for the fractional
memristors; Newton iteration handles nonlinear constitutive laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .circuit import Circuit, Element, Waveform, validate
from .errors import MissingOutputError, NewtonDivergenceError, ValidationError
from .frac_ops import SampleGrid, Signal, caputo_left, gl_weights
from .topology import CoordinateMap, build_topology


@dataclass(frozen=True)
class SimConfig:
    grid: SampleGrid
    newton_tol: float = 1e-9
    newton_max_iters: int = 50
    history_window: Optional[int] = None  # None = full history

    def __post_init__(self):
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.history_window is not None and self.history_window < 10:
            raise ValueError("history window must cover at least 10 samples")


@dataclass(frozen=True)
class DriveSet:
    """Overrides for source inputs and output targets, by element name.

    Elements not named here fall back to the waveform embedded in the
    netlist; an element with neither is a validation error.
    """

    inputs: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)

    def waveform_for(self, element: Element) -> Waveform:
        table = self.targets if element.kind == "OC" else self.inputs
        wf = table.get(element.name, element.waveform)
        if wf is None:
            raise ValidationError([f"{element.name}: no waveform in drive set or netlist"])
        return wf


@dataclass(frozen=True)
class Trajectory:
    """Simulated coordinate signals plus output/target pairs.

    Flux coordinates carry (phi, v, psi); charge coordinates carry (q, i, r).
    Branch quantities are reconstructed through the coordinate map.
    """

    grid: SampleGrid
    beta: float
    cmap: CoordinateMap
    tree_flux: np.ndarray  # |tree| x N
    loop_charge: np.ndarray  # |links| x N
    output_names: tuple
    outputs: np.ndarray  # |K| x N output voltages v_k
    targets: np.ndarray  # |K| x N target voltages T_k
    meta: dict = field(default_factory=dict, compare=False)

    def _signal(self, values) -> Signal:
        return Signal(self.grid, values)

    def branch_flux(self, name: str) -> Signal:
        row = self.cmap.flux_map[self._branch_index(name)]
        return self._signal(row @ self.tree_flux)

    def branch_charge(self, name: str) -> Signal:
        row = self.cmap.charge_map[self._branch_index(name)]
        return self._signal(row @ self.loop_charge)

    def branch_voltage(self, name: str) -> Signal:
        return self._signal(_backward_diff(self.branch_flux(name).values, self.grid.dt))

    def branch_current(self, name: str) -> Signal:
        return self._signal(_backward_diff(self.branch_charge(name).values, self.grid.dt))

    def _branch_index(self, name: str) -> int:
        names = self.meta["branch_names"]
        return names.index(name)

    @property
    def tree_voltage(self) -> np.ndarray:
        return np.stack([_backward_diff(row, self.grid.dt) for row in self.tree_flux]) if len(
            self.tree_flux
        ) else self.tree_flux

    @property
    def loop_current(self) -> np.ndarray:
        return np.stack([_backward_diff(row, self.grid.dt) for row in self.loop_charge]) if len(
            self.loop_charge
        ) else self.loop_charge

    @property
    def tree_half_velocity(self) -> np.ndarray:
        """Psi per flux coordinate: left Caputo half-derivative of the flux."""
        return self._half(self.tree_flux)

    @property
    def loop_half_charge_rate(self) -> np.ndarray:
        """r per charge coordinate: left Caputo half-derivative of the charge."""
        return self._half(self.loop_charge)

    def _half(self, rows) -> np.ndarray:
        if not len(rows):
            return rows
        return np.stack([caputo_left(self._signal(row), 0.5).values for row in rows])

    def to_csv(self) -> str:
        """Deterministic trajectory export, one row per grid sample."""
        cols = [("t", self.grid.times())]
        for name, phi, v, psi in zip(
            self.cmap.flux_coord_names, self.tree_flux, self.tree_voltage, self.tree_half_velocity
        ):
            cols += [(f"coord_{name}_phi", phi), (f"coord_{name}_v", v), (f"coord_{name}_psi", psi)]
        for name, q, i, r in zip(
            self.cmap.charge_coord_names, self.loop_charge, self.loop_current, self.loop_half_charge_rate
        ):
            cols += [(f"coord_{name}_q", q), (f"coord_{name}_i", i), (f"coord_{name}_r", r)]
        for k, name in enumerate(self.output_names):
            cols += [(f"out_{name}_v", self.outputs[k]), (f"out_{name}_T", self.targets[k])]
        header = ",".join(c[0] for c in cols)
        body = "\n".join(
            ",".join("%.17g" % c[1][row] for c in cols) for row in range(self.grid.n)
        )
        return header + "\n" + body + "\n"


def _backward_diff(x: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(x)
    out[0] = 0.0
    out[1:] = np.diff(x) / dt
    return out


def simulate(circuit: Circuit, drive: DriveSet, beta: float, cfg: SimConfig) -> Trajectory:
    """Advance the generalized coordinates over the grid.

    Initial conditions are zero fluxes and charges at t = a, matching the
    lower terminal of every Caputo operator.  With beta = 0 the output
    capacitors carry exactly zero current, so targets cannot influence the
    free phase.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    diags = validate(circuit)
    if diags:
        raise ValidationError(diags)
    _, part, matrices, cmap = build_topology(circuit)

    grid = cfg.grid
    dt = grid.dt
    n = grid.n
    times = grid.times()
    elements = circuit.elements
    nb = len(elements)
    nt, nl = len(part.tree), len(part.links)
    nc = nt + nl

    # branch value maps into the full coordinate vector z = [tree_flux; loop_charge]
    P_phi = np.zeros((nb, nc))
    P_phi[:, :nt] = cmap.flux_map
    P_q = np.zeros((nb, nc))
    P_q[:, nt:] = cmap.charge_map

    kinds = np.array([e.kind for e in elements])
    specs = [e.constitutive() if e.kind in ("C", "L", "M") else None for e in elements]
    g_vec = np.array([e.g if e.kind == "R" else 0.0 for e in elements])
    oc_idx = [b for b, e in enumerate(elements) if e.kind == "OC"]
    oc_cap = np.array([elements[b].cap_scale for b in oc_idx])
    mem_idx = [b for b, e in enumerate(elements) if e.kind == "M"]

    drives = np.zeros((nb, n))
    for b, e in enumerate(elements):
        if e.kind in ("V", "I", "OC"):
            drives[b] = drive.waveform_for(e)(times)
    # driven source coordinates: backward-rectangle integral of the waveform,
    # consistent with the backward-difference velocity
    src_integral = np.zeros((nb, n))
    for b, e in enumerate(elements):
        if e.kind in ("V", "I"):
            src_integral[b, 1:] = dt * np.cumsum(drives[b, 1:])

    # GL half-derivative weights for the memristor history convolutions
    w_half = gl_weights(0.5, n - 1) if mem_idx else None
    sqrt_dt = math.sqrt(dt)

    # row scaling to bring every residual to current-like units
    row_scale = np.ones(nb)
    for b, e in enumerate(elements):
        if e.kind in ("C", "V", "I", "OC"):
            row_scale[b] = 1.0 / dt
        elif e.kind == "M":
            row_scale[b] = 1.0 / sqrt_dt

    is_R = kinds == "R"
    is_C = kinds == "C"
    is_L = kinds == "L"
    is_M = kinds == "M"
    is_V = kinds == "V"
    is_I = kinds == "I"
    is_OC = kinds == "OC"

    nonlinear = any(
        specs[b] is not None and specs[b].family != "linear" for b in range(nb) if kinds[b] in ("C", "L", "M")
    )

    phi_hist = np.zeros((nb, n))  # branch fluxes over time
    q_hist = np.zeros((nb, n))  # branch charges over time
    z = np.zeros(nc)
    Z = np.zeros((nc, n))

    cached_solve = None

    def spec_eval(mask_idx, x):
        y = np.zeros(len(x))
        dy = np.zeros(len(x))
        for pos, b in enumerate(mask_idx):
            yy, dd = specs[b](x[pos])
            y[pos], dy[pos] = yy, dd
        return y, dy

    C_idx = np.flatnonzero(is_C)
    L_idx = np.flatnonzero(is_L)
    M_idx = np.flatnonzero(is_M)

    for m in range(1, n):
        phi_prev = phi_hist[:, m - 1]
        q_prev = q_hist[:, m - 1]
        t = times[m]

        if mem_idx:
            lo = 0 if cfg.history_window is None else max(0, m - cfg.history_window)
            # sum_{k=1..m} w_k x_{m-k}, truncated under windowed history
            ks = np.arange(1, m - lo + 1)
            wk = w_half[ks]
            mem_phi_hist = phi_hist[np.ix_(M_idx, m - ks)] @ wk
            mem_q_hist = q_hist[np.ix_(M_idx, m - ks)] @ wk
        else:
            mem_phi_hist = mem_q_hist = None

        converged = False
        for it in range(cfg.newton_max_iters):
            phi = P_phi @ z
            q = P_q @ z
            v = (phi - phi_prev) / dt
            F = np.zeros(nb)
            dF_dphi = np.zeros(nb)
            dF_dq = np.zeros(nb)

            # R: current balance i = g v
            F[is_R] = (q[is_R] - q_prev[is_R]) / dt - g_vec[is_R] * v[is_R]
            dF_dq[is_R] = 1.0 / dt
            dF_dphi[is_R] = -g_vec[is_R] / dt
            # C: q = qhat(v)
            if len(C_idx):
                y, dy = spec_eval(C_idx, v[C_idx])
                F[C_idx] = q[C_idx] - y
                dF_dq[C_idx] = 1.0
                dF_dphi[C_idx] = -dy / dt
            # L: i = ihat(phi)
            if len(L_idx):
                y, dy = spec_eval(L_idx, phi[L_idx])
                F[L_idx] = (q[L_idx] - q_prev[L_idx]) / dt - y
                dF_dq[L_idx] = 1.0 / dt
                dF_dphi[L_idx] = -dy
            # M: D^(1/2) q = rhat(D^(1/2) phi), GL truncation at this step
            if len(M_idx):
                psi = (phi[M_idx] + mem_phi_hist) / sqrt_dt
                r = (q[M_idx] + mem_q_hist) / sqrt_dt
                y, dy = spec_eval(M_idx, psi)
                F[M_idx] = r - y
                dF_dq[M_idx] = 1.0 / sqrt_dt
                dF_dphi[M_idx] = -dy / sqrt_dt
            # V: flux pinned to the integrated source voltage
            F[is_V] = phi[is_V] - src_integral[is_V, m]
            dF_dphi[is_V] = 1.0
            # I: charge pinned to the integrated source current
            F[is_I] = q[is_I] - src_integral[is_I, m]
            dF_dq[is_I] = 1.0
            # OC: q = beta C (v - T)
            if len(oc_idx):
                F[oc_idx] = q[oc_idx] - beta * oc_cap * (v[oc_idx] - drives[oc_idx, m])
                dF_dq[oc_idx] = 1.0
                dF_dphi[oc_idx] = -beta * oc_cap / dt

            Fs = row_scale * F
            res = np.max(np.abs(Fs))
            if res <= cfg.newton_tol:
                converged = True
                break

            if nonlinear or cached_solve is None:
                J = (row_scale * dF_dphi)[:, None] * P_phi + (row_scale * dF_dq)[:, None] * P_q
                if not nonlinear:
                    cached_solve = np.linalg.inv(J)
                    step = cached_solve @ Fs
                else:
                    step = np.linalg.solve(J, Fs)
            else:
                step = cached_solve @ Fs
            z = z - step

        if not converged:
            raise NewtonDivergenceError(t, res)

        Z[:, m] = z
        phi_hist[:, m] = P_phi @ z
        q_hist[:, m] = P_q @ z

    output_names = tuple(elements[b].name for b in oc_idx)
    out_v = np.stack([_backward_diff(phi_hist[b], dt) for b in oc_idx]) if oc_idx else np.zeros((0, n))
    out_T = drives[oc_idx] if oc_idx else np.zeros((0, n))
    return Trajectory(
        grid=grid,
        beta=float(beta),
        cmap=cmap,
        tree_flux=Z[:nt].copy(),
        loop_charge=Z[nt:].copy(),
        output_names=output_names,
        outputs=out_v,
        targets=out_T,
        meta={"branch_names": [e.name for e in elements]},
    )


def trajectory_loss(traj: Trajectory) -> float:
    """Integrated squared output-target mismatch J over the window."""
    if not len(traj.outputs):
        raise MissingOutputError("trajectory has no output capacitors")
    sq = np.sum((traj.outputs - traj.targets) ** 2, axis=0)
    return float(np.trapezoid(sq, dx=traj.grid.dt))
