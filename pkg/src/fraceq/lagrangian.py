"""Complex-valued circuit Lagrangian, action, explicit partials, EL residual.

The Lagrangian is evaluated along trajectories produced by the simulator.
Inductive/capacitive/output terms are real; memristive and synaptic terms
carry the imaginary unit so that half-order elements enter the action with
an energy-like quadratic form.  The Euler-Lagrange residual is a post-hoc
whole-trajectory check: its third term uses the anti-causal right-sided
derivative and therefore never participates in forward simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import Circuit, Element
from .dynamics import Trajectory, trajectory_loss
from .frac_ops import Signal, half_energy_integral, rl_derivative_right

PART_KEYS = ("inductive", "capacitive", "memristive", "synaptic", "output", "source")

_KIND_PART = {"L": "inductive", "C": "capacitive", "M": "memristive", "R": "synaptic",
              "OC": "output", "V": "source", "I": "source"}


@dataclass(frozen=True)
class CircuitState:
    """Branch-quantity snapshot at one instant, keyed by element name.

    phi/v are branch fluxes and voltages, q/i branch charges and currents,
    psi/r their half-order counterparts; targets holds the output-capacitor
    target voltages.  psi and r are nonlocal in time, so a state is only
    consistent with the trajectory history it was extracted from.
    """

    t: float
    phi: dict
    v: dict
    psi: dict
    q: dict
    i: dict
    r: dict
    targets: dict


@dataclass(frozen=True)
class LagrangianValue:
    """Total Lagrangian with its disjoint parts breakdown; total = sum."""

    parts: dict

    @property
    def total(self) -> complex:
        return complex(sum(self.parts.values()))

    @property
    def hidden(self) -> complex:
        """Everything except the synaptic and output coupling terms."""
        return self.total - self.parts["synaptic"] - self.parts["output"]


def element_term(element: Element, state: CircuitState, beta: float = 0.0) -> complex:
    """Lagrangian contribution of one element at one state.

    Capacitors contribute co-energy +int q(v')dv' (not its negative): with
    the inductive term -int i(phi')dphi' this is the sign pair that makes
    the Euler-Lagrange equation reproduce the current balance.  The output
    term -beta*C*(v-T)^2 carries no 1/2 so that d(action)/d(beta) equals
    -C times the trajectory loss exactly.  Voltage sources are driven
    constraints with no energy term; current sources enter as the forcing
    -I(t)*phi that injects their current into the variational balance.
    """
    name = element.name
    if element.kind == "L":
        return complex(-element.constitutive().antiderivative(state.phi[name]))
    if element.kind == "C":
        return complex(element.constitutive().antiderivative(state.v[name]))
    if element.kind == "M":
        return 1j * float(element.constitutive().antiderivative(state.psi[name]))
    if element.kind == "R":
        return 0.5j * element.g * state.psi[name] ** 2
    if element.kind == "OC":
        diff = state.v[name] - state.targets.get(name, 0.0)
        return complex(-beta * element.cap_scale * diff**2)
    if element.kind == "V":
        return 0j
    if element.kind == "I":
        return complex(-state.i[name] * state.phi[name])
    raise ValueError(f"unknown element kind {element.kind!r}")


def total_lagrangian(circuit: Circuit, state: CircuitState) -> LagrangianValue:
    """Sum of element terms, grouped into the parts breakdown.

    The nudging strength is read from circuit.beta, so explicit-parameter
    derivatives can be taken by re-evaluating with a modified circuit while
    the state stays frozen.
    """
    parts = {k: 0j for k in PART_KEYS}
    for e in circuit.elements:
        parts[_KIND_PART[e.kind]] += element_term(e, state, circuit.beta)
    return LagrangianValue(parts)


def trajectory_states(circuit: Circuit, traj: Trajectory) -> list:
    """Extract the per-sample CircuitState sequence from a trajectory."""
    names = traj.meta["branch_names"]
    if names != [e.name for e in circuit.elements]:
        raise ValueError("trajectory was produced for a different circuit")
    phi = traj.cmap.flux_map @ traj.tree_flux
    q = traj.cmap.charge_map @ traj.loop_charge
    v = traj.cmap.flux_map @ traj.tree_voltage
    i = traj.cmap.charge_map @ traj.loop_current
    psi = traj.cmap.flux_map @ traj.tree_half_velocity
    r = traj.cmap.charge_map @ traj.loop_half_charge_rate
    times = traj.grid.times()
    targets = dict(zip(traj.output_names, traj.targets))
    states = []
    for m in range(traj.grid.n):
        states.append(
            CircuitState(
                t=float(times[m]),
                phi=dict(zip(names, phi[:, m])),
                v=dict(zip(names, v[:, m])),
                psi=dict(zip(names, psi[:, m])),
                q=dict(zip(names, q[:, m])),
                i=dict(zip(names, i[:, m])),
                r=dict(zip(names, r[:, m])),
                targets={k: float(row[m]) for k, row in targets.items()},
            )
        )
    return states


def lagrangian_series(circuit: Circuit, traj: Trajectory) -> dict:
    """Per-part Lagrangian time series (complex arrays over the grid)."""
    values = [total_lagrangian(circuit, s) for s in trajectory_states(circuit, traj)]
    return {k: np.array([v.parts[k] for v in values]) for k in PART_KEYS}


def action_breakdown(circuit: Circuit, traj: Trajectory) -> LagrangianValue:
    """Trapezoidal time integral of each Lagrangian part."""
    series = lagrangian_series(circuit, traj)
    dt = traj.grid.dt
    return LagrangianValue({k: complex(np.trapezoid(v, dx=dt)) for k, v in series.items()})


def action(circuit: Circuit, traj: Trajectory) -> complex:
    """Trapezoidal time integral of the total Lagrangian along a trajectory."""
    return action_breakdown(circuit, traj).total


def action_beta_partial(circuit: Circuit, traj: Trajectory) -> float:
    """Explicit partial of the action in the nudging strength: -C * loss.

    Shares the trajectory_loss code path, so the identity with the loss is
    exact rather than a quadrature coincidence.
    """
    return -circuit.loss_capacitance * trajectory_loss(traj)


def action_g_partial(circuit: Circuit, traj: Trajectory, l: int) -> complex:
    """Explicit partial of the action in synapse conductance l.

    Only the synaptic term depends on g_l explicitly, so the value is the
    half-derivative energy of the branch flux, j/2-weighted; the trajectory
    itself is held fixed.
    """
    element = circuit.elements[l]
    if element.kind != "R" or not element.trainable:
        raise IndexError(f"element {l} ({element.name}) is not a trainable synapse")
    return 0.5j * half_energy_integral(traj.branch_flux(element.name))


def _central_diff(x: np.ndarray, dt: float) -> np.ndarray:
    out = np.empty_like(x)
    out[1:-1] = (x[2:] - x[:-2]) / (2 * dt)
    out[0] = (x[1] - x[0]) / dt
    out[-1] = (x[-1] - x[-2]) / dt
    return out


def el_residual(circuit: Circuit, traj: Trajectory) -> dict:
    """Euler-Lagrange residual per flux coordinate, as complex Signals.

    Evaluates dL/dphi - d/dt(dL/dv) + D_right^{1/2}(dL/dpsi) assembled
    through the cut-set matrix; the result equals minus the cut-set current
    balance, so it vanishes on simulated trajectories up to discretization
    error at interior samples.  Time derivatives use central differences,
    deliberately different from the solver's backward stencil, so the
    residual measures discretization error instead of echoing the solver.
    Coordinates on driven voltage-source branches are constrained, not
    variational, and are omitted.
    """
    grid = traj.grid
    dt = grid.dt
    n = grid.n
    elements = circuit.elements
    nb = len(elements)
    beta = traj.beta

    phi = traj.cmap.flux_map @ traj.tree_flux
    q = traj.cmap.charge_map @ traj.loop_charge
    psi = traj.cmap.flux_map @ traj.tree_half_velocity
    targets = dict(zip(traj.output_names, traj.targets))

    contrib = np.zeros((nb, n), dtype=complex)
    for b, e in enumerate(elements):
        if e.kind == "L":
            contrib[b] = -e.constitutive()(phi[b])[0]
        elif e.kind == "C":
            v = _central_diff(phi[b], dt)
            contrib[b] = -_central_diff(e.constitutive()(v)[0], dt)
        elif e.kind == "R":
            contrib[b] = 1j * rl_derivative_right(Signal(grid, e.g * psi[b]), 0.5).values
        elif e.kind == "M":
            contrib[b] = 1j * rl_derivative_right(Signal(grid, e.constitutive()(psi[b])[0]), 0.5).values
        elif e.kind == "OC":
            v = _central_diff(phi[b], dt)
            contrib[b] = 2 * beta * e.cap_scale * _central_diff(v - targets[e.name], dt)
        elif e.kind == "I":
            contrib[b] = -_central_diff(q[b], dt)
        # V: driven constraint, no variational contribution

    res = traj.cmap.flux_map.T @ contrib
    out = {}
    for c, (branch, name) in enumerate(zip(traj.cmap.tree, traj.cmap.flux_coord_names)):
        if elements[branch].kind == "V":
            continue
        out[name] = Signal(grid, res[c])
    return out
