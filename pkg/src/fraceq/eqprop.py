"""Two-trajectory gradient estimator, finite-difference oracle, SGD training.

The estimator contrasts a free trajectory (beta = 0) with a nudged one
(beta > 0) and reads each synapse gradient off the change in its
half-derivative flux energy.  The estimator is real-valued: the imaginary
unit of the synaptic action term is absorbed into a global sign convention
fixed once by calibration against the finite-difference oracle.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit
from .dynamics import DriveSet, SimConfig, simulate, trajectory_loss
from .errors import FraceqError, StepTooLargeError
from .frac_ops import half_energy_integral


@dataclass(frozen=True)
class GradientEstimate:
    """Per-synapse gradient values with the raw quantities behind them.

    values[k] = sign_convention * (E_k(beta) - E_k(0)) / (2 * C * beta)
    where E_k is the half-derivative energy of synapse k's branch flux and
    C the output capacitance scale; raw_half_energies keeps the
    (E_k(beta), E_k(0)) pairs so the quotient is re-derivable from the log.
    """

    synapse_names: tuple
    values: tuple
    beta_used: float
    sign_convention: int
    raw_half_energies: tuple
    metadata: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float
    beta: float
    sim: SimConfig
    batch: tuple  # DriveSets, one per training example
    g_min: float = 1e-6
    seed: int = 0
    sign_convention: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.g_min <= 0:
            raise ValueError("g_min must be positive")
        if self.sign_convention not in (-1, 1):
            raise ValueError("sign_convention must be +1 or -1")


@dataclass
class TrainingLog:
    """Flat per-update records: (epoch, example, loss, grad_norm, g values)."""

    synapse_names: tuple
    records: list = field(default_factory=list)

    def add(self, epoch, example, loss, grad_norm, conductances):
        self.records.append((epoch, example, loss, grad_norm, tuple(conductances)))

    def losses_by_epoch(self) -> list:
        """Mean loss per epoch, in epoch order."""
        out = {}
        for ep, _, loss, _, _ in self.records:
            out.setdefault(ep, []).append(loss)
        return [float(np.mean(out[ep])) for ep in sorted(out)]

    def to_csv(self) -> str:
        header = "epoch,example,J,grad_norm," + ",".join(f"g_{n}" for n in self.synapse_names)
        lines = [header]
        for ep, ex, loss, gn, gs in self.records:
            lines.append(f"{ep},{ex},%.17g,%.17g," % (loss, gn) + ",".join("%.17g" % g for g in gs))
        return "\n".join(lines) + "\n"


def _synapses(circuit: Circuit) -> tuple:
    idx = circuit.trainables
    if not idx:
        raise ValueError("circuit has no trainable synapses")
    return idx


def _run_phase(circuit, drive, beta, cfg, phase):
    try:
        return simulate(circuit, drive, beta, cfg)
    except FraceqError as exc:
        exc.phase = phase
        raise


def estimate_gradient(
    circuit: Circuit,
    drive: DriveSet,
    beta: float,
    cfg: SimConfig,
    sign_convention: int = 1,
    jobs: int = 1,
) -> GradientEstimate:
    """Two-trajectory gradient estimate for every trainable synapse.

    The free and nudged simulations are independent; jobs > 1 runs them
    concurrently.  Results are assembled in a fixed order either way.
    """
    if beta <= 0:
        raise ValueError("estimator needs beta > 0")
    idx = _synapses(circuit)
    phases = (("free", 0.0), ("nudged", beta))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            futures = {p: pool.submit(_run_phase, circuit, drive, b, cfg, p) for p, b in phases}
            trajs = {p: f.result() for p, f in futures.items()}
    else:
        trajs = {p: _run_phase(circuit, drive, b, cfg, p) for p, b in phases}
    cap = circuit.loss_capacitance
    names, values, raw = [], [], []
    for l in idx:
        name = circuit.elements[l].name
        e_nudged = half_energy_integral(trajs["nudged"].branch_flux(name))
        e_free = half_energy_integral(trajs["free"].branch_flux(name))
        names.append(name)
        raw.append((e_nudged, e_free))
        values.append(sign_convention * (e_nudged - e_free) / (2.0 * cap * beta))
    return GradientEstimate(
        synapse_names=tuple(names),
        values=tuple(values),
        beta_used=float(beta),
        sign_convention=int(sign_convention),
        raw_half_energies=tuple(raw),
        metadata={
            "loss_free": trajectory_loss(trajs["free"]),
            "loss_nudged": trajectory_loss(trajs["nudged"]),
        },
    )


def fd_gradient(
    circuit: Circuit, drive: DriveSet, eps: float, cfg: SimConfig, jobs: int = 1
) -> tuple:
    """Central-difference oracle dJ/dg per trainable synapse, at beta = 0.

    The 2 * |synapses| perturbed simulations are independent; jobs > 1 runs
    them concurrently with results gathered in synapse order.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    idx = _synapses(circuit)
    g_floor = min(circuit.elements[l].g for l in idx)
    if eps >= g_floor:
        raise StepTooLargeError(f"eps {eps} would drive conductance {g_floor} non-positive")

    def loss_at(name, gg):
        traj = simulate(circuit.with_conductances({name: gg}), drive, 0.0, cfg)
        return trajectory_loss(traj)

    tasks = []
    for l in idx:
        name = circuit.elements[l].name
        g = circuit.elements[l].g
        tasks += [(name, g + eps), (name, g - eps)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            losses = list(pool.map(lambda t: loss_at(*t), tasks))
    else:
        losses = [loss_at(*t) for t in tasks]
    return tuple(
        (losses[2 * k] - losses[2 * k + 1]) / (2.0 * eps) for k in range(len(idx))
    )


def sgd_step(circuit: Circuit, grads: GradientEstimate, eta: float, g_min: float) -> Circuit:
    """One gradient-descent update on the synapse conductances, floored."""
    updates = {}
    for name, value in zip(grads.synapse_names, grads.values):
        g = circuit.element(name).g
        updates[name] = max(g_min, g - eta * value)
    return circuit.with_conductances(updates)


def calibrate_sign(circuit: Circuit, drive: DriveSet, beta: float, eps: float, cfg: SimConfig) -> int:
    """One-time sign convention: the sign that aligns the raw estimator
    quotient with the finite-difference oracle (by inner product)."""
    est = estimate_gradient(circuit, drive, beta, cfg, sign_convention=1)
    oracle = fd_gradient(circuit, drive, eps, cfg)
    dot = float(np.dot(est.values, oracle))
    return 1 if dot >= 0 else -1


def agreement_metrics(estimate: GradientEstimate, oracle: tuple) -> dict:
    """Cosine similarity, sign agreement, and max relative error vs oracle."""
    a = np.asarray(estimate.values, dtype=float)
    b = np.asarray(oracle, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    cosine = float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0
    signs = bool(np.all(np.sign(a) == np.sign(b)))
    denom = np.maximum(np.abs(b), 1e-30)
    return {
        "cosine_similarity": cosine,
        "sign_match": signs,
        "max_rel_error": float(np.max(np.abs(a - b) / denom)),
    }


def train(circuit: Circuit, config: TrainConfig):
    """SGD over the batch: shuffle per epoch by seed, estimate, update.

    Returns (trained circuit, TrainingLog).  A simulation failure mid-run
    re-raises with epoch/example indices and the partial log attached.
    """
    names = tuple(circuit.elements[l].name for l in _synapses(circuit))
    log = TrainingLog(synapse_names=names)
    rng = np.random.default_rng(config.seed)
    current = circuit
    for epoch in range(config.epochs):
        order = rng.permutation(len(config.batch))
        for example in order:
            drive = config.batch[example]
            try:
                grads = estimate_gradient(
                    current, drive, config.beta, config.sim, config.sign_convention
                )
            except FraceqError as exc:
                exc.epoch = epoch
                exc.example = int(example)
                exc.partial_log = log
                raise
            norm = float(np.linalg.norm(grads.values))
            log.add(
                epoch,
                int(example),
                grads.metadata["loss_free"],
                norm,
                [current.element(n).g for n in names],
            )
            current = sgd_step(current, grads, config.learning_rate, config.g_min)
    return current, log
