"""Command-line front end: simulate, gradcheck, train, frac-bench.

Every run writes a plain-text key=value manifest (atomically, before the
data files are finalized) recording the command, input hash, and flags, so
recorded runs can be reproduced byte-for-byte.  Exit codes: 0 success,
2 input or configuration error, 3 numerical or simulation failure.
Diagnostics go to stderr; stdout carries only result summaries.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .circuit import parse_netlist, serialize, validate
from .circuit import _parse_waveform  # shared token grammar for config files
from .dynamics import DriveSet, SimConfig, simulate, trajectory_loss
from .eqprop import TrainConfig, agreement_metrics, estimate_gradient, fd_gradient, train
from .errors import FraceqError, NewtonDivergenceError
from .frac_ops import (
    SampleGrid,
    Signal,
    caputo_left,
    caputo_right,
    rl_derivative_left,
    rl_derivative_right,
    rl_integral_left,
)
from .lagrangian import action_breakdown, el_residual
from .topology import build_topology

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


@dataclass
class RunManifest:
    """Reproducibility record: one key=value per line, atomic write."""

    command: str
    netlist_path: str
    netlist_sha256: str
    params: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = __version__

    def to_text(self) -> str:
        lines = [
            f"command={self.command}",
            f"version={self.version}",
            f"netlist={self.netlist_path}",
            f"netlist_sha256={self.netlist_sha256}",
        ]
        lines += [f"{k}={v}" for k, v in sorted(self.params.items())]
        lines.append("outputs=" + ",".join(self.outputs))
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        _atomic_write(path, self.to_text())


def _read_netlist(path: str):
    with open(path, "rb") as fh:
        raw = fh.read()
    circuit = parse_netlist(raw.decode("utf-8"))
    diags = validate(circuit)
    if diags:
        raise FraceqError("; ".join(str(d) for d in diags))
    return circuit, hashlib.sha256(raw).hexdigest()


def _grid(args) -> SampleGrid:
    return SampleGrid.from_span(0.0, args.t_end, args.dt)


def parse_train_config(text: str, circuit) -> TrainConfig:
    """Flat key=value config plus `example` lines of waveform assignments."""
    scalars = {}
    batch = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "example":
            inputs, targets = {}, {}
            for tok in tokens[1:]:
                if "=" not in tok:
                    raise ValueError(f"config line {lineno}: malformed example token {tok!r}")
                name, wf_text = tok.split("=", 1)
                element = circuit.element(name)
                wf = _parse_waveform(wf_text)
                if element.kind == "OC":
                    targets[name] = wf
                elif element.kind in ("V", "I"):
                    inputs[name] = wf
                else:
                    raise ValueError(f"config line {lineno}: {name} is not a source or output")
            batch.append(DriveSet(inputs=inputs, targets=targets))
        elif len(tokens) == 1 and "=" in tokens[0]:
            key, value = tokens[0].split("=", 1)
            scalars[key] = value
        else:
            raise ValueError(f"config line {lineno}: expected key=value or example line")

    def take(key, cast, default=None):
        if key in scalars:
            return cast(scalars.pop(key))
        if default is None:
            raise ValueError(f"config is missing required key {key}=")
        return default

    grid = SampleGrid.from_span(0.0, take("t_end", float, 1.0), take("dt", float, 1e-3))
    cfg = TrainConfig(
        epochs=take("epochs", int),
        learning_rate=take("learning_rate", float),
        beta=take("beta", float),
        sim=SimConfig(grid),
        batch=tuple(batch) if batch else (DriveSet(),),
        g_min=take("g_min", float, 1e-6),
        seed=take("seed", int, 0),
        sign_convention=take("sign_convention", int, 1),
    )
    if scalars:
        raise ValueError("unknown config keys: " + ", ".join(sorted(scalars)))
    return cfg


# --- simulate --------------------------------------------------------------


def _dump_topology(circuit, stem):
    _, _, matrices, _ = build_topology(circuit)
    names = [e.name for e in circuit.elements]
    paths = []
    for label, M in (("Q", matrices.Q), ("B", matrices.B)):
        path = f"{stem}_{label}.csv"
        lines = [",".join(names)]
        lines += [",".join(str(v) for v in row) for row in M]
        _atomic_write(path, "\n".join(lines) + "\n")
        paths.append(path)
    return paths


def _dump_action(circuit, traj, stem):
    bd = action_breakdown(circuit.with_beta(traj.beta), traj)
    res = el_residual(circuit, traj)
    lines = ["quantity,real,imag"]
    for key in sorted(bd.parts):
        v = bd.parts[key]
        lines.append(f"action_{key},%.17g,%.17g" % (v.real, v.imag))
    total = bd.total
    lines.append("action_total,%.17g,%.17g" % (total.real, total.imag))
    for name, sig in res.items():
        interior = sig.values[1:-1]
        norm = float(np.max(np.abs(interior))) if len(interior) else 0.0
        lines.append(f"el_residual_max_{name},%.17g,0" % norm)
    path = f"{stem}_action.csv"
    _atomic_write(path, "\n".join(lines) + "\n")
    return [path]


def cmd_simulate(args) -> int:
    circuit, digest = _read_netlist(args.netlist)
    stem = os.path.splitext(args.out)[0]
    outputs = [args.out]
    if args.dump_topology:
        outputs += [f"{stem}_Q.csv", f"{stem}_B.csv"]
    if args.dump_action:
        outputs += [f"{stem}_action.csv"]
    manifest = RunManifest(
        command="simulate",
        netlist_path=args.netlist,
        netlist_sha256=digest,
        params={"beta": args.beta, "dt": args.dt, "t_end": args.t_end},
        outputs=outputs,
    )
    manifest.write(stem + ".manifest")
    traj = simulate(circuit, DriveSet(), args.beta, SimConfig(_grid(args)))
    _atomic_write(args.out, traj.to_csv())
    if args.dump_topology:
        _dump_topology(circuit, stem)
    if args.dump_action:
        _dump_action(circuit, traj, stem)
    print(f"wrote {args.out} ({traj.grid.n} samples)")
    return EXIT_OK


# --- gradcheck -------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    if args.beta <= 0:
        raise ValueError("gradcheck needs beta > 0; the estimator is undefined at beta = 0")
    circuit, digest = _read_netlist(args.netlist)
    cfg = SimConfig(_grid(args))
    stem = os.path.splitext(args.out)[0]
    summary_path = stem + "_summary.csv"
    manifest = RunManifest(
        command="gradcheck",
        netlist_path=args.netlist,
        netlist_sha256=digest,
        params={"beta": args.beta, "eps": args.eps, "dt": args.dt, "t_end": args.t_end, "jobs": args.jobs},
        outputs=[args.out, summary_path],
    )
    manifest.write(stem + ".manifest")

    est = estimate_gradient(circuit, DriveSet(), args.beta, cfg, args.sign, jobs=args.jobs)
    est_half = estimate_gradient(circuit, DriveSet(), args.beta / 2, cfg, args.sign, jobs=args.jobs)
    oracle = fd_gradient(circuit, DriveSet(), args.eps, cfg, jobs=args.jobs)
    metrics = agreement_metrics(est, oracle)
    metrics_half = agreement_metrics(est_half, oracle)

    lines = ["synapse,estimate,oracle,ratio,sign_match,e_nudged,e_free"]
    for name, value, ref, (e_n, e_f) in zip(
        est.synapse_names, est.values, oracle, est.raw_half_energies
    ):
        ratio = value / ref if ref != 0 else math.inf
        match = int(np.sign(value) == np.sign(ref))
        lines.append(f"{name},%.17g,%.17g,%.17g,{match},%.17g,%.17g" % (value, ref, ratio, e_n, e_f))
    _atomic_write(args.out, "\n".join(lines) + "\n")

    summary = [
        "metric,value",
        "cosine_similarity,%.17g" % metrics["cosine_similarity"],
        "cosine_similarity_half_beta,%.17g" % metrics_half["cosine_similarity"],
        "max_rel_error,%.17g" % metrics["max_rel_error"],
        f"sign_match_all,{int(metrics['sign_match'])}",
        f"sign_convention,{est.sign_convention}",
        "beta,%.17g" % args.beta,
        "dt,%.17g" % args.dt,
    ]
    _atomic_write(summary_path, "\n".join(summary) + "\n")
    print(
        "cosine=%.6f sign_match=%s max_rel_error=%.3g"
        % (metrics["cosine_similarity"], metrics["sign_match"], metrics["max_rel_error"])
    )
    return EXIT_OK


# --- train -----------------------------------------------------------------


def cmd_train(args) -> int:
    circuit, digest = _read_netlist(args.netlist)
    with open(args.config) as fh:
        config = parse_train_config(fh.read(), circuit)
    os.makedirs(args.out_dir, exist_ok=True)
    log_path = os.path.join(args.out_dir, "train_log.csv")
    net_path = os.path.join(args.out_dir, "trained.net")
    manifest = RunManifest(
        command="train",
        netlist_path=args.netlist,
        netlist_sha256=digest,
        params={
            "config": args.config,
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "beta": config.beta,
            "seed": config.seed,
            "sign_convention": config.sign_convention,
            "examples": len(config.batch),
        },
        outputs=[log_path, net_path],
    )
    manifest.write(os.path.join(args.out_dir, "train.manifest"))
    try:
        final, log = train(circuit, config)
    except FraceqError as exc:
        if hasattr(exc, "partial_log"):
            _atomic_write(log_path, exc.partial_log.to_csv())
            print(
                f"failure at epoch {exc.epoch}, example {exc.example}; partial log flushed",
                file=sys.stderr,
            )
        raise
    _atomic_write(log_path, log.to_csv())
    _atomic_write(net_path, serialize(final))
    losses = log.losses_by_epoch()
    print("epochs=%d loss %.6g -> %.6g" % (config.epochs, losses[0], losses[-1]))
    return EXIT_OK


# --- frac-bench ------------------------------------------------------------

_OPS = {
    "caputo-left": caputo_left,
    "caputo-right": caputo_right,
    "rl-left": rl_derivative_left,
    "rl-right": rl_derivative_right,
    "rl-integral": rl_integral_left,
}

# analytic self-test matrix: (label, signal, exact result, threshold)
def _self_test_cases():
    grid = SampleGrid.from_span(0.0, 1.0, 1e-3)
    t = grid.times()
    g15 = math.gamma(2.5) / math.gamma(2.0)
    return grid, t, [
        ("caputo_left t a=0.5", lambda s: caputo_left(s, 0.5), t, 2 * np.sqrt(t / np.pi), 2e-2),
        ("caputo_left t^1.5 a=0.5", lambda s: caputo_left(s, 0.5), t**1.5, g15 * t, 2e-3),
        (
            "half-half composition t^2",
            lambda s: caputo_left(caputo_left(s, 0.5), 0.5),
            t**2,
            2 * t,
            5e-2,
        ),
        ("caputo_right 1-t a=0.5", lambda s: caputo_right(s, 0.5), 1 - t, 2 * np.sqrt((1 - t) / np.pi), 2e-2),
        ("rl_integral t a=0.5", lambda s: rl_integral_left(s, 0.5), t, t**1.5 / g15, 1e-12),
        ("caputo_left sin a=1", lambda s: caputo_left(s, 1.0), np.sin(t), _backward(np.sin(t), 1e-3), 1e-12),
    ]


def _backward(x, dt):
    out = np.empty_like(x)
    out[0] = 0.0
    out[1:] = np.diff(x) / dt
    return out


def _run_self_test() -> int:
    grid, _, cases = _self_test_cases()
    ok = True
    print("case,max_error,threshold,pass")
    for label, op, values, exact, threshold in cases:
        result = op(Signal(grid, values)).values
        err = float(np.max(np.abs(result - exact)))
        good = err <= threshold
        ok = ok and good
        print("%s,%.3e,%.3e,%s" % (label, err, threshold, "yes" if good else "NO"))
    return EXIT_OK if ok else EXIT_NUMERIC


def _read_signal_csv(path: str) -> Signal:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                continue  # header row
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least 2 numeric t,value rows")
    t = np.array([r[0] for r in rows])
    v = np.array([r[1] for r in rows])
    steps = np.diff(t)
    dt = steps[0]
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-9 * max(1.0, abs(dt)):
        raise ValueError(f"{path}: time column is not a uniform grid")
    return Signal(SampleGrid(float(t[0]), float(dt), len(t)), v)


def cmd_fracbench(args) -> int:
    if args.self_test:
        return _run_self_test()
    if args.signal is None:
        raise ValueError("frac-bench needs a signal CSV (or --self-test)")
    sig = _read_signal_csv(args.signal)
    result = _OPS[args.op](sig, args.alpha)
    lines = ["t,value"]
    t = sig.grid.times()
    for k in range(sig.grid.n):
        lines.append("%.17g,%.17g" % (t[k], np.real(result.values[k])))
    _atomic_write(args.out, "\n".join(lines) + "\n")
    print(f"wrote {args.out}")
    return EXIT_OK


# --- entry point -----------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fraceq")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one trajectory and export CSV")
    sim.add_argument("netlist")
    sim.add_argument("--beta", type=float, default=0.0)
    sim.add_argument("--dt", type=float, default=1e-3)
    sim.add_argument("--t-end", type=float, default=1.0)
    sim.add_argument("--out", default="trajectory.csv")
    sim.add_argument("--dump-topology", action="store_true")
    sim.add_argument("--dump-action", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    gc = sub.add_parser("gradcheck", help="estimator vs finite-difference oracle")
    gc.add_argument("netlist")
    gc.add_argument("--beta", type=float, default=1e-3)
    gc.add_argument("--eps", type=float, default=1e-4)
    gc.add_argument("--dt", type=float, default=1e-3)
    gc.add_argument("--t-end", type=float, default=1.0)
    gc.add_argument("--sign", type=int, default=1, choices=(-1, 1))
    gc.add_argument("--out", default="gradcheck.csv")
    gc.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    gc.set_defaults(func=cmd_gradcheck)

    tr = sub.add_parser("train", help="SGD training loop")
    tr.add_argument("netlist")
    tr.add_argument("config")
    tr.add_argument("--out-dir", default=".")
    tr.set_defaults(func=cmd_train)

    fb = sub.add_parser("frac-bench", help="fractional operators on CSV signals")
    fb.add_argument("signal", nargs="?")
    fb.add_argument("--op", choices=sorted(_OPS), default="caputo-left")
    fb.add_argument("--alpha", type=float, default=0.5)
    fb.add_argument("--out", default="frac_bench.csv")
    fb.add_argument("--self-test", action="store_true")
    fb.set_defaults(func=cmd_fracbench)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NewtonDivergenceError as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FraceqError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
