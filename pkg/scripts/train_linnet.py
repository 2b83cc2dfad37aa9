#!/usr/bin/env python3
"""Train the reference network and print the per-epoch loss curve.

Reproduces the end-to-end learning experiment: 50 epochs of SGD over the
shipped four-example batch, loss strictly decreasing and well under half
its initial value by the final epoch.

Usage: python scripts/train_linnet.py [--epochs 50] [--out-dir runs/linnet]
"""

import argparse
from pathlib import Path

from fraceq.circuit import parse_netlist, serialize
from fraceq.cli import parse_train_config
from fraceq.eqprop import train

ROOT = Path(__file__).resolve().parent.parent


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--netlist", default=str(ROOT / "netlists" / "linnet.net"))
    parser.add_argument("--config", default=str(ROOT / "netlists" / "train.cfg"))
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--out-dir", default=None)
    args = parser.parse_args()

    circuit = parse_netlist(Path(args.netlist).read_text())
    config = parse_train_config(Path(args.config).read_text(), circuit)
    if args.epochs is not None:
        from dataclasses import replace

        config = replace(config, epochs=args.epochs)

    final, log = train(circuit, config)
    losses = log.losses_by_epoch()
    print("epoch,mean_loss")
    for epoch, loss in enumerate(losses):
        print("%d,%.8g" % (epoch, loss))
    print("# final conductances:", {n: final.element(n).g for n in log.synapse_names})
    print("# loss ratio final/initial: %.4f" % (losses[-1] / losses[0]))

    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_log.csv").write_text(log.to_csv())
        (out / "trained.net").write_text(serialize(final))
        print(f"# wrote {out}/train_log.csv and {out}/trained.net")


if __name__ == "__main__":
    main()
