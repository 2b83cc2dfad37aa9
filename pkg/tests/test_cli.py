import hashlib
import os

import numpy as np
import pytest

from fraceq.cli import main, parse_train_config
from fraceq.circuit import parse_netlist

RC_NET = "V vin 1 0 w=step(1,0)\nR r1 1 2 g=1\nC c1 2 0 c=1\n"

LINNET = """\
V v1 in1 0 w=const(1.0)
V v2 in2 0 w=const(0.5)
R s1 in1 out g=1.0 trainable
R s2 in2 out g=0.25 trainable
R s3 out 0 g=0.5 trainable
OC oc1 out 0 cap=1.0 w=const(0.4)
"""

TRAIN_CFG = """\
epochs=3
learning_rate=0.05
beta=0.001
dt=0.004
t_end=1.0
seed=1
example v1=const(1.0) v2=const(0.5) oc1=const(0.4)
example v1=const(0.8) v2=const(0.3) oc1=const(0.3)
"""


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",")
    return header, np.atleast_2d(data)


@pytest.fixture
def rc_net(tmp_path):
    p = tmp_path / "rc.net"
    p.write_text(RC_NET)
    return str(p)


@pytest.fixture
def linnet_path(tmp_path):
    p = tmp_path / "linnet.net"
    p.write_text(LINNET)
    return str(p)


class TestSimulate:
    def test_rc_step_response(self, rc_net, tmp_path):
        out = str(tmp_path / "traj.csv")
        code = main(["simulate", rc_net, "--dt", "1e-3", "--t-end", "5", "--out", out])
        assert code == 0
        header, data = read_csv(out)
        t = data[:, header.index("t")]
        vc = data[:, header.index("coord_c1_v")]
        k = int(np.argmin(np.abs(t - 1.0)))
        assert vc[k] == pytest.approx(1 - np.exp(-1), abs=5e-3)

    def test_missing_file_exit_2(self, tmp_path, capsys):
        code = main(["simulate", str(tmp_path / "nope.net")])
        assert code == 2
        assert "nope.net" in capsys.readouterr().err

    def test_parse_error_exit_2_with_line(self, tmp_path, capsys):
        p = tmp_path / "bad.net"
        p.write_text("R r1 a 0 g=1\nX bogus a 0\n")
        code = main(["simulate", str(p)])
        assert code == 2
        assert "line 2" in capsys.readouterr().err

    def test_dump_topology_orthogonal(self, rc_net, tmp_path):
        out = str(tmp_path / "traj.csv")
        code = main(["simulate", rc_net, "--t-end", "0.1", "--out", out, "--dump-topology"])
        assert code == 0
        _, Q = read_csv(str(tmp_path / "traj_Q.csv"))
        _, B = read_csv(str(tmp_path / "traj_B.csv"))
        assert np.all(Q @ B.T == 0)

    def test_dump_action_has_parts(self, rc_net, tmp_path):
        out = str(tmp_path / "traj.csv")
        code = main(["simulate", rc_net, "--t-end", "0.5", "--out", out, "--dump-action"])
        assert code == 0
        text = (tmp_path / "traj_action.csv").read_text()
        assert "action_total" in text and "el_residual_max_c1" in text

    def test_manifest_hash_and_reproducibility(self, rc_net, tmp_path):
        out = str(tmp_path / "traj.csv")
        argv = ["simulate", rc_net, "--t-end", "0.5", "--out", out]
        assert main(argv) == 0
        first = open(out, "rb").read()
        manifest = (tmp_path / "traj.manifest").read_text()
        digest = hashlib.sha256(open(rc_net, "rb").read()).hexdigest()
        assert f"netlist_sha256={digest}" in manifest
        assert main(argv) == 0
        assert open(out, "rb").read() == first


class TestGradcheck:
    def test_reference_network_report(self, linnet_path, tmp_path):
        out = str(tmp_path / "gc.csv")
        code = main(
            ["gradcheck", linnet_path, "--dt", "2e-3", "--out", out, "--jobs", "2"]
        )
        assert code == 0
        with open(out) as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh]
        data = np.array([[float(x) for x in row[1:]] for row in rows])
        header = header[1:]
        assert np.all(data[:, header.index("sign_match")] == 1)
        # report re-computable from the raw half-energy columns
        beta, cap = 1e-3, 1.0
        e_n = data[:, header.index("e_nudged")]
        e_f = data[:, header.index("e_free")]
        est = data[:, header.index("estimate")]
        assert np.allclose(est, (e_n - e_f) / (2 * cap * beta), rtol=1e-12)
        summary = (tmp_path / "gc_summary.csv").read_text()
        assert "cosine_similarity," in summary

    def test_beta_zero_exit_2(self, linnet_path, capsys):
        assert main(["gradcheck", linnet_path, "--beta", "0"]) == 2
        assert "beta" in capsys.readouterr().err


class TestTrain:
    def _run(self, linnet_path, tmp_path, cfg_text, out_name):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(cfg_text)
        out_dir = str(tmp_path / out_name)
        code = main(["train", linnet_path, str(cfg), "--out-dir", out_dir])
        return code, out_dir

    def test_loss_decreases_and_outputs_written(self, linnet_path, tmp_path):
        code, out_dir = self._run(linnet_path, tmp_path, TRAIN_CFG, "run")
        assert code == 0
        header, data = read_csv(os.path.join(out_dir, "train_log.csv"))
        assert header[:4] == ["epoch", "example", "J", "grad_norm"]
        by_epoch = [data[data[:, 0] == ep, 2].mean() for ep in (0, 1, 2)]
        assert by_epoch[0] > by_epoch[1] > by_epoch[2]
        assert os.path.exists(os.path.join(out_dir, "trained.net"))

    def test_zero_learning_rate_identity(self, linnet_path, tmp_path):
        cfg_text = TRAIN_CFG.replace("learning_rate=0.05", "learning_rate=0.0")
        code, out_dir = self._run(linnet_path, tmp_path, cfg_text, "run0")
        assert code == 0
        from fraceq.circuit import serialize

        trained = open(os.path.join(out_dir, "trained.net")).read()
        assert trained == serialize(parse_netlist(LINNET))

    def test_seed_determinism(self, linnet_path, tmp_path):
        _, a = self._run(linnet_path, tmp_path, TRAIN_CFG, "runA")
        _, b = self._run(linnet_path, tmp_path, TRAIN_CFG, "runB")
        log_a = open(os.path.join(a, "train_log.csv"), "rb").read()
        log_b = open(os.path.join(b, "train_log.csv"), "rb").read()
        assert log_a == log_b

    def test_bad_config_exit_2(self, linnet_path, tmp_path, capsys):
        code, _ = self._run(linnet_path, tmp_path, "epochs=3\nbogus_key=1\nlearning_rate=0.1\nbeta=1e-3\n", "runX")
        assert code == 2
        assert "bogus_key" in capsys.readouterr().err


class TestParseTrainConfig:
    def test_example_lines_partition_inputs_and_targets(self):
        ckt = parse_netlist(LINNET)
        cfg = parse_train_config(TRAIN_CFG, ckt)
        assert cfg.epochs == 3 and len(cfg.batch) == 2
        assert set(cfg.batch[1].inputs) == {"v1", "v2"}
        assert set(cfg.batch[1].targets) == {"oc1"}

    def test_missing_required_key(self):
        with pytest.raises(ValueError, match="epochs"):
            parse_train_config("learning_rate=0.1\nbeta=1e-3\n", parse_netlist(LINNET))

    def test_non_source_example_rejected(self):
        with pytest.raises(ValueError, match="s1"):
            parse_train_config(
                "epochs=1\nlearning_rate=0.1\nbeta=1e-3\nexample s1=const(1)\n",
                parse_netlist(LINNET),
            )


class TestFracBench:
    def _write_signal(self, tmp_path, t, v):
        p = tmp_path / "sig.csv"
        p.write_text("t,value\n" + "\n".join(f"{a},{b}" for a, b in zip(t, v)) + "\n")
        return str(p)

    def test_caputo_ramp(self, tmp_path):
        t = np.arange(0, 1.0001, 1e-3)
        sig = self._write_signal(tmp_path, t, t)
        out = str(tmp_path / "res.csv")
        code = main(["frac-bench", sig, "--op", "caputo-left", "--alpha", "0.5", "--out", out])
        assert code == 0
        _, data = read_csv(out)
        assert np.max(np.abs(data[:, 1] - 2 * np.sqrt(t / np.pi))) < 2e-2

    def test_alpha_one_is_discrete_derivative(self, tmp_path):
        t = np.arange(0, 1.0001, 1e-3)
        v = np.sin(t)
        sig = self._write_signal(tmp_path, t, v)
        out = str(tmp_path / "res.csv")
        assert main(["frac-bench", sig, "--alpha", "1.0", "--out", out]) == 0
        _, data = read_csv(out)
        assert np.allclose(data[1:, 1], np.diff(v) / 1e-3, atol=1e-10)

    def test_non_uniform_grid_exit_2(self, tmp_path, capsys):
        sig = self._write_signal(tmp_path, [0.0, 0.1, 0.3], [1.0, 2.0, 3.0])
        assert main(["frac-bench", sig]) == 2
        assert "uniform" in capsys.readouterr().err

    def test_self_test_passes(self, capsys):
        assert main(["frac-bench", "--self-test"]) == 0
        out = capsys.readouterr().out
        assert "NO" not in out
