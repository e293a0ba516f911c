import csv
import os
import struct

import numpy as np
import pytest

from chlog.cli import main
from chlog.config import ConfigError, parse_config, parse_init, parse_pairs
from chlog.grid import make_grid
from chlog.potential import ModelParams
from chlog.snapshot import MAGIC, SnapshotError, load_snapshot, save_snapshot
from chlog.stepper import SchemeConfig, SimState, builtin_initial_data, run

MINIMAL = """\
grid_n = 64
nu = 1
theta = 1
theta_c = 2
scheme = semi_implicit
tau = auto
t_final = 1.0
init = random:4:0.4
seed = 7
"""


def write_config(path, out_dir, **over):
    pairs = {
        "grid_n": "16", "nu": "1", "theta": "1", "theta_c": "2", "scheme": "semi_implicit",
        "tau": "1e-3", "n_steps": "10", "init": "random:3:0.4", "seed": "7", "out_dir": str(out_dir),
    }
    pairs.update({k: str(v) for k, v in over.items()})
    pairs = {k: v for k, v in pairs.items() if v != "None"}
    path.write_text("".join(f"{k} = {v}\n" for k, v in pairs.items()))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestParseConfig:
    def test_minimal(self):
        cfg = parse_config(MINIMAL)
        assert cfg.tau == 0.25
        assert cfg.total_steps() == 4
        assert cfg.params == ModelParams(1, 1, 2)
        assert cfg.init == ("random_bandlimited", {"kmax": 4, "amp": 0.4})
        assert cfg.guard.mode == "abort" and cfg.cadence == 1 and cfg.out_dir == "out"

    def test_theta_above_critical(self):
        text = MINIMAL.replace("theta_c = 2", "theta_c = 0.5")
        with pytest.raises(ConfigError, match="theta must be < theta_c"):
            parse_config(text)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="'thetac'"):
            parse_config(MINIMAL + "thetac=2\n")

    def test_missing_key(self):
        with pytest.raises(ConfigError, match="nu"):
            parse_config(MINIMAL.replace("nu = 1\n", ""))

    @pytest.mark.parametrize("extra, drop", [("n_steps = 5\n", ""), ("", "t_final = 1.0\n")])
    def test_exactly_one_duration(self, extra, drop):
        with pytest.raises(ConfigError, match="exactly one"):
            parse_config(MINIMAL.replace(drop, "") + extra if drop else MINIMAL + extra)

    def test_inadmissible_tau(self):
        with pytest.raises(ConfigError, match="tau"):
            parse_config(MINIMAL.replace("tau = auto", "tau = 0.6").replace("t_final = 1.0", "t_final = 1.2"))

    def test_t_final_multiple(self):
        with pytest.raises(ConfigError, match="integer multiple"):
            parse_config(MINIMAL.replace("tau = auto", "tau = 0.3"))

    def test_variant_needs_explicit_tau(self):
        with pytest.raises(ConfigError, match="auto"):
            parse_config(MINIMAL.replace("semi_implicit", "variant"))
        cfg = parse_config(MINIMAL.replace("semi_implicit", "variant").replace("tau = auto", "tau = 10")
                           .replace("t_final = 1.0", "n_steps = 3"))
        assert cfg.tau == 10 and cfg.total_steps() == 3

    def test_galerkin(self):
        cfg = parse_config(MINIMAL.replace("semi_implicit", "galerkin:20"))
        assert cfg.scheme == "galerkin" and cfg.cutoff == 20
        with pytest.raises(ConfigError, match="cutoff"):
            parse_config(MINIMAL.replace("semi_implicit", "galerkin:40"))

    def test_comments_and_duplicates(self):
        pairs = parse_pairs("# header\nnu = 1  # inline\n\n")
        assert pairs == {"nu": "1"}
        with pytest.raises(ConfigError, match="duplicate"):
            parse_pairs("nu=1\nnu=2\n")
        with pytest.raises(ConfigError, match="key=value"):
            parse_pairs("nu 1\n")

    def test_guard_and_cadence(self):
        cfg = parse_config(MINIMAL + "guard = saturate:1e-10\ncadence = 5\n")
        assert cfg.guard.mode == "saturate" and cfg.guard.eps_guard == 1e-10 and cfg.cadence == 5
        with pytest.raises(ConfigError, match="guard"):
            parse_config(MINIMAL + "guard = clamp\n")

    @pytest.mark.parametrize("text, kind", [
        ("constant:0.2", "constant"), ("mode:0:1:0:0.3", "single_mode"),
        ("random:4:0.4", "random_bandlimited"), ("two_bump", "two_bump"),
        ("two_bump:-0.3:0.6:0.4", "two_bump"),
    ])
    def test_init_formats(self, text, kind):
        assert parse_init(text)[0] == kind

    @pytest.mark.parametrize("text", ["constant", "mode:0:1:0", "random:x:0.4", "noise:1"])
    def test_init_errors(self, text):
        with pytest.raises(ConfigError, match="init"):
            parse_init(text)

    def test_init_out_of_range(self):
        with pytest.raises(ConfigError, match="init"):
            parse_config(MINIMAL.replace("random:4:0.4", "constant:1.5"))

    def test_override(self):
        cfg = parse_config(MINIMAL)
        other = cfg.with_override("seed", "9")
        assert other.seed == 9 and cfg.seed == 7


class TestSnapshot:
    def state(self, step=0):
        g = make_grid(16)
        u = builtin_initial_data("random_bandlimited", g, seed=3, kmax=5, amp=0.7)
        return SimState.initial(u, 1e-3, step=step)

    def test_round_trip(self, tmp_path, params):
        st = self.state(step=123)
        p = tmp_path / "s.chlog"
        save_snapshot(st, params, p)
        snap = load_snapshot(p)
        assert snap.state.u.values.tobytes() == st.u.values.tobytes()
        assert snap.state.step == 123 and snap.tau == 1e-3 and snap.params == params and snap.n == 16

    def test_layout(self, tmp_path, params):
        p = tmp_path / "s.chlog"
        st = self.state(step=5)
        save_snapshot(st, params, p)
        data = p.read_bytes()
        assert data[:7] == MAGIC
        version, n, step = struct.unpack_from("<HIQ", data, 7)
        assert (version, n, step) == (1, 16, 5)
        assert struct.unpack_from("<4d", data, 21) == (1e-3, 1.0, 1.0, 2.0)
        assert len(data) == 53 + 16 * 16 * 8
        assert np.frombuffer(data[53:], "<f8")[17] == st.u.values[1, 1]

    def test_truncated(self, tmp_path, params):
        p = tmp_path / "s.chlog"
        save_snapshot(self.state(), params, p)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(SnapshotError, match="payload length"):
            load_snapshot(p)

    def test_short_header(self, tmp_path):
        p = tmp_path / "s.chlog"
        p.write_bytes(MAGIC)
        with pytest.raises(SnapshotError, match="too short"):
            load_snapshot(p)

    def test_bad_magic(self, tmp_path, params):
        p = tmp_path / "s.chlog"
        save_snapshot(self.state(), params, p)
        p.write_bytes(b"CHLOG2\n" + p.read_bytes()[7:])
        with pytest.raises(SnapshotError, match="magic"):
            load_snapshot(p)

    def test_bad_version(self, tmp_path, params):
        p = tmp_path / "s.chlog"
        save_snapshot(self.state(), params, p)
        data = bytearray(p.read_bytes())
        data[7:9] = struct.pack("<H", 2)
        p.write_bytes(bytes(data))
        with pytest.raises(SnapshotError, match="version"):
            load_snapshot(p)

    def test_resume_bit_exact(self, tmp_path, params):
        g = make_grid(32)
        cfg = SchemeConfig("semi_implicit", 1e-3, params)
        u0 = builtin_initial_data("random_bandlimited", g, seed=7, kmax=4, amp=0.4)
        full = run(u0, cfg, 100, record=False).state
        half = run(u0, cfg, 50, record=False).state
        p = tmp_path / "half.chlog"
        save_snapshot(half, params, p)
        resumed = run(load_snapshot(p).state, cfg, 50, record=False).state
        assert resumed.step == 100
        assert resumed.u.values.tobytes() == full.u.values.tobytes()


class TestCli:
    def test_constant_run(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.cfg", out, init="constant:0.3")
        assert main(["run", "--config", cfg]) == 0
        rows = read_csv(out / "diagnostics.csv")
        assert len(rows) == 11 and rows[0]["step"] == "0" and rows[-1]["step"] == "10"
        assert len({r["energy"] for r in rows}) == 1
        assert list(rows[0]) == ["step", "time", "energy", "mass", "margin", "grad_K_l2", "g_mean",
                                 "g_fluct", "h1", "h3", "h5", "identity_residual"]
        assert (out / "final.chlog").exists()

    def test_csv_round_trips_records(self, tmp_path, params):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.cfg", out)
        main(["run", "--config", cfg])
        rows = read_csv(out / "diagnostics.csv")
        g = make_grid(16)
        u0 = builtin_initial_data("random_bandlimited", g, seed=7, kmax=3, amp=0.4)
        recs = run(u0, SchemeConfig("semi_implicit", 1e-3, params), 10).records
        for row, rec in zip(rows, recs):
            assert float(row["energy"]) == rec.energy
            assert float(row["identity_residual"]) == rec.identity_residual

    def test_deterministic_bytes(self, tmp_path):
        a = write_config(tmp_path / "a.cfg", tmp_path / "a")
        b = write_config(tmp_path / "b.cfg", tmp_path / "b")
        main(["run", "--config", a])
        main(["run", "--config", b])
        assert (tmp_path / "a/diagnostics.csv").read_bytes() == (tmp_path / "b/diagnostics.csv").read_bytes()

    def test_snapshots_and_inspect(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.cfg", out)
        assert main(["run", "--config", cfg, "--snapshot-every", "5"]) == 0
        assert sorted(os.listdir(out)) == ["diagnostics.csv", "final.chlog",
                                           "snapshot_00000005.chlog", "snapshot_00000010.chlog"]
        capsys.readouterr()
        assert main(["inspect", "--snapshot", str(out / "final.chlog")]) == 0
        lines = dict(line.split("=", 1) for line in capsys.readouterr().out.split()
                     if "=" in line)
        last = read_csv(out / "diagnostics.csv")[-1]
        assert lines["n"] == "16" and lines["step"] == "10" and float(lines["tau"]) == 1e-3
        assert abs(float(lines["mean"]) - float(last["mass"])) <= 1e-15
        assert abs(float(lines["margin"]) - float(last["margin"])) <= 1e-15
        v = load_snapshot(out / "final.chlog").state.u.values
        assert float(lines["min"]) == v.min() and float(lines["max"]) == v.max()

    def test_resume_matches_unsplit(self, tmp_path):
        whole = write_config(tmp_path / "w.cfg", tmp_path / "w", n_steps=20)
        main(["run", "--config", whole])
        part = write_config(tmp_path / "p.cfg", tmp_path / "p", n_steps=10)
        main(["run", "--config", part])
        rest = write_config(tmp_path / "p.cfg", tmp_path / "p", n_steps=20)
        assert main(["run", "--config", rest, "--resume", str(tmp_path / "p/final.chlog")]) == 0
        w = read_csv(tmp_path / "w/diagnostics.csv")
        p = read_csv(tmp_path / "p/diagnostics.csv")
        assert [r["step"] for r in p] == [str(i) for i in range(21)]
        assert p == w
        a = load_snapshot(tmp_path / "w/final.chlog").state.u.values
        b = load_snapshot(tmp_path / "p/final.chlog").state.u.values
        assert a.tobytes() == b.tobytes()

    def test_resume_refuses_mismatch(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.cfg", tmp_path / "o")
        main(["run", "--config", cfg])
        other = write_config(tmp_path / "d.cfg", tmp_path / "o", theta_c="2.5", n_steps=20)
        assert main(["run", "--config", other, "--resume", str(tmp_path / "o/final.chlog")]) == 1
        assert "--force" in capsys.readouterr().err
        assert main(["run", "--config", other, "--resume", str(tmp_path / "o/final.chlog"),
                     "--force"]) == 0

    def test_config_error_exit(self, tmp_path, capsys):
        p = tmp_path / "bad.cfg"
        p.write_text("thetac = 2\n")
        assert main(["run", "--config", str(p)]) == 1
        assert "thetac" in capsys.readouterr().err

    def test_missing_snapshot_exit(self, tmp_path):
        assert main(["inspect", "--snapshot", str(tmp_path / "nope.chlog")]) == 1

    def test_guard_abort_exit(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.cfg", out, grid_n=32, theta_c=4, tau=0.01, n_steps=200,
                           init="random:3:0.3", seed=3)
        assert main(["run", "--config", cfg]) == 2
        rows = read_csv(out / "diagnostics.csv")
        assert 1 < len(rows) < 201
        assert int(rows[-1]["step"]) == len(rows) - 1

    def test_convergence(self, tmp_path, capsys):
        out = tmp_path / "conv"
        cfg = write_config(tmp_path / "c.cfg", out)
        assert main(["convergence", "--config", cfg, "--taus", "4e-3,2e-3,1e-3",
                     "--tau-ref", "6.25e-5", "--t-final", "0.1"]) == 0
        rows = read_csv(out / "convergence.csv")
        assert [float(r["tau"]) for r in rows] == [4e-3, 2e-3, 1e-3]
        summary = read_csv(out / "convergence_summary.csv")[0]
        assert 0.8 <= float(summary["p"]) <= 1.2

    def test_convergence_bad_study(self, tmp_path):
        cfg = write_config(tmp_path / "c.cfg", tmp_path / "conv")
        assert main(["convergence", "--config", cfg, "--taus", "4e-3,2e-3,1e-3",
                     "--tau-ref", "1e-4", "--t-final", "0.1"]) == 1

    def test_sweep(self, tmp_path, capsys):
        out = tmp_path / "sw"
        cfg = write_config(tmp_path / "c.cfg", out, n_steps=3)
        assert main(["sweep", "--config", cfg, "--vary", "seed=1,2"]) == 0
        a = read_csv(out / "seed=1" / "diagnostics.csv")
        b = read_csv(out / "seed=2" / "diagnostics.csv")
        assert len(a) == len(b) == 4 and a[0]["energy"] != b[0]["energy"]

    def test_sweep_bad_key(self, tmp_path):
        cfg = write_config(tmp_path / "c.cfg", tmp_path / "sw")
        assert main(["sweep", "--config", cfg, "--vary", "thetac=1,2"]) == 1
