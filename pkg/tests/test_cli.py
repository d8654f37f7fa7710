"""Command line interface: config parsing, exit codes, and artifacts."""

import numpy as np
import pytest

from pnpf.cli import ConfigError, load_config, main, parse_config_text
from pnpf.diagnostics import read_monitor

SALT = """\
coefficients.z = -1, 1
coefficients.k_B = 1.0
coefficients.nu = 1.334, 2.032
coefficients.k = 1.0
coefficients.eps = 1.0
coefficients.lambda0 = 1.0
coefficients.rho0 = 1.0
coefficients.c0 = 1.0
coefficients.c = 1.0, 1.0
"""

NEUTRAL_PAIR = "equilibrium.delta = 0.05, 0.05\n"

SIM_BLOCK = """\
grid.dim = 1
grid.M = 32
solver.dt = 1e-3
solver.T_end = 0.05
solver.amplitude = 1e-3
solver.seed = 7
"""


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestParsing:
    def test_flat_key_value_lines(self):
        values = parse_config_text("a.b = 1\n# comment\n\nc.d = 2, 3  # tail\n")
        assert values == {"a.b": "1", "c.d": "2, 3"}

    def test_malformed_line_reports_line_number(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config_text("a.b = 1\nnonsense without equals\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("a.b = 1\na.b = 2\n")

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, SALT + "coefficients.zz = 3\n")
        with pytest.raises(ConfigError, match="coefficients.zz"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, "widget.x = 1\n")
        with pytest.raises(ConfigError, match="widget.x"):
            load_config(path)

    def test_bad_number_names_key(self, tmp_path, capsys):
        path = write_config(tmp_path, SALT.replace("k_B = 1.0", "k_B = abc"))
        assert main(["check", "--config", path]) == 2
        assert "coefficients.k_B" in capsys.readouterr().err

    def test_missing_required_key(self, tmp_path, capsys):
        path = write_config(tmp_path, "coefficients.k_B = 1\n")
        assert main(["check", "--config", path]) == 2
        assert "coefficients.z" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["check", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_malformed_file_exits_2(self, tmp_path):
        path = write_config(tmp_path, "coefficients.z  -1, 1\n")
        assert main(["check", "--config", path]) == 2


class TestCheck:
    def test_aqueous_salt_passes(self, tmp_path):
        path = write_config(tmp_path, SALT + NEUTRAL_PAIR)
        assert main(["check", "--config", path, "--quiet"]) == 0

    def test_uneven_drags_fail(self, tmp_path):
        text = SALT.replace("nu = 1.334, 2.032", "nu = 1, 10")
        path = write_config(tmp_path, text)
        assert main(["check", "--config", path, "--quiet"]) == 1

    def test_report_csv(self, tmp_path):
        path = write_config(tmp_path, SALT + NEUTRAL_PAIR)
        out = tmp_path / "out"
        assert main(["check", "--config", path, "--out", str(out), "--quiet"]) == 0
        lines = (out / "check_report.csv").read_text().splitlines()
        assert lines[0] == "name,value,passed"
        body = [line.split(",") for line in lines[1:]]
        assert all(cells[2] == "1" for cells in body)
        names = [cells[0] for cells in body]
        assert "electroneutrality_residual" in names
        assert "drag_deviation_sq_0" in names

    def test_quiet_suppresses_stdout(self, tmp_path, capsys):
        path = write_config(tmp_path, SALT)
        main(["check", "--config", path, "--quiet"])
        assert capsys.readouterr().out == ""


class TestCertify:
    def test_construct_writes_roundtrippable_certificate(self, tmp_path, capsys):
        path = write_config(tmp_path, SALT + NEUTRAL_PAIR)
        out = tmp_path / "out"
        assert main(["certify", "--config", path, "--out", str(out)]) == 0
        assert "constructed" in capsys.readouterr().out
        cert_text = (out / "certificate.txt").read_text()
        pinned = write_config(
            tmp_path, SALT + NEUTRAL_PAIR + cert_text, name="pinned.cfg"
        )
        assert main(["certify", "--config", pinned]) == 0
        assert "pinned" in capsys.readouterr().out

    def test_non_neutral_equilibrium_fails(self, tmp_path, capsys):
        path = write_config(tmp_path, SALT + "equilibrium.delta = 0.05, 0.07\n")
        assert main(["certify", "--config", path]) == 1
        assert "neutral" in capsys.readouterr().err

    def test_pinned_inadmissible_fails(self, tmp_path, capsys):
        path = write_config(tmp_path, SALT + NEUTRAL_PAIR)
        out = tmp_path / "out"
        main(["certify", "--config", path, "--out", str(out), "--quiet"])
        lines = []
        for line in (out / "certificate.txt").read_text().splitlines():
            if line.startswith("certificate.chi_theta "):
                key, _, value = line.partition("=")
                line = f"{key}= {float(value) * 1e6}"
            lines.append(line)
        broken = write_config(
            tmp_path,
            SALT + NEUTRAL_PAIR + "\n".join(lines) + "\n",
            name="broken.cfg",
        )
        assert main(["certify", "--config", broken]) == 1
        assert "no admissible certificate" in capsys.readouterr().out

    def test_sampled_equilibrium_when_delta_absent(self, tmp_path):
        text = SALT + "equilibrium.kappa = 0.05\nequilibrium.seed = 3\n"
        path = write_config(tmp_path, text)
        assert main(["certify", "--config", path, "--quiet"]) == 0


class TestSpectrum:
    def read_csv(self, path):
        lines = path.read_text().splitlines()
        header = lines[0].split(",")
        data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
        return header, data

    def test_zero_mode_row_is_analytic(self, tmp_path):
        path = write_config(tmp_path, SALT + NEUTRAL_PAIR)
        out = tmp_path / "out"
        assert main(["spectrum", "--config", path, "--out", str(out), "--quiet"]) == 0
        header, data = self.read_csv(out / "spectrum.csv")
        assert header[:2] == ["xi_sq", "max_real"]
        assert data.shape == (200, 2 + 2 * 4)
        row = data[0]
        assert row[0] == 0.0
        re_parts = np.sort(row[2::2])
        im_parts = row[3::2]
        q_over_eps = 0.05 / 1.334 + 0.05 / 2.032
        assert abs(re_parts[0] + q_over_eps) < 1e-12
        assert np.all(np.abs(re_parts[1:]) < 1e-12)
        assert np.all(np.abs(im_parts) < 1e-12)

    def test_certified_salt_is_stable(self, tmp_path):
        path = write_config(tmp_path, SALT + NEUTRAL_PAIR)
        out = tmp_path / "out"
        assert main(["spectrum", "--config", path, "--out", str(out), "--quiet"]) == 0
        _, data = self.read_csv(out / "spectrum.csv")
        assert data[:, 1].max() <= 1e-10

    def test_nonpositive_points_rejected(self, tmp_path):
        text = SALT + NEUTRAL_PAIR + "spectrum.points = 0\n"
        path = write_config(tmp_path, text)
        assert main(["spectrum", "--config", path, "--quiet"]) == 2


class TestSimulate:
    def test_zero_amplitude_stays_zero(self, tmp_path):
        text = SALT + NEUTRAL_PAIR + SIM_BLOCK.replace(
            "amplitude = 1e-3", "amplitude = 0"
        )
        path = write_config(tmp_path, text)
        out = tmp_path / "out"
        assert main(["simulate", "--config", path, "--out", str(out), "--quiet"]) == 0
        rows = read_monitor(out / "monitor.csv")
        assert rows.shape[0] >= 3
        assert np.all(rows[:, 1] == 0.0)
        assert np.all(rows[:, 5] == 0.0)

    def test_decay_run_passes_audit(self, tmp_path, capsys):
        path = write_config(tmp_path, SALT + NEUTRAL_PAIR + SIM_BLOCK)
        out = tmp_path / "out"
        assert main(["simulate", "--config", path, "--out", str(out)]) == 0
        captured = capsys.readouterr().out
        assert "status completed" in captured
        assert "decay audit PASS" in captured
        rows = read_monitor(out / "monitor.csv")
        assert rows[-1, 1] < rows[0, 1]

    def test_rerun_is_byte_identical(self, tmp_path):
        path = write_config(tmp_path, SALT + NEUTRAL_PAIR + SIM_BLOCK)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        main(["simulate", "--config", path, "--out", str(out_a), "--quiet"])
        main(["simulate", "--config", path, "--out", str(out_b), "--quiet"])
        assert (out_a / "monitor.csv").read_bytes() == (out_b / "monitor.csv").read_bytes()

    def test_seed_override_changes_run(self, tmp_path):
        path = write_config(tmp_path, SALT + NEUTRAL_PAIR + SIM_BLOCK)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        main(["simulate", "--config", path, "--out", str(out_a), "--quiet"])
        main(
            ["simulate", "--config", path, "--out", str(out_b), "--seed", "99",
             "--quiet"]
        )
        assert (out_a / "monitor.csv").read_bytes() != (out_b / "monitor.csv").read_bytes()

    def test_energy_threshold_refusal(self, tmp_path, capsys):
        text = SALT + NEUTRAL_PAIR + SIM_BLOCK + "solver.max_initial_energy = 1e-12\n"
        path = write_config(tmp_path, text)
        assert main(["simulate", "--config", path, "--quiet"]) == 1
        assert "initial energy" in capsys.readouterr().err

    def test_snapshot_contains_final_state(self, tmp_path):
        text = SALT + NEUTRAL_PAIR + SIM_BLOCK + "output.snapshot = true\n"
        path = write_config(tmp_path, text)
        out = tmp_path / "out"
        assert main(["simulate", "--config", path, "--out", str(out), "--quiet"]) == 0
        with np.load(out / "final_state.npz") as snap:
            assert snap["n"].shape == (2, 32)
            assert snap["theta"].shape == (32,)
            assert snap["m"].shape == (32,)
            assert float(snap["t"]) == pytest.approx(0.05)

    def test_missing_dt_rejected(self, tmp_path, capsys):
        text = SALT + NEUTRAL_PAIR + "grid.dim = 1\ngrid.M = 32\nsolver.T_end = 0.1\n"
        path = write_config(tmp_path, text)
        assert main(["simulate", "--config", path, "--quiet"]) == 2
        assert "solver.dt" in capsys.readouterr().err
