"""Command line front end: check / certify / spectrum / simulate.

Configuration is flat, line-oriented text: one ``section.key = value``
per line, ``#`` starts a comment, lists are comma separated.  Sections
are ``coefficients``, ``equilibrium``, ``grid``, ``solver``,
``certificate``, ``spectrum`` and ``output``; unknown keys are rejected
up front so typos fail before any computation.  All floating-point
output uses 17 significant digits, which round-trips doubles exactly
and makes repeated runs byte-identical.

Exit codes: 0 success, 1 domain failure (assumptions violated, no
certificate found, spectral instability, aborted run), 2 configuration
or usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .admissibility import (
    Certificate,
    CertificateError,
    construct_certificate,
    evaluate_H_conditions,
    sample_equilibria,
    search_certificate,
)
from .model import (
    ParameterError,
    PhysicalCoefficients,
    check_global_assumptions,
    electroneutrality_residual,
    make_equilibrium,
)
from .spectral import Grid
from . import diagnostics, dynamics

__all__ = ["ConfigError", "RunConfig", "load_config", "main"]

#: largest admissible real part in a stability scan before exit code 1
STABILITY_TOL = 1e-10


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (exit code 2)."""


def _fmt(value):
    return format(float(value), ".17g")


def parse_config_text(text):
    """Flat ``key = value`` lines to a string dict, comments stripped."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"line {lineno}: expected 'key = value', got {raw.strip()!r}"
            )
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if not key:
            raise ConfigError(f"line {lineno}: missing key before '='")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = val
    return values


_REQUIRED = object()

_BLOCK_KEYS = {
    "coefficients": {
        "z", "k_B", "nu", "k", "eps", "lambda0", "rho0", "c0", "c",
        "charge_force_factor",
    },
    "equilibrium": {"delta", "kappa", "eps0", "lam", "seed"},
    "grid": {"dim", "M", "L"},
    "solver": {
        "dt", "T_end", "scheme", "s", "output_every", "max_initial_energy",
        "amplitude", "band", "seed",
    },
    "certificate": {
        "chi", "chi_theta", "chi_m", "chi_phi", "eta", "eta_prime",
        "eta_phi_i", "eta_phi", "eta_m", "eta_m_prime", "eta_theta",
        "eta_theta_prime",
    },
    "spectrum": {"points", "xi_sq_max"},
    "output": {"directory", "snapshot"},
}


class _Block:
    """One config section with typed, key-naming accessors."""

    def __init__(self, name, data):
        self.name = name
        self.data = data

    def has(self, key):
        return key in self.data

    def _raw(self, key, default):
        if key in self.data:
            return self.data[key]
        if default is _REQUIRED:
            raise ConfigError(f"missing required key '{self.name}.{key}'")
        return None

    def get_float(self, key, default=_REQUIRED):
        raw = self._raw(key, default)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(
                f"'{self.name}.{key}': expected a number, got {raw!r}"
            ) from None

    def get_int(self, key, default=_REQUIRED):
        raw = self._raw(key, default)
        if raw is None:
            return default
        try:
            return int(raw, 10)
        except ValueError:
            raise ConfigError(
                f"'{self.name}.{key}': expected an integer, got {raw!r}"
            ) from None

    def get_floats(self, key, default=_REQUIRED):
        raw = self._raw(key, default)
        if raw is None:
            return default
        parts = [p.strip() for p in raw.split(",")]
        try:
            return [float(p) for p in parts if p]
        except ValueError:
            raise ConfigError(
                f"'{self.name}.{key}': expected comma-separated numbers, "
                f"got {raw!r}"
            ) from None

    def get_str(self, key, default=_REQUIRED):
        raw = self._raw(key, default)
        return default if raw is None else raw

    def get_bool(self, key, default=_REQUIRED):
        raw = self._raw(key, default)
        if raw is None:
            return default
        lowered = raw.lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ConfigError(
            f"'{self.name}.{key}': expected true/false, got {raw!r}"
        )


class RunConfig:
    """Parsed configuration split into validated sections."""

    def __init__(self, values):
        for key in values:
            section, _, sub = key.partition(".")
            if section not in _BLOCK_KEYS or not sub:
                raise ConfigError(f"unknown key {key!r}")
            if sub not in _BLOCK_KEYS[section]:
                raise ConfigError(f"unknown key {key!r}")
        for section in _BLOCK_KEYS:
            prefix = section + "."
            block = _Block(
                section,
                {
                    key[len(prefix):]: val
                    for key, val in values.items()
                    if key.startswith(prefix)
                },
            )
            setattr(self, section, block)


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return RunConfig(parse_config_text(text))


def coefficients_from_config(cfg):
    b = cfg.coefficients
    try:
        return PhysicalCoefficients(
            z=np.array(b.get_floats("z")),
            k_B=b.get_float("k_B"),
            nu=np.array(b.get_floats("nu")),
            k=b.get_float("k"),
            eps=b.get_float("eps"),
            lambda0=b.get_float("lambda0"),
            rho0=b.get_float("rho0"),
            c0=b.get_float("c0"),
            c=np.array(b.get_floats("c")),
            charge_force_factor=b.get_float("charge_force_factor", 1.0),
        )
    except ParameterError as err:
        raise ConfigError(f"coefficients: {err}") from None


def _sampler_params(cfg, seed_override):
    b = cfg.equilibrium
    eps0 = b.get_float("eps0", 0.95)
    lam_default = 0.5 * (1.0 / (2.0 * eps0) + 1.0)
    kappa = b.get_float("kappa", 0.05)
    lam = b.get_float("lam", lam_default)
    seed = b.get_int("seed", 0) if seed_override is None else seed_override
    return kappa, eps0, lam, seed


def equilibrium_from_config(cfg, coeffs, seed_override=None):
    """Pinned delta when given, otherwise one sampled equilibrium."""
    b = cfg.equilibrium
    if b.has("delta"):
        return make_equilibrium(coeffs, np.array(b.get_floats("delta")))
    kappa, eps0, lam, seed = _sampler_params(cfg, seed_override)
    return sample_equilibria(coeffs, kappa, eps0, lam, count=1, seed=seed)[0]


def grid_from_config(cfg):
    b = cfg.grid
    try:
        return Grid(
            b.get_int("dim"), b.get_int("M"), length=b.get_float("L", 2.0 * np.pi)
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"grid: {err}") from None


def certificate_from_config(cfg):
    b = cfg.certificate
    if not b.data:
        return None
    mapping = {}
    for key in ("chi", "eta", "eta_prime", "eta_phi_i"):
        mapping[key] = b.get_floats(key)
    for key in (
        "chi_theta", "chi_m", "chi_phi", "eta_phi", "eta_m", "eta_m_prime",
        "eta_theta", "eta_theta_prime",
    ):
        mapping[key] = b.get_float(key)
    try:
        return Certificate.from_config(mapping)
    except (ParameterError, ValueError) as err:
        raise ConfigError(f"certificate: {err}") from None


def certificate_to_text(cert):
    lines = []
    for key, value in cert.to_config().items():
        if isinstance(value, (list, tuple, np.ndarray)):
            rendered = ",".join(_fmt(v) for v in value)
        else:
            rendered = _fmt(value)
        lines.append(f"certificate.{key} = {rendered}")
    return "\n".join(lines) + "\n"


def _resolve_out_dir(args, cfg):
    target = args.out or cfg.output.get_str("directory", None)
    if target is None:
        return None
    path = Path(target)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(args, text):
    if not args.quiet:
        print(text)


def _write_margin_csv(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write("name,value,passed\n")
        for name, value, ok in rows:
            fh.write(f"{name},{_fmt(value)},{int(bool(ok))}\n")


def cmd_check(args, cfg):
    coeffs = coefficients_from_config(cfg)
    report = check_global_assumptions(coeffs)
    rows = [
        ("charge_sign_margin", report.charge_margin, report.charge_signs_ok),
        ("positivity_margin", report.positivity_margin, report.positivity_ok),
        ("key_assumption_margin", report.key_margin, report.key_assumption_ok),
    ]
    for i, dev_sq in enumerate(np.atleast_1d(report.deviations)):
        rows.append((f"drag_deviation_sq_{i}", dev_sq, dev_sq < 0.5))
    if cfg.equilibrium.has("delta"):
        delta = np.array(cfg.equilibrium.get_floats("delta"))
        residual = electroneutrality_residual(coeffs.z, delta)
        scale = 1.0 + float(np.sum(np.abs(coeffs.z * delta)))
        rows.append(("electroneutrality_residual", residual, abs(residual) <= 1e-12 * scale))
    ok = all(passed for _, _, passed in rows)
    for name, value, passed in rows:
        _emit(args, f"{name} = {_fmt(value)} [{'PASS' if passed else 'FAIL'}]")
    _emit(args, f"assumptions {'hold' if ok else 'VIOLATED'}")
    out = _resolve_out_dir(args, cfg)
    if out is not None:
        _write_margin_csv(out / "check_report.csv", rows)
        _emit(args, f"wrote {out / 'check_report.csv'}")
    return 0 if ok else 1


def _margin_rows(report):
    rows = [
        ("h1_margin", report.h1_margin, report.h1_margin > 0),
        ("h2_margin", report.h2_margin, report.h2_margin > 0),
        ("h3_margin", report.h3_margin, report.h3_margin > 0),
    ]
    for i, margin in enumerate(np.atleast_1d(report.h4_margins)):
        rows.append((f"h4_margin_{i}", margin, margin > 0))
    return rows


def _obtain_certificate(args, cfg, coeffs, eq):
    """Pinned certificate re-verified, else construct with the recipe and
    fall back to the randomized search."""
    pinned = certificate_from_config(cfg)
    if pinned is not None:
        report = evaluate_H_conditions(coeffs, eq, pinned)
        if not report.admissible:
            raise CertificateError(
                "verify",
                f"pinned certificate fails {report.first_violation()}",
                report=report,
            )
        return pinned, "pinned"
    kappa, eps0, lam, _ = _sampler_params(cfg, args.seed)
    try:
        return construct_certificate(coeffs, eq, kappa, eps0, lam), "constructed"
    except CertificateError:
        pass
    return search_certificate(coeffs, eq, seed=args.seed or 0), "searched"


def cmd_certify(args, cfg):
    coeffs = coefficients_from_config(cfg)
    eq = equilibrium_from_config(cfg, coeffs, seed_override=args.seed)
    try:
        cert, how = _obtain_certificate(args, cfg, coeffs, eq)
    except CertificateError as err:
        _emit(args, f"no admissible certificate: {err}")
        if err.report is not None:
            for name, value, _ in _margin_rows(err.report):
                _emit(args, f"  best {name} = {_fmt(value)}")
        return 1
    report = evaluate_H_conditions(coeffs, eq, cert)
    rows = _margin_rows(report)
    _emit(args, f"certificate {how}; admissible = {report.admissible}")
    _emit(args, "delta = " + ",".join(_fmt(d) for d in eq.delta))
    for name, value, passed in rows:
        _emit(args, f"{name} = {_fmt(value)} [{'PASS' if passed else 'FAIL'}]")
    out = _resolve_out_dir(args, cfg)
    if out is not None:
        (out / "certificate.txt").write_text(certificate_to_text(cert))
        _write_margin_csv(out / "certificate_report.csv", rows)
        _emit(args, f"wrote {out / 'certificate.txt'}")
    return 0 if report.admissible else 1


def cmd_spectrum(args, cfg):
    coeffs = coefficients_from_config(cfg)
    eq = equilibrium_from_config(cfg, coeffs, seed_override=args.seed)
    points = cfg.spectrum.get_int("points", 200)
    xi_sq_max = cfg.spectrum.get_float("xi_sq_max", 1e4)
    if points < 1:
        raise ConfigError("'spectrum.points' must be at least 1")
    if xi_sq_max <= 0:
        raise ConfigError("'spectrum.xi_sq_max' must be positive")
    xi_grid = np.concatenate(
        [[0.0], np.logspace(-2.0, np.log10(xi_sq_max), points - 1)]
        if points > 1
        else [[0.0]]
    )
    scan = dynamics.spectral_stability_scan(coeffs, eq, xi_grid)
    n_ev = coeffs.n_species + 2
    out = _resolve_out_dir(args, cfg)
    if out is not None:
        header = ["xi_sq", "max_real"]
        for j in range(n_ev):
            header += [f"ev{j}_re", f"ev{j}_im"]
        with open(out / "spectrum.csv", "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for xi_sq in scan.xi_sq:
                ev = np.linalg.eigvals(dynamics.linear_symbol(coeffs, eq, xi_sq).A)
                ev = ev[np.argsort(-ev.real)]
                cells = [_fmt(xi_sq), _fmt(ev.real.max())]
                for value in ev:
                    cells += [_fmt(value.real), _fmt(value.imag)]
                fh.write(",".join(cells) + "\n")
        _emit(args, f"wrote {out / 'spectrum.csv'}")
    _emit(
        args,
        f"max real part {_fmt(scan.max_real_part)} at |xi|^2 = "
        f"{_fmt(scan.xi_sq_at_max)} over {scan.xi_sq.size} points",
    )
    stable = scan.max_real_part <= STABILITY_TOL
    _emit(args, f"spectrally {'stable' if stable else 'UNSTABLE'}")
    return 0 if stable else 1


def cmd_simulate(args, cfg):
    coeffs = coefficients_from_config(cfg)
    eq = equilibrium_from_config(cfg, coeffs, seed_override=args.seed)
    grid = grid_from_config(cfg)
    sv = cfg.solver
    dt = sv.get_float("dt")
    t_end = sv.get_float("T_end")
    scheme = sv.get_str("scheme", "imex2")
    s = sv.get_int("s", 2)
    output_every = sv.get_int("output_every", 10)
    max_energy = sv.get_float("max_initial_energy", 1.0)
    amplitude = sv.get_float("amplitude", 1e-3)
    band = sv.get_float("band", None)
    seed = sv.get_int("seed", 0) if args.seed is None else args.seed

    try:
        cert, how = _obtain_certificate(args, cfg, coeffs, eq)
    except CertificateError as err:
        _emit(args, f"no admissible certificate: {err}")
        return 1
    _emit(args, f"certificate {how}")

    if amplitude == 0.0:
        init = dynamics.State.zeros(grid, coeffs.n_species)
    else:
        init = dynamics.random_state(
            grid, coeffs, s=s, amplitude=amplitude, band=band, seed=seed
        )
    out = _resolve_out_dir(args, cfg)
    monitor_path = (out / "monitor.csv") if out is not None else Path("monitor.csv")
    traj = dynamics.simulate(
        grid, init, coeffs, eq, cert, t_end=t_end, dt=dt,
        output_every=output_every, s=s, scheme=scheme,
        max_initial_energy=max_energy, monitor_path=monitor_path,
    )
    _emit(
        args,
        f"status {traj.status}; initial energy {_fmt(traj.initial_energy)}; "
        f"final energy {_fmt(traj.rows[-1, 1])}; "
        f"max symbol real part {_fmt(traj.max_symbol_real)}",
    )
    if traj.detail:
        _emit(args, traj.detail)
    _emit(args, f"wrote {monitor_path}")

    audit_ok = True
    if traj.rows.shape[0] >= 3:
        audit = diagnostics.decay_audit(traj)
        audit_ok = audit.passed
        _emit(
            args,
            f"decay audit {'PASS' if audit.passed else 'FAIL'}; "
            f"max growth {_fmt(audit.max_growth)}; "
            f"dissipation integral {_fmt(audit.dissipation_integral)}",
        )
    if out is not None and cfg.output.get_bool("snapshot", False):
        final = traj.state
        np.savez(
            out / "final_state.npz",
            n=np.stack([grid.to_physical(nh) for nh in final.n]),
            theta=grid.to_physical(final.theta),
            m=grid.to_physical(final.m),
            t=final.t,
        )
        _emit(args, f"wrote {out / 'final_state.npz'}")
    return 0 if traj.status == "completed" and audit_ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pnpf",
        description=(
            "Pseudo-spectral simulation and stability certificates for "
            "non-isothermal electrokinetic flows."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "check": (cmd_check, "verify the global coefficient assumptions"),
        "certify": (cmd_certify, "construct or verify a stability certificate"),
        "spectrum": (cmd_spectrum, "scan the linearized symbol's eigenvalues"),
        "simulate": (cmd_simulate, "run a certified decay simulation"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument(
            "--seed", type=int, default=None,
            help="override every seed in the config",
        )
        p.add_argument("--quiet", action="store_true", help="suppress stdout")
        p.set_defaults(func=fn)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (ParameterError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
