"""Command-line front end.

Every subcommand reads a scenario file and writes a CSV table (``--out`` or
stdout) whose numeric column headers carry their units. Exit status is 0 on
success, 1 when a computation fails and 2 for bad input.
"""

import argparse
import csv
import io
import sys
import warnings

import numpy as np

from . import pairint, protocol
from .dressing import RWAWarning
from .errors import ConvergenceError, DegeneracyError, DomainError
from .molecule import MoleculeSpec, overlap_count_scan, qubit_states
from .scenario import Problem, auto_beta, load_scenario

EXIT_OK, EXIT_COMPUTE, EXIT_INPUT = 0, 1, 2


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    return str(x)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        try:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise DomainError(f"cannot write {path}: {exc.strerror}") from None


def _report(lines):
    # key-value report goes to stderr when the CSV uses stdout
    for k, v in lines:
        print(f"{k} = {_fmt(v)}", file=sys.stderr)


def _problem(args):
    s = load_scenario(args.scenario)
    beta = s.beta if s.beta is not None else auto_beta(s, args.threads)
    return Problem(s, beta=beta)


# ---------------------------------------------------------------- subcommands


def cmd_solve(args):
    prob = _problem(args)
    d = prob.drive
    if prob.scenario.six_level:
        six = prob.six_level
        eig, null = six.eigen_residual, six.null_residual
        energy = six.energy
    else:
        cfg, st = prob.three_level
        eig, null, energy = 0.0, 0.0, st.energy
    c3 = prob.c3()
    _report([("beta", prob.beta), ("branch", prob.scenario.branch),
             ("Omega_pi [2pi MHz]", d.omega_pi), ("Delta_pi [2pi MHz]", d.delta_pi),
             ("Omega_sigma [2pi MHz]", d.omega_sigma), ("Delta_sigma [2pi MHz]", d.delta_sigma),
             ("Omega_m [2pi kHz]", 1e3 * prob.omega_m), ("C3 [2pi kHz um^3]", 1e3 * c3),
             ("eigen_residual [MHz]", eig), ("null_residual", null)])
    _write_csv(args.out, ["beta", "Omega_pi_MHz", "Delta_pi_MHz", "Omega_sigma_MHz",
                          "Delta_sigma_MHz", "Omega_m_kHz", "E_a_MHz", "C3_kHz_um3", "eigen_residual_MHz",
                          "null_residual_au"],
               [[prob.beta, d.omega_pi, d.delta_pi, d.omega_sigma, d.delta_sigma, 1e3 * prob.omega_m, energy,
                 1e3 * c3, eig, null]])


def cmd_scan(args):
    s = load_scenario(args.scenario)
    if args.kind == "beta":
        betas = np.linspace(s.beta_min, s.beta_max, s.beta_points)
        scan = pairint.beta_scan(betas, s, threads=args.threads)
        rows = [[b, c / 1e3, rc] for b, c, rc in zip(scan.beta, scan.C6, scan.r_crit)]
        for c in scan.crossings:
            rows.append([c.beta, c.C6 / 1e3, c.r_crit])
        rows.sort(key=lambda r: r[0])
        _report([("crossing", f"beta={c.beta:.10g} r_crit={c.r_crit:.4g} um") for c in scan.crossings]
                + [("pole", p) for p in scan.poles]
                + [("failed", f"{b}: {m}") for b, m in scan.failures.items()])
        _write_csv(args.out, ["beta", "C6_GHz_um6", "r_crit_um"], rows)
    else:
        prob = _problem(args)
        scan, C6, P6 = pairint.scan_problem(prob)
        _report([("beta", prob.beta), ("basis", scan.basis_size),
                 ("C6 [GHz um^6]", C6 / 1e3), ("P6 [um^6]", P6),
                 ("diabatic points", int(scan.diabatic.sum()))])
        _write_csv(args.out, ["r_um", "V_kHz", "overlap"],
                   [[r, 1e3 * v, o] for r, v, o in zip(scan.r, scan.V, scan.overlap)])


def _read_radial(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DomainError(f"cannot read {path}: {exc.strerror}") from None
    try:
        r = np.array([float(x["r_um"]) for x in rows])
        V = np.array([float(x["V_kHz"]) for x in rows]) / 1e3
        ov = np.array([float(x["overlap"]) for x in rows])
    except (KeyError, ValueError) as exc:
        raise DomainError(f"{path}: expected columns r_um, V_kHz, overlap ({exc})") from None
    return r, V, ov


def cmd_fit(args):
    prob = _problem(args)
    if args.input:
        r, V, ov = _read_radial(args.input)
        _, basis = pairint.dressed_pair(prob)
        C6, P6 = pairint.perturbative_c6(basis)
    else:
        scan, C6, P6 = pairint.scan_problem(prob)
        r, V, ov = scan.r, scan.V, scan.overlap
    fit = pairint.fit_dispersion(r, V, ov, C6, P6)
    _write_csv(args.out, ["C6_GHz_um6", "C9_GHz_um9", "C12_THz_um12", "P6_um6", "P12_um12",
                          "P12_root_um", "slope_outer", "slope_inner", "n_points"],
               [[C6 / 1e3, fit.C9 / 1e3, fit.C12 / 1e6, P6, fit.P12, fit.P12 ** (1 / 12),
                 fit.exponent_outer, fit.exponent_inner, fit.n_points]])


def cmd_jacobian(args):
    prob = _problem(args)
    J3 = pairint.sensitivity_jacobian(prob, "C3")
    J6 = pairint.sensitivity_jacobian(prob, "C6")
    names = ["Omega_pi", "Omega_sigma", "Delta_pi", "Delta_sigma"]
    v = prob.drive.as_vector()
    _write_csv(args.out, ["parameter", "value_MHz", "J3_kHz_um3", "J6_GHz_um6"],
               [[n, x, 1e3 * a, b / 1e3] for n, x, a, b in zip(names, v, J3, J6)])


def _c3_for_protocol(args):
    s = load_scenario(args.scenario)
    if s.c3_am is not None:
        return s, s.c3_am, "scenario"
    return s, _problem(args).c3(), "computed"


def _table(s, layout, C3):
    return protocol.InteractionTable.from_layout(layout, C3, s.c6_aa, s.c9_aa or 0.0, s.c12_aa or 0.0)


def cmd_protocol(args):
    s, C3, src = _c3_for_protocol(args)
    em = protocol.ErrorModel(s.lifetime)
    t = protocol.cz_time(C3, s.r_am)
    meas = protocol.simulate_measurement(1.0, 0.0, C3 / s.r_am**3, error_model=em)
    clean = protocol.simulate_measurement(2**-0.5, 2**-0.5, C3 / s.r_am**3)
    par_even = protocol.simulate_parity([1, 0, 0, 0], [C3 / s.r_am**3] * 2)
    par_odd = protocol.simulate_parity([0, 1, 0, 0], [C3 / s.r_am**3] * 2)
    layout = protocol.ArrayLayout.chain(s.n_molecules, s.spacing, s.r_am, s.echo_classes)
    arr = protocol.simulate_array(layout, _table(s, layout, C3),
                                  protocol.build_echo_schedule(s.echo_classes, t))
    _report([("C3 source", src), ("C3 [2pi kHz um^3]", 1e3 * C3), ("cz_time [us]", t),
             ("2 tau_a / t", em.lifetime_ratio(t)), ("readout_error (decay)", meas.readout_error),
             ("fidelity (error-free)", clean.fidelity),
             ("parity |++> even", par_even.p_even), ("parity |+-> odd", par_odd.p_odd),
             ("echo cross-class residual [rad]", arr.cross_class_residual),
             ("echo same-class residual [rad]", arr.residual_phase)])
    _write_csv(args.out, ["site", "class", "pair_fidelity"],
               [[i, c, f] for i, (c, f) in enumerate(zip(layout.classes, arr.pair_fidelity))])


def cmd_echo(args):
    s, C3, _ = _c3_for_protocol(args)
    t = protocol.cz_time(C3, s.r_am)
    sched = protocol.build_echo_schedule(s.echo_classes, t)
    layout = protocol.ArrayLayout.chain(s.n_molecules, s.spacing, s.r_am, s.echo_classes)
    table = _table(s, layout, C3)
    arr = protocol.simulate_array(layout, table, sched)
    plan = protocol.alternating_measurement_plan(layout, 2, table)
    _report([("classes", sched.classes), ("pulse instants", sched.pulse_count), ("T [us]", t),
             ("cross-class residual [rad]", arr.cross_class_residual),
             ("same-class residual [rad]", arr.residual_phase),
             ("every-other round max |V_aa| [2pi kHz]", 1e3 * max(r.v_max for r in plan))])
    rows = []
    for time, ks in sched.instants:
        for k in sorted(ks) or [-1]:
            rows.append([time, k])
    _write_csv(args.out, ["pulse_time_us", "class"], rows)


def cmd_overlap(args):
    s = load_scenario(args.scenario)
    spec = MoleculeSpec.load(s.molecule, s.molecules_file)
    enc = qubit_states(spec, s.lower, s.upper)
    scan = overlap_count_scan(spec, enc, (0.97, 0.99), polarization=s.aux_polarization)
    _write_csv(args.out, ["omega_aux_MHz", "pairs_ge_0p97", "pairs_ge_0p99"],
               [[w, c[0.97], c[0.99]] for w, c in scan])


COMMANDS = {"solve": cmd_solve, "scan": cmd_scan, "fit": cmd_fit, "jacobian": cmd_jacobian,
            "protocol": cmd_protocol, "echo": cmd_echo, "overlap": cmd_overlap}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario file (key = value)")
    common.add_argument("--out", default=None, help="CSV output path (default stdout)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for beta scans")
    common.add_argument("--seed", type=int, default=0, help="reserved; all computations are deterministic")
    p = argparse.ArgumentParser(prog="rydmol", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "scan":
            sp.add_argument("kind", choices=["beta", "radial"])
        if name == "fit":
            sp.add_argument("--input", default=None, help="radial-scan CSV to fit instead of rescanning")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RWAWarning)
            COMMANDS[args.command](args)
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, DegeneracyError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
