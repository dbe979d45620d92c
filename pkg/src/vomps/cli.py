"""Command-line front end: truncation, Trotter evolution, transfer-matrix
power method, and fidelity comparison, with CSV traces and JSON summaries.

Exit codes: 0 success, 1 usage or I/O failure, 2 non-convergence (outputs
are still written).  Set UMPS_THREADS to cap the BLAS thread pools before
any numerical work starts.
"""

import os

if os.environ.get("UMPS_THREADS"):
    _n = os.environ["UMPS_THREADS"]
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _n)

import argparse
import json
import sys
import warnings

import numpy as np

from . import io as vio
from .baseline import schmidt_truncate
from .models import (
    BETA_C,
    IsingParams,
    PAULI_Z,
    ed_evolve,
    ising_free_energy,
    ising_magnetization,
    ising_mpo,
    onsager_free_energy,
    onsager_magnetization,
    sublattice_rotate_state,
    trotter_evolve,
)
from .truncation import (
    PowerStop,
    VompsConfig,
    epsilon_measure,
    power_method,
    vomps_truncate,
)
from .umps import fidelity_per_site, mixed_canonical

TRACE_VERSION = "vomps-trace/1"


def _write_summary(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _header_lines(args, keys):
    return [f"{k}: {getattr(args, k)}" for k in keys]


def cmd_truncate(args) -> int:
    try:
        state = vio.load_state(args.infile)
    except (OSError, vio.SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    os.makedirs(args.out_dir, exist_ok=True)
    cfg = VompsConfig(target_chi=args.chi, eta=args.eta,
                      max_iter=args.max_iter, init=args.init, seed=args.seed)
    result, report = vomps_truncate(state, cfg)
    baseline, discarded = schmidt_truncate(state, args.chi)

    fid_v = fidelity_per_site(result, state)
    fid_b = fidelity_per_site(baseline, state)
    eps_b = epsilon_measure(baseline, state)

    report.write_csv(os.path.join(args.out_dir, "trace.csv"),
                     header_extra=_header_lines(
                         args, ("chi", "eta", "max_iter", "init")))
    vio.save_state(result, os.path.join(args.out_dir, "vomps_state.json"))
    vio.save_state(baseline, os.path.join(args.out_dir, "baseline_state.json"))
    _write_summary(os.path.join(args.out_dir, "summary.json"), {
        "converged": report.converged,
        "iterations": len(report.iterations),
        "final_epsilon": report.final_epsilon,
        "fidelity_vomps": fid_v,
        "fidelity_baseline": fid_b,
        "baseline_epsilon": eps_b,
        "baseline_discarded_weight": discarded,
        "abs_lambda": abs(report.final_lambda),
    })
    print(f"truncate: chi {max(state.bond_dims)} -> {args.chi}; "
          f"fidelity vomps={fid_v:.12f} baseline={fid_b:.12f}; "
          f"epsilon vomps={report.final_epsilon:.3e} baseline={eps_b:.3e}")
    return 0 if report.converged else 2


def cmd_evolve(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    state, records = trotter_evolve(delta=args.delta, dt=args.dt,
                                    t_max=args.t_max, chi_max=args.chi,
                                    order=args.order, eta=args.eta,
                                    seed=args.seed)
    reference = None
    if args.oracle:
        if not args.oracle.startswith("ed:"):
            print(f"error: unknown oracle {args.oracle!r}", file=sys.stderr)
            return 1
        sites = int(args.oracle.split(":", 1)[1])
        reference = ed_evolve(sites, args.delta, [r.time for r in records])

    csv_path = os.path.join(args.out_dir, "evolution.csv")
    with open(csv_path, "w") as fh:
        fh.write(f"# format: {TRACE_VERSION}\n")
        fh.write(f"# seed: {args.seed}\n")
        for line in _header_lines(args, ("delta", "dt", "t_max", "order",
                                         "chi", "eta")):
            fh.write(f"# {line}\n")
        cols = "t,staggered_offset,epsilon_last,chi_used"
        if reference is not None:
            cols += ",ed_reference"
        fh.write(cols + "\n")
        for k, rec in enumerate(records):
            row = (f"{rec.time:.17g},{rec.offset:.17g},"
                   f"{rec.epsilon:.17g},{rec.chi}")
            if reference is not None:
                row += f",{reference[k]:.17g}"
            fh.write(row + "\n")

    vio.save_state(state, os.path.join(args.out_dir, "final_state.json"))
    payload = {
        "steps": len(records) - 1,
        "final_offset": records[-1].offset,
        "final_chi": max(state.bond_dims),
        "max_epsilon": max(r.epsilon for r in records),
    }
    if reference is not None:
        payload["max_ed_deviation"] = float(np.max(np.abs(
            np.array([r.offset for r in records]) - reference)))
    _write_summary(os.path.join(args.out_dir, "summary.json"), payload)
    print(f"evolve: {len(records) - 1} steps to t={args.t_max}, "
          f"final offset {records[-1].offset:.6f}"
          + (f", max ED deviation {payload['max_ed_deviation']:.2e}"
             if reference is not None else ""))
    return 0 if payload["max_epsilon"] < 100 * args.eta else 2


def _biased_initial_state(chi, coupling, seed):
    rng = np.random.default_rng(seed)
    if coupling == 1:
        a = rng.standard_normal((chi, 2, chi)) \
            + 1j * rng.standard_normal((chi, 2, chi))
        a[:, 0, :] *= 2.0
        return mixed_canonical([a])
    a = rng.standard_normal((chi, 2, chi)) \
        + 1j * rng.standard_normal((chi, 2, chi))
    b = a[:, ::-1, :].copy()
    a = a.copy()
    a[:, 0, :] *= 2.0
    b[:, 1, :] *= 2.0
    return mixed_canonical([a, b])


def cmd_fixedpoint(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    beta = args.beta_rel * BETA_C
    coupling = 1 if args.coupling == "fm" else -1
    params = IsingParams(beta=beta, coupling=coupling)
    mpo = ising_mpo(params)
    cfg = VompsConfig(target_chi=args.chi, eta=args.eta,
                      max_iter=args.max_iter, seed=args.seed)
    stop = PowerStop(tol=args.tol, max_iter=args.power_iter)

    reference = None
    if coupling == -1 and not args.no_reference:
        fm_init = _biased_initial_state(args.chi, 1, args.seed)
        fm_state, _ = power_method(ising_mpo(IsingParams(beta=beta)),
                                   fm_init, cfg, stop, observable=PAULI_Z)
        reference = sublattice_rotate_state(fm_state)

    init = _biased_initial_state(args.chi, coupling, args.seed)
    state, report = power_method(mpo, init, cfg, stop, observable=PAULI_Z,
                                 reference=reference)
    report.write_csv(os.path.join(args.out_dir, "power.csv"),
                     header_extra=_header_lines(
                         args, ("beta_rel", "coupling", "chi", "tol", "eta")))
    vio.save_state(state, os.path.join(args.out_dir, "state.json"))

    f = ising_free_energy(abs(report.final_lambda), beta)
    m = ising_magnetization(state, params)
    f_ref = onsager_free_energy(beta)
    m_ref = onsager_magnetization(beta)
    _write_summary(os.path.join(args.out_dir, "summary.json"), {
        "beta": beta,
        "coupling": args.coupling,
        "converged": report.converged,
        "iterations": len(report.iterations),
        "period": report.period,
        "free_energy": f,
        "free_energy_onsager": f_ref,
        "free_energy_error": abs(f - f_ref),
        "magnetization": m,
        "magnetization_onsager": m_ref,
        "magnetization_error": abs(abs(m) - m_ref),
    })
    print(f"fixedpoint {args.coupling}: period={report.period} "
          f"|f - f_onsager|={abs(f - f_ref):.2e} "
          f"|m - m_onsager|={abs(abs(m) - m_ref):.2e}")
    return 0 if report.converged else 2


def cmd_fidelity(args) -> int:
    try:
        a = vio.load_state(args.state_a)
        b = vio.load_state(args.state_b)
    except (OSError, vio.SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{fidelity_per_site(a, b):.15f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vomps",
        description="Variational truncation of uniform MPS and the "
                    "experiments built on it.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("truncate", help="truncate a stored state")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--chi", type=int, required=True)
    p.add_argument("--eta", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--init", choices=("random", "schmidt"), default="schmidt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_truncate)

    p = sub.add_parser("evolve", help="XXZ quench from the Neel state")
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--t-max", type=float, default=2.0)
    p.add_argument("--order", type=int, choices=(1, 2), default=2)
    p.add_argument("--chi", type=int, default=64)
    p.add_argument("--eta", type=float, default=1e-10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", default=None,
                   help="'ed:L' adds an exact-diagonalization column")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("fixedpoint",
                       help="Ising transfer-matrix power method")
    p.add_argument("--beta-rel", type=float, default=1.01,
                   help="inverse temperature in units of beta_c")
    p.add_argument("--coupling", choices=("fm", "afm"), default="fm")
    p.add_argument("--chi", type=int, default=16)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--eta", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--power-iter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-reference", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_fixedpoint)

    p = sub.add_parser("fidelity", help="per-site fidelity of two states")
    p.add_argument("state_a")
    p.add_argument("state_b")
    p.set_defaults(func=cmd_fidelity)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
