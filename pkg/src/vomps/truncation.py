"""Variational truncation of uniform MPS by per-site fidelity optimization.

The driver :func:`vomps_truncate` approximates a given state (optionally
with an MPO applied to it) by a state of smaller bond dimension.  Each
iteration solves the mixed-transfer fixed-point equations for the current
trial state, forms updated center tensors from the environments, extracts
new isometric gauge tensors through polar decompositions, and measures
convergence as the norm of the residual of the center fixed-point
relation.  The fixed points of this iteration are exactly the
variationally optimal truncations.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import polar_left, polar_right, svd
from .umps import (
    MPO,
    MixedEnvironment,
    OrthogonalStatesError,
    UniformMPS,
    _right_gauge_from_left,
    environments,
    fidelity_per_site,
    mixed_canonical,
    mpo_eigenvalue_per_site,
)


def _default_tol_schedule(eps: float) -> float:
    # keep the inner eigensolves roughly two digits ahead of the outer error
    return max(1e-14, min(1e-5, eps / 100.0))


@dataclass(frozen=True)
class VompsConfig:
    """Knobs of the variational truncation loop.

    `target_chi` is a single bond dimension or one per bond of the working
    unit cell; `eta` is the convergence threshold on the fixed-point
    residual; `eig_tol_schedule` maps the current residual to the inner
    eigensolver tolerance; `init` selects the starting state ("schmidt"
    for a local-SVD seed, "random", or an explicit state).
    """

    target_chi: int | Sequence[int]
    eta: float = 1e-10
    max_iter: int = 500
    eig_tol_schedule: Callable[[float], float] = _default_tol_schedule
    init: str | UniformMPS = "schmidt"
    seed: int = 0
    warm_start: bool = True

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        chis = ([self.target_chi] if isinstance(self.target_chi, int)
                else list(self.target_chi))
        if any(int(c) < 1 for c in chis):
            raise ValueError("target_chi entries must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class CenterPair:
    """Updated center tensors, one per site, each of unit Frobenius norm.

    ``acp[n]`` has indices (left, phys, right) and ``cp[n]`` (row, col) on
    the bond right of site n, matching the state layout.
    """

    acp: tuple
    cp: tuple

    def __init__(self, acp, cp):
        object.__setattr__(self, "acp", tuple(np.asarray(t, dtype=complex)
                                              for t in acp))
        object.__setattr__(self, "cp", tuple(np.asarray(m, dtype=complex)
                                             for m in cp))
        for t in self.acp + self.cp:
            if abs(np.linalg.norm(t) - 1.0) > 1e-8:
                raise ValueError("center tensors must be unit-normalized")


@dataclass
class IterationRecord:
    iteration: int
    epsilon: float
    abs_lambda: float
    wall_ms: float


@dataclass
class TruncationReport:
    """Per-iteration trace of the truncation loop."""

    iterations: list = field(default_factory=list)
    converged: bool = False
    final_lambda: complex = 0.0
    orthogonal: bool = False
    degenerate: bool = False
    singular_completion: bool = False
    seed: int | None = None

    def record(self, iteration, epsilon, abs_lambda, wall_ms):
        self.iterations.append(IterationRecord(iteration, float(epsilon),
                                               float(abs_lambda),
                                               float(wall_ms)))

    @property
    def final_epsilon(self) -> float:
        return self.iterations[-1].epsilon if self.iterations else math.inf

    def write_csv(self, path, header_extra=()):
        with open(path, "w") as fh:
            fh.write("# format: vomps-trace/1\n")
            if self.seed is not None:
                fh.write(f"# seed: {self.seed}\n")
            for line in header_extra:
                fh.write(f"# {line}\n")
            fh.write("iter,epsilon,abs_lambda,wall_ms\n")
            for row in self.iterations:
                fh.write(f"{row.iteration},{row.epsilon:.17g},"
                         f"{row.abs_lambda:.17g},{row.wall_ms:.3f}\n")


# ---------------------------------------------------------------------------
# one iteration's ingredients


def compute_centers(env: MixedEnvironment, source: UniformMPS,
                    mpo: MPO | None = None) -> CenterPair:
    """Updated center tensors from converged environments.

    ``acp[n]`` contracts gl[n] -- center tensor of the source (through the
    MPO tensor when present) -- gr[n], divided by the per-site eigenvalue;
    ``cp[n]`` contracts gl[n+1] -- source bond matrix -- gr[n], with MPO
    bonds passed straight through.  Both are returned unit-normalized.
    """
    L = len(env.gl)
    source = source.extended(L // source.unit_cell)
    ops = mpo.extended(L // mpo.unit_cell).o if mpo is not None else None
    acp, cp = [], []
    for n in range(L):
        mc = source.ac(n)
        if ops is None:
            t = np.tensordot(env.gl[n], mc, axes=((1,), (0,)))
            raw_ac = np.tensordot(t, env.gr[n], axes=((2,), (1,)))
        else:
            t = np.tensordot(env.gl[n], mc, axes=((2,), (0,)))
            t = np.tensordot(t, ops[n], axes=((1, 2), (0, 2)))
            raw_ac = np.tensordot(t, env.gr[n], axes=((1, 3), (2, 1)))
        raw_ac = raw_ac / env.lam

        cm = source.c[n]
        gl_next = env.gl[(n + 1) % L]
        if ops is None:
            t = np.tensordot(gl_next, cm, axes=((1,), (0,)))
            raw_c = np.tensordot(t, env.gr[n], axes=((1,), (1,)))
        else:
            t = np.tensordot(gl_next, cm, axes=((2,), (0,)))
            raw_c = np.tensordot(t, env.gr[n], axes=((1, 2), (1, 2)))

        scale = max(np.linalg.norm(env.gl[n]) * np.linalg.norm(env.gr[n]), 1.0)
        if (np.linalg.norm(raw_ac) < 1e-14 * scale
                or np.linalg.norm(raw_c) < 1e-14 * scale):
            raise OrthogonalStatesError(
                f"zero-norm center tensor at site {n}: states are orthogonal")
        acp.append(raw_ac / np.linalg.norm(raw_ac))
        cp.append(raw_c / np.linalg.norm(raw_c))
    return CenterPair(acp=acp, cp=cp)


def extract_gauges(cp: CenterPair):
    """Isometric gauge tensors from updated centers via polar factors.

    Per site, the left gauge is the unitary part of the left polar
    decompositions of the center site tensor (grouped (left*phys, right))
    and of the bond matrix; the right gauge mirrors this with right polar
    decompositions and the bond matrix on the other side.  Returns
    ``(al, ar, completed)`` where `completed` reports whether a
    numerically singular bond matrix forced the SVD to complete the
    unitary factor.
    """
    L = len(cp.acp)
    al, ar = [], []
    completed = False
    for n in range(L):
        chi_l, d, chi_r = cp.acp[n].shape
        w_ac_l, _ = polar_left(cp.acp[n].reshape(chi_l * d, chi_r))
        w_c_l, _ = polar_left(cp.cp[n])
        al.append((w_ac_l @ w_c_l.conj().T).reshape(chi_l, d, chi_r))

        _, w_ac_r = polar_right(cp.acp[n].reshape(chi_l, d * chi_r))
        c_left = cp.cp[(n - 1) % L]
        _, w_c_r = polar_right(c_left)
        ar.append((w_c_r.conj().T @ w_ac_r).reshape(chi_l, d, chi_r))

        s = svd(cp.cp[n])[1]
        if s[-1] < 1e-14 * s[0]:
            completed = True
    return al, ar, completed


def error_epsilon(cp: CenterPair, al) -> float:
    """Fixed-point residual |acp - al cp| on unit-normalized centers,
    maximized over the unit cell."""
    eps = 0.0
    for n in range(len(cp.acp)):
        recomposed = np.tensordot(al[n], cp.cp[n], axes=((2,), (0,)))
        eps = max(eps, float(np.linalg.norm(cp.acp[n] - recomposed)))
    return eps


# ---------------------------------------------------------------------------
# initialization helpers


def _normalize_targets(target_chi, L: int):
    if isinstance(target_chi, int):
        return [target_chi] * L
    targets = [int(c) for c in target_chi]
    if len(targets) != L:
        raise ValueError(f"need {L} per-bond targets, got {len(targets)}")
    return targets


def fit_state_to_bonds(state: UniformMPS, targets, seed: int = 0,
                       noise: float = 1e-3) -> UniformMPS:
    """Deform a state to prescribed per-bond dimensions.

    Bonds above target are cut by discarding the smallest Schmidt values;
    bonds below target are padded with small random entries (relative
    scale `noise`) and re-canonicalized.
    """
    from .baseline import schmidt_truncate

    L = state.unit_cell
    targets = _normalize_targets(targets, L)
    cut = [min(t, c) for t, c in zip(targets, state.bond_dims[:L])]
    if cut != state.bond_dims[:L]:
        state, _ = schmidt_truncate(state, cut)
    if targets == state.bond_dims[:L]:
        return state
    rng = np.random.default_rng(seed)
    tensors = []
    for n in range(L):
        a = state.al[n]
        chi_l, d, chi_r = targets[n], a.shape[1], targets[(n + 1) % L]
        scale = noise * np.mean(np.abs(a))
        t = scale * (rng.standard_normal((chi_l, d, chi_r))
                     + 1j * rng.standard_normal((chi_l, d, chi_r)))
        t[:a.shape[0], :, :a.shape[2]] += a
        tensors.append(t)
    return mixed_canonical(tensors)


def _initial_state(m: UniformMPS, cfg: VompsConfig, targets, phys_dims,
                   work_cell: int) -> UniformMPS:
    if isinstance(cfg.init, UniformMPS):
        a0 = cfg.init
        if work_cell % a0.unit_cell != 0:
            raise ValueError("init state unit cell incompatible with problem")
        a0 = a0.extended(work_cell // a0.unit_cell)
        if a0.phys_dims != phys_dims:
            raise ValueError("init state physical dims do not match")
        if a0.bond_dims[:work_cell] != targets:
            a0 = fit_state_to_bonds(a0, targets, seed=cfg.seed)
        return a0
    if cfg.init == "schmidt":
        if m.phys_dims == phys_dims:
            return fit_state_to_bonds(m, targets, seed=cfg.seed)
        # MPO changes the physical space: fall back to a random seed
        warnings.warn("schmidt init unavailable for dimension-changing MPO; "
                      "using random init")
    elif cfg.init != "random":
        raise ValueError(f"unknown init strategy {cfg.init!r}")
    rng = np.random.default_rng(cfg.seed)
    tensors = [rng.standard_normal((targets[n], phys_dims[n],
                                    targets[(n + 1) % work_cell]))
               + 1j * rng.standard_normal((targets[n], phys_dims[n],
                                           targets[(n + 1) % work_cell]))
               for n in range(work_cell)]
    return mixed_canonical(tensors)


def _regauge(al, c_by_site) -> UniformMPS:
    """Exact mixed-canonical state from an isometric left family.

    `c_by_site` seeds the right-gauge iteration; c[n] sits on bond n+1,
    while the gauge list is indexed by bond.
    """
    L = len(al)
    seed = [c_by_site[(k - 1) % L] for k in range(L)]
    ar, rs = _right_gauge_from_left(al, seed=seed, tol=1e-14)
    c = [rs[(n + 1) % L] for n in range(L)]
    c = [m / np.linalg.norm(m) for m in c]
    return UniformMPS(al=al, ar=ar, c=c)


# ---------------------------------------------------------------------------
# the main loop


def vomps_truncate(m: UniformMPS, cfg: VompsConfig,
                   mpo: MPO | None = None):
    """Variationally approximate `m` (or `mpo` applied to `m`) at the
    target bond dimensions.

    Returns ``(state, report)``.  The loop alternates environment solves,
    center updates, and gauge extraction until the fixed-point residual
    drops below ``cfg.eta``; environments are warm-started from the
    previous iteration unless disabled.  Non-convergence returns the best
    state found, flagged in the report; a collapsing fidelity flags
    orthogonality instead of looping forever.
    """
    work_cell = math.lcm(m.unit_cell, mpo.unit_cell if mpo else 1)
    m_ext = m.extended(work_cell // m.unit_cell)
    phys_dims = (mpo.extended(work_cell // mpo.unit_cell).phys_dims_out
                 if mpo is not None else m_ext.phys_dims)
    targets = _normalize_targets(cfg.target_chi, work_cell)
    for n in range(work_cell):
        nxt = (n + 1) % work_cell
        if targets[nxt] > targets[n] * phys_dims[n] or \
                targets[n] > targets[nxt] * phys_dims[n]:
            raise ValueError(f"targets {targets} admit no isometric tensors "
                             f"at bond {nxt} (physical dims {phys_dims})")

    a = _initial_state(m_ext, cfg, targets, phys_dims, work_cell)
    report = TruncationReport(seed=cfg.seed)
    guess = None
    eps = 1e-2
    lam_first = None
    env = None

    for it in range(cfg.max_iter):
        t0 = time.perf_counter()
        tol_inner = max(cfg.eig_tol_schedule(eps), 1e-15)
        try:
            env = environments(a, m_ext, mpo, tol=tol_inner, guess=guess)
            cp = compute_centers(env, m_ext, mpo)
        except OrthogonalStatesError:
            report.orthogonal = True
            break
        al, ar, completed = extract_gauges(cp)
        report.singular_completion |= completed
        report.degenerate |= env.degenerate
        eps = error_epsilon(cp, al)
        a = UniformMPS(al=al, ar=ar, c=cp.cp)
        if cfg.warm_start:
            guess = (env.gl[0].reshape(-1), env.gr[-1].reshape(-1))
        wall_ms = 1e3 * (time.perf_counter() - t0)
        report.record(it, eps, abs(env.lam), wall_ms)

        if lam_first is None:
            lam_first = max(abs(env.lam), 1e-300)
        collapse = (abs(env.lam) < 1e-8 if mpo is None
                    else abs(env.lam) < 1e-8 * lam_first)
        if collapse:
            report.orthogonal = True
            break
        if eps < cfg.eta:
            report.converged = True
            break

    if report.orthogonal:
        warnings.warn("fidelity collapsed: input states are (numerically) "
                      "orthogonal at this bond dimension")
        report.final_lambda = env.lam if env is not None else 0.0
        return a, report

    result = _regauge(list(a.al), list(a.c))
    final_env = environments(result, m_ext, mpo,
                             tol=max(min(cfg.eta / 100, 1e-12), 1e-15),
                             guess=guess)
    report.final_lambda = final_env.lam
    return result, report


def epsilon_measure(candidate: UniformMPS, m: UniformMPS,
                    mpo: MPO | None = None, tol: float = 1e-13) -> float:
    """Fixed-point residual of an arbitrary candidate state against a
    target, evaluated by a single environment/center/extraction pass."""
    work_cell = math.lcm(candidate.unit_cell, m.unit_cell,
                         mpo.unit_cell if mpo else 1)
    cand = candidate.extended(work_cell // candidate.unit_cell)
    m_ext = m.extended(work_cell // m.unit_cell)
    env = environments(cand, m_ext, mpo, tol=tol)
    cp = compute_centers(env, m_ext, mpo)
    al, _, _ = extract_gauges(cp)
    return error_epsilon(cp, al)


def grow_bond(state: UniformMPS, mpo: MPO, new_chi,
              eta: float = 1e-10, max_iter: int = 500,
              seed: int = 0) -> UniformMPS:
    """Enlarge a state's bond dimension by one MPO application.

    Seeds the optimization with the old tensors padded by small random
    entries, then variationally truncates ``mpo * state`` to `new_chi`.
    The result is at least as good an approximation of the applied state
    as the padded seed itself.
    """
    L = math.lcm(state.unit_cell, mpo.unit_cell)
    targets = _normalize_targets(new_chi, L)
    old = state.extended(L // state.unit_cell).bond_dims[:L]
    if any(t < o for t, o in zip(targets, old)):
        raise ValueError(f"new_chi {targets} below current bonds {old}")
    seed_state = fit_state_to_bonds(state.extended(L // state.unit_cell),
                                    targets, seed=seed)
    cfg = VompsConfig(target_chi=targets, eta=eta, max_iter=max_iter,
                      init=seed_state, seed=seed)
    grown, report = vomps_truncate(state, cfg, mpo=mpo)
    return grown


# ---------------------------------------------------------------------------
# power method


@dataclass(frozen=True)
class PowerStop:
    """Stopping rule for the MPO power method: converged when the
    translation-fidelity diagnostic falls below `tol`."""

    tol: float = 1e-10
    max_iter: int = 200
    period_max: int = 4


@dataclass
class PowerRecord:
    iteration: int
    translation_infidelity: float
    observable_change: float
    reference_infidelity: float
    reference_observable_diff: float
    reference_log_eig_diff: float
    abs_lambda: float
    epsilon: float
    wall_ms: float


@dataclass
class PowerReport:
    iterations: list = field(default_factory=list)
    converged: bool = False
    period: int = 1
    final_lambda: complex = 0.0
    seed: int | None = None

    def write_csv(self, path, header_extra=()):
        cols = ("iter,translation_infidelity,observable_change,"
                "reference_infidelity,reference_observable_diff,"
                "reference_log_eig_diff,abs_lambda,epsilon,wall_ms")
        with open(path, "w") as fh:
            fh.write("# format: vomps-power/1\n")
            if self.seed is not None:
                fh.write(f"# seed: {self.seed}\n")
            for line in header_extra:
                fh.write(f"# {line}\n")
            fh.write(cols + "\n")
            for r in self.iterations:
                fh.write(",".join([
                    str(r.iteration),
                    f"{r.translation_infidelity:.17g}",
                    f"{r.observable_change:.17g}",
                    f"{r.reference_infidelity:.17g}",
                    f"{r.reference_observable_diff:.17g}",
                    f"{r.reference_log_eig_diff:.17g}",
                    f"{r.abs_lambda:.17g}",
                    f"{r.epsilon:.17g}",
                    f"{r.wall_ms:.3f}"]) + "\n")


def stacked_mpo(mpo: MPO, layers: int) -> MPO:
    """`layers` vertical applications of an MPO fused into one MPO."""
    out = mpo
    for _ in range(layers - 1):
        tensors = []
        for n in range(out.unit_cell):
            a, b = out.o[n], mpo.o[n % mpo.unit_cell]
            t = np.tensordot(a, b, axes=((2,), (1,)))  # (l,p,r, l2,q,r2)
            t = t.transpose(0, 3, 1, 4, 2, 5)
            tensors.append(t.reshape(a.shape[0] * b.shape[0], a.shape[1],
                                     b.shape[2], a.shape[3] * b.shape[3]))
        out = MPO(o=tensors)
    return out


def power_method(mpo: MPO, init: UniformMPS, cfg: VompsConfig,
                 stop: PowerStop = PowerStop(),
                 observable=None, reference: UniformMPS | None = None):
    """Repeated MPO application with variational truncation.

    Tracks, per iteration: one minus the per-site fidelity between the new
    state and the previous one translated by one site; the change of a
    local observable (translation-matched); and, when a reference state is
    supplied, one minus the fidelity with it, the observable difference,
    and the per-site log-eigenvalue difference of the two-row MPO channel.
    Oscillation without single-step convergence is reported through the
    detected period.
    """
    if mpo.phys_dims_out != mpo.phys_dims_in:
        raise ValueError("power method needs a square MPO")
    state = init
    report = PowerReport(seed=cfg.seed)
    history = [state]
    mpo2 = stacked_mpo(mpo, 2)

    def channel_log(s):
        return math.log(abs(mpo_eigenvalue_per_site(s, mpo2))) / 2.0

    ref_log = channel_log(reference) if reference is not None else None
    ref_obs = (expectation(reference, observable)
               if reference is not None and observable is not None else None)

    for it in range(stop.max_iter):
        t0 = time.perf_counter()
        step_cfg = VompsConfig(target_chi=cfg.target_chi, eta=cfg.eta,
                               max_iter=cfg.max_iter,
                               eig_tol_schedule=cfg.eig_tol_schedule,
                               init=state, seed=cfg.seed,
                               warm_start=cfg.warm_start)
        new_state, step = vomps_truncate(state, step_cfg, mpo=mpo)

        diag1 = 1.0 - fidelity_per_site(new_state, state.translated(1))
        diag2 = math.nan
        if observable is not None:
            diag2 = abs(expectation(new_state, observable)
                        - expectation(state.translated(1), observable))
        diag3 = diag4 = diag5 = math.nan
        if reference is not None:
            diag3 = 1.0 - fidelity_per_site(new_state, reference)
            if observable is not None:
                diag4 = abs(expectation(new_state, observable) - ref_obs)
            diag5 = abs(channel_log(new_state) - ref_log)
        wall_ms = 1e3 * (time.perf_counter() - t0)
        report.iterations.append(PowerRecord(
            iteration=it, translation_infidelity=max(diag1, 0.0),
            observable_change=diag2, reference_infidelity=diag3,
            reference_observable_diff=diag4, reference_log_eig_diff=diag5,
            abs_lambda=abs(step.final_lambda), epsilon=step.final_epsilon,
            wall_ms=wall_ms))

        history.append(new_state)
        state = new_state
        if diag1 < stop.tol:
            report.converged = True
            break

    # detect the (smallest) oscillation period among recent iterates
    report.period = 0
    for p in range(1, min(stop.period_max, len(history) - 1) + 1):
        if 1.0 - fidelity_per_site(history[-1], history[-1 - p]) < \
                10 * max(stop.tol, 1e-12):
            report.period = p
            break
    report.final_lambda = complex(mpo_eigenvalue_per_site(state, mpo2)) ** 0.5
    if not report.converged:
        warnings.warn(f"power method not converged after {stop.max_iter} "
                      f"iterations (detected period {report.period})")
    return state, report


def expectation(state: UniformMPS, op, site: int = 0) -> float:
    """Real part of a local expectation value (observable helper)."""
    from .umps import expect_local

    return float(np.real(expect_local(state, op, site)))
