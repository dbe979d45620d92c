"""Problem builders and independent oracles.

XXZ spin-chain Trotter machinery, the Neel product state, the 2D
classical Ising row-to-row transfer MPO (ferro and antiferro) with its
Onsager references, synthetic states with prescribed Schmidt spectra, and
a dense exact-evolution oracle for small periodic chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .tensor import svd
from .truncation import VompsConfig, vomps_truncate
from .umps import (
    MPO,
    UniformMPS,
    environments,
    mixed_canonical,
    random_uniform_mps,
)

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
UP_PROJECTOR = 0.5 * (np.eye(2) + PAULI_Z)

BETA_C = math.log(1.0 + math.sqrt(2.0)) / 2.0


@dataclass(frozen=True)
class XXZParams:
    """Anisotropy, Trotter step, and Trotter order of an XXZ evolution."""

    delta: float
    dt: float
    order: int = 2

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.order not in (1, 2):
            raise ValueError("Trotter order must be 1 or 2")


@dataclass(frozen=True)
class IsingParams:
    """Inverse temperature and coupling sign of the square-lattice Ising
    transfer matrix; +1 is ferromagnetic, -1 antiferromagnetic."""

    beta: float
    coupling: int = 1

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.coupling not in (1, -1):
            raise ValueError("coupling must be +1 (ferro) or -1 (antiferro)")

    @property
    def beta_c(self) -> float:
        return BETA_C


# ---------------------------------------------------------------------------
# XXZ quench ingredients


def xxz_two_site_hamiltonian(delta: float) -> np.ndarray:
    """Two-site XXZ term Sx Sx + Sy Sy + delta Sz Sz (spin-1/2), as a 4x4
    matrix over the (s1 s2) product basis."""
    sx, sy, sz = PAULI_X / 2, PAULI_Y / 2, PAULI_Z / 2
    return (np.kron(sx, sx) + np.kron(sy, sy)
            + delta * np.kron(sz, sz)).astype(complex)


def xxz_gate(delta: float, dt: float) -> np.ndarray:
    """Two-site evolution gate exp(-i h dt) as a 4x4 unitary."""
    h = xxz_two_site_hamiltonian(delta)
    evals, evecs = np.linalg.eigh(h)
    return (evecs * np.exp(-1j * evals * dt)) @ evecs.conj().T


def trotter_layer_mpo(gate: np.ndarray, parity: str) -> MPO:
    """One parity layer of two-site gates as a two-site unit cell MPO.

    The gate is split across its bond by SVD (internal dimension at most
    d^2, trimmed at relative 1e-14 so the identity gate collapses to a
    trivial bond).  Parity "even" places gates on bonds (0,1), (2,3), ...;
    "odd" on (1,2), (3,4), ...
    """
    if parity not in ("even", "odd"):
        raise ValueError("parity must be 'even' or 'odd'")
    d = int(round(math.sqrt(gate.shape[0])))
    g = gate.reshape(d, d, d, d)           # (p1, p2, q1, q2)
    m = g.transpose(0, 2, 1, 3).reshape(d * d, d * d)
    u, s, vh = svd(m)
    keep = int(np.sum(s > 1e-14 * s[0]))
    left = (u[:, :keep] * np.sqrt(s[:keep])).reshape(d, d, keep)
    right = (np.sqrt(s[:keep])[:, None] * vh[:keep]).reshape(keep, d, d)
    o_left = left[np.newaxis]            # (1, p1, q1, k)
    o_right = right[..., np.newaxis]     # (k, p2, q2, 1)
    if parity == "even":
        return MPO(o=[o_left, o_right])
    return MPO(o=[o_right, o_left])


def neel_state() -> UniformMPS:
    """|up down up down ...> as a two-site unit cell product state."""
    up = np.zeros((1, 2, 1), dtype=complex)
    up[0, 0, 0] = 1.0
    dn = np.zeros((1, 2, 1), dtype=complex)
    dn[0, 1, 0] = 1.0
    one = np.eye(1, dtype=complex)
    return UniformMPS(al=[up, dn], ar=[up, dn], c=[one, one])


def staggered_offset(state: UniformMPS, site: int = 0) -> float:
    """Offset of the (1+Z)/2 occupation at `site` from its maximal value 1."""
    from .umps import expect_local

    return float(1.0 - np.real(expect_local(state, UP_PROJECTOR, site)))


@dataclass
class EvolutionRecord:
    time: float
    offset: float
    epsilon: float
    chi: int
    abs_lambda: float


def _layer_targets(state: UniformMPS, layer: MPO, chi_max: int):
    L = math.lcm(state.unit_cell, layer.unit_cell)
    ext = layer.extended(L // layer.unit_cell)
    chis = state.extended(L // state.unit_cell).bond_dims[:L]
    dms = ext.bond_dims[:L]
    phys = ext.phys_dims_out
    targets = [min(chi_max, c * d) for c, d in zip(chis, dms)]
    # clamp to representable Schmidt ranks (neighbors cap each bond)
    changed = True
    while changed:
        changed = False
        for k in range(L):
            cap = min(targets[(k - 1) % L] * phys[(k - 1) % L],
                      targets[(k + 1) % L] * phys[k])
            if targets[k] > cap:
                targets[k] = cap
                changed = True
    return targets


def apply_layer(state: UniformMPS, layer: MPO, chi_max: int,
                eta: float = 1e-10, max_iter: int = 200, seed: int = 0):
    """Variationally truncate `layer @ state` to at most `chi_max`,
    initialized with the untouched state."""
    targets = _layer_targets(state, layer, chi_max)
    L = len(targets)
    init = state.extended(L // state.unit_cell)
    cfg = VompsConfig(target_chi=targets, eta=eta, max_iter=max_iter,
                      init=init, seed=seed)
    return vomps_truncate(state, cfg, mpo=layer)


def trotter_evolve(delta: float, dt: float, t_max: float, chi_max: int,
                   order: int = 2, eta: float = 1e-10, seed: int = 0,
                   observer=None):
    """Evolve the Neel state under the XXZ Hamiltonian with Trotter-layer
    MPOs, truncating variationally after each layer.

    A second-order step applies half-step even, full odd, half-step even
    layers; first order applies full even then full odd.  Returns the
    final state and one :class:`EvolutionRecord` per step (including the
    t=0 row).  `observer(state, record)` runs after each step.
    """
    if order == 2:
        layers = [trotter_layer_mpo(xxz_gate(delta, dt / 2), "even"),
                  trotter_layer_mpo(xxz_gate(delta, dt), "odd"),
                  trotter_layer_mpo(xxz_gate(delta, dt / 2), "even")]
    elif order == 1:
        layers = [trotter_layer_mpo(xxz_gate(delta, dt), "even"),
                  trotter_layer_mpo(xxz_gate(delta, dt), "odd")]
    else:
        raise ValueError("order must be 1 or 2")

    state = neel_state()
    records = [EvolutionRecord(time=0.0, offset=staggered_offset(state),
                               epsilon=0.0, chi=1, abs_lambda=1.0)]
    if observer is not None:
        observer(state, records[-1])
    steps = int(round(t_max / dt))
    for k in range(steps):
        eps = 0.0
        lam = 1.0
        for layer in layers:
            state, report = apply_layer(state, layer, chi_max, eta=eta,
                                        seed=seed)
            eps = max(eps, report.final_epsilon)
            lam = abs(report.final_lambda)
        rec = EvolutionRecord(time=(k + 1) * dt,
                              offset=staggered_offset(state),
                              epsilon=eps, chi=max(state.bond_dims),
                              abs_lambda=lam)
        records.append(rec)
        if observer is not None:
            observer(state, rec)
    return state, records


# ---------------------------------------------------------------------------
# 2D classical Ising transfer matrix


def _ising_weight_factors(p: IsingParams):
    """Eigen-split of the bond weight matrix w(s,s') = exp(beta*J*s*s').

    Returns (r, f, sign) with w_ferro = r @ r (symmetric square root) and
    the horizontal half-weights f (f @ f.T = w_ferro).  The antiferro
    weight has a negative eigenvalue; its real splitting reuses the ferro
    factors with the sign matrix absorbed into single legs.
    """
    b = p.beta
    lam_plus = math.exp(b) + math.exp(-b)
    lam_minus = math.exp(b) - math.exp(-b)
    e = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)
    r = e @ np.diag([math.sqrt(lam_plus), math.sqrt(lam_minus)]) @ e.T
    f = e @ np.diag([math.sqrt(lam_plus), math.sqrt(lam_minus)])
    sign = np.diag([1.0, -1.0])
    return r, f, sign


def ising_mpo(p: IsingParams) -> MPO:
    """Row-to-row transfer MPO of the square-lattice Ising model (D = 2).

    Physical legs live in the spin basis.  The site tensor sums over the
    site spin t with half-weights on every leg: vertical bonds carry the
    symmetric square root of the weight matrix, horizontal bonds its
    eigen-split.  For the antiferromagnet the negative weight eigenvalue
    is handled by absorbing a sign matrix into one horizontal leg and a
    spin flip into the incoming vertical leg, keeping all tensors real.
    """
    r, f, sign = _ising_weight_factors(p)
    if p.coupling == 1:
        o = np.einsum("pt,tq,tl,tr->lpqr", r, r, f, f)
    else:
        o = np.einsum("pt,tq,tl,tr->lpqr", r, PAULI_X.real @ r, f, f @ sign)
    return MPO(o=[o.astype(complex)])


def ising_magnetization_mpo(p: IsingParams) -> MPO:
    """Transfer MPO with the site spin inserted (impurity tensor)."""
    r, f, sign = _ising_weight_factors(p)
    z = np.array([1.0, -1.0])
    if p.coupling == 1:
        o = np.einsum("pt,t,tq,tl,tr->lpqr", r, z, r, f, f)
    else:
        o = np.einsum("pt,t,tq,tl,tr->lpqr", r, z, PAULI_X.real @ r, f,
                      f @ sign)
    return MPO(o=[o.astype(complex)])


def ising_magnetization(state: UniformMPS, p: IsingParams, site: int = 0,
                        tol: float = 1e-12) -> float:
    """Local magnetization of the 2D model at the boundary-MPS fixed point.

    Measured as the ratio of the transfer channel with and without the
    spin impurity inserted at one site, which is exact up to the bond
    truncation of the state.
    """
    mpo = ising_mpo(p)
    env = environments(state, state, mpo, tol=tol)
    L = len(env.gl)
    site %= L
    o_imp = ising_magnetization_mpo(p).o[0]
    o_reg = mpo.o[0]
    ac = state.extended(L // state.unit_cell).ac(site)

    def channel(op):
        t = np.tensordot(env.gl[site], ac, axes=((2,), (0,)))
        t = np.tensordot(t, op, axes=((1, 2), (0, 2)))
        t = np.tensordot(t, np.conj(ac), axes=((0, 2), (0, 1)))
        return complex(np.tensordot(
            t, env.gr[site], axes=((0, 1, 2), (2, 1, 0))))

    return float(np.real(channel(o_imp) / channel(o_reg)))


def sublattice_rotate_state(state: UniformMPS) -> UniformMPS:
    """Flip the spin basis on every other site (two-site unit cell)."""
    L = math.lcm(state.unit_cell, 2)
    ext = state.extended(L // state.unit_cell)
    ops = [PAULI_X if n % 2 == 0 else None for n in range(L)]
    return ext.with_site_operator(ops)


def sublattice_rotate_mpo(mpo: MPO) -> MPO:
    """Conjugate the physical legs by X on every other site."""
    L = math.lcm(mpo.unit_cell, 2)
    ext = mpo.extended(L // mpo.unit_cell)
    tensors = []
    for n in range(L):
        if n % 2 == 0:
            tensors.append(np.einsum("sp,lpqr,qt->lstr", PAULI_X, ext.o[n],
                                     PAULI_X))
        else:
            tensors.append(ext.o[n])
    return MPO(o=tensors)


def ising_free_energy(lam_per_site: complex, beta: float) -> float:
    """Free energy per site from a per-site transfer eigenvalue."""
    return -math.log(abs(lam_per_site)) / beta


# ---------------------------------------------------------------------------
# Onsager references


def onsager_free_energy(beta: float, rel_tol: float = 1e-12) -> float:
    """Free energy per site of the square-lattice ferromagnet, from the
    Onsager double integral by periodic-trapezoid quadrature with
    grid-doubling convergence control."""
    if beta <= 0:
        raise ValueError("beta must be positive")

    def quad(n):
        theta = 2.0 * math.pi * np.arange(n) / n
        t1, t2 = np.meshgrid(theta, theta, indexing="ij")
        integrand = np.log(np.cosh(2 * beta) ** 2
                           - math.sinh(2 * beta) * (np.cos(t1) + np.cos(t2)))
        return float(np.mean(integrand)) / 2.0

    prev = quad(64)
    for n in (128, 256, 512, 1024, 2048, 4096):
        cur = quad(n)
        if abs(cur - prev) < rel_tol * max(1.0, abs(cur)):
            prev = cur
            break
        prev = cur
    return -(math.log(2.0) + prev) / beta


def onsager_magnetization(beta: float) -> float:
    """Spontaneous magnetization (1 - sinh(2 beta)^-4)^(1/8), zero above
    the critical temperature."""
    if beta <= BETA_C:
        return 0.0
    return (1.0 - math.sinh(2.0 * beta) ** -4) ** 0.125


# ---------------------------------------------------------------------------
# exact diagonalization oracle


def xxz_hamiltonian_sparse(n_sites: int, delta: float,
                           periodic: bool = True) -> scipy.sparse.csr_matrix:
    """Sparse XXZ Hamiltonian on an n-site chain, bit 0 = spin up."""
    if n_sites > 20:
        raise ValueError("dense oracle limited to small chains")
    dim = 1 << n_sites
    bonds = [(i, (i + 1) % n_sites) for i in
             range(n_sites if periodic else n_sites - 1)]
    states = np.arange(dim, dtype=np.int64)
    z = 1.0 - 2.0 * ((states[:, None] >> np.arange(n_sites)[None, :]) & 1)
    rows, cols, vals = [], [], []
    diag = np.zeros(dim)
    for i, j in bonds:
        diag += 0.25 * delta * z[:, i] * z[:, j]
        differ = ((states >> i) & 1) != ((states >> j) & 1)
        src = states[differ]
        dst = src ^ ((1 << i) | (1 << j))
        rows.append(dst)
        cols.append(src)
        vals.append(np.full(len(src), 0.5))
    rows = np.concatenate(rows + [states])
    cols = np.concatenate(cols + [states])
    vals = np.concatenate(vals + [diag])
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(dim, dim))


def ed_evolve(n_sites: int, delta: float, times, dt_exact: float = 0.01):
    """Staggered-offset trace of the Neel quench on a periodic chain.

    Dense state-vector evolution (matrix-exponential stepping, exact to
    solver precision; `dt_exact` only caps the internal step length).
    Returns offsets of the (1+Z)/2 occupation at site 0 for each time.
    """
    if n_sites % 2 != 0:
        raise ValueError("need an even chain for a Neel initial state")
    h = xxz_hamiltonian_sparse(n_sites, delta)
    neel_bits = sum(1 << i for i in range(1, n_sites, 2))
    psi = np.zeros(h.shape[0], dtype=complex)
    psi[neel_bits] = 1.0
    states = np.arange(h.shape[0], dtype=np.int64)
    up0 = 1.0 - ((states >> 0) & 1)

    times = np.asarray(list(times), dtype=float)
    order = np.argsort(times)
    offsets = np.empty_like(times)
    t_cur = 0.0
    for idx in order:
        span = times[idx] - t_cur
        if span > 0:
            steps = max(1, int(math.ceil(span / max(dt_exact, 1e-6))))
            for _ in range(steps):
                psi = scipy.sparse.linalg.expm_multiply(
                    -1j * h * (span / steps), psi)
            t_cur = times[idx]
        occ = float(np.real(np.vdot(psi, up0 * psi)))
        offsets[idx] = 1.0 - occ
    return offsets


def total_sz(psi: np.ndarray, n_sites: int) -> float:
    states = np.arange(len(psi), dtype=np.int64)
    z = 1.0 - 2.0 * ((states[:, None] >> np.arange(n_sites)[None, :]) & 1)
    return float(np.real(np.vdot(psi, (z.sum(axis=1) / 2.0) * psi)))


# ---------------------------------------------------------------------------
# synthetic states


def state_with_spectrum(spectrum, seed: int = 0) -> UniformMPS:
    """A chi-state uniform MPS (d = 2) whose Schmidt spectrum is exactly
    the given values (normalized, descending).

    Construction: one diagonal and one weighted-cyclic-shift physical
    block; column orthonormality is automatic and the squared spectrum is
    an exact transfer fixed point by a telescoping weight choice.
    """
    s = np.sort(np.asarray(spectrum, dtype=float))[::-1]
    if np.any(s <= 0):
        raise ValueError("spectrum entries must be positive")
    s = s / np.linalg.norm(s)
    chi = len(s)
    if chi == 1:
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((1, 2, 1)) + 1j * rng.standard_normal((1, 2, 1))
        return mixed_canonical([a])
    d2 = s ** 2
    t = 0.5 * d2.min()
    beta = t / np.roll(d2, -1)          # weight of the shift block
    alpha = 1.0 - np.roll(beta, 1)      # of the diagonal block
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * math.pi * rng.random(2 * chi))
    idx = np.arange(chi)
    al = np.zeros((chi, 2, chi), dtype=complex)
    al[idx, 0, idx] = np.sqrt(alpha) * phase[:chi]
    al[idx, 1, (idx + 1) % chi] = np.sqrt(beta) * phase[chi:]
    # the squared spectrum is an exact transfer fixed point, so the right
    # gauge is available in closed form: ar = c^-1 al c with c = diag(s)
    ar = np.zeros_like(al)
    ar[idx, 0, idx] = al[idx, 0, idx]
    ar[idx, 1, (idx + 1) % chi] = al[idx, 1, (idx + 1) % chi] * \
        np.roll(s, -1) / s
    return UniformMPS(al=[al], ar=[ar], c=[np.diag(s).astype(complex)])


def correlated_random_state(chi: int, d: int = 2, decay: float = 0.35,
                            seed: int = 0) -> UniformMPS:
    """Random injective state with a slowly decaying entanglement spectrum.

    Tilts the left-canonical tensor of a generic random state by
    exp(-decay * k) bond weights and re-canonicalizes.  The resulting
    spectrum follows the tilt only approximately, which is all the
    truncation benchmarks need; the transfer gap stays generic, unlike an
    exactly engineered spectrum.
    """
    target = np.exp(-decay * np.arange(chi))
    target /= np.linalg.norm(target)
    state = random_uniform_mps(chi, d, seed=seed)
    for _ in range(6):
        current = state.schmidt_values(0)
        # half-step in log space: the spectrum responds superlinearly to
        # bond tilts, so a full correction overshoots
        correction = np.clip(target / current, 1e-4, 1e4) ** 0.5
        state = mixed_canonical([state.al[0] @ np.diag(correction)])
    return state
