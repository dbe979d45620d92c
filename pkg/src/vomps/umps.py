"""Uniform MPS / MPO data model, gauge fixing, and mixed transfer machinery.

Conventions used throughout the package
---------------------------------------
* Site tensors carry indices ``(left bond, physical, right bond)``.
* MPO tensors carry indices ``(left bond, phys_out, phys_in, right bond)``.
* For a unit cell of ``L`` sites, bond ``k`` sits to the *left* of site
  ``k`` (cyclic, so bond ``L == 0``); the bond matrix ``c[n]`` lives on the
  bond to the *right* of site ``n``, i.e. bond ``(n+1) % L``, with indices
  ``(row, col)`` read left to right.
* Left environments ``gl[n]`` live on bond ``n`` with indices
  ``(bra bond, [mpo bond,] ket bond)``; right environments ``gr[n]`` live
  on bond ``(n+1) % L`` with the same ordering.  The bra layer is the
  conjugated one.

All objects are immutable value types: arrays are frozen after
construction and every operation returns new values.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    EigResult,
    LinearMap,
    contract,
    leading_eig,
    qr_positive,
    rq_positive,
    svd,
)


class GaugeError(ValueError):
    """A state violates its canonical-form invariants."""


class OrthogonalStatesError(RuntimeError):
    """Mixed transfer eigenvalue vanished: the states are orthogonal."""


class CanonicalizationError(RuntimeError):
    """Gauge-fixing iteration failed to converge."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=complex)
    a.flags.writeable = False
    return a


def _check_finite(arrays, what: str):
    for i, a in enumerate(arrays):
        if not np.all(np.isfinite(a)):
            raise ValueError(f"non-finite entries in {what}[{i}]")


@dataclass(frozen=True)
class UniformMPS:
    """Translation-invariant MPS over an L-site unit cell in mixed gauge.

    ``al[n]`` / ``ar[n]`` are the left/right canonical site tensors,
    ``c[n]`` the bond matrix right of site ``n``.  Invariants (all to a
    gauge tolerance, see :meth:`check`): al isometric from the left, ar
    from the right, ``al[n] c[n] == c[n-1] ar[n]``, and ``|c[n]|_F == 1``.
    """

    al: tuple
    ar: tuple
    c: tuple

    def __init__(self, al, ar, c):
        object.__setattr__(self, "al", tuple(_freeze(a) for a in al))
        object.__setattr__(self, "ar", tuple(_freeze(a) for a in ar))
        object.__setattr__(self, "c", tuple(_freeze(m) for m in c))
        if not (len(self.al) == len(self.ar) == len(self.c)):
            raise ValueError("al, ar, c must have equal unit-cell length")
        _check_finite(self.al, "al")
        _check_finite(self.ar, "ar")
        _check_finite(self.c, "c")
        L = len(self.al)
        for n in range(L):
            if self.al[n].shape != self.ar[n].shape:
                raise ValueError(f"al/ar shape mismatch at site {n}")
            if self.al[n].shape[2] != self.al[(n + 1) % L].shape[0]:
                raise ValueError(f"cyclic bond mismatch at bond {(n + 1) % L}")
            if self.c[n].shape != (self.al[n].shape[2],) * 2:
                raise ValueError(f"c[{n}] shape {self.c[n].shape} does not "
                                 f"match bond dim {self.al[n].shape[2]}")

    @property
    def unit_cell(self) -> int:
        return len(self.al)

    @property
    def bond_dims(self):
        """Bond dimensions, length L+1 cyclic (last equals first)."""
        dims = [a.shape[0] for a in self.al]
        return dims + [dims[0]]

    @property
    def phys_dims(self):
        return [a.shape[1] for a in self.al]

    def ac(self, n: int) -> np.ndarray:
        """Center tensor al[n] @ c[n], indices (left, phys, right)."""
        return contract(self.al[n], self.c[n], [(2, 0)])

    def translated(self, k: int = 1) -> "UniformMPS":
        """Unit cell rolled by `k` sites (site k becomes site 0)."""
        L = self.unit_cell
        k %= L
        return UniformMPS(al=self.al[k:] + self.al[:k],
                          ar=self.ar[k:] + self.ar[:k],
                          c=self.c[k:] + self.c[:k])

    def extended(self, reps: int) -> "UniformMPS":
        """Unit cell repeated `reps` times (the same physical state)."""
        return UniformMPS(al=self.al * reps, ar=self.ar * reps,
                          c=self.c * reps)

    def with_site_operator(self, ops) -> "UniformMPS":
        """Apply a unitary single-site operator per site (None to skip).

        Unitarity keeps all canonical-form invariants intact; this is used
        for sublattice rotations and basis changes.
        """
        ops = list(ops)
        if len(ops) != self.unit_cell:
            raise ValueError("need one operator entry per site")
        al, ar = list(self.al), list(self.ar)
        for n, op in enumerate(ops):
            if op is None:
                continue
            op = np.asarray(op, dtype=complex)
            al[n] = np.einsum("pq,aqb->apb", op, al[n])
            ar[n] = np.einsum("pq,aqb->apb", op, ar[n])
        return UniformMPS(al=al, ar=ar, c=self.c)

    def schmidt_values(self, bond: int) -> np.ndarray:
        """Singular values of the bond matrix on bond `bond` (descending)."""
        L = self.unit_cell
        return svd(self.c[(bond - 1) % L])[1]

    def check(self, tol: float = 1e-10) -> float:
        """Largest canonical-form residual; raises GaugeError above `tol`."""
        L = self.unit_cell
        worst = 0.0
        for n in range(L):
            chi_l, d, chi_r = self.al[n].shape
            ml = self.al[n].reshape(chi_l * d, chi_r)
            worst = max(worst, np.linalg.norm(
                ml.conj().T @ ml - np.eye(chi_r)))
            mr = self.ar[n].reshape(chi_l, d * chi_r)
            worst = max(worst, np.linalg.norm(
                mr @ mr.conj().T - np.eye(chi_l)))
            gauge = contract(self.c[(n - 1) % L], self.ar[n], [(1, 0)])
            worst = max(worst, np.linalg.norm(self.ac(n) - gauge))
            worst = max(worst, abs(np.linalg.norm(self.c[n]) - 1.0))
        if worst > tol:
            raise GaugeError(f"canonical residual {worst:.3e} exceeds {tol:.1e}")
        return worst


@dataclass(frozen=True)
class MPO:
    """Uniform matrix product operator over an L-site unit cell."""

    o: tuple

    def __init__(self, o):
        object.__setattr__(self, "o", tuple(_freeze(t) for t in o))
        _check_finite(self.o, "o")
        L = len(self.o)
        for n in range(L):
            if self.o[n].ndim != 4:
                raise ValueError(f"mpo tensor {n} must have 4 indices")
            if self.o[n].shape[3] != self.o[(n + 1) % L].shape[0]:
                raise ValueError(f"cyclic mpo bond mismatch at bond {(n + 1) % L}")

    @property
    def unit_cell(self) -> int:
        return len(self.o)

    @property
    def bond_dims(self):
        dims = [t.shape[0] for t in self.o]
        return dims + [dims[0]]

    @property
    def phys_dims_out(self):
        return [t.shape[1] for t in self.o]

    @property
    def phys_dims_in(self):
        return [t.shape[2] for t in self.o]

    def extended(self, reps: int) -> "MPO":
        return MPO(o=self.o * reps)

    def translated(self, k: int = 1) -> "MPO":
        L = self.unit_cell
        k %= L
        return MPO(o=self.o[k:] + self.o[:k])


def identity_mpo(phys_dims, bond: int = 1) -> MPO:
    """Identity operator as an MPO (trivial bond by default)."""
    if isinstance(phys_dims, int):
        phys_dims = [phys_dims]
    tensors = []
    for d in phys_dims:
        t = np.zeros((bond, d, d, bond), dtype=complex)
        t[0, :, :, 0] = np.eye(d)
        tensors.append(t)
    return MPO(o=tensors)


def random_uniform_mps(chi: int, d: int, unit_cell: int = 1,
                       seed: int | np.random.Generator = 0,
                       tol: float = 1e-14) -> UniformMPS:
    """Random injective uniform MPS in mixed canonical form."""
    rng = np.random.default_rng(seed)
    a = [rng.standard_normal((chi, d, chi))
         + 1j * rng.standard_normal((chi, d, chi)) for _ in range(unit_cell)]
    return mixed_canonical(a, tol=tol)


# ---------------------------------------------------------------------------
# gauge fixing


def left_orthonormalize(a, tol: float = 1e-14, max_sweeps: int = 10_000,
                        refresh_every: int = 4):
    """Gauge a unit cell of site tensors into left canonical form.

    Repeats positive-QR decompositions of (gauge @ a[n]) around the cell
    until the bond-0 gauge matrix stops moving.  Every few sweeps the
    bond-0 gauge is refreshed by an Arnoldi solve of its fixed-point
    equation, which keeps convergence fast for states with small transfer
    gaps where the plain iteration crawls.  Returns ``(al, gauges)`` with
    ``gauges[k]`` the (unit-RMS normalized) transform on bond ``k``
    relating the input to ``al``.  Warns and raises after `max_sweeps`
    for (near-)non-injective inputs on which the iteration stalls.
    """
    a = [np.asarray(t, dtype=complex) for t in _as_cell(a)]
    L = len(a)
    gauges = [np.eye(t.shape[0], dtype=complex) for t in a]
    al = [None] * L
    tol = max(tol, 1e-15)

    def sweep_once():
        for n in range(L):
            chi_r = a[n].shape[2]
            d = a[n].shape[1]
            m = contract(gauges[n], a[n], [(1, 0)]).reshape(
                gauges[n].shape[0] * d, chi_r)
            q, r = qr_positive(m)
            al[n] = q.reshape(gauges[n].shape[0], d, chi_r)
            # unit-RMS normalization keeps the identity gauge at identity
            gauges[(n + 1) % L] = r / (np.linalg.norm(r)
                                       / math.sqrt(r.shape[0]))

    last_checkpoint = np.inf
    for sweep in range(max_sweeps):
        g0_old = gauges[0]
        sweep_once()
        residual = np.linalg.norm(gauges[0] - g0_old)
        if residual <= tol:
            return al, gauges
        if (sweep + 1) % refresh_every == 0:
            if residual > 0.05 * last_checkpoint:
                # progress is gap-limited: jump the gauge to the leading
                # left fixed point of the mixed transfer between the
                # current isometric estimate and the input
                op = LinearMap(dim=gauges[0].size,
                               matvec=_gauge_matvec(al, a, "left"))
                res = leading_eig(op, gauges[0].reshape(-1),
                                  tol=max(tol / 10, 1e-15), max_iter=600)
                g = res.vector.reshape(gauges[0].shape)
                phase = _phase_reference(g)
                g = g * (np.conj(phase) / abs(phase))
                gauges[0] = g / (np.linalg.norm(g) / math.sqrt(g.shape[0]))
            last_checkpoint = residual
    warnings.warn("left orthonormalization did not converge "
                  f"(residual {residual:.2e}); input may be non-injective")
    raise CanonicalizationError(
        f"no convergence after {max_sweeps} sweeps (tol {tol:.1e})")


def _gauge_matvec(tops, bots, side):
    L = len(tops)
    sites = range(L) if side == "left" else reversed(range(L))
    sites = list(sites)
    apply_site = _apply_left_site if side == "left" else _apply_right_site
    # bond 0 is both the left of site 0 and (cyclically) the right of the
    # last site, so the vector dims agree for either direction
    shape = (tops[0].shape[0], bots[0].shape[0])

    def matvec(vec):
        v = vec.reshape(shape)
        for n in sites:
            v = apply_site(v, tops[n], bots[n])
        return v.reshape(-1)

    return matvec


def _right_gauge_from_left(al, seed=None, tol: float = 1e-14,
                           max_sweeps: int = 10_000, refresh_every: int = 4):
    """Right-canonical tensors and bond gauges for a left-isometric cell.

    Input must already be left canonical (unit transfer eigenvalue); the
    un-normalized RQ iteration then converges to bond gauges ``r[k]`` with
    ``al[n] r[n+1] = r[n] ar[n]`` holding exactly at the fixed point.
    Arnoldi refreshes of the bond-0 gauge keep small-gap inputs from
    stalling, as in the left case.
    """
    L = len(al)
    if seed is None:
        rs = [np.eye(t.shape[0], dtype=complex) / math.sqrt(t.shape[0])
              for t in al]
    else:
        rs = [np.asarray(m, dtype=complex) for m in seed]
    ar = [None] * L
    tol = max(tol, 1e-15)

    def sweep_once():
        for n in reversed(range(L)):
            chi_l, d, _ = al[n].shape
            m = contract(al[n], rs[(n + 1) % L], [(2, 0)]).reshape(
                chi_l, d * rs[(n + 1) % L].shape[1])
            r, q = rq_positive(m)
            ar[n] = q.reshape(chi_l, d, rs[(n + 1) % L].shape[1])
            rs[n] = r

    last_checkpoint = np.inf
    for sweep in range(max_sweeps):
        r0_old = rs[0]
        sweep_once()
        residual = np.linalg.norm(rs[0] - r0_old)
        if residual <= tol:
            return ar, rs
        if (sweep + 1) % refresh_every == 0 and ar[0] is not None:
            if residual > 0.05 * last_checkpoint:
                # rs[0]^T is the leading fixed point of the right mixed
                # transfer between the current ar estimate and the input
                op = LinearMap(dim=rs[0].size,
                               matvec=_gauge_matvec(ar, al, "right"))
                res = leading_eig(op, rs[0].T.reshape(-1),
                                  tol=max(tol / 10, 1e-15), max_iter=600)
                g = res.vector.reshape(rs[0].T.shape).T
                phase = _phase_reference(g)
                g = g * (np.conj(phase) / abs(phase))
                scale = np.linalg.norm(rs[0])
                rs[0] = g * (scale / np.linalg.norm(g))
            last_checkpoint = residual
    raise CanonicalizationError(
        f"right gauge iteration stalled after {max_sweeps} sweeps "
        f"(residual {residual:.2e})")


def mixed_canonical(a, tol: float = 1e-14, max_sweeps: int = 10_000,
                    diagonalize: bool = True, right_seed=None) -> UniformMPS:
    """Bring a unit cell of site tensors into mixed canonical form.

    Left-orthonormalizes, derives the right gauge from the resulting
    isometric family (optionally warm-started through `right_seed`, one
    matrix per bond), and (by default) rotates every bond so the bond
    matrices are diagonal with descending Schmidt values.
    """
    al, _ = left_orthonormalize(a, tol=tol, max_sweeps=max_sweeps)
    ar, rs = _right_gauge_from_left(al, seed=right_seed, tol=tol,
                                    max_sweeps=max_sweeps)
    L = len(al)
    # c[n] lives on bond n+1
    c = [rs[(n + 1) % L] for n in range(L)]
    if diagonalize:
        us, vs = [None] * L, [None] * L
        s_diag = [None] * L
        for n in range(L):
            u, s, vh = svd(c[n])
            us[(n + 1) % L] = u
            vs[(n + 1) % L] = vh.conj().T
            s_diag[n] = np.diag(s).astype(complex)
        al = [np.einsum("xa,apb,by->xpy", us[n].conj().T, al[n],
                        us[(n + 1) % L]) for n in range(L)]
        ar = [np.einsum("xa,apb,by->xpy", vs[n].conj().T, ar[n],
                        vs[(n + 1) % L]) for n in range(L)]
        c = s_diag
    c = [m / np.linalg.norm(m) for m in c]
    return UniformMPS(al=al, ar=ar, c=c)


def _as_cell(a):
    if isinstance(a, np.ndarray) and a.ndim == 3:
        return [a]
    return list(a)


# ---------------------------------------------------------------------------
# mixed transfer matrices and their fixed points


def _apply_left_site(v, top, bot, op=None):
    """One site of the left mixed transfer: v has axes (bra, [mpo,] ket)."""
    topc = np.conj(top)
    if op is None:
        t = np.tensordot(v, topc, axes=((0,), (0,)))        # (ket, p, bra')
        return np.tensordot(t, bot, axes=((0, 1), (0, 1)))  # (bra', ket')
    t = np.tensordot(v, topc, axes=((0,), (0,)))            # (m, ket, p, bra')
    t = np.tensordot(t, op, axes=((0, 2), (0, 1)))          # (ket, bra', q, m')
    t = np.tensordot(t, bot, axes=((0, 2), (0, 1)))         # (bra', m', ket')
    return t


def _apply_right_site(v, top, bot, op=None):
    """One site of the right mixed transfer: v has axes (bra, [mpo,] ket)."""
    topc = np.conj(top)
    if op is None:
        t = np.tensordot(bot, v, axes=((2,), (1,)))          # (ket', q, bra)
        return np.tensordot(topc, t, axes=((1, 2), (1, 2)))  # (bra', ket')
    t = np.tensordot(bot, v, axes=((2,), (2,)))              # (ket', q, bra, m')
    t = np.tensordot(t, op, axes=((1, 3), (2, 3)))           # (ket', bra, m, p)
    t = np.tensordot(topc, t, axes=((1, 2), (3, 1)))         # (bra', ket', m)
    return t.transpose(0, 2, 1)


def _cell_tensors(top: UniformMPS, bottom: UniformMPS, side: str,
                  mpo: MPO | None):
    reps = math.lcm(top.unit_cell, bottom.unit_cell,
                    mpo.unit_cell if mpo is not None else 1)
    top = top.extended(reps // top.unit_cell)
    bottom = bottom.extended(reps // bottom.unit_cell)
    if mpo is not None:
        mpo = mpo.extended(reps // mpo.unit_cell)
    tops = top.al if side == "left" else top.ar
    bots = bottom.al if side == "left" else bottom.ar
    ops = mpo.o if mpo is not None else None
    L = len(tops)
    for n in range(L):
        d_top, d_bot = tops[n].shape[1], bots[n].shape[1]
        if ops is None:
            if d_top != d_bot:
                raise ValueError(f"physical dims differ at site {n}: "
                                 f"{d_top} vs {d_bot}")
        else:
            if ops[n].shape[1] != d_top or ops[n].shape[2] != d_bot:
                raise ValueError(
                    f"mpo physical dims {ops[n].shape[1:3]} do not match "
                    f"states ({d_top}, {d_bot}) at site {n}")
    return top, bottom, mpo, tops, bots, ops


def mixed_transfer_map(top: UniformMPS, bottom: UniformMPS, side: str,
                       mpo: MPO | None = None) -> LinearMap:
    """Unit-cell mixed transfer matrix as a matrix-free linear map.

    The map acts on bond-0 vectors with axes (top bond, [mpo bond,] bottom
    bond), top layer conjugated; ``side`` selects left-to-right action on
    left-canonical tensors or the mirrored right action.  Unit cells are
    extended to their least common multiple first.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    top, bottom, mpo, tops, bots, ops = _cell_tensors(top, bottom, side, mpo)
    L = len(tops)
    shape = ((tops[0].shape[0], ops[0].shape[0], bots[0].shape[0])
             if ops is not None else (tops[0].shape[0], bots[0].shape[0]))
    dim = int(np.prod(shape))
    order = range(L) if side == "left" else reversed(range(L))
    sites = list(order)

    if side == "left":
        def matvec(vec):
            v = vec.reshape(shape)
            for n in sites:
                v = _apply_left_site(v, tops[n], bots[n],
                                     ops[n] if ops is not None else None)
            return v.reshape(dim)
    else:
        def matvec(vec):
            v = vec.reshape(shape)
            for n in sites:
                v = _apply_right_site(v, tops[n], bots[n],
                                      ops[n] if ops is not None else None)
            return v.reshape(dim)

    return LinearMap(dim=dim, matvec=matvec)


@dataclass(frozen=True)
class MixedEnvironment:
    """Left/right fixed points of a mixed transfer matrix.

    ``gl[n]`` sits on bond ``n``, ``gr[n]`` on bond ``(n+1) % L``; ``lam``
    is the per-site eigenvalue (principal L-th root of the unit-cell
    eigenvalue, with the phase of gl[0] fixed so its generalized trace is
    real positive).  Normalization: closing gl[n] against gr[n-1] through
    the two bond matrices gives exactly 1.
    """

    gl: tuple
    gr: tuple
    lam: complex
    lam_cell: complex
    degenerate: bool
    converged: bool
    residual: float
    matvecs: int = 0

    def __init__(self, gl, gr, lam, lam_cell, degenerate, converged,
                 residual, matvecs=0):
        object.__setattr__(self, "gl", tuple(_freeze(g) for g in gl))
        object.__setattr__(self, "gr", tuple(_freeze(g) for g in gr))
        object.__setattr__(self, "lam", complex(lam))
        object.__setattr__(self, "lam_cell", complex(lam_cell))
        object.__setattr__(self, "degenerate", bool(degenerate))
        object.__setattr__(self, "converged", bool(converged))
        object.__setattr__(self, "residual", float(residual))
        object.__setattr__(self, "matvecs", int(matvecs))


def _phase_reference(g: np.ndarray) -> complex:
    """Deterministic phase reference: generalized trace, else max entry."""
    if g.ndim == 2:
        z = np.trace(g) if g.shape[0] == g.shape[1] else \
            sum(g[i, i] for i in range(min(g.shape)))
    else:
        k = min(g.shape[0], g.shape[2])
        z = sum(g[i, :, i].sum() for i in range(k))
    if abs(z) < 1e-12 * np.linalg.norm(g):
        z = g.flat[np.argmax(np.abs(g))]
    return complex(z)


def _bond_pairing(gl, gr, c_top, c_bot) -> complex:
    """Close gl (bond k) against gr (same bond) through the bond matrices."""
    t = np.tensordot(np.conj(c_top), gl, axes=((0,), (0,)))
    if gl.ndim == 3:
        # t: (bra', m, ket)
        t = np.tensordot(t, c_bot, axes=((2,), (0,)))   # (bra', m, ket')
        return complex(np.tensordot(t, gr, axes=((0, 1, 2), (0, 1, 2))))
    t = np.tensordot(t, c_bot, axes=((1,), (0,)))        # (bra', ket')
    return complex(np.tensordot(t, gr, axes=((0, 1), (0, 1))))


def _default_guess(shape) -> np.ndarray:
    """Deterministic, generic eigensolver guess for a given bond shape."""
    rng = np.random.default_rng(0x5EED)
    if len(shape) == 2:
        g = np.eye(shape[0], shape[1], dtype=complex)
    else:
        g = np.zeros(shape, dtype=complex)
        for m in range(shape[1]):
            g[:, m, :] = np.eye(shape[0], shape[2])
    g = g + 1e-3 * (rng.standard_normal(shape)
                    + 1j * rng.standard_normal(shape))
    return g.reshape(-1)


def environments(top: UniformMPS, bottom: UniformMPS, mpo: MPO | None = None,
                 tol: float = 1e-12, guess=None,
                 max_iter: int = 10_000) -> MixedEnvironment:
    """Fixed-point environments of the mixed (optionally MPO-dressed)
    transfer matrix, with the package's normalization conventions applied.

    Only the bond-0 eigenproblems are solved; interior environments follow
    by single-site transfer application divided by the per-site eigenvalue.
    `guess` may carry ``(left_vector, right_vector)`` to warm-start the
    eigensolves.  Raises OrthogonalStatesError when the eigenvalue
    collapses to zero.
    """
    top0, bottom0 = top, bottom
    left_map = mixed_transfer_map(top, bottom, "left", mpo)
    right_map = mixed_transfer_map(top, bottom, "right", mpo)
    top, bottom, mpo, tops_l, bots_l, ops = _cell_tensors(
        top0, bottom0, "left", mpo)
    _, _, _, tops_r, bots_r, _ = _cell_tensors(top0, bottom0, "right", mpo)
    L = top.unit_cell
    d0 = ops[0].shape[0] if ops is not None else None
    shape_l = ((top.bond_dims[0], d0, bottom.bond_dims[0])
               if ops is not None else (top.bond_dims[0], bottom.bond_dims[0]))

    gl_guess = guess[0] if guess is not None else None
    gr_guess = guess[1] if guess is not None else None
    if gl_guess is None:
        gl_guess = _default_guess(shape_l)
    if gr_guess is None:
        gr_guess = _default_guess(shape_l)

    left = leading_eig(left_map, gl_guess, tol=tol, max_iter=max_iter)
    right = leading_eig(right_map, gr_guess, tol=tol, max_iter=max_iter)

    lam_cell = left.value
    lam = complex(lam_cell) ** (1.0 / L)
    if abs(lam) < 1e-12:
        raise OrthogonalStatesError(
            f"mixed transfer eigenvalue collapsed to {lam_cell:.3e}: "
            "the states are (numerically) orthogonal")

    gl = [None] * L
    gr = [None] * L
    gl[0] = left.vector.reshape(shape_l)
    phase = _phase_reference(gl[0])
    gl[0] = gl[0] * (np.conj(phase) / abs(phase))
    for n in range(1, L):
        gl[n] = _apply_left_site(gl[n - 1], tops_l[n - 1], bots_l[n - 1],
                                 ops[n - 1] if ops is not None else None) / lam

    gr[L - 1] = right.vector.reshape(shape_l)
    for n in reversed(range(L - 1)):
        gr[n] = _apply_right_site(gr[n + 1], tops_r[n + 1], bots_r[n + 1],
                                  ops[n + 1] if ops is not None else None) / lam

    # normalization: close gl[n] against gr[n-1] through the bond matrices
    for n in range(L):
        s = _bond_pairing(gl[n], gr[(n - 1) % L],
                          top.c[(n - 1) % L], bottom.c[(n - 1) % L])
        if abs(s) < 1e-14:
            raise OrthogonalStatesError(
                f"environment pairing vanished on bond {n}")
        gr[(n - 1) % L] = gr[(n - 1) % L] / s

    return MixedEnvironment(
        gl=gl, gr=gr, lam=lam, lam_cell=lam_cell,
        degenerate=left.degenerate or right.degenerate,
        converged=left.converged and right.converged,
        residual=max(left.residual, right.residual),
        matvecs=left.iterations + right.iterations)


# ---------------------------------------------------------------------------
# scalar quantities


def fidelity_per_site(a: UniformMPS, b: UniformMPS, tol: float = 1e-13,
                      max_iter: int = 20_000) -> float:
    """Per-site overlap magnitude |lambda| of two normalized states.

    This is the modulus of the leading mixed-transfer eigenvalue; it lies
    in [0, 1] for canonical states and equals 1 exactly when the states
    agree up to gauge.
    """
    op = mixed_transfer_map(a, b, "left")
    res = leading_eig(op, _default_guess_for(op.dim), tol=tol,
                      max_iter=max_iter)
    L = math.lcm(a.unit_cell, b.unit_cell)
    return float(abs(res.value) ** (1.0 / L))


def _default_guess_for(dim: int) -> np.ndarray:
    rng = np.random.default_rng(0x5EED)
    g = np.ones(dim, dtype=complex)
    return g + 1e-3 * (rng.standard_normal(dim) + 1j * rng.standard_normal(dim))


def expect_local(state: UniformMPS, op, site: int = 0) -> complex:
    """Expectation value of a single-site operator at `site`.

    Contracts the closed network conj(ac) (op x bond identities) ac; for a
    normalized state and Hermitian op the imaginary part is numerical
    noise only.
    """
    op = np.asarray(op, dtype=complex)
    ac = state.ac(site % state.unit_cell)
    t = np.einsum("pq,aqb->apb", op, ac)
    return complex(np.tensordot(np.conj(ac), t, axes=((0, 1, 2), (0, 1, 2))))


def mpo_eigenvalue_per_site(state: UniformMPS, mpo: MPO,
                            tol: float = 1e-12,
                            max_iter: int = 20_000) -> complex:
    """Per-site leading eigenvalue of the MPO channel with the state in
    both layers (principal branch of the unit-cell root)."""
    op = mixed_transfer_map(state, state, "left", mpo)
    res = leading_eig(op, _default_guess_for(op.dim), tol=tol,
                      max_iter=max_iter)
    L = math.lcm(state.unit_cell, mpo.unit_cell)
    return complex(res.value) ** (1.0 / L)
