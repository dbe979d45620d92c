"""Independent dense oracles for the test suite.

Everything here materializes full matrices with numpy only — no code
paths are shared with the matrix-free implementations under test beyond
the documented index conventions.
"""

import numpy as np


def random_complex(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def dense_site_matrix(top, bot, op=None, side="left"):
    """One site of the mixed transfer as a dense matrix on flattened
    (top bond, [mpo bond,] bottom bond) vectors."""
    if op is None:
        m = np.einsum("apb,cpd->bdac", np.conj(top), bot)
        dim_out = top.shape[2] * bot.shape[2]
        dim_in = top.shape[0] * bot.shape[0]
    else:
        m = np.einsum("apb,mpqx,cqd->bxdamc", np.conj(top), op, bot)
        dim_out = top.shape[2] * op.shape[3] * bot.shape[2]
        dim_in = top.shape[0] * op.shape[0] * bot.shape[0]
    m = m.reshape(dim_out, dim_in)
    return m if side == "left" else m.T


def dense_cell_matrix(top_state, bot_state, mpo=None, side="left"):
    """Unit-cell mixed transfer matrix (dense), unit cells pre-extended."""
    import math

    L = math.lcm(top_state.unit_cell, bot_state.unit_cell,
                 mpo.unit_cell if mpo is not None else 1)
    top = top_state.extended(L // top_state.unit_cell)
    bot = bot_state.extended(L // bot_state.unit_cell)
    ops = (mpo.extended(L // mpo.unit_cell).o if mpo is not None
           else [None] * L)
    tops = top.al if side == "left" else top.ar
    bots = bot.al if side == "left" else bot.ar
    mats = [dense_site_matrix(tops[n], bots[n], ops[n], side)
            for n in range(L)]
    full = np.eye(mats[0].shape[1], dtype=complex)
    order = mats if side == "left" else list(reversed(mats))
    for m in order:
        full = m @ full
    return full


def dense_leading_eig(mat):
    """Largest-|value| eigenpair of a dense matrix."""
    vals, vecs = np.linalg.eig(mat)
    k = int(np.argmax(np.abs(vals)))
    return vals[k], vecs[:, k]


def dense_fidelity(a, b):
    import math

    lam, _ = dense_leading_eig(dense_cell_matrix(a, b))
    L = math.lcm(a.unit_cell, b.unit_cell)
    return abs(lam) ** (1.0 / L)


def dense_local_expectation(state, op, site=0):
    """<op> at `site` via dense transfer fixed points of the state itself."""
    tm = dense_cell_matrix(state, state)
    lam_l, gl = dense_leading_eig(tm)
    lam_r, gr = dense_leading_eig(tm.T)
    chi_l = state.al[site].shape[0]
    chi_r = state.al[site].shape[2]
    # rotate gl so the state really sits at `site`
    for n in range(site):
        gl = dense_site_matrix(state.al[n], state.al[n]) @ gl
        gl = gl / lam_l ** (1.0 / state.unit_cell)
    for n in range(state.unit_cell - 1, site, -1):
        gr = dense_site_matrix(state.al[n], state.al[n], side="right") @ gr
        gr = gr / lam_l ** (1.0 / state.unit_cell)
    glm = gl.reshape(chi_l, chi_l)
    grm = gr.reshape(chi_r, chi_r)
    a = state.al[site]

    # gl/gr are paired as (bra bond, ket bond)
    def closed(obs):
        return np.einsum("ac,apb,pq,cqd,bd->", glm, np.conj(a), obs, a, grm)

    num = closed(np.asarray(op, dtype=complex))
    den = closed(np.eye(a.shape[1], dtype=complex))
    return num / den


def dense_environment_eigenvalue(top, bot, mpo=None):
    import math

    lam, _ = dense_leading_eig(dense_cell_matrix(top, bot, mpo))
    L = math.lcm(top.unit_cell, bot.unit_cell,
                 mpo.unit_cell if mpo is not None else 1)
    return complex(lam) ** (1.0 / L)


def _dense_phase_reference(g):
    if g.ndim == 2:
        z = sum(g[i, i] for i in range(min(g.shape)))
    else:
        k = min(g.shape[0], g.shape[2])
        z = sum(g[i, :, i].sum() for i in range(k))
    if abs(z) < 1e-12 * np.linalg.norm(g):
        z = g.flat[int(np.argmax(np.abs(g)))]
    return complex(z)


def dense_environments(top, bottom, mpo=None):
    """Fixed-point environments with the package's documented conventions,
    computed from fully materialized transfer matrices."""
    import math

    L = math.lcm(top.unit_cell, bottom.unit_cell,
                 mpo.unit_cell if mpo is not None else 1)
    topx = top.extended(L // top.unit_cell)
    botx = bottom.extended(L // bottom.unit_cell)
    ops = (mpo.extended(L // mpo.unit_cell).o if mpo is not None
           else [None] * L)

    lam_cell, gl_vec = dense_leading_eig(dense_cell_matrix(top, bottom, mpo,
                                                           "left"))
    _, gr_vec = dense_leading_eig(dense_cell_matrix(top, bottom, mpo,
                                                    "right"))
    lam = complex(lam_cell) ** (1.0 / L)

    def shape_at(n):
        if ops[n % L] is None:
            return (topx.bond_dims[n % L], botx.bond_dims[n % L])
        return (topx.bond_dims[n % L], ops[n % L].shape[0],
                botx.bond_dims[n % L])

    gl = [None] * L
    gr = [None] * L
    gl[0] = gl_vec.reshape(shape_at(0))
    z = _dense_phase_reference(gl[0])
    gl[0] = gl[0] * (np.conj(z) / abs(z))
    for n in range(1, L):
        mat = dense_site_matrix(topx.al[n - 1], botx.al[n - 1], ops[n - 1],
                                "left")
        gl[n] = (mat @ gl[n - 1].reshape(-1)).reshape(shape_at(n)) / lam
    gr[L - 1] = gr_vec.reshape(shape_at(0))
    for n in reversed(range(L - 1)):
        mat = dense_site_matrix(topx.ar[n + 1], botx.ar[n + 1], ops[n + 1],
                                "right")
        gr[n] = (mat @ gr[n + 1].reshape(-1)).reshape(shape_at(n + 1)) / lam

    for n in range(L):
        ct = np.conj(topx.c[(n - 1) % L])
        cb = botx.c[(n - 1) % L]
        g, h = gl[n], gr[(n - 1) % L]
        if g.ndim == 3:
            s = np.einsum("amc,ab,cd,bmd->", g, ct, cb, h)
        else:
            s = np.einsum("ac,ab,cd,bd->", g, ct, cb, h)
        gr[(n - 1) % L] = h / s
    return gl, gr, lam


def dense_centers(top, bottom, mpo=None):
    """Unit-normalized updated center tensors from dense environments."""
    import math

    L = math.lcm(top.unit_cell, bottom.unit_cell,
                 mpo.unit_cell if mpo is not None else 1)
    botx = bottom.extended(L // bottom.unit_cell)
    ops = (mpo.extended(L // mpo.unit_cell).o if mpo is not None
           else [None] * L)
    gl, gr, lam = dense_environments(top, bottom, mpo)
    acp, cp = [], []
    for n in range(L):
        mc = botx.ac(n)
        cm = botx.c[n]
        if ops[n] is None:
            raw_ac = np.einsum("ax,xpy,by->apb", gl[n], mc, gr[n]) / lam
            raw_c = np.einsum("ax,xy,by->ab", gl[(n + 1) % L], cm, gr[n])
        else:
            raw_ac = np.einsum("amx,mpqn,xqy,bny->apb", gl[n], ops[n], mc,
                               gr[n]) / lam
            raw_c = np.einsum("amx,xy,bmy->ab", gl[(n + 1) % L], cm, gr[n])
        acp.append(raw_ac / np.linalg.norm(raw_ac))
        cp.append(raw_c / np.linalg.norm(raw_c))
    return acp, cp


def brute_force_best_isometry(acp, cp, tries=12, seed=0, starts=()):
    """Minimize |acp - W cp| over isometries W by direct optimization,
    parameterizing W as the unitary polar factor of an unconstrained
    matrix.  Small sizes only; `starts` adds warm starting points (e.g.
    the candidate solution under test) beside the random restarts."""
    import scipy.optimize

    chi_l, d, chi_r = acp.shape
    rows = chi_l * d
    target = acp.reshape(rows, chi_r)

    def unpack(x):
        m = (x[:rows * chi_r] + 1j * x[rows * chi_r:]).reshape(rows, chi_r)
        u, _, vh = np.linalg.svd(m, full_matrices=False)
        return u @ vh

    def cost(x):
        w = unpack(x)
        return np.linalg.norm(target - w @ cp) ** 2

    rng = np.random.default_rng(seed)
    x0s = [np.concatenate([np.asarray(w).real.ravel(),
                           np.asarray(w).imag.ravel()]) for w in starts]
    x0s += [rng.standard_normal(2 * rows * chi_r) for _ in range(tries)]
    best = np.inf
    for x0 in x0s:
        res = scipy.optimize.minimize(cost, x0, method="BFGS",
                                      options={"maxiter": 5000,
                                               "gtol": 1e-14})
        best = min(best, np.sqrt(max(res.fun, 0.0)))
    return best
