"""Reference constructions that avoid the package's superoperator code."""

import numpy as np


def joint_operators(n):
    """(aX, aY, sX, sY) built directly with numpy in (X, Y, TLS X, TLS Y) order."""
    a = np.diag(np.sqrt(np.arange(1, n)), 1).astype(complex)
    s = np.array([[0, 1], [0, 0]], dtype=complex)
    i_n, i_2 = np.eye(n), np.eye(2)

    def k(*fs):
        out = fs[0]
        for f in fs[1:]:
            out = np.kron(out, f)
        return out

    return k(a, i_n, i_2, i_2), k(i_n, a, i_2, i_2), k(i_n, i_n, s, i_2), k(i_n, i_n, i_2, s)


def hamiltonian(p):
    ax, ay, sx, sy = joint_operators(int(p.n_fock))
    w = 2 * np.pi
    th = np.radians(p.theta_in)
    ein = (np.cos(th), np.sin(th))
    h = np.zeros_like(ax)
    parts = ((ax, sx, p.f_cav_x, p.f_qd_x, p.g_x, p.qd_x_enabled, ein[0]),
             (ay, sy, p.f_cav_y, p.f_qd_y, p.g_y, p.qd_y_enabled, ein[1]))
    for a, s, fc, fq, g, on, e in parts:
        ad, sd = a.conj().T, s.conj().T
        h = h + w * (p.f_laser - fc) * ad @ a + p.eta / 2 * e * (a + ad)
        if on:
            h = h + w * (p.f_laser - fq) * sd @ s + g * (s @ ad + sd @ a)
    return h


def lindblad_rhs(p, rho):
    """d rho / dt from the master equation written out with matrix products."""
    ax, ay, sx, sy = joint_operators(int(p.n_fock))
    h = hamiltonian(p)

    def D(o, r):
        od = o.conj().T
        return 2 * o @ r @ od - od @ o @ r - r @ od @ o

    out = -1j * (h @ rho - rho @ h)
    for a, s, on in ((ax, sx, p.qd_x_enabled), (ay, sy, p.qd_y_enabled)):
        out = out + p.kappa / 2 * D(a, rho)
        if on:
            sz = 0.5 * (s.conj().T @ s - s @ s.conj().T)
            out = out + p.gamma_par / 2 * D(s, rho) + p.gamma_star / 4 * D(sz, rho)
        else:
            out = out + p.kappa / 2 * D(s, rho)
    return out


def dense_liouvillian(p):
    """Column-stacked superoperator assembled column by column from matrix units."""
    d = 4 * int(p.n_fock) ** 2
    L = np.zeros((d * d, d * d), dtype=complex)
    for col in range(d * d):
        i, j = col % d, col // d
        e = np.zeros((d, d), dtype=complex)
        e[i, j] = 1.0
        L[:, col] = lindblad_rhs(p, e).reshape(-1, order="F")
    return L


def coherent_amplitudes(p):
    """Steady coherent amplitudes of an empty, driven, damped cavity."""
    th = np.radians(p.theta_in)
    out = []
    for e, fc in ((np.cos(th), p.f_cav_x), (np.sin(th), p.f_cav_y)):
        delta = 2 * np.pi * (p.f_laser - fc)
        out.append(-1j * (p.eta * e / 2) / (p.kappa / 2 + 1j * delta))
    return out
