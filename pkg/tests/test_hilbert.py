import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from polcqed import hilbert
from polcqed.hilbert import SpaceLayout

n_focks = st.integers(min_value=2, max_value=6)
complex2x2 = arrays(np.complex128, (2, 2), elements=st.complex_numbers(max_magnitude=10, allow_nan=False))


def test_layout_dims():
    lay = SpaceLayout(3)
    assert lay.dims == (3, 3, 2, 2)
    assert lay.dim == 36
    assert SpaceLayout.from_dim(36) == lay


@pytest.mark.parametrize("bad", [1, 0, -2, 2.5])
def test_layout_rejects_small_or_fractional(bad):
    with pytest.raises(ValueError):
        SpaceLayout(bad)


def test_from_dim_rejects_non_square():
    with pytest.raises(ValueError):
        SpaceLayout.from_dim(30)


@given(n_focks)
def test_encode_decode_roundtrip(n):
    lay = SpaceLayout(n)
    for i in range(lay.dim):
        assert lay.encode(*lay.decode(i)) == i
    assert len({lay.decode(i) for i in range(lay.dim)}) == lay.dim


def test_encode_out_of_range():
    with pytest.raises(IndexError):
        SpaceLayout(2).encode(2, 0, 0, 0)


def test_annihilation_lowest_rungs():
    lay = SpaceLayout(2)
    a = hilbert.annihilation(lay, "X")
    assert np.allclose(a @ lay.basis_state(1, 0), lay.basis_state(0, 0))
    assert np.allclose(a @ lay.basis_state(0, 0), 0)
    # mode Y is untouched by a_X
    assert np.allclose(a @ lay.basis_state(0, 1), 0)


def test_sqrt_n_matrix_element():
    lay = SpaceLayout(4)
    a = hilbert.annihilation(lay, "Y")
    v = lay.basis_state(0, 2) @ a @ lay.basis_state(0, 3)
    assert v == pytest.approx(1.7320508075688772, abs=1e-15)


@given(n_focks, st.sampled_from("XY"))
def test_canonical_commutator_below_edge(n, mode):
    lay = SpaceLayout(n)
    a = hilbert.annihilation(lay, mode)
    comm = a @ a.conj().T - a.conj().T @ a
    slot = "XY".index(mode)
    for i in range(lay.dim):
        q = lay.decode(i)
        if q[slot] < n - 1:
            assert comm[i, i] == pytest.approx(1.0)
            assert np.allclose(np.delete(comm[i], i), 0)


@given(n_focks)
def test_creation_at_truncation_edge_is_dropped(n):
    lay = SpaceLayout(n)
    ad = hilbert.annihilation(lay, "X").conj().T
    assert np.allclose(ad @ lay.basis_state(n - 1, 0), 0)


@pytest.mark.parametrize("t", ["X", "Y", "x"])
def test_qd_lowering_algebra(t):
    lay = SpaceLayout(2)
    s = hilbert.qd_lowering(lay, t)
    sd = s.conj().T
    assert np.array_equal(s @ s, np.zeros_like(s))
    assert np.allclose(sd @ s + s @ sd, np.eye(lay.dim))
    ev = np.linalg.eigvalsh(hilbert.qd_sigma_z(lay, t))
    assert np.allclose(np.unique(ev.round(12)), [-0.5, 0.5])


def test_bad_label():
    with pytest.raises(ValueError):
        hilbert.annihilation(SpaceLayout(2), "Z")


def test_identity_assembly():
    lay = SpaceLayout(3)
    ident = hilbert.kron_assemble([np.eye(d) for d in lay.dims], lay)
    assert np.array_equal(ident, np.eye(lay.dim))


@given(complex2x2, complex2x2)
def test_mixed_product(A, B):
    i2 = np.eye(2)
    lhs = hilbert.kron_assemble([A, i2, i2, i2]) @ hilbert.kron_assemble([i2, B, i2, i2])
    assert np.allclose(lhs, hilbert.kron_assemble([A, B, i2, i2]))


@given(complex2x2, complex2x2, complex2x2, complex2x2)
def test_trace_factorizes(A, B, C, D):
    # reference: product of the factor traces computed directly
    expected = np.trace(A) * np.trace(B) * np.trace(C) * np.trace(D)
    got = np.trace(hilbert.kron_assemble([A, B, C, D]))
    assert got == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_kron_dimension_mismatch():
    lay = SpaceLayout(3)
    with pytest.raises(ValueError):
        hilbert.kron_assemble([np.eye(2)] * 4, lay)
    with pytest.raises(ValueError):
        hilbert.kron_assemble([np.eye(2)] * 3)
    with pytest.raises(ValueError):
        hilbert.kron_assemble([np.eye(3), np.eye(3), np.eye(3), np.eye(2)])


@given(n_focks)
def test_operators_act_as_identity_elsewhere(n):
    lay = SpaceLayout(n)
    ops = {0: hilbert.annihilation(lay, "X"), 1: hilbert.annihilation(lay, "Y"),
           2: hilbert.qd_lowering(lay, "X"), 3: hilbert.qd_lowering(lay, "Y")}
    for slot, o in ops.items():
        rest = [k for k in range(4) if k != slot]
        red = hilbert.partial_trace(o.conj().T @ o, lay, rest)
        c = red[0, 0]
        assert np.allclose(red, c * np.eye(red.shape[0]), atol=1e-12)


def test_adjoint_involution_and_readonly():
    a = hilbert.annihilation(SpaceLayout(3), "X")
    assert np.array_equal(a.conj().T.conj().T, a)
    with pytest.raises(ValueError):
        a[0, 0] = 1.0


def test_photon_reduced_trace():
    lay = SpaceLayout(2)
    v = (lay.basis_state(1, 0, 1, 0) + lay.basis_state(0, 1, 0, 0)) / np.sqrt(2)
    rho = np.outer(v, v.conj())
    red = hilbert.photon_reduced(rho, lay)
    assert red.shape == (4, 4)
    assert np.trace(red) == pytest.approx(1.0)
    # TLS X excited is entangled with |1,0>, so the photon state is mixed
    assert np.allclose(np.diag(red).real, [0, 0.5, 0.5, 0])
