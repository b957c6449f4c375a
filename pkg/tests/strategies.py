from hypothesis import strategies as st

from polcqed import SystemParams

rate = st.floats(min_value=0.0, max_value=30.0, allow_nan=False)
offset = st.floats(min_value=-5.0, max_value=5.0, allow_nan=False)


@st.composite
def params(draw, n_fock=st.integers(2, 3), eta=st.floats(0.0, 20.0)):
    return SystemParams(
        kappa=draw(st.floats(5.0, 120.0)), g_x=draw(rate), g_y=draw(rate),
        gamma_par=draw(st.floats(0.1, 10.0)), gamma_star=draw(st.floats(0.0, 10.0)),
        f_qd_x=draw(offset), f_qd_y=draw(offset), eta=draw(eta),
        f_cav_x=draw(offset), f_cav_y=draw(offset), f_laser=draw(offset),
        theta_in=draw(st.floats(-90.0, 90.0)), n_fock=draw(n_fock),
        qd_x_enabled=draw(st.booleans()), qd_y_enabled=draw(st.booleans()),
    )
