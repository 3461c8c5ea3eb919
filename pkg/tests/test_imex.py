import numpy as np
import pytest

from gkdv import harness, hyperbolic, imex, mesh
from gkdv.flux import make_builtin
from conftest import make_ops

KDV = make_builtin("kdv6")

EULER_TEXT = """
name: euler
s: 1
a_explicit: 0
            1
a_implicit: 0 0
            0 1
c: 0 1
"""


def soliton_setup(cells=64, degree=1, **cfg):
    ops = make_ops(-10.0, 10.0, cells, degree)
    U0 = mesh.interpolate(lambda x: 2.0 / np.cosh(x) ** 2, ops.mesh)
    integ = imex.Integrator(ops, imex.SolverConfig(flux=KDV, eps=1.0, **cfg))
    return ops, integ, imex.initial_state(U0, 0.0, ops)


# --------------------------------------------------------------------------- tableaux


def test_euler_pair_is_valid():
    p = imex.parse_registry(EULER_TEXT)["euler"]
    assert p.dc_max == 1.0
    assert p.equidistributed
    assert imex.satisfied_order(p) == 1


@pytest.mark.parametrize("name,order", [("euler", 1), ("imex22", 2), ("imex33", 3)])
def test_registry_pairs(name, order):
    p = imex.get_pair(name)
    assert p.order == order
    assert imex.satisfied_order(p) >= order
    for a in (p.a_explicit, p.a_implicit):
        np.testing.assert_allclose(a.sum(axis=1), p.c, rtol=0, atol=1e-14)
    assert p.equidistributed and p.dc_max == 1.0 / p.s


def test_imex22_implicit_part_damps_stiff_modes():
    # stiffly accurate and L-stable: stiff modes are annihilated in one step
    A = imex.get_pair("imex22").a_implicit
    z = -1e12
    R = np.linalg.solve(np.eye(3) - z * A, np.ones(3))[-1]
    assert abs(R) < 1e-6


def replace_line(text, old, new):
    assert old in text
    return text.replace(old, new)


@pytest.mark.parametrize("old,new,message", [
    ("c: 0 1", "c: 1 0", "c_1 = 0"),
    ("a_implicit: 0 0\n            0 1", "a_implicit: 0 0\n            0 0.5", "row 2 sums"),
    ("a_implicit: 0 0\n            0 1", "a_implicit: 0.5 0\n            0 1", "first implicit stage"),
    ("a_explicit: 0\n            1", "a_explicit: 0\n            1\n            2", "shape|count"),
    ("s: 1", "s: 0", "stage count|shape|count"),
])
def test_invalid_tableaux_rejected(old, new, message):
    with pytest.raises(imex.TableauError, match=message):
        imex.parse_registry(replace_line(EULER_TEXT, old, new))


def test_decreasing_abscissae_rejected():
    p = imex.get_pair("imex22")
    bad = imex.ButcherPair("bad", 2, p.a_explicit, p.a_implicit, np.array([0.0, 1.2, 1.0]))
    with pytest.raises(imex.TableauError, match="nondecreasing"):
        imex.validate_tableau(bad)


def test_implicit_diagonal_must_not_vanish():
    ae = np.array([[0, 0], [0.5, 0], [0, 1]])
    ai = np.array([[0, 0, 0], [0.5, 0, 0], [0, 1, 0]])
    with pytest.raises(imex.TableauError, match="diagonal"):
        imex.validate_tableau(imex.ButcherPair("bad", 2, ae, ai, np.array([0, 0.5, 1])))


def test_registry_parse_errors():
    with pytest.raises(imex.TableauError, match="missing"):
        imex.parse_registry("name: x\ns: 1\n")
    with pytest.raises(imex.TableauError, match="bad coefficient"):
        imex.parse_registry(replace_line(EULER_TEXT, "c: 0 1", "c: 0 one"))
    with pytest.raises(imex.TableauError, match="duplicate scheme"):
        imex.parse_registry(EULER_TEXT + "\n" + EULER_TEXT)
    with pytest.raises(KeyError):
        imex.get_pair("rk4")


def test_registry_comments_and_rationals():
    text = "# header\n" + replace_line(EULER_TEXT, "s: 1", "s: 1  # one stage\n# inner comment")
    assert "euler" in imex.parse_registry(text)


def test_snap_tau():
    assert imex.snap_tau(1.0, 32) == 1.0
    t = imex.snap_tau(0.3, 32)
    assert 0.3 / 2 ** (1 / 32) < t <= 0.3
    assert imex.snap_tau(0.3, 0) == 0.3
    assert imex.snap_tau(t, 32) == t


# --------------------------------------------------------------------------- steps


def test_constant_state_euler_capped_by_tau_max():
    ops = make_ops(0.0, 2.0, 16, 1)
    integ = imex.Integrator(ops, imex.SolverConfig(flux=make_builtin("linear", a=0.0), eps=1.0, tau_max=0.01,
                                                   tau_levels=0))
    st = integ.euler_step(imex.initial_state(np.full(16, 0.3), 0.0, ops), 0.5)
    np.testing.assert_allclose(st.U, 0.3, rtol=1e-14)
    assert st.t == 0.01


def test_unbounded_step_without_tau_max_is_rejected():
    ops = make_ops(0.0, 2.0, 16, 1)
    integ = imex.Integrator(ops, imex.SolverConfig(flux=KDV, eps=1.0))
    with pytest.raises(imex.ConfigurationError):
        integ.euler_step(imex.initial_state(np.zeros(16), 0.0, ops), 0.5)


@pytest.mark.parametrize("cfl", [0.0, -0.1, 1.5])
def test_cfl_range(cfl):
    ops, integ, st = soliton_setup()
    with pytest.raises(imex.ConfigurationError):
        integ.step(st, "imex22", cfl)


def test_solver_config_validation():
    with pytest.raises(imex.ConfigurationError):
        imex.SolverConfig(flux=KDV, eps=1.0, prediction="exact")
    with pytest.raises(imex.ConfigurationError):
        imex.SolverConfig(flux=KDV, eps=1.0, tau_max=-1.0)


@pytest.mark.parametrize("prediction", ["low", "fct"])
def test_lumped_euler_norm_and_mass(prediction):
    ops, integ, st = soliton_setup(128, 1, mass_mode="lumped", prediction=prediction)
    for _ in range(100):
        st = integ.euler_step(st, 1.0)
    diag = st.diagnostics_array()
    m = ops.lumped_mass
    U0 = mesh.interpolate(lambda x: 2.0 / np.cosh(x) ** 2, ops.mesh)
    per_step, total = harness.mass_drift(diag, ops, U0)
    assert max(per_step, total) <= 1e-12
    assert np.all(np.diff(diag[:, 0]) > 0)
    if prediction == "low":
        # the limited correction carries no l2 guarantee, the low-order path does
        assert harness.norm_increase(diag) <= 1e-12
        assert np.sqrt(m @ st.U**2) <= diag[0, 2]


def test_euler_rejects_step_above_tau_star():
    ops, integ, st = soliton_setup()
    d = hyperbolic.compute_graph_viscosity(st.U, KDV, ops)
    with pytest.raises(hyperbolic.CFLViolation):
        integ.euler_step(st, 1.0, tau=1.5 * hyperbolic.tau_star(d, ops))


@pytest.mark.parametrize("prediction", ["low", "fct", "high"])
@pytest.mark.parametrize("mass_mode", ["consistent", "lumped"])
def test_one_stage_pair_is_euler_imex(prediction, mass_mode):
    euler = imex.parse_registry(EULER_TEXT)["euler"]
    ops, integ, st = soliton_setup(64, 2, prediction=prediction, mass_mode=mass_mode)
    a = b = st
    for _ in range(20):
        a = integ.euler_step(a, 0.5)
        b = integ.imex_step(b, euler, 0.5)
    np.testing.assert_allclose(b.U, a.U, rtol=0, atol=1e-12)
    assert a.t == b.t


@pytest.mark.parametrize("name", ["imex22", "imex33"])
def test_constant_state_any_pair(name):
    ops = make_ops(-1.0, 1.0, 16, 2)
    integ = imex.Integrator(ops, imex.SolverConfig(flux=KDV, eps=1.0))
    st = imex.initial_state(np.full(32, 0.8), 0.0, ops)
    for _ in range(5):
        st = integ.step(st, name, 0.5)
    np.testing.assert_allclose(st.U, 0.8, rtol=1e-13)


@pytest.mark.parametrize("name", ["imex22", "imex33"])
def test_mass_conservation_multistage(name):
    ops, integ, st = soliton_setup(128, 2)
    U0 = st.U.copy()
    for _ in range(50):
        st = integ.step(st, name, 0.25)
    per_step, total = harness.mass_drift(st.diagnostics_array(), ops, U0)
    assert max(per_step, total) <= 1e-12


@pytest.mark.parametrize("name", ["imex22", "imex33"])
def test_efficient_mode_equivalence(name):
    ops, std, st = soliton_setup(64, 2)
    eff = imex.Integrator(ops, imex.SolverConfig(flux=KDV, eps=1.0, efficient=True))
    a = b = st
    for _ in range(10):
        a = std.step(a, name, 0.25)
        b = eff.step(b, name, 0.25, tau=a.diagnostics[-1][3])
    np.testing.assert_allclose(b.U, a.U, rtol=0, atol=1e-12)


def test_stage_cfl_violation_restarts_with_smaller_step():
    ops, integ, st = soliton_setup(64, 1)
    allowed = integ.admissible_tau(st.U, 1.0, imex.get_pair("imex33").dc_max)
    out = integ.imex_step(st, imex.get_pair("imex33"), 1.0, tau=8 * allowed)
    assert out.diagnostics[-1][3] <= allowed * (1 + 1e-12)


def test_stage_failure_reports_stage(monkeypatch):
    ops, integ, st = soliton_setup()
    calls = []

    def broken(*args, **kwargs):
        calls.append(1)
        if len(calls) == 2:
            raise ArithmeticError("boom")
        return original(*args, **kwargs)

    original = imex.dispersive.stage_dispersive_solve
    monkeypatch.setattr(imex.dispersive, "stage_dispersive_solve", broken)
    with pytest.raises(imex.StageSolveError) as err:
        integ.step(st, "imex33", 0.25)
    assert err.value.stage == 3


def test_non_finite_state_keeps_last_good(monkeypatch):
    ops, integ, st = soliton_setup()
    st1 = integ.step(st, "imex22", 0.25)
    monkeypatch.setattr(integ, "_imex_stages", lambda U, pair, tau: np.full_like(U, np.nan))
    with pytest.raises(imex.NonFiniteStateError) as err:
        imex.run_to_time(st1, "imex22", 1.0, 0.25, integ)
    np.testing.assert_array_equal(err.value.last_good.U, st1.U)


# --------------------------------------------------------------------------- runs


def test_run_to_time_zero_length():
    ops, integ, st = soliton_setup()
    out, snaps = imex.run_to_time(st, "imex33", 0.0, 0.25, integ, snapshot_times=[0.0])
    assert out is st and out.step_index == 0
    assert len(snaps) == 1


def test_run_to_time_rejects_backwards():
    ops, integ, st = soliton_setup()
    with pytest.raises(ValueError):
        imex.run_to_time(st, "imex33", -1.0, 0.25, integ)


@pytest.mark.parametrize("scheme", ["euler_imex", "imex22", "imex33"])
def test_run_lands_on_targets(scheme):
    ops, integ, st = soliton_setup(64, 1, tau_levels=0)
    out, snaps = imex.run_to_time(st, scheme, 0.05, 0.5, integ, snapshot_times=[0.01, 0.0333, 0.05, 0.2])
    assert out.t == 0.05
    assert [t for t, _ in snaps] == [0.01, 0.0333, 0.05]
    t = out.diagnostics_array()[:, 0]
    assert np.all(np.diff(t) > 0)
    assert {0.01, 0.0333, 0.05} <= set(t.tolist())


@pytest.mark.parametrize("scheme", ["euler_imex", "imex33"])
def test_restart_equivalence(scheme):
    ops, integ, st = soliton_setup(64, 2)
    full, snaps = imex.run_to_time(st, scheme, 0.04, 0.25, integ, snapshot_times=[0.02])
    t_mid, U_mid = snaps[0]
    _, integ2, _ = soliton_setup(64, 2)
    rest, _ = imex.run_to_time(imex.initial_state(U_mid, t_mid, ops), scheme, 0.04, 0.25, integ2)
    np.testing.assert_allclose(rest.U, full.U, rtol=0, atol=1e-13)
    assert rest.t == full.t


def test_run_step_budget():
    ops, integ, st = soliton_setup()
    with pytest.raises(RuntimeError, match="budget"):
        imex.run_to_time(st, "imex22", 1.0, 0.25, integ, max_steps=3)


@pytest.mark.slow
@pytest.mark.parametrize("scheme,prediction,k,order", [
    ("euler_imex", "low", 12, 1), ("imex22", "high", 8, 2), ("imex33", "high", 9, 3)])
def test_temporal_order(scheme, prediction, k, order):
    """Self-convergence in tau on a fixed mesh whose discrete spectrum the steps resolve."""
    T = 0.1
    ops = make_ops(-10.0, 10.0, 32, 1)
    U0 = mesh.interpolate(lambda x: 2.0 / np.cosh(x) ** 2, ops.mesh)
    finals = []
    for N in (2**k, 2 ** (k + 1), 2 ** (k + 2)):
        integ = imex.Integrator(ops, imex.SolverConfig(flux=KDV, eps=1.0, prediction=prediction, tau_levels=0))
        st = imex.initial_state(U0, 0.0, ops)
        for _ in range(N):
            st = integ.step(st, scheme, 1.0, tau=T / N)
        finals.append(st.U)
    ratio = np.abs(finals[0] - finals[1]).max() / np.abs(finals[1] - finals[2]).max()
    assert 0.85 * 2**order <= ratio <= 1.15 * 2**order
