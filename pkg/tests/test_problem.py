"""Control/uncertainty sets, the sublinear generator, and assumption checks."""

import numpy as np
import pytest

from volctrl.problem import (
    ControlSet,
    ProblemSpec,
    SampleBox,
    UncertaintySet,
    check_assumptions,
    eval_drift,
    eval_f,
    eval_sigma,
    g_of,
    spec_from_strings,
)

GAMMA_1D = UncertaintySet(dimension=1, sigma_lo2=0.25, sigma_hi2=1.0)


def make_benchmark(lam=1.0, points=33):
    # scalar problem with drift -x + u, diffusion x + u, cost -lam*y + x - u
    return spec_from_strings(
        n=1, d=1, m=1,
        b=["-x1 + u1"],
        sigma=[["x1 + u1"]],
        controls=ControlSet(lower=[0.0], upper=[1.0], points_per_axis=points),
        gamma=UncertaintySet(dimension=1, sigma_lo2=0.5, sigma_hi2=1.0),
        f=f"-{lam} * y + x1 - u1",
    )


def test_g_of_interval_closed_form():
    assert g_of(GAMMA_1D, 2.0) == 1.0
    assert g_of(GAMMA_1D, -2.0) == -0.25
    assert g_of(GAMMA_1D, 0.0) == 0.0
    assert g_of(GAMMA_1D, np.array([[3.0]])) == 1.5


def test_g_of_candidate_list():
    gamma = UncertaintySet(
        dimension=2, sigma_lo2=0.25, sigma_hi2=1.0,
        candidates=[0.25 * np.eye(2), np.eye(2), np.diag([1.0, 0.25])],
    )
    assert g_of(gamma, np.eye(2)) == 1.0
    assert g_of(gamma, -np.eye(2)) == -0.25
    a = np.array([[1.0, 0.0], [0.0, -1.0]])
    # best candidate weights the positive eigendirection: diag(1, 0.25)
    assert g_of(gamma, a) == 0.5 * (1.0 - 0.25)


def test_g_of_rejects_bad_input():
    with pytest.raises(ValueError):
        g_of(GAMMA_1D, np.eye(2))
    gamma2 = UncertaintySet(
        dimension=2, sigma_lo2=0.25, sigma_hi2=1.0, candidates=[np.eye(2)]
    )
    with pytest.raises(ValueError):
        g_of(gamma2, np.array([[0.0, 1.0], [0.0, 0.0]]))  # not symmetric
    with pytest.raises(ValueError):
        g_of(UncertaintySet(dimension=2, sigma_lo2=0.25, sigma_hi2=1.0), np.eye(2))


def _sym(rng, d):
    a = rng.normal(size=(d, d))
    return a + a.T


@pytest.mark.parametrize("dim", [1, 2])
def test_g_properties(dim):
    if dim == 1:
        gamma = GAMMA_1D
    else:
        gamma = UncertaintySet(
            dimension=2, sigma_lo2=0.25, sigma_hi2=1.0,
            candidates=[0.25 * np.eye(2), np.eye(2), np.diag([1.0, 0.25]),
                        np.diag([0.25, 1.0]),
                        np.array([[0.625, 0.375], [0.375, 0.625]])],
        )
    rng = np.random.default_rng(7)
    tol = 1e-12
    for _ in range(200):
        a = _sym(rng, dim)
        b = _sym(rng, dim)
        ga, gb = g_of(gamma, a), g_of(gamma, b)
        # subadditivity and positive homogeneity
        assert g_of(gamma, a + b) <= ga + gb + tol
        lam = float(rng.uniform(0.0, 3.0))
        assert abs(g_of(gamma, lam * a) - lam * ga) <= tol * max(1.0, abs(ga))
        # monotone in the semidefinite order, with the two-sided trace sandwich
        pos = a @ a.T + 1e-6 * np.eye(dim)  # strictly positive definite
        gab = g_of(gamma, b + pos)
        assert gab >= gb - tol
        tr = float(np.trace(pos))
        assert 0.5 * gamma.sigma_lo2 * tr - tol <= gab - gb <= 0.5 * gamma.sigma_hi2 * tr + tol


def test_control_lattice_row_major():
    cs = ControlSet(lower=[0.0, 10.0], upper=[1.0, 11.0], points_per_axis=2)
    lat = cs.lattice()
    assert lat.shape == (4, 2)
    # last component varies fastest
    assert np.array_equal(lat, [[0, 10], [0, 11], [1, 10], [1, 11]])


def test_control_set_validation():
    with pytest.raises(ValueError):
        ControlSet(lower=[1.0], upper=[0.0])
    with pytest.raises(ValueError):
        ControlSet(lower=[0.0], upper=[np.inf])
    with pytest.raises(ValueError):
        ControlSet(lower=[0.0], upper=[1.0], points_per_axis=0)


def test_uncertainty_set_validation():
    with pytest.raises(ValueError):
        UncertaintySet(dimension=1, sigma_lo2=0.0, sigma_hi2=1.0)  # degenerate
    with pytest.raises(ValueError):
        UncertaintySet(dimension=1, sigma_lo2=2.0, sigma_hi2=1.0)
    with pytest.raises(ValueError):
        UncertaintySet(
            dimension=2, sigma_lo2=0.5, sigma_hi2=1.0, candidates=[2.0 * np.eye(2)]
        )
    with pytest.raises(ValueError):
        UncertaintySet(
            dimension=2, sigma_lo2=0.5, sigma_hi2=1.0,
            candidates=[np.array([[1.0, 0.2], [0.0, 1.0]])],
        )


def test_scenario_matrices():
    mats = GAMMA_1D.scenario_matrices()
    assert len(mats) == 2
    assert mats[0][0, 0] == 0.25 and mats[1][0, 0] == 1.0
    gamma2 = UncertaintySet(
        dimension=2, sigma_lo2=0.5, sigma_hi2=1.0, candidates=[np.eye(2)]
    )
    assert len(gamma2.scenario_matrices()) == 1


def test_spec_evaluation():
    spec = make_benchmark(lam=1.0)
    assert np.array_equal(eval_drift(spec, [2.0], [1.0]), [-1.0])
    assert np.array_equal(eval_sigma(spec, [2.0], [1.0]), [[3.0]])
    assert eval_f(spec, [2.0], [1.0], 0.5, [0.0]) == -0.5 + 2.0 - 1.0
    assert spec.h_is_zero() and spec.g_is_zero() and spec.f_is_z_free()


def test_discount_shorthand_builds_f():
    spec = spec_from_strings(
        n=1, d=1, m=1,
        b=["-x1"],
        sigma=[["1"]],
        controls=ControlSet(lower=[0.0], upper=[1.0]),
        gamma=GAMMA_1D,
        psi="x1 - u1",
        discount=2.0,
    )
    assert spec.discount == 2.0
    assert eval_f(spec, [3.0], [1.0], 0.5, [0.0]) == -2.0 * 0.5 + (3.0 - 1.0)
    assert spec.psi is not None


def test_spec_validation():
    cs = ControlSet(lower=[0.0], upper=[1.0])
    with pytest.raises(ValueError):
        spec_from_strings(n=1, d=1, m=1, b=["z1"], sigma=[["1"]],
                          controls=cs, gamma=GAMMA_1D, f="-y")
    with pytest.raises(ValueError):
        spec_from_strings(n=1, d=1, m=1, b=["-x1"], sigma=[["1"]],
                          controls=cs, gamma=GAMMA_1D)  # neither f nor psi
    with pytest.raises(ValueError):
        spec_from_strings(n=1, d=1, m=1, b=["-x1"], sigma=[["1"]],
                          controls=cs, gamma=GAMMA_1D, f="-y", psi="x1", discount=1.0)
    with pytest.raises(ValueError):
        spec_from_strings(n=1, d=1, m=1, b=["-x1"], sigma=[["1"]],
                          controls=cs, gamma=GAMMA_1D, psi="x1")  # discount missing
    with pytest.raises(ValueError):
        spec_from_strings(
            n=1, d=2, m=1, b=["-x1"], sigma=[["1", "0"]],
            controls=cs,
            gamma=UncertaintySet(dimension=2, sigma_lo2=0.5, sigma_hi2=1.0,
                                 candidates=[np.eye(2)]),
            f="-y",
            h=[[["0"], ["x1"]], [["u1"], ["0"]]],  # h12 != h21
        )


def test_check_assumptions_on_benchmark():
    spec = make_benchmark(lam=1.0)
    box = SampleBox(x_lo=[-5.0], x_hi=[5.0])
    rep = check_assumptions(spec, box, n_samples=256, rng_seed=0)
    # difference quotients of -x+u, x+u, -y+x-u are constants up to rounding
    assert rep.mu_hat == pytest.approx(1.0, abs=1e-12)
    assert rep.alpha1 == pytest.approx(1.0, abs=1e-12)
    assert rep.alpha2 == 0.0
    assert rep.L == pytest.approx(1.0, abs=1e-12)
    # drift and diffusion dissipation cancel: eta is zero up to rounding
    assert rep.eta_hat == pytest.approx(0.0, abs=1e-12)
    assert rep.eta_bar_hat == pytest.approx(0.0, abs=1e-12)
    assert rep.verdicts["symmetry"].passed
    assert rep.verdicts["cost_dissipativity"].passed
    assert rep.verdicts["lipschitz_constants"].passed
    assert not rep.verdicts["state_dissipativity"].passed
    assert not rep.verdicts["net_dissipativity_margin"].passed


def test_check_assumptions_flags_expanding_drift():
    # pure expansion: b = +x, no diffusion channel to offset it
    spec = spec_from_strings(
        n=1, d=1, m=1,
        b=["x1"],
        sigma=[["0"]],
        controls=ControlSet(lower=[0.0], upper=[1.0]),
        gamma=UncertaintySet(dimension=1, sigma_lo2=0.5, sigma_hi2=2.0),
        f="-y",
    )
    box = SampleBox(x_lo=[-2.0], x_hi=[2.0])
    rep = check_assumptions(spec, box, n_samples=128, rng_seed=0)
    assert rep.eta_hat == -1.0
    assert not rep.verdicts["state_dissipativity"].passed
    assert rep.verdicts["cost_dissipativity"].passed
    assert rep.mu_hat == 1.0


def test_check_assumptions_passes_contractive_drift():
    # b = -2x dominates the diffusion slope: strictly dissipative flow
    spec = spec_from_strings(
        n=1, d=1, m=1,
        b=["-2 * x1 + u1"],
        sigma=[["0.5 * x1"]],
        controls=ControlSet(lower=[0.0], upper=[1.0]),
        gamma=UncertaintySet(dimension=1, sigma_lo2=0.5, sigma_hi2=1.0),
        f="-y + x1",
    )
    box = SampleBox(x_lo=[-3.0], x_hi=[3.0])
    rep = check_assumptions(spec, box, n_samples=256, rng_seed=1)
    # G(0.25 dx^2 - 2 dx^2) = 0.5*0.5*(-1.75) dx^2, so eta = 0.4375
    assert rep.eta_hat == pytest.approx(0.4375, abs=1e-12)
    assert rep.verdicts["state_dissipativity"].passed
    assert rep.verdicts["net_dissipativity_margin"].passed
    assert rep.eta_bar_hat == pytest.approx(rep.eta_hat - 2.0 * rep.alpha1 * rep.alpha2)


def test_check_assumptions_deterministic():
    spec = make_benchmark()
    box = SampleBox(x_lo=[-5.0], x_hi=[5.0])
    r1 = check_assumptions(spec, box, n_samples=64, rng_seed=42)
    r2 = check_assumptions(spec, box, n_samples=64, rng_seed=42)
    assert (r1.L, r1.alpha1, r1.alpha2, r1.mu_hat, r1.eta_hat) == (
        r2.L, r2.alpha1, r2.alpha2, r2.mu_hat, r2.eta_hat
    )


def test_sample_box_validation():
    with pytest.raises(ValueError):
        SampleBox(x_lo=[1.0], x_hi=[1.0])
    with pytest.raises(ValueError):
        SampleBox(x_lo=[0.0], x_hi=[1.0], y_lo=2.0, y_hi=1.0)
    spec = make_benchmark()
    with pytest.raises(ValueError):
        check_assumptions(spec, SampleBox(x_lo=[0.0, 0.0], x_hi=[1.0, 1.0]))
