import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from eqmodel import models
from eqmodel.runtime import compile, reconstruct_observed
from eqmodel.solvers import SolverOptions, solve_tsit5
from eqmodel.structural import structural_simplify
from eqmodel.surrogate import (
    CtesnConfig,
    CtesnSurrogate,
    OutOfDomainError,
    SurrogateError,
    make_reservoir,
    ridge_fit,
    ridge_objective,
    spectral_radius_estimate,
    surrogatize,
    train_ctesn,
)
from eqmodel.symcore import Differential, Equation, independent, parameters, variables
from eqmodel.sysmodel import make_system

SMALL = CtesnConfig(reservoir_size=40, n_train_samples=5, n_grid=60, seed=1)


@pytest.fixture(scope="module")
def stiff():
    return compile(structural_simplify(models.stiff3()))


@pytest.fixture(scope="module")
def small_surrogate(stiff):
    return train_ctesn(stiff, ["f", "y"], {"k": (5.0, 20.0)}, SMALL, (0.0, 2.0))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_spectral_radius_matches_dense(seed):
    cfg = CtesnConfig(reservoir_size=120, seed=seed, spectral_radius=0.9)
    A, W_fb = make_reservoir(cfg, 2)
    rho = np.max(np.abs(np.linalg.eigvals(A.toarray())))
    assert rho == pytest.approx(0.9, rel=0.01)
    assert W_fb.shape == (120, 2)


def test_spectral_radius_rotation():
    # complex dominant pair defeats single-vector power iteration
    A = sparse.csr_matrix(np.array([[0.0, -2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
    assert spectral_radius_estimate(A) == pytest.approx(2.0, rel=1e-6)


def test_reservoir_deterministic():
    a, fa = make_reservoir(SMALL, 3)
    b, fb = make_reservoir(SMALL, 3)
    assert (a != b).nnz == 0 and np.array_equal(fa, fb)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-6, 10.0))
def test_ridge_is_optimal(seed, lam):
    rng = np.random.default_rng(seed)
    R, X = rng.standard_normal((15, 6)), rng.standard_normal((15, 2))
    W = ridge_fit(R, X, lam)
    best = ridge_objective(W, R, X, lam)
    for _ in range(5):
        assert ridge_objective(W + 1e-4 * rng.standard_normal(W.shape), R, X, lam) >= best


def test_ridge_zero_rank_deficient():
    with pytest.raises(SurrogateError):
        ridge_fit(np.ones((4, 3)), np.ones((4, 1)), 0.0)


def test_interpolant_exact_at_samples(small_surrogate):
    sur = small_surrogate
    for q, W in zip(sur.samples, sur.readouts):
        np.testing.assert_allclose(sur.readout(q), W, atol=1e-8 * max(1.0, np.abs(W).max()))


def test_reproduces_training_sample(stiff, small_surrogate):
    sur = small_surrogate
    q = sur.samples[0]
    p = stiff.default_parameters({"k": q[0]})
    sol = solve_tsit5(stiff, stiff.default_state(), (0.0, 2.0), p,
                      SolverOptions(abstol=1e-10, reltol=1e-10, saveat=sur.grid[1:]))
    idx = np.searchsorted(sol.ts, sur.grid)
    f_true = sol.us[idx, [q_.name for q_ in stiff.states].index("f")]
    pred = sur.predict(q, sur.grid)[:, 0]
    assert np.sqrt(np.mean((pred - f_true) ** 2)) / np.sqrt(np.mean(f_true**2)) < 0.05


def test_out_of_domain(small_surrogate):
    with pytest.raises(OutOfDomainError):
        small_surrogate.predict([100.0], [0.5])
    with pytest.raises(OutOfDomainError):
        small_surrogate.predict([10.0], [5.0])
    with pytest.raises(OutOfDomainError):
        small_surrogate.predict([10.0, 1.0], [0.5])
    # inside the margin is accepted
    small_surrogate.predict([20.5], [0.5])


def test_bad_inputs(stiff):
    with pytest.raises(SurrogateError):
        train_ctesn(stiff, [], {"k": (1.0, 2.0)}, SMALL)
    with pytest.raises(SurrogateError):
        train_ctesn(stiff, ["f"], {"nope": (1.0, 2.0)}, SMALL)
    with pytest.raises(SurrogateError):
        train_ctesn(stiff, ["f"], {"k": (2.0, 1.0)}, SMALL)


def test_constant_output():
    t = independent("t")
    (x,) = variables("x", t)
    (k,) = parameters("k")
    D = Differential(t)
    s = make_system("c", t, [Equation(D(x), 0 * k)], [x], [k], defaults={x: 1.5, k: 1.0})
    sur = train_ctesn(structural_simplify(s), ["x"], {"k": (0.0, 1.0)}, SMALL)
    np.testing.assert_allclose(sur.predict([0.3], sur.grid)[:, 0], 1.5, atol=1e-3)


def test_archive_round_trip(tmp_path, small_surrogate):
    path = tmp_path / "s.json"
    small_surrogate.save(path)
    loaded = CtesnSurrogate.load(path)
    assert loaded.dumps() == small_surrogate.dumps()
    np.testing.assert_array_equal(loaded.predict([7.0], loaded.grid), small_surrogate.predict([7.0], loaded.grid))


def test_composition(stiff):
    comp = surrogatize(stiff, ["y"], {"k": (5.0, 20.0)}, SMALL, (0.0, 2.0))
    sub = comp.as_system("sur", defaults={"k": 10.0})
    t = independent("t")
    (z,) = variables("z", t)
    D = Differential(t)
    probe = make_system("top", t, [], [z], [], subsystems=[sub])
    top = make_system("top", t, [Equation(D(z), probe.sur.y - z)], [z], [], subsystems=[sub], defaults={z: 0.0})
    s = structural_simplify(top)
    c = compile(s)
    u, p = c.default_state(), c.default_parameters()
    obs = {k.full_name: v for k, v in reconstruct_observed(s, u, p, 0.5, c).items()}
    expected = comp.surrogate.predict([10.0], [0.5])[0, 0]
    assert obs["sur.y"] == pytest.approx(expected, rel=1e-12)
    assert c(u, p, 0.5)[0] == pytest.approx(expected, rel=1e-12)
