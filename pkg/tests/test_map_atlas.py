import json
import math

import numpy as np
import pytest

from echolab.errors import (
    BoundaryStraddle,
    ConfigError,
    HorizonExceeded,
    InvalidSeed,
    NoStablePoints,
    NotFunneling,
    OutOfDomain,
)
from echolab.map_atlas import (
    Box,
    EsnFamily,
    Kind,
    affine_family,
    attractor_sequence_mmin,
    build_atlas,
    classify,
    compose,
    contraction_horizon,
    count_attractor_sequences,
    diabolic,
    diabolic_f,
    esn2d,
    esn_funnel_mmin,
    estimate_basins,
    estimate_mmin,
    evaluate,
    family_from_config,
    find_fixed_points,
    forward_attractor_sequence,
    get_preset,
    jacobian,
    stable_points,
)
from echolab.pgm import read_pgm
from echolab.symbolic_inputs import SymbolSequence

from oracles import bisect_roots, central_difference_jacobian, tanh_fixed_points

DOWN, UP = 0, 1


@pytest.fixture(scope="module")
def esn():
    return esn2d()


@pytest.fixture(scope="module")
def esn_atlas(esn):
    return build_atlas(esn, grid_res=200)


@pytest.fixture(scope="module")
def dia_atlas():
    return build_atlas(diabolic(), grid_res=200)


def seq(text):
    return SymbolSequence.from_string(text)


# --- evaluate / jacobian ---------------------------------------------------


def test_evaluate_esn_origin(esn):
    got = evaluate(esn, 0, [0.0, 0.0])
    assert np.allclose(got, [0.25 * math.tanh(0.25), 0.25 * math.tanh(0.05)], atol=1e-15)


def test_evaluate_diabolic_fixed_point():
    assert evaluate(diabolic(), 0, [3.0])[0] == pytest.approx(3.0, abs=1e-15)


def test_evaluate_rejects_outside(esn):
    with pytest.raises(OutOfDomain):
        evaluate(esn, 0, [1.5, 0.0])
    with pytest.raises(OutOfDomain):
        jacobian(esn, 1, [0.0, -1.01])


def test_evaluate_rejects_bad_symbol(esn):
    with pytest.raises(ValueError):
        evaluate(esn, 2, [0.0, 0.0])


def test_esn_fixed_point_equation_has_no_alpha(esn):
    fp = stable_points(find_fixed_points(esn, 1))[0].location
    assert np.allclose(fp, np.tanh(esn.W_r @ fp + esn.drive[1]), atol=1e-10)


@pytest.mark.parametrize("i", [0, 1])
def test_esn_jacobian_matches_finite_differences(esn, i):
    rng = np.random.default_rng(7)
    X = rng.uniform(-1, 1, (100, 2))
    for x in X:
        J = jacobian(esn, i, x)
        Jfd = central_difference_jacobian(lambda y: esn.apply(i, y), x)
        assert np.allclose(J, Jfd, atol=1e-6, rtol=1e-6)


def test_jacobian_batched_shape(esn):
    X = np.zeros((4, 3, 2))
    assert esn.jacobian_at(0, X).shape == (4, 3, 2, 2)


def test_constant_map_jacobian_is_zero():
    fam = EsnFamily(np.zeros((2, 2)), np.eye(2), 1.0, [[0.1, 0.2]])
    assert np.array_equal(jacobian(fam, 0, [0.3, -0.4]), np.zeros((2, 2)))


@pytest.mark.parametrize("x", [1.5, 2.7, -1.2, -3.9])
def test_diabolic_tail_slope(x):
    fam = diabolic()
    i = 0
    assert jacobian(fam, i, [x])[0, 0] == pytest.approx(0.5)


@pytest.mark.parametrize("i", [0, 1])
def test_diabolic_jacobian_matches_finite_differences(i):
    fam = diabolic()
    rng = np.random.default_rng(3)
    # stay away from the kinks at +-1 (shifted for f_1) and the essential point
    xs = rng.uniform(-4, 4, 400)
    xs = xs[(np.abs(np.abs(xs - i) - 1.0) > 1e-3) & (np.abs(xs - i) > 0.05)][:100]
    for x in xs:
        J = jacobian(fam, i, [x])
        Jfd = central_difference_jacobian(lambda y: fam.apply(i, y), [x])
        assert J[0, 0] == pytest.approx(Jfd[0, 0], rel=1e-6, abs=1e-6)


def test_diabolic_continuity_and_self_map():
    xs = np.linspace(-4, 4, 100001)
    fam = diabolic()
    for i in range(2):
        y = fam.apply(i, xs[:, None])
        assert fam.box.contains(y).all()
    assert diabolic_f(np.array([1.0]))[0] == pytest.approx(1.0)
    assert diabolic_f(np.array([-1.0]))[0] == pytest.approx(-1.0)
    assert np.max(np.abs(np.diff(diabolic_f(xs)))) < 1e-3


def test_esn_is_self_map_on_grid(esn):
    X = esn.box.lattice(50)
    for i in range(2):
        assert esn.box.contains(esn.apply(i, X)).all()


# --- fixed points ----------------------------------------------------------


def test_esn_f0_fixed_points_match_oracle(esn):
    fps = find_fixed_points(esn, 0)
    kinds = sorted(fp.kind.value for fp in fps)
    assert kinds == ["SADDLE", "STABLE", "STABLE"]
    x1 = tanh_fixed_points(0.5, 0.25)
    x2 = tanh_fixed_points(1.75, 0.05)
    assert len(x1) == 1 and len(x2) == 3
    expected = sorted((x1[0], b) for b in x2)
    got = sorted(tuple(fp.location) for fp in fps)
    assert np.allclose(got, expected, atol=1e-10)
    for fp in fps:
        assert 0.40 <= fp.location[0] <= 0.50
        assert fp.residual < 1e-10
    saddle = [fp for fp in fps if fp.kind is Kind.SADDLE][0]
    assert saddle.location[1] == pytest.approx(-0.067, abs=1e-3)


def test_esn_f1_single_stable_negative(esn):
    fps = find_fixed_points(esn, 1)
    assert len(fps) == 1 and fps[0].kind is Kind.STABLE
    x1 = tanh_fixed_points(0.5, -0.25)
    x2 = tanh_fixed_points(1.75, -0.5)
    assert np.allclose(fps[0].location, [x1[0], x2[0]], atol=1e-10)
    assert np.all(fps[0].location < 0)


def test_stable_points_sorted_down_then_up(esn):
    pts = [fp.location for fp in stable_points(find_fixed_points(esn, 0))]
    assert pts[DOWN][1] < 0 < pts[UP][1]


@pytest.mark.parametrize("alpha", [0.1, 0.25, 1.0])
def test_fixed_points_independent_of_alpha(esn, alpha):
    ref = find_fixed_points(esn, 0)
    got = find_fixed_points(esn2d(alpha), 0)
    assert len(got) == len(ref)
    for a, b in zip(ref, got):
        assert np.max(np.abs(a.location - b.location)) < 1e-9


def test_doubled_seed_density_same_points(esn):
    for i in range(2):
        a = find_fixed_points(esn, i, seeds_per_dim=11)
        b = find_fixed_points(esn, i, seeds_per_dim=22)
        assert len(a) == len(b)
        for p, q in zip(a, b):
            assert np.max(np.abs(p.location - q.location)) < 1e-9


def test_stable_eigenvalues_inside_unit_circle(esn):
    for i in range(2):
        for fp in find_fixed_points(esn, i):
            mods = np.abs(fp.eigenvalues)
            if fp.kind is Kind.STABLE:
                assert np.all(mods < 1 - 1e-6)


def test_seeds_per_dim_validated(esn):
    with pytest.raises(ValueError):
        find_fixed_points(esn, 0, seeds_per_dim=1)


def test_diabolic_unique_attractors():
    fam = diabolic()
    f0 = find_fixed_points(fam, 0)
    f1 = find_fixed_points(fam, 1)
    assert len(f0) == 1 and f0[0].kind is Kind.STABLE
    assert f0[0].location[0] == pytest.approx(3.0, abs=1e-10)
    assert len(f1) == 1 and f1[0].kind is Kind.STABLE
    # independent root search of f_1(x) - x on the box
    roots = bisect_roots(lambda x: float(fam.apply(1, np.array([x]))[0]) - x, -4, 4)
    assert len(roots) == 1
    assert f1[0].location[0] == pytest.approx(roots[0], abs=1e-9)


def test_diabolic_square_has_many_attractors():
    sq = compose(diabolic(), [0, 1])
    fps = find_fixed_points(sq, 0, seeds_per_dim=4001)
    assert len(stable_points(fps)) >= 5


def test_compose_order_is_time_order():
    fam = diabolic()
    x = np.array([0.3])
    assert compose(fam, [0, 1]).apply(0, x) == pytest.approx(fam.apply(1, fam.apply(0, x)))
    assert compose(fam, [1, 0]).apply(0, x) == pytest.approx(fam.apply(0, fam.apply(1, x)))


def test_compose_jacobian_chain_rule(esn):
    c = compose(esn, [0, 1, 1])
    x = np.array([0.2, -0.3])
    J = c.jacobian_at(0, x)
    assert np.allclose(J, central_difference_jacobian(lambda y: c.apply(0, y), x), atol=1e-6)


@pytest.mark.parametrize(
    "eig,kind",
    [
        ([0.5, 0.2], Kind.STABLE),
        ([0.5, 1.2], Kind.SADDLE),
        ([1.5, -2.0], Kind.UNSTABLE),
        ([0.5, 1.0 + 1e-8], Kind.NONHYPERBOLIC),
        ([0.6 + 0.8j], Kind.NONHYPERBOLIC),
    ],
)
def test_classify(eig, kind):
    assert classify(eig) is kind


# --- basins ----------------------------------------------------------------


def test_esn_f0_basin_boundary_is_saddle_line(esn_atlas):
    grid = esn_atlas.basins[0]
    saddle_y = [fp for fp in esn_atlas.fixed_points[0] if fp.kind is Kind.SADDLE][0].location[1]
    width = 2.0 / 200
    ys = grid.axes[1]
    assert grid.unresolved_fraction == 0.0
    for col in grid.labels:
        cross = np.flatnonzero(np.diff(col) != 0)
        assert len(cross) == 1
        boundary = 0.5 * (ys[cross[0]] + ys[cross[0] + 1])
        assert abs(boundary - saddle_y) <= width
        assert col[0] == DOWN and col[-1] == UP


def test_esn_f1_basin_is_everything(esn_atlas):
    assert np.all(esn_atlas.basins[1].labels == 0)
    assert esn_atlas.basins[1].unresolved_fraction == 0.0


def test_contraction_basin_single_label():
    fam = affine_family([[[0.5]]])
    grid = estimate_basins(fam, 0, grid_res=50, max_iter=100, ball_radius=1e-3)
    assert np.all(grid.labels == 0)


def test_no_stable_points_raises():
    fam = affine_family([[[2.0]]], box=Box([-1.0], [1.0]))
    with pytest.raises(NoStablePoints):
        estimate_basins(fam, 0, grid_res=10)


def test_atlas_self_consistency(esn_atlas, dia_atlas):
    for atlas in (esn_atlas, dia_atlas):
        for i in range(atlas.family.alphabet_size):
            for j, x in enumerate(atlas.stable(i)):
                assert atlas.basins[i].label_of(x) == j


def test_diabolic_basins_resolved(dia_atlas):
    assert dia_atlas.accepted
    assert dia_atlas.L == (1, 1)


# --- transition table ------------------------------------------------------


def test_esn_transition_table(esn_atlas):
    P = esn_atlas.table
    assert esn_atlas.L == (2, 1)
    assert P(0, UP, 1) == 0 and P(0, DOWN, 1) == 0
    assert P(1, 0, 0) == DOWN
    assert P(0, UP, 0) == UP and P(0, DOWN, 0) == DOWN
    assert P.straddles == ()


def test_diabolic_transition_table(dia_atlas):
    assert dia_atlas.table(0, 0, 1) == 0
    assert dia_atlas.table(1, 0, 0) == 0


def test_transition_table_orbit_consistency(esn_atlas):
    fam = esn_atlas.family
    P = esn_atlas.table
    for i in range(2):
        for j, x in enumerate(esn_atlas.stable(i)):
            for k in range(2):
                y = x.copy()
                for _ in range(2000):
                    y = fam.apply(k, y)
                assert np.linalg.norm(y - esn_atlas.stable(k)[P(i, j, k)]) < 1e-8


def test_transition_table_invalid_index(esn_atlas):
    with pytest.raises(InvalidSeed):
        esn_atlas.table(1, 1, 0)


def test_boundary_straddle_reported():
    # identity-like map: the other map's attractor never reaches a ball
    fam = affine_family([[[0.5]], [[1.0 - 1e-9]]], offsets=[[0.5], [0.0]])
    # f_1 is nonhyperbolic everywhere, so seed it with a designated point
    from echolab.map_atlas import AttractorAtlas, FixedPoint, FixedPointList, transition_table

    fp0 = FixedPointList([FixedPoint(np.array([1.0]), np.array([0.5]), Kind.STABLE, 0.0)])
    fp1 = FixedPointList([FixedPoint(np.array([0.0]), np.array([0.5]), Kind.STABLE, 0.0)])
    atlas = AttractorAtlas(fam, (fp0, fp1))
    P = transition_table(atlas, max_iter=50)
    assert (0, 0, 1) in P.straddles
    with pytest.raises(BoundaryStraddle) as err:
        P(0, 0, 1)
    assert err.value.cell == (0, 0, 1)


# --- attractor sequences ---------------------------------------------------


def test_forward_sequence_switches(esn_atlas):
    v = seq("0" * 20 + "1" * 10 + "0" * 20)
    A = forward_attractor_sequence(esn_atlas.table, v, UP)
    expect = [UP] * 20 + [0] * 10 + [DOWN] * 20
    assert A.indices.tolist() == expect


def test_forward_sequence_constant(esn_atlas):
    A = forward_attractor_sequence(esn_atlas.table, seq("0" * 30), DOWN)
    assert set(A.indices.tolist()) == {DOWN}


def test_forward_sequence_recurrence(esn_atlas):
    rng = np.random.default_rng(1)
    v = SymbolSequence(rng.integers(0, 2, 200), origin=50)
    P = esn_atlas.table
    A0 = 0
    A = forward_attractor_sequence(P, v, A0)
    s = v.symbols
    for n in range(1, len(s)):
        assert A.indices[n] == P(int(s[n - 1]), int(A.indices[n - 1]), int(s[n]))
    assert A.at(0) == A.indices[50]


def test_forward_sequence_invalid_seed(esn_atlas):
    with pytest.raises(InvalidSeed):
        forward_attractor_sequence(esn_atlas.table, seq("10"), 1)


def test_count_sequences_examples(esn_atlas):
    P = esn_atlas.table
    assert count_attractor_sequences(P, seq("0" * 40)) == (2, 2)
    assert count_attractor_sequences(P, seq("0" * 20 + "1" * 35 + "0" * 20)) == (2, 1)


def test_count_sequences_diabolic(dia_atlas):
    rng = np.random.default_rng(5)
    for _ in range(5):
        v = SymbolSequence(rng.integers(0, 2, 100))
        assert count_attractor_sequences(dia_atlas.table, v) == (1, 1)
        A = forward_attractor_sequence(dia_atlas.table, v, 0)
        assert set(A.indices.tolist()) == {0}


def test_count_sequences_monotone(esn_atlas):
    rng = np.random.default_rng(9)
    P = esn_atlas.table
    for _ in range(30):
        v = SymbolSequence(rng.integers(0, 2, int(rng.integers(1, 40))))
        w, t = count_attractor_sequences(P, v)
        assert t <= w <= P.L[v.symbols[0]]


# --- contraction horizon and m_min -----------------------------------------


def test_horizon_linear_half():
    fam = affine_family([[[0.5]]])
    assert contraction_horizon(fam, 0, [0.0], 0.3) == 2


def test_horizon_one_step():
    fam = affine_family([[[0.9, 0.0], [0.0, 0.5]]])
    assert contraction_horizon(fam, 0, 0, 0.99) == 1


def test_horizon_esn_f1_matches_spectral_estimate(esn):
    fp = stable_points(find_fixed_points(esn, 1))[0]
    n = contraction_horizon(esn, 1, 0, 0.5)
    r = np.max(np.abs(fp.eigenvalues))
    # the orbit sits at the fixed point, so the Jacobian power governs
    J = jacobian(esn, 1, fp.location)
    expect = next(m for m in range(1, 100) if np.linalg.norm(np.linalg.matrix_power(J, m), 2) < 0.5)
    assert abs(n - expect) <= 1
    assert n >= math.ceil(math.log(0.5) / math.log(r)) - 1


def test_horizon_exceeded():
    fam = affine_family([[[0.999]]])
    with pytest.raises(HorizonExceeded):
        contraction_horizon(fam, 0, [0.0], 0.1, max_n=10)


def test_horizon_rho_validated():
    fam = affine_family([[[0.5]]])
    with pytest.raises(ValueError):
        contraction_horizon(fam, 0, [0.0], 1.0)


def test_esn_mmin_near_thirty(esn):
    m = esn_funnel_mmin(esn, grid_res=100)
    assert 25 <= m <= 35


def test_mmin_global_contraction():
    fam = affine_family([[[0.5]]])
    assert estimate_mmin(fam, 0, [0.0], fam.box, eps=0.6, grid_res=21) == 1


def test_mmin_target_index():
    fam = affine_family([[[0.5]]])
    assert estimate_mmin(fam, 0, 0, fam.box, eps=0.3, grid_res=21) == 2


def test_mmin_not_funneling():
    fam = affine_family([[[0.99]]])
    with pytest.raises(NotFunneling):
        estimate_mmin(fam, 0, [0.0], fam.box, eps=1e-3, max_m=5)


def test_attractor_sequence_mmin_positive(esn_atlas):
    assert attractor_sequence_mmin(esn_atlas, 1) >= 1


# --- presets, config, export ----------------------------------------------


def test_get_preset_unknown():
    with pytest.raises(ConfigError):
        get_preset("nope")


def test_family_from_config_custom_esn():
    fam = family_from_config(
        {"W_r": [0.5, 0, 0, 1.75], "W_in": [1, 0, 0, 1], "alpha": 0.25, "inputs": [[0.25, 0.05], [-0.25, -0.5]]}
    )
    ref = esn2d()
    x = np.array([0.1, -0.2])
    for i in range(2):
        assert np.array_equal(fam.apply(i, x), ref.apply(i, x))


def test_family_from_config_errors():
    with pytest.raises(ConfigError):
        family_from_config({"W_r": [1, 2, 3]})
    with pytest.raises(ConfigError):
        family_from_config({"W_r": [1], "inputs": [[0.1]], "alpha": 0.0})


def test_atlas_export(tmp_path, esn_atlas):
    paths = esn_atlas.write(tmp_path)
    doc = json.loads(paths[0].read_text())
    assert doc["transition_table"][1][0][0] == DOWN
    assert doc["maps"][0]["unresolved_fraction"] == 0.0
    assert [fp["kind"] for fp in doc["maps"][0]["fixed_points"]].count("STABLE") == 2
    img, maxval = read_pgm(paths[1])
    assert img.shape == (200, 200) and maxval == 2
    # top row is the upper basin, bottom row the lower
    assert set(img[0]) == {UP + 1} and set(img[-1]) == {DOWN + 1}
