import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from formlab import measures as M
from formlab.errors import DegenerateInputError, DomainError
from formlab.forms import Grid1D, assemble_schrodinger_form


def test_measure_basics():
    mu = M.point_masses([(0.0, -2.0), (1.0, 3.0)]) + M.box(-1.0, 1.0, 2.0)
    assert mu.is_compact()
    np.testing.assert_allclose(mu.V([-2.0, 0.5]), [0.0, 2.0])
    assert sorted(mu.atoms) == [(0.0, -2.0), (1.0, 3.0)]
    tv = mu.total_variation()
    assert sorted(w for _, w in tv.atoms) == [2.0, 3.0]
    neg = mu.negative_part()
    assert [w for _, w in neg.atoms] == [2.0] and not np.any(neg.V([0.5]))
    assert mu.scaled(2.0).V([0.0])[0] == pytest.approx(4.0)


def test_duplicate_atoms_rejected():
    with pytest.raises(DomainError):
        M.point_masses([(0.0, 1.0), (0.0, 2.0)])


def test_lattice_atoms_in_window():
    comb = M.periodic_atoms(2.0, 1.0, 0.5)
    assert [x for x, _ in comb.atoms_in(-1.0, 2.0)] == [-0.5, 0.5, 1.5]
    assert not comb.is_compact()


def test_table_file(tmp_path):
    p = tmp_path / "v.csv"
    p.write_text("0,1\n1,3\n2,1\n")
    mu = M.table_file(p)
    np.testing.assert_allclose(mu.V([0.5, 1.0, 5.0]), [2.0, 3.0, 0.0])


# ------------------------------------------------------------ resolvent kernel


def test_kernel_values():
    assert M.resolvent_kernel_free_line(1.0, 0.3, 0.3) == pytest.approx(0.5)
    assert M.resolvent_kernel_free_line(4.0, 0.0, 0.0) == pytest.approx(0.25)
    assert M.resolvent_kernel_free_line(1.0, 0.0, 1.0) == pytest.approx(math.exp(-1) / 2)
    with pytest.raises(DomainError):
        M.resolvent_kernel_free_line(0.0, 0.0, 1.0)


@given(st.floats(0.01, 100), st.floats(-10, 10), st.floats(-10, 10))
def test_kernel_symmetric_positive(alpha, x, y):
    a = M.resolvent_kernel_free_line(alpha, x, y)
    assert a == M.resolvent_kernel_free_line(alpha, y, x)
    assert a >= 0


def test_kernel_inverts_operator():
    # int G(x, y) (-phi'' + phi)(y) dy = phi(x) for a Gaussian phi
    from scipy.integrate import quad

    def Lphi(y):
        return (3 - 4 * y * y) * math.exp(-y * y)

    for x in (0.0, 0.7, -1.3):
        val = quad(lambda y: M.resolvent_kernel_free_line(1.0, x, y) * Lphi(y), -20, 20,
                   points=[x], limit=200, epsabs=1e-13)[0]
        assert val == pytest.approx(math.exp(-x * x), abs=1e-10)


# ---------------------------------------------------------------- Kato constants


def test_kato_delta_and_box():
    assert M.kato_constant(M.delta(), 1.0) == pytest.approx(0.5, abs=1e-12)
    assert M.kato_constant(M.delta(), 4.0) == pytest.approx(0.25, abs=1e-12)
    assert M.kato_constant(M.box(0.0, 1.0), 1.0) == pytest.approx(1 - math.exp(-0.5), abs=1e-6)
    with pytest.raises(DomainError):
        M.kato_constant(M.constant(1.0), 1.0)
    with pytest.raises(DomainError):
        M.kato_constant(M.delta(), -1.0)


def test_kato_uses_total_variation():
    assert M.kato_constant(M.delta(0.0, -3.0), 1.0) == pytest.approx(1.5)


def test_kato_box_with_quadrature_oracle():
    from scipy.integrate import quad

    alpha = 2.5
    s = math.sqrt(alpha)

    def potential(x):
        return quad(lambda y: math.exp(-s * abs(x - y)) / (2 * s), -1, 2, points=[x],
                    epsabs=1e-14, epsrel=1e-13)[0]

    # the maximum sits at the centre of the box by symmetry
    assert potential(0.5) == pytest.approx((1 - math.exp(-1.5 * s)) / alpha, rel=1e-12)
    assert M.kato_constant(M.box(-1.0, 2.0), alpha) == pytest.approx(potential(0.5), rel=1e-8)


def _measures():
    atoms = st.lists(st.tuples(st.floats(-3, 3), st.floats(-2, 2)), min_size=1, max_size=4,
                     unique_by=lambda a: round(a[0], 6))
    return atoms.map(lambda a: M.point_masses([(round(x, 6), w) for x, w in a]))


@given(_measures(), st.floats(0.1, 50))
def test_kato_monotone_in_alpha(mu, alpha):
    assert M.kato_constant(mu, 2 * alpha) <= M.kato_constant(mu, alpha) * (1 + 1e-12)


@given(_measures(), _measures(), st.floats(0.1, 20), st.floats(0.1, 5))
def test_kato_homogeneous_and_subadditive(a, b, alpha, c):
    ka, kb = M.kato_constant(a, alpha), M.kato_constant(b, alpha)
    assert M.kato_constant(a.scaled(c), alpha) == pytest.approx(c * ka, rel=1e-9)
    overlap = {x for x, _ in a.atoms} & {x for x, _ in b.atoms}
    if not overlap:
        kab = M.kato_constant(a + b, alpha)
        assert kab <= (ka + kb) * (1 + 1e-9)
        assert kab >= max(ka, kb) * (1 - 1e-9)


def test_kato_not_additive_for_separated_supports():
    # sup of a sum is not the sum of sups once the supports are far apart
    a, b = M.delta(0.0), M.delta(50.0)
    assert M.kato_constant(a + b, 1.0) == pytest.approx(0.5, rel=1e-9)


def test_kato_class_check():
    rep = M.kato_class_check(M.delta(), [1, 4, 16, 64, 256])
    np.testing.assert_allclose(rep.values, [0.5, 0.25, 0.125, 0.0625, 0.03125], atol=1e-12)
    assert rep.evidence == "kato" and rep.monotone
    assert rep.decay_exponent == pytest.approx(-0.5)
    assert rep.c_kato <= min(rep.values)
    assert rep.form_bound[0] < 1
    box = M.kato_class_check(M.box(-1.0, 1.0), [1, 10, 100, 1000, 10000])
    assert box.evidence == "kato" and box.values[-1] < 1e-3
    grown = M.kato_class_check(lambda a: M.delta().scaled(math.sqrt(a)), [1, 4, 16, 64])
    assert grown.evidence == "extended-kato"
    np.testing.assert_allclose(grown.values, 0.5)
    with pytest.raises(DegenerateInputError):
        M.kato_class_check(M.delta(), [])


# ----------------------------------------------------------------- form bounds


@pytest.fixture(scope="module")
def line_form():
    return assemble_schrodinger_form(Grid1D(-30.0, 30.0, 6001), M.zero())


def test_form_bound_delta(line_form):
    cs = [1.0, 4.0, 25.0, 100.0]
    fb = M.form_bound(M.delta(), line_form, cs)
    np.testing.assert_allclose(fb.kappas, [1 / (2 * math.sqrt(c)) for c in cs], rtol=2e-3)
    assert fb.admissible and fb.c_kappa == 100.0
    assert all(b < a for a, b in zip(fb.kappas, fb.kappas[1:]))


def test_form_bound_zero_and_huge(line_form):
    assert M.form_bound(M.zero(), line_form, [1.0]).kappa == 0.0
    huge = M.form_bound(M.delta(0.0, 1e4), line_form, [1.0, 10.0])
    assert not huge.admissible and huge.kappa >= 1


def test_form_bound_linear_in_magnitude(line_form):
    k1 = M.form_bound(M.delta(0.0, 1.0), line_form, [4.0]).kappa
    k3 = M.form_bound(M.delta(0.0, 3.0), line_form, [4.0]).kappa
    assert k3 == pytest.approx(3 * k1, rel=1e-10)
