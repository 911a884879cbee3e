import math

import pytest

from scldgm.degree import (
    DegreeDistribution,
    Perspective,
    average_degree,
    complete_check_distribution,
    edge_dist,
    edge_to_node,
    node_dist,
    node_to_edge,
    regular,
)
from scldgm.errors import InfeasibleError, InvalidInputError

IRREGULAR_VN = {6: 0.2063, 7: 0.7472, 100: 0.0465}


def test_regular_node_to_edge_identity():
    omega = node_to_edge(regular(7))
    assert omega.terms == {7: 1.0}
    assert omega.perspective is Perspective.EDGE


def test_node_to_edge_irregular():
    lam = node_to_edge(node_dist(IRREGULAR_VN))
    # 0.0465 * 100 / 11.1182
    assert lam.coeff(100) == pytest.approx(4.65 / 11.1182, abs=1e-12)
    assert lam.coeff(100) == pytest.approx(0.41823, abs=5e-6)
    assert math.fsum(lam.terms.values()) == pytest.approx(1.0, abs=1e-12)


def test_node_to_edge_two_degrees():
    omega = node_to_edge(node_dist({2: 0.5, 4: 0.5}))
    assert omega.coeff(2) == pytest.approx(1 / 3, abs=1e-15)
    assert omega.coeff(4) == pytest.approx(2 / 3, abs=1e-15)


def test_edge_to_node_regular():
    assert edge_to_node(edge_dist({5: 1.0})).terms == {5: 1.0}


def test_edge_to_node_inverts():
    dist = edge_to_node(edge_dist({2: 1 / 3, 4: 2 / 3}))
    assert dist.coeff(2) == pytest.approx(0.5, abs=1e-12)
    assert dist.coeff(4) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize(
    "terms",
    [
        {7: 1.0},
        IRREGULAR_VN,
        {2: 0.25, 3: 0.5, 9: 0.25},
        {1: 0.01, 50: 0.99},
    ],
)
def test_round_trip_identity(terms):
    original = node_dist(terms)
    back = edge_to_node(node_to_edge(original))
    for degree in original.degrees:
        assert back.coeff(degree) == pytest.approx(original.coeff(degree), abs=1e-12)


def test_average_degree():
    assert average_degree(regular(7)) == 7.0
    assert average_degree(node_dist(IRREGULAR_VN)) == pytest.approx(11.1182, abs=1e-12)
    assert average_degree(node_dist({11: 0.879, 12: 0.121})) == pytest.approx(
        11.121, abs=1e-12
    )


def test_average_degree_rejects_edge_perspective():
    with pytest.raises(InvalidInputError):
        average_degree(edge_dist({3: 1.0}))


def test_complete_check_distribution_matches_published_pair():
    omega = complete_check_distribution(node_dist(IRREGULAR_VN), 0.5)
    assert set(omega.degrees) == {11, 12}
    assert omega.coeff(11) == pytest.approx(0.879, abs=0.005)
    assert omega.coeff(12) == pytest.approx(0.121, abs=0.005)
    # Edge balance holds to full precision.
    assert average_degree(omega) == pytest.approx(11.1182, rel=1e-12)


def test_complete_check_distribution_regular_half_rate():
    assert complete_check_distribution(regular(6), 0.5).terms == {6: 1.0}


def test_complete_check_distribution_integer_target():
    omega = complete_check_distribution(regular(4), 2 / 3)
    assert omega.terms == {8: 1.0}


def test_complete_check_distribution_balance_property():
    for terms, r_i in [
        (IRREGULAR_VN, 0.5),
        ({3: 0.4, 4: 0.6}, 0.4),
        ({2: 0.9, 30: 0.1}, 0.7),
    ]:
        lam = node_dist(terms)
        omega = complete_check_distribution(lam, r_i)
        target = average_degree(lam) * r_i / (1 - r_i)
        assert average_degree(omega) == pytest.approx(target, rel=1e-12)


def test_complete_check_distribution_infeasible():
    with pytest.raises(InfeasibleError):
        complete_check_distribution(regular(2), 0.2)


def test_empty_distribution_rejected():
    with pytest.raises(InvalidInputError):
        node_dist({})


def test_bad_sum_rejected():
    with pytest.raises(InvalidInputError):
        node_dist({3: 0.5, 4: 0.4})


def test_small_violation_renormalized_with_warning():
    with pytest.warns(UserWarning):
        dist = node_dist({3: 0.5, 4: 0.5 + 5e-10})
    assert math.fsum(dist.terms.values()) == pytest.approx(1.0, abs=1e-15)


def test_invalid_degrees_rejected():
    with pytest.raises(InvalidInputError):
        node_dist({0: 1.0})
    with pytest.raises(InvalidInputError):
        node_dist({-3: 1.0})


def test_json_round_trip():
    dist = node_dist(IRREGULAR_VN)
    again = DegreeDistribution.from_json(dist.to_json())
    assert again == dist
    assert '"perspective": "node"' in dist.to_json()
