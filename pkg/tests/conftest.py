import pytest

from natscale import (brownian_measure, double_power_measure, hybrid_measure,
                      inverse_bessel_measure)


@pytest.fixture(scope="session")
def brownian():
    return brownian_measure()


@pytest.fixture(scope="session")
def inverse_bessel():
    return inverse_bessel_measure()


@pytest.fixture(scope="session")
def hybrid():
    return hybrid_measure()


@pytest.fixture(scope="session")
def hybrid_mirror():
    return hybrid_measure(mirror=True)


@pytest.fixture(scope="session")
def double_power():
    return double_power_measure()
