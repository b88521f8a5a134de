import pytest

from gridattack.grid import bundled_case

TRIANGLE = """\
name tri
base_mva 100
loss_fraction 0.0

BUS
1 138 0 0 0
2 138 100 0 0
3 138 0 0 1

BRANCH
L12 1 2 0.1 100 0 0 1
L13 1 3 0.1 100 0 0 1
L23 2 3 0.1 100 0 0 1

GEN
G1 1 0 200 100 10 1 5
G3 3 0 200 0 20 2 10
"""


@pytest.fixture(scope="session")
def triangle():
    return bundled_case("triangle3")


@pytest.fixture(scope="session")
def five_bus():
    return bundled_case("five_bus")


@pytest.fixture(scope="session")
def ieee14():
    return bundled_case("ieee14")
