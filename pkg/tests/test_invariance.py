import pytest

from invariants import CHECKS, TOLERANCES

SEEDS = range(20)


@pytest.mark.parametrize("name", sorted(CHECKS))
@pytest.mark.parametrize("seed", SEEDS)
def test_invariant_holds(name, seed):
    assert CHECKS[name](seed) <= TOLERANCES[name]
