import pytest

from scfeat.selftest import ORACLES, run_selftest, timed_selftest


def test_all_oracles_pass_within_budget():
    results, elapsed = timed_selftest()
    assert [r.name for r in results] == list(ORACLES)
    assert all(r.passed for r in results), [(r.name, r.error) for r in results if not r.passed]
    assert elapsed < 60


@pytest.mark.parametrize("name", ORACLES)
def test_perturbation_is_caught_by_its_own_oracle(name):
    results = {r.name: r for r in run_selftest(perturb=name)}
    assert not results[name].passed
    assert all(r.passed for n, r in results.items() if n != name)


def test_unknown_perturbation_rejected():
    with pytest.raises(ValueError):
        run_selftest(perturb="nonexistent")
