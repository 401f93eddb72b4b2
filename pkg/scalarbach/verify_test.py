from scalarbach.config import Suite
from scalarbach.verify import SUITES, run_suite


def test_every_suite_is_registered():
    assert set(SUITES) == set(Suite) - {Suite.ALL}


def test_profile_suite_passes():
    record = run_suite(Suite.PROFILE, seed=3)
    assert record.suite == "profile"
    assert record.seed == 3
    assert record.checks
    assert record.passed, [c for c in record.checks if not c.passed]
