import pytest

from wavefront_lab import envelopes, model, waves

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one summary line per acceptance criterion."""

    def record(n: int, passed: bool, detail: str):
        _ACCEPTANCE[n] = (bool(passed), detail)
        print(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def bh():
    return model.make_beverton_holt(2.0, 1.0)


@pytest.fixture(scope="session")
def bh_profile(bh):
    return waves.compute_profile(2.5, bh, 0.0)


@pytest.fixture(scope="session")
def bh_kp(bh, bh_profile):
    return envelopes.estimate_kappa_params(bh, 0.0, bh_profile)
