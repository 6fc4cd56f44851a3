import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from imex_tt.tt import TensorTrain3

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_tt(rng, nv, r1, r2, batch=()):
    """Tensor train with standard-normal cores."""
    return TensorTrain3(
        rng.standard_normal(batch + (nv, r1)),
        rng.standard_normal(batch + (r1, nv, r2)),
        rng.standard_normal(batch + (r2, nv)),
    )


def loop_full(f):
    """Triple-loop evaluation of a single (unbatched) tensor train."""
    c1, c2, c3 = f.general_cores()
    nv = c1.shape[0]
    r1, r2 = c1.shape[1], c3.shape[0]
    out = np.zeros((nv, nv, nv))
    for i in range(nv):
        for j in range(nv):
            for k in range(nv):
                s = 0.0
                for a in range(r1):
                    for b in range(r2):
                        s += c1[i, a] * c2[a, j, b] * c3[b, k]
                out[i, j, k] = s
    return out


def rel(a, b):
    return np.linalg.norm(np.ravel(a - b)) / np.linalg.norm(np.ravel(b))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria report ----------------------------------------------------

ACCEPTANCE_IDS = ("1", "1 (Nv=512)", "2", "3", "4", "5", "6", "7", "8")
_acceptance: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record ``(id, passed, detail)`` for the end-of-session acceptance table."""

    def record(cid: str, passed: bool, detail: str) -> bool:
        _acceptance[cid] = (bool(passed), detail)
        print(f"criterion {cid}: {'PASS' if passed else 'FAIL'}  {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for cid in ACCEPTANCE_IDS:
        if cid in _acceptance:
            ok, detail = _acceptance[cid]
            terminalreporter.write_line(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {cid}: NOT EVALUATED (deselected or errored)")
