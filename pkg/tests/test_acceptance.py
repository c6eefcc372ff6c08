"""Exit criteria at their stated tolerances, one verdict line per criterion.

Two criteria are known to fail and are marked strict xfail:

* c5: the lower side ``exp(-2 lam I(kappa/lam)) <= P(X >= lam + kappa)``
  is an asymptotic statement.  At lam in {50, 100, 200} it fails for the
  smallest kappa on the grid (kappa near sqrt(lam)), where the exact tail
  is about 0.15 and the lower bound about 0.38.  The upper side and the
  rate-function grid hold everywhere.
* c10: ``MaxLoad(m) <= typical`` is not an invariant.  A trace whose last
  step sets a new maximum has final load above the typical value for any
  eps with ``eps |M| > 1``.  The other c10 sub-checks are required to pass
  below.
"""

import functools
import time

import pytest

from conftest import ACCEPTANCE_LINES
from twothin import acceptance as AC

pytestmark = pytest.mark.acceptance


def _check(verdict):
    ACCEPTANCE_LINES.append(f"{verdict.line()}  ({verdict.seconds:.1f}s)")
    print(verdict.line())
    return verdict


@functools.cache
def _verdict(name):
    t0 = time.perf_counter()
    v = AC.CRITERIA[name](AC.FULL)
    v.seconds = time.perf_counter() - t0
    return v


def _run(name):
    return _check(_verdict(name))


C5_XFAIL = pytest.mark.xfail(strict=True, reason="lower Poisson bound is asymptotic; fails "
                                                "near kappa = sqrt(lambda) at these lambda")
C10_XFAIL = pytest.mark.xfail(strict=True,
                              reason="final <= typical max load does not hold in general")


@pytest.mark.parametrize("name", ["c1", "c2", "c3", "c4", pytest.param("c5", marks=C5_XFAIL),
                                  "c6", "c7", "c8", "c9",
                                  pytest.param("c10", marks=C10_XFAIL)])
def test_criterion(name):
    v = _run(name)
    if name == "c5":
        # only the asymptotic lower side may fail
        assert not v.details["upper_violations"]
        assert not v.details["rate_grid_violations"]
    if name == "c9":
        assert v.informational and v.details
    assert v.passed, v.details


def test_criterion_c10_required_subchecks():
    sub = _verdict("c10").details["subchecks"]
    required = {k: v for k, v in sub.items() if k not in AC.INFORMATIONAL_INVARIANTS}
    assert required and all(required.values()), required


def test_invariants_suite_green():
    verdicts = AC.invariants_suite(AC.QUICK)
    assert all(v.passed for v in verdicts if not v.informational)
