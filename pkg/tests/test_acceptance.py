"""One line per acceptance criterion, at full size and with the runtime limits."""

import pytest

from ckacoin.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("cid", [*CRITERIA, 9])
def test_criterion(cid, capsys):
    r = run_criterion(cid, seed=0)
    with capsys.disabled():
        print("\n" + r.line())
    assert r.error is None, r.error
    assert r.elapsed < r.limit_s, f"{r.elapsed:.2f}s over the {r.limit_s}s budget"
    assert r.passed, r.detail
