import os
import re
import sys
from collections import OrderedDict

sys.path.insert(0, os.path.dirname(__file__))

CRITERIA = OrderedDict([
    (1, "gradient oracles (distributions, PNN backprop, SVGP ELBO)"),
    (2, "natural-gradient identity"),
    (3, "empirical Fisher vs closed form"),
    (4, "NGBoost monotone NLL and two-cluster scales"),
    (5, "quantile GB consistency and synthetic coverage"),
    (6, "NGBoost-Exponential calibration and recalibration"),
    (7, "SVGP exactness vs exact GP"),
    (8, "PAV vs brute-force oracle"),
    (9, "metrics worked examples"),
    (10, "every model beats the status quo"),
    (11, "determinism and persistence"),
])

_NAME = re.compile(r"test_acceptance\.py::test_c(\d\d)_")
_outcomes = {}


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    ok = not report.failed
    if report.when == "call" or report.failed:
        _outcomes.setdefault(n, []).append(ok and not report.skipped)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        if n not in _outcomes:
            continue
        status = "PASS" if all(_outcomes[n]) else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}")
