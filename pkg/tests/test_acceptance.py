"""Acceptance criteria, run through the ``verify`` command.

The full suite runs once to produce the report that criteria 1-12 read; the
determinism criterion runs it a second time and compares the bytes.
"""

import json

import pytest

from agespectra.cli import main
from agespectra.verification import CRITERIA


@pytest.fixture(scope="module")
def first_report(tmp_path_factory):
    path = tmp_path_factory.mktemp("verify") / "report.json"
    code = main(["verify", "--suite", "full", "--seed", "0", "--jobs", "1", "-o", str(path)])
    return code, path


def _announce(capsys, number, passed, note=""):
    with capsys.disabled():
        tag = "PASS" if passed else "FAIL"
        print(f"\nacceptance criterion {number:>2} ({CRITERIA[number][0]}): {tag}{note}")


def _result(path, number):
    report = json.loads(path.read_text())
    return next(r for r in report["results"] if r["number"] == number)


@pytest.mark.parametrize("number", range(1, 13))
def test_criterion(number, first_report, capsys):
    _, path = first_report
    res = _result(path, number)
    _announce(capsys, number, res["passed"], f" {res['error']}" if res["error"] else "")
    assert res["passed"], res


def test_criterion_13_determinism(first_report, tmp_path, capsys):
    code, path = first_report
    again = tmp_path / "report.json"
    code2 = main(["verify", "--suite", "full", "--seed", "0", "--jobs", "1", "-o", str(again)])
    identical = again.read_bytes() == path.read_bytes()
    inner = _result(path, 13)["passed"]
    _announce(capsys, 13, identical and inner and code == code2)
    assert identical and inner and code == code2
    assert code == 0
