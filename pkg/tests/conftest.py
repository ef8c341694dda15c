import importlib.util
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]


def _load_export_script():
    spec = importlib.util.spec_from_file_location("export_desk_mnist", ROOT / "scripts" / "export_desk_mnist.py")
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


@pytest.fixture(scope="session")
def desk_mnist_dir(tmp_path_factory):
    """Real MNIST digits (mlxtend's 5000-image sample) laid out as IDX files."""
    pytest.importorskip("mlxtend")
    out = tmp_path_factory.mktemp("desk_mnist")
    _load_export_script().export(out)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_acceptance_lines: list[str] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        summary = dict(report.user_properties).get("summary", "")
        name = report.nodeid.split("::")[-1].removeprefix("test_criterion_")
        status = {"passed": "PASS", "skipped": "SKIP"}.get(report.outcome, "FAIL")
        _acceptance_lines.append(f"{status}  criterion {name}: {summary}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
