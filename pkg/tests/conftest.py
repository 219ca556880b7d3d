import os
import subprocess
import sys
from pathlib import Path

import pytest

from chattymaps import synthetic

_CRITERIA: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = "PASS" if rep.outcome == "passed" else "FAIL"
        _CRITERIA[n] = (title, status, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, secs = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title}  ({secs:.1f}s)")


def run_cli(*args, cwd=None, env=None) -> subprocess.CompletedProcess:
    full_env = dict(os.environ)
    full_env.pop("CHATTYMAPS_SEED", None)
    full_env.update(env or {})
    return subprocess.run(
        [sys.executable, "-m", "chattymaps.cli", *map(str, args)],
        cwd=cwd, env=full_env, capture_output=True, text=True,
    )


@pytest.fixture(scope="session")
def city():
    return synthetic.synthetic_city(400, seed=0)


@pytest.fixture(scope="session")
def city_dir(tmp_path_factory, city) -> Path:
    d = tmp_path_factory.mktemp("city")
    synthetic.write_inputs(d, city, seed=0)
    return d


PIPELINE = ("ingest-check", "assign", "taxonomy", "sound-map", "emotion-map",
            "diversity-map", "perception-map", "validate-noise", "report")


def run_pipeline(work: Path, *extra) -> Path:
    for sub in PIPELINE:
        res = run_cli(sub, "--manifest", work / "run.manifest", *extra)
        assert res.returncode == 0, f"{sub}: {res.stderr}"
    return work / "out"


@pytest.fixture(scope="session")
def pipeline_out(city_dir) -> Path:
    """Artifact directory of one full pipeline run over the synthetic city."""
    return run_pipeline(city_dir)
