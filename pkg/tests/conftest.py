import json
import os

import pytest

from ronar import task_sim

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{outcome}  {name}")


@pytest.fixture(scope="session")
def suite_dir(tmp_path_factory) -> str:
    """The 12 packaged synthetic episodes (4 tasks x 0/1/3 failures)."""
    root = tmp_path_factory.mktemp("suite")
    task_sim.generate_suite(str(root), render_images=False)
    return str(root)


@pytest.fixture(scope="session")
def suite_episodes(suite_dir):
    from ronar import episode_log

    episodes = []
    for entry in sorted(os.listdir(suite_dir)):
        path = os.path.join(suite_dir, entry, "episode.jsonl")
        if os.path.isfile(path):
            episodes.append(episode_log.load_episode(path))
    assert len(episodes) == 12
    return episodes


@pytest.fixture(scope="session")
def imaged_episode_path(tmp_path_factory) -> str:
    """One manipulation-failure episode with rendered head images."""
    root = tmp_path_factory.mktemp("imaged")
    task = task_sim.TASKS["put_cup"]
    machine = task_sim.synthesize_machine(list(task.states))
    failures = [task_sim.FailureSpec("pick-cup", 2.0, "manipulation")]
    path, _ = task_sim.generate_episode(
        machine,
        seed=7,
        failures=failures,
        out_dir=str(root),
        task=task,
        episode_id="put_cup_imaged",
        params=task_sim.SimParams(render_images=True),
    )
    return path


@pytest.fixture(scope="session")
def packaged_sample_path() -> str:
    from importlib import resources

    return str(resources.files("ronar").joinpath("data/synthetic_cup_01.jsonl"))


@pytest.fixture(scope="session")
def packaged_manifest() -> dict:
    from importlib import resources

    raw = resources.files("ronar").joinpath("data/synthetic_cup_01.manifest.json").read_text()
    return json.loads(raw)
