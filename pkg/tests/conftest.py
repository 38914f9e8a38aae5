import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory):
    """Training scenes, prompts and a prompt head produced once per session through the CLI.

    Training data uses seed 1 so the seed-0 evaluation scenes stay held out.
    """
    from langtrack.cli import main
    from langtrack.io import read_prompts, read_scenes
    from langtrack.tracker import load_head

    d = tmp_path_factory.mktemp("train")
    scenes, prompts, ckpt = d / "scenes.jsonl", d / "prompts.jsonl", d / "head.json"
    assert main(["gen", "--scenes", "150", "--seed", "1", "--out", str(scenes)]) == 0
    assert main(["prompts", "--scenes", str(scenes), "--seed", "1", "--out", str(prompts)]) == 0
    assert main(["train", "--scenes", str(scenes), "--prompts", str(prompts), "--out", str(ckpt)]) == 0
    head, _ = load_head(ckpt)
    return {"checkpoint": ckpt, "head": head, "scenes": read_scenes(scenes), "prompts": read_prompts(prompts)}


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _isolated_cwd(tmp_path, monkeypatch):
    """Commands with default output paths write into a scratch directory."""
    monkeypatch.chdir(tmp_path)
