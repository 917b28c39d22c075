import hashlib

import pytest

from mepr.config import ScenarioConfig, load_scenario, save_scenario

# (criterion, passed, detail) lines recorded by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    def record(n: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def small_config(tmp_path):
    """Write a preset with some blocks replaced (None) or patched (dict) to a temp file."""

    made = []

    def make(name: str, **blocks):
        made.append(name)
        data = load_scenario(name).model_dump(mode="json")
        for key, patch in blocks.items():
            if patch is None or not isinstance(data.get(key), dict):
                data[key] = patch
            else:
                data[key].update(patch)
        return save_scenario(ScenarioConfig.model_validate(data), tmp_path / f"{name}_small{len(made)}.yaml")

    return make


def output_digests(root, patterns=("*.csv", "*.pgm")) -> dict:
    out = {}
    for pat in patterns:
        for p in sorted(root.rglob(pat)):
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out
