"""Shared fixtures: a small synthetic corpus and a matching small model."""

import pytest

from dialectfuse.config import ModelConfig, RunConfig, TrainPlan
from dialectfuse.data.dataset import load_dataset
from dialectfuse.data.synth import SynthSpec, synth_generate

SMALL_SPEC = SynthSpec(n_train=64, n_val=32, vocab_size=60, latent_shape=(4, 8, 8), d_text=8)
SMALL_MODEL = ModelConfig(d=8, heads=2, layers=1, d_f=8, d_a=16, max_len=8, latent_shape=(4, 8, 8), d_text=8, channels=(4, 4, 4))


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_corpus")
    synth_generate(SMALL_SPEC, root)
    return root


@pytest.fixture(scope="session")
def small_data(small_corpus):
    return load_dataset(small_corpus)


@pytest.fixture()
def small_run():
    return RunConfig(SMALL_MODEL, TrainPlan(warmup_steps=4, warmup_batch=16, epochs=2, batch_size=16))


# Acceptance verdicts, printed as one line per criterion at the end of the run.
VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.skipped:
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.failed:
        VERDICTS[number] = (title, "FAIL", detail or f"{rep.when} failed")
    elif rep.when == "call":
        VERDICTS[number] = (title, "PASS", detail)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        title, status, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}" + (f"  ({detail})" if detail else ""))
