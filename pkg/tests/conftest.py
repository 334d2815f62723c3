import pytest

from pesentinel.classifiers import ForestConfig
from pesentinel.evaluation import proposed_pipeline, split
from pesentinel.synthetic import SyntheticSpec, generate_synthetic_corpus

_acceptance = []


@pytest.fixture(scope="session")
def default_corpus():
    return generate_synthetic_corpus(SyntheticSpec(seed=42))


@pytest.fixture(scope="session")
def pinned_model(default_corpus):
    """Forest trained on 90% of the default corpus, seeds 42 throughout."""
    train, _ = split(default_corpus.matrix, 0.1, seed=42)
    model, _ = proposed_pipeline(train, ForestConfig(seed=42), fraction=0.8)
    return model


@pytest.fixture(scope="session")
def small_model():
    corpus = generate_synthetic_corpus(SyntheticSpec(n_benign=60, n_malware=60, vocab_size=30, seed=7))
    train, _ = split(corpus.matrix, 0.2, seed=7)
    model, _ = proposed_pipeline(train, ForestConfig(n_trees=15, seed=7), fraction=0.8)
    return model


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance.append((marker.args[0], "PASS" if report.passed else "FAIL"))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label, verdict in sorted(_acceptance):
        terminalreporter.write_line(f"{verdict}  {label}")
