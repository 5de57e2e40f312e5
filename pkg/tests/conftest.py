import hashlib
import inspect
import time
from dataclasses import replace
from pathlib import Path

import pytest
import torch
from hypothesis import HealthCheck, settings

import lenspatch.data
import lenspatch.detector
from lenspatch import pipeline
from lenspatch.config import RunConfig, format_config
from lenspatch.detector import load_detector, save_detector

settings.register_profile(
    "lenspatch",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("lenspatch")

torch.set_num_threads(1)

ROOT = Path(__file__).resolve().parents[1]


# -- acceptance bookkeeping -------------------------------------------------

ACCEPTANCE_TITLES = {
    1: "renderer closed-form values and blend identities",
    2: "analytic gradients vs central finite differences",
    3: "average precision vs brute-force enumeration",
    4: "loss arithmetic on worked examples",
    5: "desk-scale end-to-end attack",
    6: "sweep trends over n_shapes and alpha_max",
    7: "cmd_train byte-identical reruns",
    8: "fooling-rate fixtures and 1 - recall consistency",
}
_acceptance: dict[int, list[tuple[str, str, str]]] = {}
_acceptance_notes: dict[int, list[str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _acceptance.setdefault(n, []).append((item.name, rep.outcome, rep.longreprtext.splitlines()[-1]
                                              if rep.failed and rep.longreprtext else ""))


@pytest.fixture
def note(request):
    """Attach a one-line measurement to the acceptance summary of this test's criterion."""
    marker = request.node.get_closest_marker("criterion")

    def add(text: str):
        if marker is not None:
            _acceptance_notes.setdefault(marker.args[0], []).append(text)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_TITLES):
        results = _acceptance.get(n)
        if not results:
            tr.write_line(f"AC{n} NOT RUN  {ACCEPTANCE_TITLES[n]}")
            continue
        ok = all(outcome == "passed" for _, outcome, _ in results)
        status = "PASS" if ok else "FAIL"
        tr.write_line(f"AC{n} {status}  {ACCEPTANCE_TITLES[n]} ({len(results)} checks)")
        for text in _acceptance_notes.get(n, []):
            tr.write_line(f"      {text}")
        for name, outcome, why in results:
            if outcome != "passed":
                tr.write_line(f"      {name}: {outcome} {why}")


# -- shared heavy fixtures ------------------------------------------------------

def _detector_key(cfg: RunConfig) -> str:
    src = inspect.getsource(lenspatch.detector) + inspect.getsource(lenspatch.data)
    blob = repr((cfg.detector.train_scenes, cfg.detector.holdout_scenes, cfg.detector.data_seed,
                 cfg.detector.model)) + src
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@pytest.fixture(scope="session")
def toy_config(tmp_path_factory) -> RunConfig:
    out = tmp_path_factory.mktemp("toy_run")
    cfg = RunConfig(base_dir=out)
    return replace(cfg, run=replace(cfg.run, out=str(out)),
                   detector=replace(cfg.detector, checkpoint=str(out / "detector.pt")))


@pytest.fixture(scope="session")
def toy_detector(toy_config, request):
    """The default toy detector; cached in the pytest cache keyed by its source and config."""
    cache_dir = Path(request.config.cache.mkdir("lenspatch-detector"))
    cached = cache_dir / f"{_detector_key(toy_config)}.pt"
    t0 = time.perf_counter()
    if cached.is_file():
        det = load_detector(cached)
        trained = False
    else:
        det = pipeline.train_detector(toy_config)
        save_detector(det, cached)
        trained = True
    save_detector(det, toy_config.path(toy_config.detector.checkpoint))
    det.train_seconds = time.perf_counter() - t0 if trained else None
    return det


@pytest.fixture(scope="session")
def toy_data(toy_config):
    return pipeline.attack_data(toy_config)


@pytest.fixture
def config_file(toy_config, tmp_path):
    """Write the toy config (plus `section.key` overrides) to a file; returns its path."""

    def write(name="run.cfg", **overrides):
        lines = []
        for line in format_config(toy_config).splitlines():
            key = line.split(" = ", 1)[0]
            if key.replace(".", "__") in overrides:
                line = f"{key} = {overrides.pop(key.replace('.', '__'))!r}"
            lines.append(line)
        if overrides:
            raise KeyError(f"no such config keys: {sorted(overrides)}")
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n")
        return path

    return write
