import os
from pathlib import Path

import numpy as np
import pytest

from autoar import DATASET_PRESETS, MultiChannelSeries

collect_ignore_glob = ["../examples/*"]


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(ident, description): ties a test to one acceptance criterion",
    )
    config._acceptance_outcomes = {}


def data_dir() -> Path:
    return Path(os.environ.get("AUTOAR_DATA", Path(__file__).resolve().parent.parent / "data"))


def dataset_path(preset_key: str) -> Path:
    """Path of a benchmark CSV, or skip the calling test if it is absent."""
    preset = DATASET_PRESETS[preset_key]
    path = data_dir() / preset.filename
    if not path.is_file():
        pytest.skip(
            f"benchmark file {preset.filename} not found under {data_dir()} "
            f"(set AUTOAR_DATA or place the public CSVs in ./data)"
        )
    return path


def make_series(values, names=None) -> MultiChannelSeries:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if names is None:
        names = tuple(f"ch{i}" for i in range(values.shape[1]))
    return MultiChannelSeries(values, names)


def ar1_series(t_len=5000, alpha=0.8, noise=0.1, seed=0, channels=1) -> MultiChannelSeries:
    rng = np.random.default_rng(seed)
    out = np.empty((t_len, channels))
    for c in range(channels):
        eps = rng.normal(0.0, noise, t_len)
        x = np.empty(t_len)
        x[0] = eps[0]
        for t in range(1, t_len):
            x[t] = alpha * x[t - 1] + eps[t]
        out[:, c] = x
    return make_series(out)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting -----------------------------------------------------
# One PASS/FAIL/SKIP line per criterion is printed at the end of the run.

def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        outcome = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _OUTCOMES.setdefault(report.nodeid, []).append(outcome)


_OUTCOMES: dict[str, list[str]] = {}
_DESCRIPTIONS: dict[str, tuple[str, str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("acceptance")
        if marker is not None:
            _DESCRIPTIONS[item.nodeid] = (str(marker.args[0]), str(marker.args[1]))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _DESCRIPTIONS:
        return
    per_criterion: dict[str, dict] = {}
    for nodeid, (ident, desc) in sorted(_DESCRIPTIONS.items()):
        outcomes = _OUTCOMES.get(nodeid, [])
        entry = per_criterion.setdefault(ident, {"desc": desc, "outcomes": []})
        entry["outcomes"].extend(outcomes)
    lines = ["", "acceptance criteria:"]
    for ident in sorted(per_criterion, key=lambda s: (len(s), s)):
        entry = per_criterion[ident]
        outcomes = entry["outcomes"] or ["NOT RUN"]
        if "FAIL" in outcomes:
            status = "FAIL"
        elif all(o == "SKIP" for o in outcomes):
            status = "SKIP"
        elif "SKIP" in outcomes:
            status = "PASS (partial: some cases skipped)"
        else:
            status = "PASS"
        lines.append(f"  [{status}] criterion {ident}: {entry['desc']}")
    terminalreporter.write_line("\n".join(lines))
