import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))

from aprpose.checkpoint import save_model  # noqa: E402
from aprpose.data import SyntheticWorldConfig, load_manifest, write_synthetic_dataset  # noqa: E402
from aprpose.geometry import minmax_fit  # noqa: E402
from aprpose.model import AprModel, reduced_config  # noqa: E402
from aprpose.training import LossParams  # noqa: E402


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    write_synthetic_dataset(str(out), SyntheticWorldConfig(seed=7, frames=6, test_frames=2))
    return out


@pytest.fixture(scope="session")
def checkpoints(synth_dir, tmp_path_factory):
    """Untrained reduced-config checkpoints per modality, with stats fitted on the train split."""
    out = tmp_path_factory.mktemp("ckpt")
    stats = minmax_fit(load_manifest(synth_dir / "train.csv").positions())
    paths = {}
    for i, modality in enumerate(("image", "bev", "points")):
        torch.manual_seed(i)
        path = out / f"{modality}.bin"
        save_model(path, AprModel(reduced_config(modality)), LossParams(), stats)
        paths[modality] = path
    return paths


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(item.user_properties).get("detail", "")
        passed = report.passed and not hasattr(report, "wasxfail")
        item.config._criteria = getattr(item.config, "_criteria", [])
        item.config._criteria.append((marker.args[0], passed, detail))


def pytest_terminal_summary(terminalreporter, config):
    rows = getattr(config, "_criteria", [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in rows:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}" + (f": {detail}" if detail else ""))
