import pytest

from dlczsim.config import build_experiment, default_config


@pytest.fixture(scope="session")
def paper_cfg():
    """Calibrated default configuration (paper operating point, p_w = 1%)."""
    return default_config()


@pytest.fixture(scope="session")
def rephase_exp(paper_cfg):
    return build_experiment(paper_cfg.replace(run_scenario="rephase"))


@pytest.fixture(scope="session")
def standard_exp(paper_cfg):
    return build_experiment(paper_cfg.replace(run_scenario="standard"))
