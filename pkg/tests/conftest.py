import pytest

from agespectra.model import KernelSpec, RateField, ScenarioConfig


def make(beta="2", mu="0.5", *, cutoff=None, kernel=None, n_x=41, n_a=81, D=1.0, **kw):
    """Small scenario for unit tests."""
    return ScenarioConfig.build(
        n_x=n_x,
        n_a=n_a,
        kernel=kernel or KernelSpec("epanechnikov"),
        rates=RateField(beta, mu, beta_cutoff_age=cutoff),
        diffusion_rate=D,
        **kw,
    )


@pytest.fixture
def scenario():
    return make


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("SPECTRA_SEED", raising=False)
