import numpy as np
import pytest
import torch

from sasa_iv.model import ModelConfig, build_model
from sasa_iv.synth import generate, make_spec, random_adjacency


def tiny_config(**kw):
    base = dict(d_h=4, d_g=6, batch_size=8, epochs=1, seed=0, head_size=8)
    base.update(kw)
    return ModelConfig(**base)


def tiny_net(n_vars=3, n_steps=4, dtype=torch.float64, **kw):
    return build_model(n_vars, n_steps, tiny_config(**kw), dtype=dtype)


def tiny_data(n_vars=3, n_steps=4, count=8, seed=0, shift=0.0):
    A = random_adjacency(n_vars, 0.5, seed=seed)
    spec = make_spec(A, seed=seed, N=n_steps)
    ds = generate(spec, count, seed=seed)
    return ds.X + shift, ds.y


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE = {}


def report(number, title, passed, detail):
    """Record one acceptance line; printed together at the end of the run."""
    ACCEPTANCE[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
    print(ACCEPTANCE[number])
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
