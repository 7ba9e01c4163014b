import numpy as np
import pytest
import torch

from in2out.synthdata import SynthSpec, generate

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def fd_grad(f, x: torch.Tensor, h: float = 1e-6) -> torch.Tensor:
    """Central finite differences of scalar f at x (float64, one coordinate at a time)."""
    x = x.detach().clone()
    g = torch.zeros_like(x)
    flat, gflat = x.view(-1), g.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            fp = float(f(x))
            flat[i] = old - h
            fm = float(f(x))
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
    return g


def autograd(f, x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(f(x), x)
    return g


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    a, b = a.double(), b.double()
    denom = max(float(a.norm()), float(b.norm()), 1e-30)
    return float((a - b).norm()) / denom


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """A tiny on-disk synthetic dataset shared by CLI and trainer tests."""
    root = tmp_path_factory.mktemp("synth")
    generate(SynthSpec(n_clips=3, frames=10, width=48, height=24, seed=3), root)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
