import pytest
import torch

from personsynth.data import collate, make_synthetic_pair, sample_to_inputs


def central_difference(fn, tensors, h=1e-4):
    """Numerical gradient of scalar ``fn()`` w.r.t. each tensor in ``tensors`` (perturbed in place)."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(fn())
                flat[i] = orig - h
                down = float(fn())
                flat[i] = orig
                gflat[i] = (up - down) / (2 * h)
            grads.append(g)
    return grads


def relative_error(analytic, numeric):
    scale = max(numeric.abs().max().item(), 1e-8)
    return (analytic - numeric).abs().max().item() / scale


def check_gradients(fn, tensors, h=1e-4, tol=1e-3):
    """Compare autograd against central differences; returns the worst relative error."""
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [t.grad.detach().clone() for t in tensors]
    numeric = central_difference(fn, tensors, h)
    worst = max(relative_error(a, n) for a, n in zip(analytic, numeric))
    assert worst < tol, f"gradient mismatch: relative error {worst:.3e}"
    return worst


@pytest.fixture
def sample():
    return make_synthetic_pair(3, 64, 64)


@pytest.fixture
def batch(sample):
    return collate([sample_to_inputs(sample)])


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}  ({duration:.1f}s)")
