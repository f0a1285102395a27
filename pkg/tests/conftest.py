import numpy as np
import pytest

from exspot.autodiff import Tape, Tensor, backward


def finite_diff_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued fn at x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = fn(x)
        flat[i] = keep - h
        lo = fn(x)
        flat[i] = keep
        out[i] = (hi - lo) / (2.0 * h)
    return g


def check_gradient(fn, x: np.ndarray, rtol: float = 1e-6, h: float = 1e-5):
    """Compare reverse-mode gradient of fn against finite differences.

    fn takes a Tensor and returns a scalar Tensor; the comparison is
    relative with a small absolute floor so near-zero entries don't blow
    the ratio up.
    """
    t = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    with Tape() as tape:
        loss = fn(t)
        backward(loss, tape)
    analytic = t.grad
    assert analytic is not None
    numeric = finite_diff_grad(lambda a: float(fn(Tensor(a)).data), np.asarray(x, float), h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    rel = np.abs(analytic - numeric) / denom
    worst = float(rel.max()) if rel.size else 0.0
    assert worst < rtol, f"worst relative gradient error {worst:.3e} >= {rtol:.0e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def record_criterion(request):
    """Collect an acceptance-criterion verdict for the end-of-run summary."""

    def _record(number: int, name: str, ok: bool, detail: str = ""):
        lines = getattr(request.config, "_criterion_lines", None)
        if lines is None:
            lines = []
            request.config._criterion_lines = lines
        status = "PASS" if ok else "FAIL"
        lines.append((number, f"criterion {number:2d} {name}: {status}  {detail}".rstrip()))

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
