import numpy as np
import pytest

from fedzip import _backend
from fedzip.quantize import QuantizedTensor

BACKENDS = _backend.available()


@pytest.fixture(params=BACKENDS)
def kernels(request):
    return _backend.get(request.param)


def make_quantized(n, dominant_fraction, rng, name="t", clustered=False, centroids=(0.0, -0.5, 0.75)):
    """Random k=3 labels with label 0 holding about ``dominant_fraction`` of the elements."""
    labels = np.zeros(n, dtype=np.uint8)
    n_other = int(round((1 - dominant_fraction) * n))
    n_other = min(n_other, n - 1) if n > 1 else 0
    if n_other:
        if clustered:
            start = int(rng.integers(0, n - n_other + 1))
            pos = np.arange(start, start + n_other)
        else:
            pos = rng.choice(n, size=n_other, replace=False)
        labels[pos] = rng.integers(1, 3, size=n_other)
    return QuantizedTensor(name, (n,), "weight", labels, np.asarray(centroids, dtype=np.float32))


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
