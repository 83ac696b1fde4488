import numpy as np
import pytest

from actbench.descriptor import FeatureSet
from actbench.geometry import SpdDescriptor, SubspaceDescriptor


def random_spd(rng, d=14, spread=1.0):
    A = rng.normal(size=(d, d))
    Q, _ = np.linalg.qr(A)
    w = np.exp(rng.normal(scale=spread, size=d))
    return SpdDescriptor((Q * w) @ Q.T)


def random_subspace(rng, d=14, m=3):
    Q, _ = np.linalg.qr(rng.normal(size=(d, m)))
    return SubspaceDescriptor(Q)


def blob_frame(r, c, cy, cx, sigma=2.5, peak=250.0):
    yy, xx = np.mgrid[0:r, 0:c]
    return peak * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    from actbench.videoio import synthesize_dataset
    out = tmp_path_factory.mktemp("synth")
    return synthesize_dataset(6, 10, seed=1, out_dir=out)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    from actbench.videoio import synthesize_dataset
    out = tmp_path_factory.mktemp("small")
    return synthesize_dataset(3, 4, seed=3, out_dir=out)


@pytest.fixture(scope="session")
def feature_cache():
    from actbench.harness import FeatureCache
    return FeatureCache()


def feature_set(rows):
    return FeatureSet(np.asarray(rows, dtype=float))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, title, detail = results[n]
        terminalreporter.write_line(f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
