import json
import subprocess
import sys

import numpy as np
import pytest

from iqa_rl import kernels

BACKENDS = kernels.backends()
needs_both = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def random_batch(rng, n_groups=4, max_g=6):
    sizes = rng.integers(1, max_g + 1, size=n_groups)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    ratings = np.round(rng.uniform(1, 5, size=offsets[-1]), 2)
    mos = np.round(rng.uniform(1, 5, size=n_groups), 2)
    mos[rng.integers(n_groups)] = mos[0]  # force some ties
    return ratings, offsets, mos


class TestAgreement:
    @needs_both
    def test_rank_rewards(self):
        rng = np.random.default_rng(0)
        py, cy = BACKENDS["python"], BACKENDS["cython"]
        for _ in range(50):
            args = random_batch(rng)
            np.testing.assert_allclose(py.rank_rewards(*args, 1e-4), cy.rank_rewards(*args, 1e-4), rtol=0, atol=1e-13)

    @needs_both
    def test_cdf(self):
        z = np.linspace(-8, 8, 101)
        py, cy = BACKENDS["python"], BACKENDS["cython"]
        np.testing.assert_allclose([py.normal_cdf(v) for v in z], [cy.normal_cdf(v) for v in z], atol=1e-15)

    @needs_both
    def test_covariance_and_surrogates(self):
        rng = np.random.default_rng(1)
        py, cy = BACKENDS["python"], BACKENDS["cython"]
        n = 40
        lp_new, lp_old = rng.normal(-1, 0.3, n), rng.normal(-1, 0.3, n)
        adv = np.repeat(rng.normal(size=8), 5)
        valid = (rng.random(n) > 0.2).astype(np.float64)
        valid[::5] = 1.0
        offsets = np.arange(0, n + 1, 5, dtype=np.int64)
        np.testing.assert_allclose(py.token_covariance(lp_new, adv), cy.token_covariance(lp_new, adv), atol=1e-14)
        np.testing.assert_allclose(
            py.trajectory_surrogates(lp_new, lp_old, adv, valid, offsets, 0.2),
            cy.trajectory_surrogates(lp_new, lp_old, adv, valid, offsets, 0.2),
            atol=1e-14,
        )

    @needs_both
    def test_laplacian(self):
        img = np.random.default_rng(2).uniform(0, 255, size=(20, 30))
        py, cy = BACKENDS["python"], BACKENDS["cython"]
        assert py.laplacian_variance(img) == pytest.approx(cy.laplacian_variance(img), rel=1e-12)


class TestSelection:
    def test_env_forces_fallback(self):
        code = "from iqa_rl import kernels; print(kernels.BACKEND)"
        out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                             env={"IQA_RL_PURE_PYTHON": "1", "PATH": ""}, check=True)
        assert out.stdout.strip() == "python"

    def test_backend_known(self):
        assert kernels.BACKEND in BACKENDS


class TestBenchmark:
    def test_runs(self, tmp_path, capsys):
        import importlib.util
        from pathlib import Path

        path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
        spec = importlib.util.spec_from_file_location("bench_kernels", path)
        bench = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(bench)
        out = tmp_path / "bench.json"
        assert bench.main(["--repeat", "1", "--json", str(out)]) == 0
        assert {r["kernel"] for r in json.loads(out.read_text())} == {
            "rank_rewards", "token_covariance", "trajectory_surrogates", "laplacian_variance"}
