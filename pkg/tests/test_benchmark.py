import importlib.util
from pathlib import Path


def test_benchmark_smoke():
    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    rows = mod.run(samples=2000, repeat=1)
    assert len(rows) == 4 and all(r["numba_s"] > 0 and r["numpy_s"] > 0 for r in rows)
