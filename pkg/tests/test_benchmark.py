import json
import runpy
from pathlib import Path

BENCH = Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"


def test_benchmark_runs(tmp_path, capsys):
    main = runpy.run_path(str(BENCH))["main"]
    out = tmp_path / "bench.json"
    main(["--steps", "20", "--repeat", "1", "--json", str(out)])
    rows = json.loads(out.read_text())
    assert [r["g"] for r in rows] == [0.0, 10.0, 300.0]
    for r in rows:
        assert r.get("max_diff", 0.0) < 1e-10
    assert "us/step" in capsys.readouterr().out
