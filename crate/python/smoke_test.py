"""Smoke test for the khj extension module.

Build and install first, e.g.
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/khj-*.whl
"""

import json
import math
from pathlib import Path

import khj

EXAMPLES = Path(__file__).resolve().parent.parent / "crates" / "core" / "examples"


def check_kernel():
    assert abs(khj.levy_integral(0.5, 1.0) - 4.0) < 1e-8
    assert abs(khj.levy_integral(0.5, 0.75) - 6.0) < 1e-8
    assert khj.levy_integral(0.5, 0.5) is None


def check_flux_limiter():
    # one outgoing edge with H = |p| and no data: the limiter sits at 0
    abs_h = json.dumps({"family": "abs", "c_h": 1.0})
    assert abs(khj.fl_minus([0.0], [abs_h], 0.0)) < 1e-8
    shifted = json.dumps({"family": "shifted", "b": 0.3, "c_h": 1.0})
    v = khj.fl_minus([0.2, -0.1], [abs_h, shifted], 0.1, [1.0, -1.0])
    assert math.isfinite(v)


def check_star():
    p = khj.Problem.from_file(str(EXAMPLES / "star3.json"))
    assert p.validate() == []
    assert p.edge_ids == ["E1", "E2", "E3"]
    p.set_h(0.02)
    s = p.solve("junction")
    assert s.ok, s.error
    assert len(s.theta) == 1 and all(abs(r) <= 1e-8 for r in s.residuals)
    x, u = s.arcs("E1"), s.values("E1")
    assert len(x) == len(u) == 51
    assert abs(u[0] - s.theta[0]) < 1e-12
    report = json.loads(s.report_json())
    assert report["ok"] and report["theta"] == s.theta


def check_errors():
    bad = json.loads((EXAMPLES / "star3.json").read_text())
    bad["kernels"]["sigma"] = 1.2
    p = khj.Problem.from_json(json.dumps(bad))
    assert any("sigma" in m for m in p.validate())
    try:
        khj.Problem.from_json("{}")
    except ValueError:
        pass
    else:
        raise AssertionError("empty document accepted")


if __name__ == "__main__":
    check_kernel()
    check_flux_limiter()
    check_star()
    check_errors()
    print("khj smoke test passed")
