"""Smoke test for the psdsf Python extension.

Build and install first, e.g.:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/psdsf-*.whl
"""

import math

import psdsf


def close(a, b, tol=1e-6):
    return all(math.isclose(x, y, abs_tol=tol) for x, y in zip(a, b, strict=True))


def main():
    ex1 = psdsf.fixture("ex1")
    assert ex1.user_ids == ["u1", "u2", "u3"]

    rdm = psdsf.solve(ex1, "psdsf-rdm")
    assert rdm.converged and close(rdm.totals, [3, 3, 6]), rdm
    assert psdsf.verify(ex1, rdm.allocation, 1)

    tsf = psdsf.solve(ex1, "tsf")
    assert close(tsf.totals, [2, 2, 8]), tsf
    assert not psdsf.verify(ex1, tsf.allocation, 1)

    checks = {c.name: c for c in psdsf.check_properties(ex1, rdm.allocation, "rdm")}
    assert checks["sharing-incentive"] and checks["envy-freeness"]
    assert checks["bottleneck-fairness"].applicable and checks["bottleneck-fairness"]

    text = psdsf.alloc_csv(ex1, rdm.allocation)
    assert close(sum(psdsf.parse_alloc_csv(ex1, text), []), sum(rdm.allocation, []), 1e-8)

    ex3 = psdsf.fixture("ex3")
    tdm = psdsf.solve(ex3, "psdsf-tdm")
    assert close(tdm.totals, [210, 105, 82.5, 27.5]), tdm

    scenario = psdsf.Scenario.from_json(ex1.to_json())
    trace = psdsf.simulate(scenario, 10.0)
    assert trace.all_feasible() and len(trace) > 0
    assert close([sum(row) for row in trace.allocations[-1]], [3, 3, 6])
    assert trace.to_csv().startswith("time,server,resource,utilization\n")

    try:
        psdsf.solve(ex1, "drf")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown mechanism accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
