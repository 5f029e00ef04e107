"""Smoke test for the habitree Python extension.

Build and install first:
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""
import json

import habitree_py as ht


def main():
    bond = ht.bond_curve(0.0, 1.0, 0.25)
    assert abs(bond[0][1] - 25 / 288) < 1e-12, bond[0]
    assert abs(bond[-1][1] - 13 / 59) < 1e-12, bond[-1]

    fig2 = ht.figure_data(2)
    assert len(fig2) == 101
    assert abs(fig2[0][1] - 7 / 17) < 1e-12

    economy = {
        "horizon": 1,
        "nodes": [
            {"id": "0", "parent": None, "prob": 1.0},
            {"id": "u", "parent": "0", "prob": 0.5},
            {"id": "d", "parent": "0", "prob": 0.5},
        ],
        "beta": 0.2,
        "agents": [
            {"gamma": 2.0, "rho": 0.0, "endowment": {"0": 0.6, "u": 2.4, "d": 1.8}},
            {"gamma": 3.0, "rho": 0.05, "endowment": {"0": 0.4, "u": 1.6, "d": 1.2}},
        ],
    }
    eq = json.loads(ht.equilibrium(json.dumps(economy)))
    assert max(abs(h) for h in eq["excess_demand"]) < 1e-10
    assert abs(sum(eq["lambdas"]) - 1.0) < 1e-12

    market = {
        "horizon": 1,
        "nodes": economy["nodes"],
        "interest": {"u": 0.0, "d": 0.0},
        "assets": [{"name": "stock", "prices": {"0": 1.0, "u": 1.2, "d": 0.9}}],
    }
    agent = {"gamma": 2.0, "rho": 0.0, "beta": 0.3, "endowment": {"0": 1.0, "u": 0.5, "d": 0.5}}
    sol = json.loads(ht.solve(json.dumps({"market": market, "agent": agent})))
    assert sol["foc_residual"] < 1e-9

    try:
        ht.solve("{")
    except ValueError as e:
        assert "malformed" in str(e)
    else:
        raise AssertionError("malformed JSON accepted")

    report = json.loads(ht.verify())
    assert report["failed"] == 0, report["counts"]
    print("smoke test passed:", report["total"], "invariant instances")


if __name__ == "__main__":
    main()
