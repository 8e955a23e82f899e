"""Smoke test for the `mmot` extension module.

Build and install first:

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/mmot-*.whl

Outputs are validated against the schemas in ../schemas when `jsonschema`
is installed.
"""

import json
import math
import pathlib
import sys

import mmot

SCHEMAS = pathlib.Path(__file__).resolve().parent.parent / "schemas"


def validator(name):
    try:
        import jsonschema
        from referencing import Registry, Resource
    except ImportError:
        return None
    registry = Registry()
    for path in SCHEMAS.glob("*.schema.json"):
        resource = Resource.from_contents(json.loads(path.read_text()))
        registry = registry.with_resource(path.name, resource)
        registry = registry.with_resource(resource.id(), resource)
    schema = json.loads((SCHEMAS / f"{name}.schema.json").read_text())
    return jsonschema.Draft202012Validator(schema, registry=registry)


def check(name, document):
    v = validator(name)
    if v is not None:
        v.validate(document)


def main():
    c, r, l = mmot.Measure.counterexample_parts(1, 1)
    assert (len(c), len(r), len(l)) == (1, 2, 2)
    check("measure", json.loads(c.to_json()))
    assert mmot.Measure.from_json(c.to_json()) == c

    g0 = mmot.gamma0(1, 1)
    assert g0.cost("repulsive") == -298.125
    assert g0.cost("sum-square") == 0.0
    cert = mmot.hyperplane_certificate(g0)
    assert cert["verdict"] == "certified_optimal" and cert["gap"] == 0.0
    check("certificate", cert)
    check("plan", g0.to_dict())

    lp = mmot.solve_lp([c, r, l])
    assert lp.value == -298.125, lp.value
    assert sorted(lp.plan.tuples()) == sorted(g0.tuples())
    check("solve_report", lp.to_dict())

    sk = mmot.solve_sinkhorn([c, r, l], epsilon=0.5)
    assert sk.converged and abs(sk.value - lp.value) < 0.5 * math.log(4) + 1e-6
    check("solve_report", sk.to_dict())

    mu = mmot.Measure.counterexample(1, 1)
    full = mmot.solve_lp([mu, mu, mu])
    assert full.value == -298.125

    eq = mmot.Measure.equal_mass(6)
    monge = mmot.monge_search(eq, 3, mode="local", seed=0)
    assert monge.value >= mmot.solve_lp([eq, eq, eq]).value - 1e-9

    report = mmot.reproduce_counterexample(1, [1])
    assert report["passed"], [c for r in report["results"] for c in r["checks"] if not c["passed"]]
    check("experiment_report", report)

    gap = mmot.gap_experiment([6], mode="local", seed=0)
    check("experiment_report", gap)

    try:
        mmot.gap_experiment([7])
    except ValueError:
        pass
    else:
        raise AssertionError("m=7 accepted")

    print(f"mmot {mmot.__version__}: smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
