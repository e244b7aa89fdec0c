"""Smoke test for the Python bindings.

    pip install --no-build-isolation -e crates/python
    python python/smoke_test.py
"""

import json

import domain_bridge as db


def main():
    universe = db.Universe.generate(0, 12, 32, 3, [3, 3, 3])
    config = db.Config(lambda_=0.25, m_samples_per_node=32, n_final_samples=64, n_enrich_variants=6)
    assert config.lambda_ == 0.25
    assert config == db.Config.from_json(config.to_json())

    roots = universe.token_names()
    for c in range(universe.num_classes):
        report = universe.search(roots, c, config)
        truth = universe.class_description(c)
        best, exact = universe.brute_force(c, config)
        found = universe.objective(report.best_description, c, config, explicit_seeds=True)
        print(f"class {c}: found {report.best_description!r} truth {truth!r} brute force {best!r}")
        assert report.best_description == truth
        assert abs(found.value - exact.value) < 0.05

        tree = db.SearchTree.from_json(report.tree.to_json())
        tree.validate()
        assert tree.to_json() == report.tree.to_json()
        assert tree.is_complete and len(tree) > 0
        assert json.loads(report.to_json())["best_description"] == truth

    assert str(db.Description("  Green   PARROT ")) == db.canonicalize("green parrot")
    assert db.explicit_seed_set(0, 4) == db.explicit_seed_set(0, 8)[:4]

    try:
        db.Config(lamda=1.0)
    except db.DomainBridgeError as e:
        assert "lamda" in str(e)
    else:
        raise AssertionError("unknown config field accepted")

    other = db.Config(lambda_=0.5)
    try:
        universe.resume(report.tree, 0, other)
    except db.ConfigMismatchError:
        pass
    else:
        raise AssertionError("resume under another config accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
