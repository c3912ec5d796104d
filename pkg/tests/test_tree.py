import json

import numpy as np
import pytest

from gridrisk import gradient
from gridrisk import tree as mtree
from gridrisk.assess import AssessmentConfig, enumeration_risk, run_assessment
from gridrisk.cases import toy6
from gridrisk.network import build_topology, parse_case


def chain3_case():
    """Generator feeding two loads over a two-branch chain."""
    doc = {
        "base_mva": 100.0,
        "buses": [{"id": 1}, {"id": 2}, {"id": 3}],
        "branches": [
            {"id": 1, "from": 1, "to": 2, "y": 10.0, "f_max": 200.0},
            {"id": 2, "from": 2, "to": 3, "y": 10.0, "f_max": 80.0},
        ],
        "generators": [
            {"id": 1, "bus": 1, "p": 150.0, "p_min": 0.0, "p_max": 220.0,
             "ramp": 8.0, "cost": 90.0}
        ],
        "loads": [
            {"id": 1, "bus": 2, "p": 90.0, "cost": 10000.0},
            {"id": 2, "bus": 3, "p": 60.0, "cost": 9000.0},
        ],
        "failure_rate": {"lambda_0": 2e-4, "lambda_1": 2e-2, "knee": 0.6},
    }
    return parse_case(json.dumps(doc))


def build_tree(case, depth, outages=(), **kwargs):
    cfg = AssessmentConfig(
        tau_d=15.0, t_max=15.0 * depth, attempts=500, policy="exhaustive", **kwargs
    )
    return run_assessment(case, set(outages), cfg)


class TestExpansion:
    def test_depth_one_child_count(self):
        case = chain3_case()
        a = build_tree(case, depth=1)
        # at most one node per branch event plus the no-outage child
        leaves = [n for n in a.tree.nodes.values() if n.level == 1]
        assert 1 <= len(leaves) <= case.n_branch + 1
        assert all(n.terminal for n in leaves)

    def test_exhaustive_visits_each_leaf_once(self):
        case = chain3_case()
        a = build_tree(case, depth=2)
        nodes = a.tree.nodes
        # <= 3 + 3*3 nodes for two branches, depth 2
        assert len(nodes) - 1 <= 12
        leaves = [n for n in nodes.values() if n.terminal]
        # the number of attempts that expanded something equals the leaf count
        assert len(a.history.attempts) >= len(leaves)
        assert a.tree.root.fully_explored()

    def test_probability_mass_conserved(self):
        case = chain3_case()
        a = build_tree(case, depth=2)
        for node in a.tree.nodes.values():
            if node.child_events is None:
                continue
            mass = float(node.child_probs.sum()) + node.prob_no_outage
            assert abs(mass - 1.0) <= 1e-12

    def test_fixed_seed_reproducible_paths(self):
        case = chain3_case()
        cfg = AssessmentConfig(tau_d=15.0, t_max=30.0, attempts=40,
                               policy="probability-sampled", seed=9)
        a = run_assessment(case, set(), cfg)
        b = run_assessment(case, set(), cfg)
        assert sorted(a.tree.nodes.keys()) == sorted(b.tree.nodes.keys())
        assert a.r_prime == b.r_prime

    def test_best_first_explores_risky_child_first(self):
        case = toy6()
        cfg = AssessmentConfig(tau_d=15.0, t_max=30.0, attempts=3,
                               policy="best-first", seed=0)
        a = run_assessment(case, {3}, cfg)
        assert len(a.tree.nodes) > 1


class TestBackwardUpdate:
    def test_single_level_hand_value(self):
        # one child with Pr=0.1 and C=500 -> root subsequent risk 50
        case = chain3_case()
        topo = build_topology(case)
        t = mtree.MarkovTree(case, topo, case.base_state(), tau_d=15.0, depth=1,
                             gradients=False)
        child = mtree.TreeNode(
            label=(1,), level=1, event_id=1, prob=0.1, cost=500.0,
            state=case.base_state(), topo=topo, terminal=True,
        )
        t.root.children[1] = child
        t.nodes[(1,)] = child
        mtree.backward_risk_update(t, [child])
        assert child.c_equiv == 500.0
        assert t.root.subsequent_risk == pytest.approx(50.0, abs=1e-12)

    def test_leaf_equivalent_cost_is_cost(self):
        case = chain3_case()
        a = build_tree(case, depth=2)
        for node in a.tree.nodes.values():
            if node.terminal:
                assert node.c_equiv == node.cost

    def test_c_equiv_at_least_cost(self):
        case = chain3_case()
        a = build_tree(case, depth=2)
        for node in a.tree.nodes.values():
            assert node.c_equiv >= node.cost - 1e-12

    def test_replay_leaves_everything_unchanged(self):
        case = chain3_case()
        a = build_tree(case, depth=2)
        t = a.tree
        snapshot = {
            k: (v.c_equiv, None if v.s_accum is None else v.s_accum.copy())
            for k, v in t.nodes.items()
        }
        # replay the left-most path with a fresh attempt index
        node, path = t.root, []
        while not node.terminal:
            node = node.children[(node.child_events + [0])[0]]
            path.append(node)
        mtree.backward_risk_update(t, path)
        gradient.backward_gradient_update(t, path, attempt=99999)
        for k, (c_eq, s) in snapshot.items():
            assert t.nodes[k].c_equiv == c_eq
            if s is not None:
                assert np.array_equal(t.nodes[k].s_accum, s)


class TestRiskEstimate:
    def test_exhaustive_matches_enumeration(self):
        case = chain3_case()
        a = build_tree(case, depth=2)
        oracle = enumeration_risk(case, a.topo, a.x_root, 15.0, 2)
        assert a.r_prime == pytest.approx(oracle, rel=1e-9)
        risk, r_prime = mtree.risk_estimate(a.tree)
        assert risk == pytest.approx(a.control_cost + r_prime)

    def test_zero_rate_case_zero_risk(self):
        doc = json.loads(
            __import__("gridrisk.network", fromlist=["serialize_case"]).serialize_case(
                chain3_case()
            )
        )
        for br in doc["branches"]:
            br.update({"lambda_0": 0.0, "lambda_1": 0.0, "overload_slope": 0.0,
                       "lambda_max": 0.0})
        case = parse_case(json.dumps(doc))
        a = build_tree(case, depth=2)
        assert a.r_prime == pytest.approx(0.0, abs=1e-9)

    def test_monotone_growth_under_enumeration(self):
        case = chain3_case()
        a = build_tree(case, depth=2)
        rp = a.history.r_prime
        assert all(rp[i] <= rp[i + 1] + 1e-12 for i in range(len(rp) - 1))

    def test_empty_budget_empty_history(self):
        case = chain3_case()
        cfg = AssessmentConfig(tau_d=15.0, t_max=30.0, attempts=0, policy="exhaustive")
        a = run_assessment(case, set(), cfg)
        assert a.history.attempts == []


class TestDumps:
    def test_tree_csv_roundtrip(self, tmp_path):
        case = chain3_case()
        a = build_tree(case, depth=2)
        path = tmp_path / "tree.csv"
        mtree.dump_tree_csv(a.tree, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "# schema_version=1"
        import csv

        rows = list(csv.DictReader(lines[1:]))
        assert len(rows) == len(a.tree.nodes)
        root_row = next(r for r in rows if r["label"] == "root")
        assert float(root_row["r_prime"]) == pytest.approx(a.r_prime)


def test_exhaustive_refuses_huge_label_spaces(rts96):
    cfg = AssessmentConfig(tau_d=15.0, t_max=150.0, attempts=10, policy="exhaustive")
    with pytest.raises(ValueError, match="exceeds"):
        run_assessment(rts96, {22, 23, 24}, cfg)
