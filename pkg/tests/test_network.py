"""Evidence-graph construction, connectivity, and anchoring paths."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import (
    DULA_15,
    DULA_30,
    DULA_45,
    HBA1C,
    SEMA_1,
    SEMA_2,
    connected_oracle,
)
from estimeta.ingest import ContrastEstimate, UncertaintySource
from estimeta.network import (
    EvidenceNetwork,
    NetworkError,
    anchoring_path,
    build_network,
    connected_components,
    export_edge_list,
    is_connected,
    laplacian,
    laplacian_connected,
)
from estimeta.pipeline import restrict_evidence, synthesize_meta
from estimeta.estimands import IntercurrentEventStrategy


def contrast(trial, t, c, se=0.5, md=1.0, endpoint="outcome"):
    return ContrastEstimate(
        trial_id=trial,
        treatment=t,
        comparator=c,
        endpoint=endpoint,
        estimand_label="primary",
        md=md,
        se=se,
        source=UncertaintySource.REPORTED_SE,
    )


@pytest.fixture(scope="module")
def case_network(case_base):
    meta = synthesize_meta(case_base, HBA1C, IntercurrentEventStrategy.HYPOTHETICAL)
    return build_network(restrict_evidence(case_base, meta, HBA1C).used)


class TestBuildNetwork:
    def test_case_study_slice(self, case_network):
        assert len(case_network.nodes) == 5
        assert len(case_network.edges) == 4
        award = [e for e in case_network.edges if e.trial_id == "AWARD-11"]
        assert len(award) == 2
        assert {e.comparator for e in award} == {DULA_15}

    def test_single_contrast(self):
        net = build_network([contrast("T1", "A", "B")])
        assert net.nodes == ("A", "B")
        assert len(net.edges) == 1

    def test_disjoint_pairs(self):
        net = build_network([contrast("T1", "A", "B"), contrast("T2", "C", "D")])
        assert len(net.nodes) == 4
        assert len(net.edges) == 2
        assert len(connected_components(net)) == 2

    def test_rejects_empty_and_mixed_endpoints(self):
        with pytest.raises(NetworkError):
            build_network([])
        with pytest.raises(NetworkError, match="mix endpoints"):
            build_network([contrast("T1", "A", "B"), contrast("T2", "B", "C", endpoint="other")])

    def test_input_order_invariance(self):
        contrasts = [
            contrast("T2", "C", "B", se=0.3),
            contrast("T1", "A", "B", se=0.5),
            contrast("T3", "C", "A", se=0.7),
        ]
        nets = [build_network(order) for order in (contrasts, contrasts[::-1])]
        assert nets[0].nodes == nets[1].nodes
        key = lambda e: (e.trial_id, e.treatment, e.comparator, e.weight)
        assert [key(e) for e in nets[0].edges] == [key(e) for e in nets[1].edges]

    def test_parallel_edges_kept(self):
        net = build_network([contrast("T1", "A", "B"), contrast("T2", "A", "B")])
        assert len(net.edges) == 2


class TestConnectivity:
    def test_case_study_connected(self, case_network):
        assert is_connected(case_network)
        (component,) = connected_components(case_network)
        assert len(component) == 5

    def test_removing_bridge_disconnects(self, case_network):
        remaining = [c for c in case_network.contrasts if c.trial_id != "SUSTAIN 7"]
        net = build_network(remaining)
        assert not is_connected(net)
        parts = connected_components(net)
        as_sets = {frozenset(p) for p in parts}
        assert frozenset({SEMA_1, SEMA_2}) in as_sets
        assert frozenset({DULA_15, DULA_30, DULA_45}) in as_sets

    def test_single_node_vacuously_connected(self):
        net = EvidenceNetwork(nodes=("A",), edges=(), trial_designs={})
        assert is_connected(net)
        assert connected_components(net) == (("A",),)

    def test_laplacian_structure(self, case_network):
        lap = laplacian(case_network)
        assert np.allclose(lap, lap.T)
        assert np.allclose(lap.sum(axis=1), 0.0)
        total_weight = sum(e.weight for e in case_network.edges)
        assert np.trace(lap) == pytest.approx(2.0 * total_weight, rel=1e-12)

    def test_laplacian_agrees_with_union_find_oracle(self):
        rng = np.random.default_rng(20240817)
        for _ in range(300):
            n_nodes = int(rng.integers(1, 13))
            nodes = [f"N{i}" for i in range(n_nodes)]
            n_edges = int(rng.integers(0, 2 * n_nodes + 1)) if n_nodes > 1 else 0
            pairs = []
            contrasts = []
            for k in range(n_edges):
                a, b = rng.choice(n_nodes, size=2, replace=False)
                pairs.append((nodes[a], nodes[b]))
                contrasts.append(contrast(f"T{k}", nodes[a], nodes[b], se=float(rng.uniform(0.05, 2.0))))
            if contrasts:
                net = build_network(contrasts)
                touched = set(net.nodes)
                expected = connected_oracle(net.nodes, [(e.treatment, e.comparator) for e in net.edges])
                assert laplacian_connected(net) == expected
                assert is_connected(net) == expected
                assert touched == {n for p in connected_components(net) for n in p}


class TestAnchoringPath:
    def test_case_study_anchoring(self, case_network):
        path = anchoring_path(case_network, SEMA_2, DULA_45)
        assert path is not None
        assert [e.trial_id for e in path] == ["SUSTAIN FORTE", "SUSTAIN 7", "AWARD-11"]
        assert len(path) == 3

    def test_self_path_empty(self, case_network):
        assert anchoring_path(case_network, SEMA_1, SEMA_1) == ()

    def test_across_components_absent(self):
        net = build_network([contrast("T1", "A", "B"), contrast("T2", "C", "D")])
        assert anchoring_path(net, "A", "C") is None

    def test_unknown_treatment_rejected(self, case_network):
        with pytest.raises(NetworkError, match="unknown treatment"):
            anchoring_path(case_network, "placebo", SEMA_1)

    def test_prefers_fewest_edges(self):
        triangle = [
            contrast("T1", "A", "B"),
            contrast("T2", "B", "C"),
            contrast("T3", "A", "C"),
        ]
        path = anchoring_path(build_network(triangle), "A", "C")
        assert len(path) == 1


class TestExport:
    def test_edge_list_format(self, case_network):
        lines = export_edge_list(case_network).strip().split("\n")
        assert len(lines) == 4
        first = lines[0].split(",")
        assert first[0] == "AWARD-11"
        assert float(first[-1]) > 0
