import numpy as np
import pytest

from hgx import autodiff as ad
from hgx import nn, rules
from hgx.allset import (
    AllSetLayer,
    AllSetNetwork,
    DeepSetsPool,
    EmptyMultisetError,
    MeanPool,
    PerAggregatorGuardError,
    ProductPool,
    SetTransformerPool,
    SumPool,
    WeightedSumPool,
    alldeepsets_f,
    allsettransformer_f,
    multiset_function,
    per_aggregator_propagate,
)
from hgx.hypergraph import from_edge_list, incidence_pairs
from hgx.nn import MlpSpec


def random_hypergraph(rng, n_max=12, m_max=8, uniform=None):
    n_min = max(uniform or 0, 2)
    n = int(rng.integers(n_min, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    edges = []
    for _ in range(m):
        size = uniform or int(rng.integers(1, min(n, 5) + 1))
        edges.append(rng.choice(n, size=size, replace=False).tolist())
    return from_edge_list(n, edges)


def aggregate_with_pair_order(pool, params, src, pn, pe, num, order, prefix="f"):
    """Evaluate a pool with the incidence pairs visited in a given order;
    permutation invariance means the result must not depend on it."""
    return pool.aggregate(params, src, pn[order], pe[order], num, prefix)


class TestFixedPools:
    def test_sum_single_edge(self):
        hg = from_edge_list(2, [[0, 1]])
        layer = AllSetLayer(SumPool(), SumPool())
        z = layer.v2e_forward({}, hg, np.array([[1.0], [10.0]]))
        np.testing.assert_array_equal(z.value, [[11.0]])

    def test_product_three_uniform(self):
        hg = from_edge_list(3, [[0, 1, 2]])
        layer = AllSetLayer(ProductPool(), SumPool())
        z = layer.v2e_forward({}, hg, np.array([[2.0], [3.0], [5.0]]))
        np.testing.assert_array_equal(z.value, [[30.0]])

    def test_e2v_sum_and_isolated_node(self):
        hg = from_edge_list(4, [[0, 1], [1, 2]])  # node 3 is isolated
        layer = AllSetLayer(SumPool(), SumPool())
        z = np.array([[5.0], [7.0]])
        out = layer.e2v_forward({}, hg, z)
        np.testing.assert_array_equal(out.value, [[5.0], [12.0], [7.0], [0.0]])

    def test_mean_pool(self):
        hg = from_edge_list(3, [[0, 1, 2]])
        layer = AllSetLayer(MeanPool(), MeanPool())
        z = layer.v2e_forward({}, hg, np.array([[3.0], [6.0], [9.0]]))
        np.testing.assert_array_equal(z.value, [[6.0]])

    def test_sum_sum_composition_matches_co_member_sums(self):
        rng = np.random.default_rng(0)
        layer = AllSetLayer(SumPool(), SumPool())
        for _ in range(200):
            hg = random_hypergraph(rng)
            x = rng.normal(size=(hg.n, 2))
            _, out = layer.forward({}, hg, x)
            np.testing.assert_allclose(
                out.value, rules.ce_prop_h(hg, x), atol=1e-12
            )

    def test_weighted_sum_pool(self):
        hg = from_edge_list(3, [[0, 1], [1, 2]])
        pn, pe = incidence_pairs(hg)
        pool = WeightedSumPool(np.array([1.0, 2.0, 3.0, 4.0]), np.array([10.0, 1.0]))
        x = ad.constant(np.array([[1.0], [1.0], [1.0]]))
        out = pool.aggregate({}, x, pn, pe, 2, "w")
        np.testing.assert_array_equal(out.value, [[30.0], [7.0]])


class TestLearnedPools:
    def test_deepsets_identity_equals_sum_bit_exact(self):
        hg = from_edge_list(5, [[0, 1, 4], [2, 3], [1, 2, 3]])
        pool = DeepSetsPool(
            MlpSpec((3, 3), activation="identity", bias=False),
            MlpSpec((3, 3), activation="identity", bias=False),
        )
        params = {
            "f.inner.w0": ad.parameter(np.eye(3)),
            "f.outer.w0": ad.parameter(np.eye(3)),
        }
        rng = np.random.default_rng(1)
        x = ad.constant(rng.normal(size=(5, 3)))
        pn, pe = incidence_pairs(hg)
        got = pool.aggregate(params, x, pn, pe, hg.num_edges, "f")
        want = SumPool().aggregate({}, x, pn, pe, hg.num_edges, "f")
        np.testing.assert_array_equal(got.value, want.value)

    def test_singleton_attention_weight_is_one(self):
        # |S| = 1: softmax over one logit is exactly 1, so the attended
        # row equals that element's value row
        rng = nn.make_rng(2)
        pool = SetTransformerPool(heads=2, head_dim=3)
        params = pool.init_params(rng, 4, "f")
        row = rng.normal(size=(1, 4))

        v_rows = [
            nn.mlp_forward(MlpSpec((4, 3), bias=False), params, ad.constant(row),
                           f"f.value{i}").value
            for i in range(2)
        ]
        # reproduce the attended output before the residual/norm stages
        pn = np.array([0])
        pe = np.array([0])
        k0 = nn.mlp_forward(MlpSpec((4, 3), bias=False), params, ad.constant(row), "f.key0")
        logits = ad.row_sum(ad.mul(k0, ad.slice_cols(params["f.seed"], 0, 3)))
        w = ad.segment_softmax(logits, pe, 1)
        np.testing.assert_allclose(w.value, [[1.0]], atol=1e-15)
        out = pool(params, row, prefix="f")
        assert out.shape == (1, 6)
        assert np.isfinite(out.value).all()

    def test_attention_weights_sum_to_one_per_segment(self):
        rng = nn.make_rng(3)
        hg = random_hypergraph(rng, n_max=8)
        pool = SetTransformerPool(heads=1, head_dim=4)
        params = pool.init_params(rng, 3, "f")
        x = ad.constant(rng.normal(size=(hg.n, 3)))
        pn, pe = incidence_pairs(hg)
        k = nn.mlp_forward(MlpSpec((3, 4), bias=False), params, x, "f.key0")
        logits = ad.row_sum(ad.mul(ad.gather_rows(k, pn), ad.slice_cols(params["f.seed"], 0, 4)))
        w = ad.segment_softmax(logits, pe, hg.num_edges).value
        sums = np.zeros((hg.num_edges, 1))
        np.add.at(sums, pe, w)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_empty_multiset_rejected(self):
        rng = nn.make_rng(4)
        ds = DeepSetsPool(MlpSpec((2, 3)), MlpSpec((3, 2)))
        st = SetTransformerPool(heads=1, head_dim=2)
        p1 = ds.init_params(rng, 2, "f")
        p2 = st.init_params(rng, 2, "g")
        with pytest.raises(EmptyMultisetError):
            alldeepsets_f(ds, p1, np.zeros((0, 2)))
        with pytest.raises(EmptyMultisetError):
            allsettransformer_f(st, p2, np.zeros((0, 2)), prefix="g")

    def test_deepsets_gradcheck(self):
        rng = nn.make_rng(5)
        pool = DeepSetsPool(MlpSpec((2, 4, 3)), MlpSpec((3, 3, 2)))
        params = pool.init_params(rng, 2, "f")
        rows = rng.normal(size=(5, 2)) + 0.2
        c = rng.normal(size=(1, 2))

        def build():
            return ad.sum_all(ad.mul(alldeepsets_f(pool, params, rows), ad.constant(c)))

        assert nn.grad_check(build, params).max_rel_err < 1e-4

    def test_settransformer_gradcheck(self):
        rng = nn.make_rng(6)
        pool = SetTransformerPool(heads=2, head_dim=2)
        params = pool.init_params(rng, 3, "f")
        rows = rng.normal(size=(4, 3))
        c = rng.normal(size=(1, 4))

        def build():
            return ad.sum_all(
                ad.mul(allsettransformer_f(pool, params, rows, prefix="f"), ad.constant(c))
            )

        assert nn.grad_check(build, params).max_rel_err < 1e-4


class TestPermutationInvariance:
    @pytest.mark.parametrize(
        "make_pool,needs_params",
        [
            (lambda: SumPool(), False),
            (lambda: MeanPool(), False),
            (lambda: ProductPool(scale_by_cardinality_minus_one=True), False),
            (lambda: DeepSetsPool(MlpSpec((3, 5, 4)), MlpSpec((4, 4))), True),
            (lambda: SetTransformerPool(heads=2, head_dim=3), True),
        ],
        ids=["sum", "mean", "product", "deepsets", "settransformer"],
    )
    def test_pair_order_invariance(self, make_pool, needs_params):
        rng = nn.make_rng(7)
        pool = make_pool()
        for _ in range(20):
            hg = random_hypergraph(rng, n_max=9)
            params = pool.init_params(rng, 3, "f") if needs_params else {}
            x = ad.constant(rng.uniform(0.5, 1.5, size=(hg.n, 3)))
            pn, pe = incidence_pairs(hg)
            base = pool.aggregate(params, x, pn, pe, hg.num_edges, "f").value
            order = rng.permutation(len(pn))
            shuffled = aggregate_with_pair_order(
                pool, params, x, pn, pe, hg.num_edges, order
            ).value
            denom = max(np.abs(base).max(), 1e-12)
            assert np.abs(base - shuffled).max() / denom < 1e-9

    def test_node_relabeling_equivariance(self):
        rng = nn.make_rng(8)
        for _ in range(10):
            hg = random_hypergraph(rng, n_max=8)
            perm = rng.permutation(hg.n)
            hg_perm = from_edge_list(
                hg.n, [[int(perm[v]) for v in e] for e in hg.edges]
            )
            net = AllSetNetwork(
                in_dim=3,
                num_classes=2,
                layers=[AllSetLayer(SetTransformerPool(1, 4), SetTransformerPool(1, 4))],
            )
            params = net.init_params(nn.make_rng(99))
            x = rng.normal(size=(hg.n, 3))
            x_perm = np.empty_like(x)
            x_perm[perm] = x
            base = net.forward(params, hg, x).value
            permuted = net.forward(params, hg_perm, x_perm).value
            base_perm = np.empty_like(base)
            base_perm[perm] = base
            denom = max(np.abs(base).max(), 1e-12)
            assert np.abs(base_perm - permuted).max() / denom < 1e-9


class TestPerAggregatorVariant:
    def test_guard_rejects_large_instances(self):
        hg = from_edge_list(600, [list(range(600))] * 400)
        with pytest.raises(PerAggregatorGuardError):
            per_aggregator_propagate(hg, np.ones((600, 4)), SumPool())

    def test_only_fixed_pools_allowed(self):
        with pytest.raises(ValueError):
            AllSetLayer(
                DeepSetsPool(MlpSpec((2, 2)), MlpSpec((2, 2))),
                SumPool(),
                variant="per_aggregator",
            )

    def test_layer_forward_routes_to_pair_variant(self):
        hg = from_edge_list(3, [[0, 1], [1, 2]])
        layer = AllSetLayer(SumPool(), SumPool(), variant="per_aggregator")
        x = np.array([[1.0], [10.0], [100.0]])
        _, out = layer.forward({}, hg, x)
        np.testing.assert_array_equal(out.value, rules.ce_prop_a(hg, x))


class TestNetwork:
    def test_all_sum_network_reproduces_iterated_sums(self):
        rng = nn.make_rng(9)
        for k in (1, 2, 3):
            hg = random_hypergraph(rng, n_max=8)
            x = rng.normal(size=(hg.n, 3))
            net = AllSetNetwork(
                in_dim=3,
                num_classes=3,
                layers=[AllSetLayer(SumPool(), SumPool()) for _ in range(k)],
            )
            params = net.init_params(rng)
            params["head.w0"].value[:] = np.eye(3)
            params["head.b0"].value[:] = 0.0
            expected = x
            for _ in range(k):
                expected = rules.ce_prop_h(hg, expected)
            got = net.forward(params, hg, x).value
            np.testing.assert_allclose(got, expected, atol=1e-9)

    def test_logits_shape(self):
        rng = nn.make_rng(10)
        hg = random_hypergraph(rng)
        net = AllSetNetwork(
            in_dim=4,
            num_classes=6,
            layers=[AllSetLayer(SetTransformerPool(2, 4), SetTransformerPool(2, 4))],
        )
        params = net.init_params(rng)
        out = net.forward(params, hg, rng.normal(size=(hg.n, 4)))
        assert out.shape == (hg.n, 6)
        assert np.isfinite(out.value).all()

    def test_dimension_chain_validation(self):
        with pytest.raises(ValueError):
            AllSetNetwork(
                in_dim=4,
                num_classes=2,
                layers=[AllSetLayer(SumPool(), SumPool())],
                head=MlpSpec((5, 2)),
            )
        with pytest.raises(ValueError):
            AllSetNetwork(in_dim=4, num_classes=2, layers=[])

    def test_second_argument_concatenation(self):
        hg = from_edge_list(3, [[0, 1], [1, 2]])
        layer = AllSetLayer(SumPool(), SumPool(), use_second_argument=True)
        x = np.array([[1.0], [2.0], [3.0]])
        z_prev = np.array([[10.0], [20.0]])
        z = layer.v2e_forward({}, hg, x, z_prev=z_prev)
        np.testing.assert_array_equal(z.value, [[3.0, 10.0], [5.0, 20.0]])

    def test_multiset_function_factory(self):
        assert isinstance(multiset_function("sum"), SumPool)
        assert isinstance(
            multiset_function("settransformer", heads=2, head_dim=4),
            SetTransformerPool,
        )
        with pytest.raises(ValueError):
            multiset_function("nope")


class TestExpressivenessWitness:
    def test_product_rule_unreachable_by_normalized_linear_layer(self):
        # two 3-uniform edges sharing the pair {0, 1}: the degree-based
        # two-stage aggregation gives nodes 0 and 1 identical rows for
        # every parameter choice, while the product rule separates them
        hg = from_edge_list(4, [[0, 1, 2], [0, 1, 3]])
        x = np.array([[1.0], [2.0], [4.0], [8.0]])
        target = rules.z_prop(hg, x, 3)
        np.testing.assert_allclose(target[:, 0], [48.0, 24.0, 4.0, 4.0])

        # the scaled product pool reproduces the target exactly
        got = per_aggregator_propagate(
            hg, x, ProductPool(scale_by_cardinality_minus_one=True)
        )
        np.testing.assert_allclose(got, target, atol=1e-12)

        # aggregated pre-activation rows for nodes 0 and 1 coincide
        deg = hg.degrees().astype(float)
        z = np.zeros((2, 1))
        for e, members in enumerate(hg.edges):
            for u in members:
                z[e] += x[u] / np.sqrt(deg[u])
        agg = np.zeros((4, 1))
        for v in range(4):
            for e, members in enumerate(hg.edges):
                if v in members:
                    agg[v] += z[e] / (len(members) * np.sqrt(deg[v]))
        np.testing.assert_allclose(agg[0], agg[1], atol=1e-12)
        assert abs(target[0, 0] - target[1, 0]) > 1.0

        # least-squares-best affine map on the aggregated rows still
        # leaves a large residual
        design = np.hstack([agg, np.ones((4, 1))])
        coef, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
        residual = np.linalg.norm(design @ coef - target)
        assert residual > 0.1
