from random import Random

import pytest

from ganas.genome import (
    Genome,
    PoolGene,
    SearchSpaceConfig,
    SkipGene,
    random_genome,
)
from ganas.graph import (
    AddNode,
    ArchitectureGraph,
    ConvNode,
    DecodeError,
    GlobalAvgPoolNode,
    InputNode,
    LinearNode,
    PoolNode,
    ShapeError,
    TensorShape,
    count_layers,
    count_params,
    decode,
    graph_from_json,
    graph_to_json,
    infer_shapes,
    render,
    render_dot,
)


def oracle_param_count(genome, cfg):
    """Brute-force oracle: enumerate every weight tensor and sum elements.

    Walks the genome independently of the graph builder, listing the shape
    of each kernel and bias, then multiplies out dimensions.
    """
    tensors = []
    channels = cfg.input_shape[0]
    for gene in genome:
        if isinstance(gene, SkipGene):
            tensors.append((gene.f1, channels, 3, 3))
            tensors.append((gene.f1,))
            tensors.append((gene.f2, gene.f1, 3, 3))
            tensors.append((gene.f2,))
            if channels != gene.f2:
                tensors.append((gene.f2, channels, 1, 1))
                tensors.append((gene.f2,))
            channels = gene.f2
    tensors.append((cfg.num_classes, channels))
    tensors.append((cfg.num_classes,))
    total = 0
    for shape in tensors:
        n = 1
        for dim in shape:
            n *= dim
        total += n
    return total


def test_decode_single_skip_structure():
    cfg = SearchSpaceConfig(input_shape=(3, 32, 32), num_classes=7)
    graph = decode(Genome((SkipGene(64, 64),)), cfg)
    kinds = [type(n).__name__ for n in graph.nodes]
    assert kinds == ["InputNode", "ConvNode", "ConvNode", "ConvNode", "AddNode",
                     "GlobalAvgPoolNode", "LinearNode"]
    # projection is a 1x1 conv because input has 3 channels, block emits 64
    projection = graph.nodes[3]
    assert projection == ConvNode(3, 64, 1)
    assert graph.nodes[-1] == LinearNode(64, 7)
    add_inputs = graph.predecessors(4)
    assert sorted(add_inputs) == [2, 3]


def test_decode_identity_residual_when_channels_match():
    cfg = SearchSpaceConfig(input_shape=(64, 32, 32), num_classes=7)
    graph = decode(Genome((SkipGene(64, 64),)), cfg)
    # no projection node: input feeds the add directly
    kinds = [type(n).__name__ for n in graph.nodes]
    assert kinds == ["InputNode", "ConvNode", "ConvNode", "AddNode",
                     "GlobalAvgPoolNode", "LinearNode"]
    assert sorted(graph.predecessors(3)) == [0, 2]


def test_decode_pool_only():
    cfg = SearchSpaceConfig(input_shape=(3, 32, 32), num_classes=7)
    graph = decode(Genome((PoolGene("max"),)), cfg)
    kinds = [type(n).__name__ for n in graph.nodes]
    assert kinds == ["InputNode", "PoolNode", "GlobalAvgPoolNode", "LinearNode"]
    assert graph.nodes[-1] == LinearNode(3, 7)


def test_decode_gene_order_matches_node_order(cfg):
    g = Genome((SkipGene(64, 128), PoolGene("mean"), SkipGene(128, 128), PoolGene("max")))
    graph = decode(g, cfg)
    ops = [type(n).__name__ for n in graph.nodes]
    pool_kinds = [n.kind for n in graph.nodes if isinstance(n, PoolNode)]
    assert pool_kinds == ["mean", "max"]
    conv3 = [n for n in graph.nodes if isinstance(n, ConvNode) and n.kernel == 3]
    assert [(c.in_channels, c.out_channels) for c in conv3] == [
        (3, 64), (64, 128), (128, 128), (128, 128)]
    assert ops[-2:] == ["GlobalAvgPoolNode", "LinearNode"]


def test_decode_rejects_empty(cfg):
    with pytest.raises(DecodeError):
        decode(Genome(()), cfg)


def test_pool_shape_stride_two():
    cfg = SearchSpaceConfig(input_shape=(64, 32, 32), num_classes=7)
    graph = decode(Genome((PoolGene("max"),)), cfg)
    shapes = infer_shapes(graph)
    assert shapes[1] == TensorShape(64, 16, 16)


def test_pool_shape_stride_one():
    cfg = SearchSpaceConfig(input_shape=(64, 32, 32), num_classes=7, pool_stride=1)
    graph = decode(Genome((PoolGene("mean"),)), cfg)
    shapes = infer_shapes(graph)
    assert shapes[1] == TensorShape(64, 31, 31)


def test_pool_on_unit_map_is_shape_error():
    graph = ArchitectureGraph(
        nodes=(InputNode((64, 1, 1)), PoolNode("max", 2), GlobalAvgPoolNode(),
               LinearNode(64, 7)),
        edges=((0, 1), (1, 2), (2, 3)),
    )
    with pytest.raises(ShapeError):
        infer_shapes(graph)


def test_decode_fails_when_pools_exhaust_spatial_dims():
    cfg = SearchSpaceConfig(input_shape=(3, 4, 4), num_classes=2, max_length=8)
    genome = Genome((PoolGene("max"), PoolGene("max"), PoolGene("max")))
    with pytest.raises(ShapeError):
        decode(genome, cfg)


def test_conv_preserves_spatial_dims(cfg):
    graph = decode(Genome((SkipGene(64, 128),)), cfg)
    shapes = infer_shapes(graph)
    for i, node in enumerate(graph.nodes):
        if isinstance(node, ConvNode):
            assert (shapes[i].height, shapes[i].width) == (32, 32)


def test_add_inputs_share_shape(cfg, rng):
    for _ in range(25):
        g = random_genome(cfg, rng)
        graph = decode(g, cfg)
        shapes = infer_shapes(graph)
        for i, node in enumerate(graph.nodes):
            if isinstance(node, AddNode):
                a, b = graph.predecessors(i)
                assert shapes[a] == shapes[b]


def test_single_conv_param_count():
    graph = ArchitectureGraph(
        nodes=(InputNode((3, 32, 32)), ConvNode(3, 64, 3)),
        edges=((0, 1),),
    )
    assert count_params(graph) == 1792


def test_worked_param_example():
    cfg = SearchSpaceConfig(input_shape=(3, 32, 32), num_classes=7)
    graph = decode(Genome((SkipGene(64, 64),)), cfg)
    # 1792 + 36928 + 256 + 455
    assert count_params(graph) == 39431


def test_pool_only_params_equal_head(cfg):
    graph = decode(Genome((PoolGene("mean"),)), cfg)
    assert count_params(graph) == 3 * 7 + 7


def test_count_params_matches_oracle(cfg):
    rng = Random(99)
    for _ in range(100):
        g = random_genome(cfg, rng)
        graph = decode(g, cfg)
        assert count_params(graph) == oracle_param_count(g, cfg)


def test_appending_pool_never_changes_body_params(cfg, rng):
    for _ in range(25):
        g = random_genome(cfg, rng)
        pools = sum(1 for gene in g if isinstance(gene, PoolGene))
        if pools >= cfg.max_pools or len(g) >= cfg.max_length:
            continue
        extended = Genome(g.genes + (PoolGene("max"),))
        try:
            before = count_params(decode(g, cfg))
            after = count_params(decode(extended, cfg))
        except ShapeError:
            continue
        assert before == after


def test_count_layers_convention():
    assert count_layers(Genome((SkipGene(64, 64),))) == 2
    assert count_layers(Genome((SkipGene(64, 64), PoolGene("max"), SkipGene(64, 128)))) == 5


def test_count_layers_matches_depth_scale():
    genes = tuple(SkipGene(64, 64) for _ in range(7)) + (PoolGene("max"), PoolGene("mean"))
    assert count_layers(Genome(genes)) == 16


def test_render_dot_single_add(cfg):
    graph = decode(Genome((SkipGene(64, 64),)), cfg)
    dot = render_dot(graph)
    assert dot.count("Add") == 1
    assert dot.startswith("digraph")


def test_render_json_round_trips(cfg):
    g = Genome((SkipGene(64, 64), PoolGene("mean")))
    graph = decode(g, cfg)
    doc = graph_to_json(graph)
    assert doc["input"] == [3, 32, 32]
    assert doc["classes"] == 7
    assert [n["op"] for n in doc["nodes"]] == ["conv", "conv", "conv", "add", "pool",
                                               "gap", "linear"]
    assert graph_from_json(doc) == graph


def test_render_json_round_trips_random(cfg, rng):
    for _ in range(25):
        graph = decode(random_genome(cfg, rng), cfg)
        assert graph_from_json(graph_to_json(graph)) == graph


def test_graph_from_json_rejects_unknown_op():
    with pytest.raises(DecodeError, match="unknown op"):
        graph_from_json({"input": [1, 8, 8], "classes": 2,
                         "nodes": [{"op": "deconv"}], "edges": []})


def test_render_formats(cfg):
    graph = decode(Genome((SkipGene(64, 64),)), cfg)
    assert render(graph, "dot").startswith("digraph")
    assert render(graph, "json").startswith("{")
    with pytest.raises(ValueError):
        render(graph, "yaml")
