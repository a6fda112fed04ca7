"""Decoding genomes into concrete computation graphs.

A decoded graph is a DAG of typed nodes. Each skip gene becomes two 3x3
convolutions plus a residual branch into an add node; the branch is the
identity when the block input already has ``f2`` channels and a 1x1
projection convolution otherwise. Each pooling gene becomes one pooling
node. A global-average-pool and a single linear classifier are appended
after the last gene.

Convolutions are stride 1 and spatial-preserving (padding 1 for 3x3,
padding 0 for 1x1); pooling uses a 2x2 window with the configured stride.
Parameter accounting counts weights and biases only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

from ganas.genome import Genome, PoolGene, SearchSpaceConfig, SkipGene

POOL_WINDOW = 2


class DecodeError(Exception):
    """Raised when a genome cannot be decoded into a graph."""


class ShapeError(DecodeError):
    """Raised when shape inference fails, e.g. pooling a 1x1 map."""


@dataclass(frozen=True)
class TensorShape:
    channels: int
    height: int
    width: int

    def __post_init__(self):
        if self.channels < 1 or self.height < 1 or self.width < 1:
            raise ShapeError(f"non-positive tensor shape {self}")

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass(frozen=True)
class InputNode:
    shape: tuple[int, int, int]


@dataclass(frozen=True)
class ConvNode:
    in_channels: int
    out_channels: int
    kernel: int  # 3 or 1, stride always 1


@dataclass(frozen=True)
class AddNode:
    pass


@dataclass(frozen=True)
class PoolNode:
    kind: str
    stride: int
    window: int = POOL_WINDOW


@dataclass(frozen=True)
class GlobalAvgPoolNode:
    pass


@dataclass(frozen=True)
class LinearNode:
    in_features: int
    out_features: int


Node = Union[InputNode, ConvNode, AddNode, PoolNode, GlobalAvgPoolNode, LinearNode]


@dataclass(frozen=True)
class ArchitectureGraph:
    """Directed acyclic computation graph with one input and one classifier."""

    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int], ...]

    def predecessors(self, index: int) -> list[int]:
        return [src for src, dst in self.edges if dst == index]


class _Builder:
    def __init__(self, input_shape):
        self.nodes: list[Node] = [InputNode(tuple(input_shape))]
        self.edges: list[tuple[int, int]] = []

    def add(self, node: Node, *inputs: int) -> int:
        self.nodes.append(node)
        index = len(self.nodes) - 1
        for src in inputs:
            self.edges.append((src, index))
        return index


def decode(genome: Genome, cfg: SearchSpaceConfig) -> ArchitectureGraph:
    """Decode a valid genome into its computation graph.

    Raises :class:`DecodeError` on an empty genome and :class:`ShapeError`
    when the pooling sequence would shrink a spatial dimension below the
    pooling window.
    """
    if len(genome) == 0:
        raise DecodeError("cannot decode an empty genome")
    b = _Builder(cfg.input_shape)
    tail = 0
    channels = cfg.input_shape[0]
    for gene in genome:
        if isinstance(gene, SkipGene):
            conv1 = b.add(ConvNode(channels, gene.f1, 3), tail)
            conv2 = b.add(ConvNode(gene.f1, gene.f2, 3), conv1)
            if channels == gene.f2:
                residual = tail
            else:
                residual = b.add(ConvNode(channels, gene.f2, 1), tail)
            tail = b.add(AddNode(), conv2, residual)
            channels = gene.f2
        elif isinstance(gene, PoolGene):
            tail = b.add(PoolNode(gene.kind, cfg.pool_stride), tail)
        else:
            raise DecodeError(f"unknown gene type {type(gene).__name__}")
    gap = b.add(GlobalAvgPoolNode(), tail)
    b.add(LinearNode(channels, cfg.num_classes), gap)
    graph = ArchitectureGraph(tuple(b.nodes), tuple(b.edges))
    infer_shapes(graph)  # fail fast on unpoolable maps
    return graph


def topological_order(graph: ArchitectureGraph) -> list[int]:
    indegree = [0] * len(graph.nodes)
    for _, dst in graph.edges:
        indegree[dst] += 1
    ready = [i for i, d in enumerate(indegree) if d == 0]
    order = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for src, dst in graph.edges:
            if src == node:
                indegree[dst] -= 1
                if indegree[dst] == 0:
                    ready.append(dst)
    if len(order) != len(graph.nodes):
        raise DecodeError("graph contains a cycle")
    return order


def infer_shapes(graph: ArchitectureGraph) -> list[TensorShape]:
    """Compute the output shape of every node in topological order."""
    shapes: list[TensorShape | None] = [None] * len(graph.nodes)
    for i in topological_order(graph):
        node = graph.nodes[i]
        inputs = [shapes[p] for p in graph.predecessors(i)]
        if isinstance(node, InputNode):
            shapes[i] = TensorShape(*node.shape)
        elif isinstance(node, ConvNode):
            (src,) = inputs
            if src.channels != node.in_channels:
                raise ShapeError(
                    f"conv expects {node.in_channels} input channels, got {src.channels}"
                )
            shapes[i] = TensorShape(node.out_channels, src.height, src.width)
        elif isinstance(node, AddNode):
            if len(inputs) != 2:
                raise ShapeError(f"add node {i} has {len(inputs)} inputs, expected 2")
            a, c = inputs
            if a != c:
                raise ShapeError(f"add inputs differ: {a} vs {c}")
            shapes[i] = a
        elif isinstance(node, PoolNode):
            (src,) = inputs
            if src.height < node.window or src.width < node.window:
                raise ShapeError(
                    f"cannot pool {src.height}x{src.width} map with window {node.window}"
                )
            shapes[i] = TensorShape(
                src.channels,
                (src.height - node.window) // node.stride + 1,
                (src.width - node.window) // node.stride + 1,
            )
        elif isinstance(node, GlobalAvgPoolNode):
            (src,) = inputs
            shapes[i] = TensorShape(src.channels, 1, 1)
        elif isinstance(node, LinearNode):
            (src,) = inputs
            if src.channels != node.in_features:
                raise ShapeError(
                    f"linear expects {node.in_features} features, got {src.channels}"
                )
            shapes[i] = TensorShape(node.out_features, 1, 1)
        else:
            raise DecodeError(f"unknown node type {type(node).__name__}")
    return shapes


def count_params(graph: ArchitectureGraph) -> int:
    """Weights plus biases over all nodes; pooling and add contribute zero."""
    total = 0
    for node in graph.nodes:
        if isinstance(node, ConvNode):
            total += node.kernel * node.kernel * node.in_channels * node.out_channels
            total += node.out_channels
        elif isinstance(node, LinearNode):
            total += node.in_features * node.out_features + node.out_features
    return total


def count_layers(genome: Genome) -> int:
    """Depth convention: two conv layers per skip gene plus one per pool gene.

    Projection convolutions, add nodes, the global pool, and the classifier
    are not counted.
    """
    skips = sum(1 for g in genome if isinstance(g, SkipGene))
    pools = len(genome) - skips
    return 2 * skips + pools


def _node_label(node: Node, shape: TensorShape) -> str:
    dims = "x".join(str(d) for d in shape.as_tuple())
    if isinstance(node, InputNode):
        return f"input {dims}"
    if isinstance(node, ConvNode):
        return f"conv{node.kernel}x{node.kernel} {node.in_channels}->{node.out_channels} {dims}"
    if isinstance(node, AddNode):
        return f"Add {dims}"
    if isinstance(node, PoolNode):
        return f"{node.kind}pool {node.window}x{node.window}/{node.stride} {dims}"
    if isinstance(node, GlobalAvgPoolNode):
        return f"gap {dims}"
    return f"linear {node.in_features}->{node.out_features} {dims}"


def render_dot(graph: ArchitectureGraph) -> str:
    shapes = infer_shapes(graph)
    lines = ["digraph architecture {", "  rankdir=TB;"]
    for i, node in enumerate(graph.nodes):
        lines.append(f'  n{i} [label="{_node_label(node, shapes[i])}"];')
    for src, dst in graph.edges:
        lines.append(f"  n{src} -> n{dst};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_json(graph: ArchitectureGraph) -> dict:
    """Architecture document used on the wire.

    The input tensor is the top-level ``input`` field rather than a node;
    edges refer to positions in ``nodes`` and use -1 for the input.
    """
    input_node = graph.nodes[0]
    if not isinstance(input_node, InputNode):
        raise DecodeError("node 0 must be the input")
    linear = graph.nodes[-1]
    if not isinstance(linear, LinearNode):
        raise DecodeError("last node must be the classifier")
    nodes = []
    for node in graph.nodes[1:]:
        if isinstance(node, ConvNode):
            nodes.append({"op": "conv", "in": node.in_channels, "out": node.out_channels,
                          "kernel": node.kernel})
        elif isinstance(node, PoolNode):
            nodes.append({"op": "pool", "kind": node.kind, "window": node.window,
                          "stride": node.stride})
        elif isinstance(node, AddNode):
            nodes.append({"op": "add"})
        elif isinstance(node, GlobalAvgPoolNode):
            nodes.append({"op": "gap"})
        elif isinstance(node, LinearNode):
            nodes.append({"op": "linear", "in": node.in_features, "out": node.out_features})
        else:
            raise DecodeError(f"unknown node type {type(node).__name__}")
    edges = [[src - 1, dst - 1] for src, dst in graph.edges]
    return {
        "input": list(input_node.shape),
        "classes": linear.out_features,
        "nodes": nodes,
        "edges": edges,
    }


def graph_from_json(doc: dict) -> ArchitectureGraph:
    """Inverse of :func:`graph_to_json`; raises :class:`DecodeError`."""
    try:
        input_shape = tuple(int(d) for d in doc["input"])
        raw_nodes = doc["nodes"]
        raw_edges = doc["edges"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DecodeError(f"malformed architecture document: {exc}") from None
    nodes: list[Node] = [InputNode(input_shape)]
    for raw in raw_nodes:
        op = raw.get("op")
        if op == "conv":
            nodes.append(ConvNode(int(raw["in"]), int(raw["out"]), int(raw["kernel"])))
        elif op == "pool":
            nodes.append(PoolNode(str(raw["kind"]), int(raw["stride"]), int(raw["window"])))
        elif op == "add":
            nodes.append(AddNode())
        elif op == "gap":
            nodes.append(GlobalAvgPoolNode())
        elif op == "linear":
            nodes.append(LinearNode(int(raw["in"]), int(raw["out"])))
        else:
            raise DecodeError(f"unknown op {op!r}")
    edges = tuple((int(src) + 1, int(dst) + 1) for src, dst in raw_edges)
    return ArchitectureGraph(tuple(nodes), edges)


def render(graph: ArchitectureGraph, fmt: str) -> str:
    if fmt == "dot":
        return render_dot(graph)
    if fmt == "json":
        return json.dumps(graph_to_json(graph), indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown render format {fmt!r}")
