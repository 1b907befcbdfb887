"""Scene graph data model and its shared JSON serialization.

The on-disk format is one JSON document per scene:
``{"image_id": ..., "nodes": [{"class": <name>, "bbox": [x0, y0, x1, y1]}],
"edges": [{"s": i, "p": <predicate name>, "o": j}]}``
with the class/predicate vocabularies kept in a sidecar file. Mask flags and
visual features are runtime state and never serialized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np


class GraphValidationError(ValueError):
    """A scene graph violates the structural invariants."""


@dataclass
class Vocabulary:
    """Ordered class and predicate names; ids are list positions."""

    objects: list[str]
    predicates: list[str]

    def object_id(self, name: str) -> int:
        try:
            return self.objects.index(name)
        except ValueError:
            raise GraphValidationError(f"unknown object class {name!r}") from None

    def predicate_id(self, name: str) -> int:
        try:
            return self.predicates.index(name)
        except ValueError:
            raise GraphValidationError(f"unknown predicate {name!r}") from None

    def to_dict(self) -> dict:
        return {"objects": list(self.objects), "predicates": list(self.predicates)}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return cls(objects=list(data["objects"]), predicates=list(data["predicates"]))


@dataclass
class Node:
    class_id: int
    bbox: tuple[float, float, float, float]
    visual_feature: Optional[np.ndarray] = None
    mask_visual: bool = False
    mask_bbox: bool = False


@dataclass
class Edge:
    subject_idx: int
    predicate_id: int
    object_idx: int
    predicate_state: Optional[np.ndarray] = None


@dataclass
class SceneGraph:
    nodes: list[Node]
    edges: list[Edge]
    image_id: str = ""

    def validate(self, vocab: Optional[Vocabulary] = None) -> None:
        n = len(self.nodes)
        for idx, node in enumerate(self.nodes):
            x0, y0, x1, y1 = node.bbox
            if not (0.0 <= x0 < x1 <= 1.0 and 0.0 <= y0 < y1 <= 1.0):
                raise GraphValidationError(f"node {idx} has invalid bbox {node.bbox}")
            if node.class_id < 0:
                raise GraphValidationError(f"node {idx} has negative class id")
            if vocab is not None and node.class_id >= len(vocab.objects):
                raise GraphValidationError(f"node {idx} class id out of vocabulary")
        for idx, edge in enumerate(self.edges):
            if not (0 <= edge.subject_idx < n and 0 <= edge.object_idx < n):
                raise GraphValidationError(f"edge {idx} references a missing node")
            if edge.subject_idx == edge.object_idx:
                raise GraphValidationError(f"edge {idx} is a self loop")
            if edge.predicate_id < 0:
                raise GraphValidationError(f"edge {idx} has negative predicate id")
            if vocab is not None and edge.predicate_id >= len(vocab.predicates):
                raise GraphValidationError(f"edge {idx} predicate out of vocabulary")

    def copy(self) -> "SceneGraph":
        return SceneGraph(
            nodes=[replace(n) for n in self.nodes],
            edges=[replace(e) for e in self.edges],
            image_id=self.image_id,
        )


def graph_to_dict(graph: SceneGraph, vocab: Vocabulary) -> dict:
    return {
        "image_id": graph.image_id,
        "nodes": [
            {"class": vocab.objects[n.class_id], "bbox": [float(v) for v in n.bbox]}
            for n in graph.nodes
        ],
        "edges": [
            {"s": e.subject_idx, "p": vocab.predicates[e.predicate_id], "o": e.object_idx}
            for e in graph.edges
        ],
    }


def graph_from_dict(data: dict, vocab: Vocabulary) -> SceneGraph:
    nodes = [
        Node(class_id=vocab.object_id(nd["class"]), bbox=tuple(float(v) for v in nd["bbox"]))
        for nd in data.get("nodes", [])
    ]
    edges = [
        Edge(
            subject_idx=int(ed["s"]),
            predicate_id=vocab.predicate_id(ed["p"]),
            object_idx=int(ed["o"]),
        )
        for ed in data.get("edges", [])
    ]
    graph = SceneGraph(nodes=nodes, edges=edges, image_id=str(data.get("image_id", "")))
    graph.validate(vocab)
    return graph


def dump_graph(graph: SceneGraph, vocab: Vocabulary) -> str:
    return json.dumps(graph_to_dict(graph, vocab), indent=1)


def load_graph(text: str, vocab: Vocabulary) -> SceneGraph:
    return graph_from_dict(json.loads(text), vocab)


def bbox_to_pixels(
    bbox: Sequence[float], height: int, width: int
) -> tuple[int, int, int, int]:
    """Map a normalized box to pixel indices: floor start, ceil end, clamped.

    Any box with positive normalized area keeps at least one pixel.
    """
    x0, y0, x1, y1 = bbox
    px0 = max(0, min(width, int(np.floor(x0 * width))))
    py0 = max(0, min(height, int(np.floor(y0 * height))))
    px1 = max(0, min(width, int(np.ceil(x1 * width))))
    py1 = max(0, min(height, int(np.ceil(y1 * height))))
    return px0, py0, px1, py1
