"""Graph network over scene graphs: featurization, message passing, heads.

Each round updates every edge from its endpoint states and the running
predicate state, then updates every node with the average of the messages
sent to it (subject-side and object-side latents). Nodes with no incident
edges keep their state. All weights are shared across nodes, edges and
rounds, so relabeling nodes permutes the output identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigurationError, ModelConfig
from .encoders import VisualEncoder
from .graph import SceneGraph, bbox_to_pixels


class MLP(nn.Module):
    def __init__(self, in_dim: int, hidden: list[int], out_dim: int, activation=None):
        super().__init__()
        self.activation = activation if activation is not None else nn.LeakyReLU(0.2)
        dims = [in_dim, *hidden, out_dim]
        self.layers = nn.ModuleList(
            nn.Linear(dims[i], dims[i + 1]) for i in range(len(dims) - 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = self.activation(x)
        return x


@dataclass
class FeatureGraph:
    """Per-round state: node vectors plus the latest edge triples."""

    node_states: torch.Tensor  # (N, node_dim)
    pred_states: torch.Tensor  # (E, predicate_dim)
    subj_msgs: torch.Tensor  # (E, node_dim), latents addressed to subject nodes
    obj_msgs: torch.Tensor  # (E, node_dim), latents addressed to object nodes
    subjects: torch.Tensor  # (E,) long
    objects: torch.Tensor  # (E,) long
    round: int = 0

    @property
    def num_nodes(self) -> int:
        return self.node_states.shape[0]

    @property
    def num_edges(self) -> int:
        return self.subjects.shape[0]


class GraphFeaturizer(nn.Module):
    """Builds initial node states: class embedding ++ box ++ visual encoding.

    A visually-masked node gets a learned token instead of the crop encoding;
    a box-masked node gets the configured placeholder in its box slice (the
    crop for the visual part still comes from the stored box).
    """

    def __init__(self, cfg: ModelConfig, encoder: VisualEncoder):
        super().__init__()
        if encoder.out_dim != cfg.visual_dim:
            raise ConfigurationError(
                f"visual encoder emits {encoder.out_dim} dims, config expects {cfg.visual_dim}"
            )
        self.cfg = cfg
        self.encoder = encoder
        self.class_embedding = nn.Embedding(cfg.num_object_classes, cfg.embed_dim)
        self.predicate_embedding = nn.Embedding(cfg.num_predicates, cfg.predicate_dim)
        self.mask_token = nn.Parameter(torch.zeros(cfg.visual_dim))
        nn.init.normal_(self.mask_token, std=0.02)

    def _crop(self, image: torch.Tensor, bbox) -> torch.Tensor:
        h, w = image.shape[-2:]
        x0, y0, x1, y1 = bbox_to_pixels(bbox, h, w)
        x1 = max(x1, x0 + 1)
        y1 = max(y1, y0 + 1)
        return image[:, y0:y1, x0:x1].unsqueeze(0)

    def build_features(self, graph: SceneGraph, image: torch.Tensor) -> FeatureGraph:
        """image: (3, H, W) preprocessed source frame."""
        device = self.mask_token.device
        dtype = self.mask_token.dtype
        parts = []
        for node in graph.nodes:
            emb = self.class_embedding(torch.tensor(node.class_id, device=device))
            if node.mask_bbox:
                box = torch.tensor(
                    self.cfg.masked_bbox_placeholder, device=device, dtype=dtype
                )
            else:
                box = torch.tensor(node.bbox, device=device, dtype=dtype)
            if node.mask_visual:
                vis = self.mask_token
            elif node.visual_feature is not None:
                vis = torch.as_tensor(node.visual_feature, device=device, dtype=dtype)
                if vis.shape != (self.cfg.visual_dim,):
                    raise ConfigurationError(
                        f"stored visual feature has shape {tuple(vis.shape)}, "
                        f"expected ({self.cfg.visual_dim},)"
                    )
            else:
                vis = self.encoder(self._crop(image, node.bbox)).squeeze(0)
            parts.append(torch.cat([emb, box, vis]))
        node_states = (
            torch.stack(parts)
            if parts
            else torch.zeros(0, self.cfg.node_dim, device=device, dtype=dtype)
        )

        subjects = torch.tensor([e.subject_idx for e in graph.edges], dtype=torch.long, device=device)
        objects = torch.tensor([e.object_idx for e in graph.edges], dtype=torch.long, device=device)
        pred_rows = []
        for edge in graph.edges:
            if edge.predicate_state is not None:
                pred_rows.append(
                    torch.as_tensor(edge.predicate_state, device=device, dtype=dtype)
                )
            else:
                pred_rows.append(
                    self.predicate_embedding(torch.tensor(edge.predicate_id, device=device))
                )
        pred_states = (
            torch.stack(pred_rows)
            if pred_rows
            else torch.zeros(0, self.cfg.predicate_dim, device=device, dtype=dtype)
        )
        empty = torch.zeros(len(graph.edges), self.cfg.node_dim, device=device, dtype=dtype)
        return FeatureGraph(
            node_states=node_states,
            pred_states=pred_states,
            subj_msgs=empty,
            obj_msgs=empty.clone(),
            subjects=subjects,
            objects=objects,
            round=0,
        )


def edge_update(
    v_subj: torch.Tensor,
    pred: torch.Tensor,
    v_obj: torch.Tensor,
    edge_mlp: nn.Module,
    node_dim: int,
    predicate_dim: int,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """One edge update; returns (subject latent, new predicate, object latent)."""
    out = edge_mlp(torch.cat([v_subj, pred, v_obj], dim=-1))
    return torch.split(out, [node_dim, predicate_dim, node_dim], dim=-1)


def node_update(
    node_states: torch.Tensor,
    subj_msgs: torch.Tensor,
    obj_msgs: torch.Tensor,
    subjects: torch.Tensor,
    objects: torch.Tensor,
    node_mlp: nn.Module,
) -> torch.Tensor:
    """Average incoming messages per node and transform; isolated nodes pass through."""
    n = node_states.shape[0]
    acc = torch.zeros_like(node_states)
    acc = acc.index_add(0, subjects, subj_msgs)
    acc = acc.index_add(0, objects, obj_msgs)
    count = torch.zeros(n, device=node_states.device, dtype=node_states.dtype)
    ones = torch.ones(subjects.shape[0], device=node_states.device, dtype=node_states.dtype)
    count = count.index_add(0, subjects, ones).index_add(0, objects, ones)
    updated = node_mlp(acc / count.clamp(min=1.0).unsqueeze(-1))
    keep = (count > 0).unsqueeze(-1)
    return torch.where(keep, updated, node_states)


class SceneGraphNet(nn.Module):
    """Iterates the edge and node updates for a fixed number of rounds."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d, p = cfg.node_dim, cfg.predicate_dim
        width = 2 * d
        self.edge_mlp = MLP(2 * d + p, [width, width], 2 * d + p)
        self.node_mlp = MLP(d, [width, width], d)

    def forward(self, fg: FeatureGraph, rounds: int | None = None) -> FeatureGraph:
        rounds = self.cfg.sgn_rounds if rounds is None else rounds
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        states, preds = fg.node_states, fg.pred_states
        subj_msgs, obj_msgs = fg.subj_msgs, fg.obj_msgs
        for _ in range(rounds):
            if fg.num_edges > 0:
                subj_msgs, preds, obj_msgs = edge_update(
                    states[fg.subjects],
                    preds,
                    states[fg.objects],
                    self.edge_mlp,
                    self.cfg.node_dim,
                    self.cfg.predicate_dim,
                )
                states = node_update(
                    states, subj_msgs, obj_msgs, fg.subjects, fg.objects, self.node_mlp
                )
        return FeatureGraph(
            node_states=states,
            pred_states=preds,
            subj_msgs=subj_msgs,
            obj_msgs=obj_msgs,
            subjects=fg.subjects,
            objects=fg.objects,
            round=fg.round + rounds,
        )


class BoxHead(nn.Module):
    """Predicts a raw (unordered) normalized box per node state."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.mlp = MLP(cfg.node_dim, [cfg.node_dim], 4)

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.mlp(states))


def order_box_coords(boxes: torch.Tensor) -> torch.Tensor:
    """Sorts each coordinate pair so x0 <= x1 and y0 <= y1."""
    x = torch.stack([boxes[..., 0], boxes[..., 2]], dim=-1)
    y = torch.stack([boxes[..., 1], boxes[..., 3]], dim=-1)
    x, _ = torch.sort(x, dim=-1)
    y, _ = torch.sort(y, dim=-1)
    return torch.stack([x[..., 0], y[..., 0], x[..., 1], y[..., 1]], dim=-1)


class SegmapHead(nn.Module):
    """Predicts an m x m soft mask per node state, entries in [0, 1]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.size = cfg.segmap_size
        self.mlp = MLP(cfg.node_dim, [cfg.node_dim], cfg.segmap_size**2)

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        flat = torch.sigmoid(self.mlp(states))
        return flat.view(*states.shape[:-1], self.size, self.size)
