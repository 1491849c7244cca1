"""Non-destructive layered canvas and the provenance graph behind it.

Layers hold full-canvas RGBA images; edits replace a layer's image with a new
one, so shared snapshots never mutate. Flattening composites visible layers
bottom-to-top over an opaque background. The provenance graph records how
snapshots condition candidates, candidates become layers, and layers feed the
next snapshot, unrolled in time so it stays acyclic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .raster import (
    RasterImage,
    Rgba,
    WHITE,
    composite_arrays,
    decode_png,
    encode_png,
)


class UnknownLayerError(KeyError):
    def __init__(self, layer_id: int):
        self.layer_id = layer_id
        super().__init__(f"no layer with id {layer_id}")


@dataclass(frozen=True)
class LayerOrigin:
    """Where a layer came from: drawn by the artist or imported from a candidate."""

    kind: str  # "artist" | "import"
    candidate_id: Optional[int] = None

    @classmethod
    def artist(cls) -> "LayerOrigin":
        return cls("artist")

    @classmethod
    def imported(cls, candidate_id: int) -> "LayerOrigin":
        return cls("import", candidate_id)

    def to_json(self) -> dict:
        if self.kind == "import":
            return {"kind": "import", "candidate_id": self.candidate_id}
        return {"kind": "artist"}

    @classmethod
    def from_json(cls, data: dict) -> "LayerOrigin":
        if data["kind"] == "import":
            return cls.imported(int(data["candidate_id"]))
        return cls.artist()


@dataclass
class Layer:
    id: int
    image: RasterImage
    opacity: float = 1.0
    visible: bool = True
    origin: LayerOrigin = field(default_factory=LayerOrigin.artist)


class LayerStack:
    """Ordered layers over an opaque background; index 0 is the bottom.

    Single-writer by contract: the owning session serializes all mutations.
    """

    def __init__(self, width: int, height: int, background: Rgba = WHITE):
        if background.a != 255:
            raise ValueError("background must be fully opaque")
        self.width = width
        self.height = height
        self.background = background
        self.layers: list[Layer] = []
        self._next_id = 1

    def __len__(self) -> int:
        return len(self.layers)

    def get(self, layer_id: int) -> Layer:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise UnknownLayerError(layer_id)

    def index_of(self, layer_id: int) -> int:
        for i, layer in enumerate(self.layers):
            if layer.id == layer_id:
                return i
        raise UnknownLayerError(layer_id)

    def add_layer(self, image: RasterImage, origin: Optional[LayerOrigin] = None) -> int:
        """Append a fully visible, fully opaque layer on top; returns its id."""
        if (image.width, image.height) != (self.width, self.height):
            raise ValueError(
                f"layer is {image.width}x{image.height}, canvas is {self.width}x{self.height}"
            )
        layer = Layer(self._next_id, image, origin=origin or LayerOrigin.artist())
        self._next_id += 1
        self.layers.append(layer)
        return layer.id

    def brush_stroke(self, layer_id: int, cx: int, cy: int, radius: int, color: Rgba) -> None:
        """Composite ``color`` over every pixel within ``radius`` of the center.

        Hard-edged disc, pixel centers at integer coordinates; portions outside
        the canvas are clipped.
        """
        if radius < 1:
            raise ValueError(f"radius must be >= 1, got {radius}")
        layer = self.get(layer_id)
        x0 = max(0, int(math.ceil(cx - radius)))
        x1 = min(self.width - 1, int(math.floor(cx + radius)))
        y0 = max(0, int(math.ceil(cy - radius)))
        y1 = min(self.height - 1, int(math.floor(cy + radius)))
        if x0 > x1 or y0 > y1:
            return
        arr = layer.image.to_array()
        region = arr[y0 : y1 + 1, x0 : x1 + 1]
        ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius * radius
        if not mask.any():
            return
        src = np.empty_like(region)
        src[...] = np.asarray(color, dtype=np.uint8)
        composited = composite_arrays(src, 1.0, region)
        region[mask] = composited[mask]
        layer.image = RasterImage.from_array(arr)

    def rect_fill(self, layer_id: int, x0: int, y0: int, x1: int, y1: int, color: Rgba) -> None:
        """Composite ``color`` over the inclusive rectangle, clipped to the canvas."""
        layer = self.get(layer_id)
        x0, x1 = sorted((x0, x1))
        y0, y1 = sorted((y0, y1))
        x0, y0 = max(0, x0), max(0, y0)
        x1, y1 = min(self.width - 1, x1), min(self.height - 1, y1)
        if x0 > x1 or y0 > y1:
            return
        arr = layer.image.to_array()
        region = arr[y0 : y1 + 1, x0 : x1 + 1]
        src = np.empty_like(region)
        src[...] = np.asarray(color, dtype=np.uint8)
        arr[y0 : y1 + 1, x0 : x1 + 1] = composite_arrays(src, 1.0, region)
        layer.image = RasterImage.from_array(arr)

    def set_layer_props(
        self,
        layer_id: int,
        opacity: Optional[float] = None,
        visible: Optional[bool] = None,
        index: Optional[int] = None,
    ) -> None:
        """Update opacity/visibility and optionally move the layer (stable)."""
        layer = self.get(layer_id)
        if opacity is not None:
            if not 0.0 <= opacity <= 1.0:
                raise ValueError(f"opacity must be in [0, 1], got {opacity}")
            layer.opacity = float(opacity)
        if visible is not None:
            layer.visible = bool(visible)
        if index is not None:
            if not 0 <= index < len(self.layers):
                raise ValueError(f"index {index} out of range for {len(self.layers)} layers")
            current = self.index_of(layer_id)
            self.layers.insert(index, self.layers.pop(current))

    def flatten(self) -> RasterImage:
        """Composite visible layers bottom-to-top over the opaque background."""
        acc = np.empty((self.height, self.width, 4), dtype=np.uint8)
        acc[...] = np.asarray(self.background, dtype=np.uint8)
        for layer in self.layers:
            if not layer.visible:
                continue
            acc = composite_arrays(layer.image.to_array(), layer.opacity, acc)
        return RasterImage.from_array(acc)


def save_stack(stack: LayerStack, directory: Path) -> None:
    """Serialize a stack as manifest.json plus one PNG per layer."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "width": stack.width,
        "height": stack.height,
        "background": list(stack.background),
        "next_id": stack._next_id,
        "layers": [
            {
                "id": layer.id,
                "opacity": layer.opacity,
                "visible": layer.visible,
                "origin": layer.origin.to_json(),
                "file": f"layer-{layer.id:04d}.png",
            }
            for layer in stack.layers
        ],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for layer in stack.layers:
        (directory / f"layer-{layer.id:04d}.png").write_bytes(encode_png(layer.image))


def load_stack(directory: Path) -> LayerStack:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    stack = LayerStack(manifest["width"], manifest["height"], Rgba(*manifest["background"]))
    stack._next_id = manifest["next_id"]
    for entry in manifest["layers"]:
        image = decode_png((directory / entry["file"]).read_bytes())
        layer = Layer(
            id=entry["id"],
            image=image,
            opacity=entry["opacity"],
            visible=entry["visible"],
            origin=LayerOrigin.from_json(entry["origin"]),
        )
        stack.layers.append(layer)
    return stack


# Provenance edge kinds.
CONDITIONED_ON = "conditioned-on"  # snapshot -> candidate (weight attached)
IMPORTED_AS = "imported-as"  # candidate -> layer
COMPOSITED_INTO = "composited-into"  # layer -> snapshot


@dataclass(frozen=True)
class ProvNode:
    id: str
    kind: str  # "snapshot" | "candidate" | "layer"
    seq: int
    at: int


@dataclass(frozen=True)
class ProvEdge:
    src: str
    dst: str
    kind: str
    weight: Optional[float] = None


class ProvenanceGraph:
    """Time-ordered DAG of snapshots, candidates, and layers.

    Every edge points from an earlier node to a strictly later one, which is
    what keeps the cyclic feedback loop acyclic once unrolled.
    """

    def __init__(self) -> None:
        self.nodes: dict[str, ProvNode] = {}
        self.edges: list[ProvEdge] = []
        self._seq = 0

    def _add_node(self, node_id: str, kind: str, at: int) -> str:
        if node_id in self.nodes:
            raise ValueError(f"duplicate provenance node {node_id}")
        self.nodes[node_id] = ProvNode(node_id, kind, self._seq, at)
        self._seq += 1
        return node_id

    def add_snapshot(self, snapshot_seq: int, at: int) -> str:
        return self._add_node(f"snapshot:{snapshot_seq}", "snapshot", at)

    def add_candidate(self, candidate_id: int, at: int) -> str:
        return self._add_node(f"candidate:{candidate_id}", "candidate", at)

    def add_layer(self, layer_id: int, at: int) -> str:
        return self._add_node(f"layer:{layer_id}", "layer", at)

    def add_edge(self, src: str, dst: str, kind: str, weight: Optional[float] = None) -> None:
        if src not in self.nodes or dst not in self.nodes:
            raise ValueError(f"edge endpoints must exist: {src} -> {dst}")
        if self.nodes[dst].seq <= self.nodes[src].seq:
            raise ValueError(f"edge {src} -> {dst} violates time ordering")
        self.edges.append(ProvEdge(src, dst, kind, weight))

    def depth(self) -> int:
        """Edge count of the longest time-ordered path (0 for an empty graph)."""
        if not self.nodes:
            return 0
        incoming: dict[str, list[ProvEdge]] = {}
        for edge in self.edges:
            incoming.setdefault(edge.dst, []).append(edge)
        longest: dict[str, int] = {}
        for node in sorted(self.nodes.values(), key=lambda n: n.seq):
            best = 0
            for edge in incoming.get(node.id, []):
                best = max(best, longest[edge.src] + 1)
            longest[node.id] = best
        return max(longest.values())

    def to_json(self) -> dict:
        return {
            "nodes": [
                {"id": n.id, "kind": n.kind, "seq": n.seq, "at": n.at}
                for n in sorted(self.nodes.values(), key=lambda n: n.seq)
            ],
            "edges": [
                {"src": e.src, "dst": e.dst, "kind": e.kind, "weight": e.weight}
                for e in self.edges
            ],
        }
