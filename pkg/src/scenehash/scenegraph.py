"""Scene decomposition: detections to a fully connected attributed graph.

Each image contributes N nodes (detected objects plus one background node)
and all N^2 ordered pairwise relations. Node features concatenate projected
visual, shape (Hu moment) and box-geometry cues; edge features sandwich a
projected relation vector between both endpoint node features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .imgutil import bilinear_resize
from .nn import Linear

CROP_SIZE = 64
N_MAX_DEFAULT = 8
HU_LOG_FLOOR = 1e-30


class EmptyShapeError(ValueError):
    pass


class EmptyGraphError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass
class Box:
    """Axis-aligned box given by center (cx, cy) and size (w, h), in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    def bounds(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) integer pixel bounds, end-exclusive."""
        x0 = int(round(self.cx - self.w / 2.0))
        y0 = int(round(self.cy - self.h / 2.0))
        return x0, y0, x0 + int(round(self.w)), y0 + int(round(self.h))


@dataclass
class Detection:
    """One object: crop raster, full-resolution binary mask, box, confidence."""

    box: Box
    mask: np.ndarray
    confidence: float = 1.0
    crop: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def require_crop(self, image: np.ndarray) -> np.ndarray:
        if self.crop is not None:
            return self.crop
        x0, y0, x1, y1 = self.box.bounds()
        h, w = image.shape[:2]
        x0, y0 = max(0, x0), max(0, y0)
        x1, y1 = min(w, x1), min(h, y1)
        return image[y0:y1, x0:x1]


def validate_detection(det: Detection, width: int, height: int) -> None:
    b = det.box
    if not (0 < b.w <= width) or not (0 < b.h <= height):
        raise ManifestError(f"box size ({b.w}, {b.h}) outside image ({width}, {height})")
    if det.mask.shape != (height, width):
        raise ManifestError(f"mask shape {det.mask.shape} != image ({height}, {width})")
    if not det.mask.any():
        raise ManifestError("detection mask has no set pixels")


# ---------------------------------------------------------------------------
# per-object features

def geometry_features(box: Box, width: int, height: int) -> np.ndarray:
    """Five box cues normalized by image size: center, extent, area fraction."""
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    return np.array([
        box.cx / width,
        box.cy / height,
        box.w / width,
        box.h / height,
        (box.w * box.h) / (width * height),
    ])


def hu_moments(mask: np.ndarray) -> np.ndarray:
    """Seven affine-invariant moment features of a binary mask, log-rescaled.

    Each raw invariant h_k becomes -sign(h_k) * log10(|h_k| + 1e-30), since
    the raw values span tens of orders of magnitude.
    """
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise EmptyShapeError("empty mask has no shape moments")
    # rebase to the bounding box so integer translation is bit-exact
    xs = xs - xs.min()
    ys = ys - ys.min()
    m00 = float(xs.size)
    xbar, ybar = xs.mean(), ys.mean()
    x, y = xs - xbar, ys - ybar

    def mu(p, q):
        return float(np.sum(x**p * y**q))

    def eta(p, q):
        return mu(p, q) / m00 ** (1.0 + (p + q) / 2.0)

    n20, n02, n11 = eta(2, 0), eta(0, 2), eta(1, 1)
    n30, n03, n21, n12 = eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2)

    a = n30 + n12
    b = n21 + n03
    h = np.array([
        n20 + n02,
        (n20 - n02) ** 2 + 4 * n11**2,
        (n30 - 3 * n12) ** 2 + (3 * n21 - n03) ** 2,
        a**2 + b**2,
        (n30 - 3 * n12) * a * (a**2 - 3 * b**2) + (3 * n21 - n03) * b * (3 * a**2 - b**2),
        (n20 - n02) * (a**2 - b**2) + 4 * n11 * a * b,
        (3 * n21 - n03) * a * (a**2 - 3 * b**2) - (n30 - 3 * n12) * b * (3 * a**2 - b**2),
    ])
    return -np.sign(h) * np.log10(np.abs(h) + HU_LOG_FLOOR)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.count_nonzero(a & b)
    if inter == 0:
        return 0.0
    union = np.count_nonzero(a | b)
    return inter / union


def relation_features(d_i: Detection, d_j: Detection, width: int, height: int) -> np.ndarray:
    """Pairwise geometry: scaled offsets, normalized distance, size ratios, angle, IoU."""
    bi, bj = d_i.box, d_j.box
    dx = bj.cx - bi.cx
    dy = bj.cy - bi.cy
    root_area = np.sqrt(bi.area)
    if dx == 0.0:
        theta = 0.0 if dy == 0.0 else np.pi / 2.0
    else:
        theta = float(np.arctan(dy / dx))
    return np.array([
        dx / root_area,
        dy / root_area,
        np.hypot(dx, dy) / np.hypot(width, height),
        bj.w / bi.w,
        bj.h / bi.h,
        theta,
        1.0 if d_i is d_j else mask_iou(d_i.mask, d_j.mask),
    ])


def background_node(image: np.ndarray, detections: list[Detection]) -> Detection:
    """Background as its own object: complement mask, full-image box, objects zeroed.

    When the objects cover the whole image the mask falls back to all-ones and
    the fallback is flagged in the detection metadata.
    """
    h, w = image.shape[:2]
    union = np.zeros((h, w), dtype=bool)
    for det in detections:
        union |= det.mask
    mask = ~union
    fallback = not mask.any()
    if fallback:
        mask = np.ones((h, w), dtype=bool)
    crop = image.copy()
    crop[union] = 0.0
    return Detection(
        box=Box(cx=w / 2.0, cy=h / 2.0, w=float(w), h=float(h)),
        mask=mask,
        confidence=0.0,
        crop=crop,
        meta={"background": True, "fallback": fallback},
    )


# ---------------------------------------------------------------------------
# graph assembly

@dataclass
class SceneFeatures:
    """Model-free featurization of one image: everything but the visual CNN."""

    crops: np.ndarray       # (N, 3, CROP_SIZE, CROP_SIZE)
    shape_feats: np.ndarray  # (N, 7)
    geo_feats: np.ndarray    # (N, 5)
    rel_feats: np.ndarray    # (N*N, 7), row i*N+j holds the (i, j) relation
    n: int
    background_fallback: bool = False


@dataclass
class SceneGraph:
    nodes: nc.Tensor  # (N, D_N)
    edges: nc.Tensor  # (N*N, D_E)
    n: int


@dataclass
class GraphProjections:
    """Linear projections feeding the graph: visual, shape, geometry, relation."""

    e_v: Linear
    e_s: Linear
    e_g: Linear
    e_r: Linear

    @property
    def node_dim(self) -> int:
        return self.e_v.out_dim + self.e_s.out_dim + self.e_g.out_dim

    @property
    def edge_dim(self) -> int:
        return 2 * self.node_dim + self.e_r.out_dim


def order_detections(detections: list[Detection]) -> list[Detection]:
    """Confidence descending; ties by box area descending, then center x ascending."""
    return sorted(detections, key=lambda d: (-d.confidence, -d.box.area, d.box.cx))


def _prep_crop(crop: np.ndarray) -> np.ndarray:
    if crop.ndim == 2:
        crop = np.repeat(crop[:, :, None], 3, axis=2)
    if crop.shape[0] == 0 or crop.shape[1] == 0:
        return np.zeros((3, CROP_SIZE, CROP_SIZE))
    return bilinear_resize(crop, CROP_SIZE, CROP_SIZE).transpose(2, 0, 1)


def scene_features(
    image: np.ndarray,
    detections: list[Detection],
    n_max: int = N_MAX_DEFAULT,
    include_background: bool = True,
) -> SceneFeatures:
    """Order, truncate to n_max objects, append background, featurize."""
    h, w = image.shape[:2]
    nodes = order_detections(detections)[:n_max]
    fallback = False
    if include_background:
        bg = background_node(image, nodes)
        fallback = bg.meta["fallback"]
        nodes = nodes + [bg]
    if not nodes:
        raise EmptyGraphError("no detections and background disabled")

    n = len(nodes)
    crops = np.stack([_prep_crop(d.require_crop(image)) for d in nodes])
    shape_feats = np.stack([hu_moments(d.mask) for d in nodes])
    geo_feats = np.stack([geometry_features(d.box, w, h) for d in nodes])
    rel = np.empty((n * n, 7))
    for i, di in enumerate(nodes):
        for j, dj in enumerate(nodes):
            rel[i * n + j] = relation_features(di, dj, w, h)
    return SceneFeatures(crops, shape_feats, geo_feats, rel, n, fallback)


def assemble_graph(feats: SceneFeatures, visual: nc.Tensor, proj: GraphProjections) -> SceneGraph:
    """Combine CNN crop features with shape/geometry cues into node and edge matrices."""
    n = feats.n
    nodes = nc.concat(
        [proj.e_v(visual), proj.e_s(nc.constant(feats.shape_feats)), proj.e_g(nc.constant(feats.geo_feats))],
        axis=1,
    )
    src = np.repeat(np.arange(n), n)
    dst = np.tile(np.arange(n), n)
    edges = nc.concat(
        [nc.gather_rows(nodes, src), proj.e_r(nc.constant(feats.rel_feats)), nc.gather_rows(nodes, dst)],
        axis=1,
    )
    return SceneGraph(nodes=nodes, edges=edges, n=n)


def build_scene_graph(
    image: np.ndarray,
    detections: list[Detection],
    visual_extractor,
    proj: GraphProjections,
    n_max: int = N_MAX_DEFAULT,
    include_background: bool = True,
) -> SceneGraph:
    """Full pipeline: featurize then project. visual_extractor maps stacked
    crops (N,3,64,64) to an (N,256) tensor."""
    feats = scene_features(image, detections, n_max, include_background)
    visual = visual_extractor(nc.constant(feats.crops))
    return assemble_graph(feats, visual, proj)


# ---------------------------------------------------------------------------
# detection manifests (external interface)

def rle_encode(mask: np.ndarray) -> list[int]:
    """Run lengths of a row-major binary mask, alternating 0s/1s, 0-count first."""
    flat = np.asarray(mask, dtype=np.uint8).reshape(-1)
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], height: int, width: int) -> np.ndarray:
    total = sum(runs)
    if total != height * width:
        raise ManifestError(f"RLE length {total} != {height}x{width}")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    val = False
    for r in runs:
        if r < 0:
            raise ManifestError("negative RLE run")
        if val:
            flat[pos:pos + r] = True
        pos += r
        val = not val
    return flat.reshape(height, width)


def detection_to_dict(det: Detection) -> dict:
    return {
        "bbox_cxcywh": [det.box.cx, det.box.cy, det.box.w, det.box.h],
        "confidence": det.confidence,
        "mask": rle_encode(det.mask),
        "crop": None,
    }


def detection_from_dict(d: dict, width: int, height: int) -> Detection:
    try:
        cx, cy, w, h = d["bbox_cxcywh"]
        det = Detection(
            box=Box(float(cx), float(cy), float(w), float(h)),
            mask=rle_decode(d["mask"], height, width),
            confidence=float(d["confidence"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"bad detection record: {e}") from None
    validate_detection(det, width, height)
    return det


def manifest_to_dict(image_path: str, width: int, height: int, detections: list[Detection], extra: dict | None = None) -> dict:
    doc = {
        "image": image_path,
        "width": width,
        "height": height,
        "detections": [detection_to_dict(d) for d in detections],
    }
    if extra:
        doc.update(extra)
    return doc


def manifest_from_dict(doc: dict) -> tuple[str, int, int, list[Detection]]:
    try:
        width, height = int(doc["width"]), int(doc["height"])
        image_path = doc["image"]
        records = doc["detections"]
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(f"bad manifest: {e}") from None
    if width <= 0 or height <= 0:
        raise ManifestError(f"bad manifest dimensions {width}x{height}")
    dets = [detection_from_dict(r, width, height) for r in records]
    return image_path, width, height, dets


def save_manifest(doc: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(doc, f)


def load_manifest(path) -> dict:
    with open(path) as f:
        doc = json.load(f)
    manifest_from_dict(doc)  # validates
    return doc
