import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenehash import numcore as nc
from scenehash import scenegraph as sg
from scenehash.nn import Linear, ParamStore


def disk_mask(h, w, cy, cx, r):
    ys, xs = np.mgrid[0:h, 0:w]
    return (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r


def rect_detection(h, w, y0, x0, hh, ww, confidence=1.0):
    mask = np.zeros((h, w), dtype=bool)
    mask[y0:y0 + hh, x0:x0 + ww] = True
    box = sg.Box(cx=x0 + ww / 2.0, cy=y0 + hh / 2.0, w=float(ww), h=float(hh))
    return sg.Detection(box=box, mask=mask, confidence=confidence)


def hu_raw_oracle(mask):
    """Dense-grid central moments computed with explicit loops (independent path)."""
    h, w = mask.shape
    m00 = m10 = m01 = 0.0
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                m00 += 1.0
                m10 += x
                m01 += y
    xb, yb = m10 / m00, m01 / m00
    mu = {}
    for p, q in [(2, 0), (0, 2), (1, 1), (3, 0), (0, 3), (2, 1), (1, 2)]:
        s = 0.0
        for y in range(h):
            for x in range(w):
                if mask[y, x]:
                    s += (x - xb) ** p * (y - yb) ** q
        mu[(p, q)] = s
    eta = {k: v / m00 ** (1 + sum(k) / 2) for k, v in mu.items()}
    return eta[(2, 0)] + eta[(0, 2)]


# --- geometry features ------------------------------------------------------

def test_geometry_full_image_box():
    g = sg.geometry_features(sg.Box(100, 50, 200, 100), width=200, height=100)
    assert np.allclose(g, [0.5, 0.5, 1.0, 1.0, 1.0])


def test_geometry_hand_arithmetic():
    g = sg.geometry_features(sg.Box(50, 25, 100, 50), width=200, height=100)
    assert np.allclose(g, [0.25, 0.25, 0.5, 0.5, 0.25])


def test_geometry_degenerate_box_in_range():
    g = sg.geometry_features(sg.Box(1, 1, 1, 1), width=200, height=100)
    assert np.all(g > 0.0) and np.all(g <= 1.0)


def test_geometry_zero_image_dims():
    with pytest.raises(ValueError):
        sg.geometry_features(sg.Box(1, 1, 1, 1), width=0, height=100)


# --- Hu moments -------------------------------------------------------------

def test_hu_disk_first_invariant_matches_dense_oracle():
    mask = disk_mask(128, 128, 64, 64, 40)
    phi1 = hu_raw_oracle(mask)
    assert abs(phi1 - 1.0 / (2.0 * np.pi)) < 1e-3
    s = sg.hu_moments(mask)
    assert s[0] == pytest.approx(-np.sign(phi1) * np.log10(abs(phi1) + 1e-30), abs=1e-9)


def test_hu_translation_invariance():
    mask = disk_mask(128, 128, 50, 40, 20) | disk_mask(128, 128, 70, 80, 12)
    shifted = np.roll(np.roll(mask, 13, axis=0), -9, axis=1)
    assert np.max(np.abs(sg.hu_moments(mask) - sg.hu_moments(shifted))) < 1e-6


def test_hu_rotation_90_invariance():
    rng = np.random.default_rng(4)
    mask = disk_mask(100, 100, 40, 55, 18)
    mask[60:80, 20:50] = True
    for k in (1, 2, 3):
        drift = np.max(np.abs(sg.hu_moments(mask) - sg.hu_moments(np.rot90(mask, k))))
        assert drift < 1e-6


def test_hu_scale_drift_small():
    small = disk_mask(128, 128, 64, 64, 25)
    big = disk_mask(256, 256, 128, 128, 50)
    assert np.max(np.abs(sg.hu_moments(small) - sg.hu_moments(big))) < 1e-2


def test_hu_empty_mask_raises():
    with pytest.raises(sg.EmptyShapeError):
        sg.hu_moments(np.zeros((8, 8), dtype=bool))


def test_hu_finite_for_any_nonempty_mask():
    rng = np.random.default_rng(0)
    for _ in range(20):
        mask = rng.random((32, 32)) < 0.2
        if not mask.any():
            mask[0, 0] = True
        assert np.all(np.isfinite(sg.hu_moments(mask)))


# --- relation features ------------------------------------------------------

def _two_disjoint_dets():
    d1 = rect_detection(100, 100, 5, 5, 10, 10)
    d2 = rect_detection(100, 100, 5, 25, 10, 10)
    return d1, d2


def test_relation_self_pair():
    d1, _ = _two_disjoint_dets()
    r = sg.relation_features(d1, d1, 100, 100)
    assert np.allclose(r, [0, 0, 0, 1, 1, 0, 1])


def test_relation_hand_arithmetic():
    d1, d2 = _two_disjoint_dets()
    # centers (10, 10) and (30, 10): dx=20, dy=0, sqrt(A_i)=10
    r = sg.relation_features(d1, d2, 100, 100)
    assert np.allclose(r, [2.0, 0.0, 20 / np.sqrt(20000), 1.0, 1.0, 0.0, 0.0])


def test_relation_swap_antisymmetry():
    d1, d2 = _two_disjoint_dets()
    r12 = sg.relation_features(d1, d2, 100, 100)
    r21 = sg.relation_features(d2, d1, 100, 100)
    assert np.allclose(r21[:2], -r12[:2])
    assert r21[3] == pytest.approx(1.0 / r12[3])
    assert r21[4] == pytest.approx(1.0 / r12[4])
    assert r21[6] == r12[6]
    assert r21[2] == r12[2]


def test_relation_vertical_angle():
    d1 = rect_detection(100, 100, 5, 5, 10, 10)
    d3 = rect_detection(100, 100, 45, 5, 10, 10)  # same cx, below
    r = sg.relation_features(d1, d3, 100, 100)
    assert r[5] == pytest.approx(np.pi / 2)


def test_relation_iou_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    for _ in range(10):
        a = rect_detection(50, 50, rng.integers(0, 20), rng.integers(0, 20), 15, 15)
        b = rect_detection(50, 50, rng.integers(0, 20), rng.integers(0, 20), 15, 15)
        gij = sg.relation_features(a, b, 50, 50)[6]
        gji = sg.relation_features(b, a, 50, 50)[6]
        assert gij == gji
        assert 0.0 <= gij <= 1.0


# --- background node --------------------------------------------------------

def test_background_no_detections():
    img = np.random.default_rng(0).random((32, 32, 3))
    bg = sg.background_node(img, [])
    assert bg.mask.all()
    assert np.array_equal(bg.crop, img)
    assert not bg.meta["fallback"]


def test_background_complement_count():
    img = np.ones((32, 32, 3)) * 0.5
    det = rect_detection(32, 32, 8, 8, 16, 16)  # covers 25%
    bg = sg.background_node(img, [det])
    assert bg.mask.sum() == 32 * 32 * 3 // 4
    assert np.all(bg.crop[det.mask] == 0.0)


def test_background_full_cover_fallback():
    img = np.ones((16, 16, 3)) * 0.5
    det = rect_detection(16, 16, 0, 0, 16, 16)
    bg = sg.background_node(img, [det])
    assert bg.mask.all()
    assert bg.meta["fallback"]


# --- graph assembly ---------------------------------------------------------

def _projections(seed=0):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    return sg.GraphProjections(
        e_v=store.linear("ev", 256, 48, rng),
        e_s=store.linear("es", 7, 8, rng),
        e_g=store.linear("eg", 5, 8, rng),
        e_r=store.linear("er", 7, 16, rng),
    )


def _extractor(seed=0):
    rng = np.random.default_rng(seed + 100)
    w = nc.Tensor(rng.standard_normal((3, 256)) * 0.2)

    def extract(crops):
        n = crops.shape[0]
        pooled = nc.mean_axis(nc.reshape(crops, (n, 3, sg.CROP_SIZE * sg.CROP_SIZE)), 2)
        return nc.matmul(pooled, w)

    return extract


def test_graph_shapes_one_object():
    img = np.random.default_rng(2).random((64, 64, 3))
    det = rect_detection(64, 64, 10, 10, 20, 20)
    proj = _projections()
    g = sg.build_scene_graph(img, [det], _extractor(), proj)
    assert g.n == 2
    assert g.nodes.shape == (2, proj.node_dim)
    assert g.edges.shape == (4, proj.edge_dim)
    assert proj.node_dim == 64 and proj.edge_dim == 144


def test_graph_truncation_to_n_max():
    img = np.random.default_rng(3).random((64, 64, 3))
    dets = [rect_detection(64, 64, 2 + 5 * i, 2 + 5 * i, 6, 6, confidence=1 - 0.05 * i) for i in range(10)]
    g = sg.build_scene_graph(img, dets, _extractor(), _projections(), n_max=4)
    assert g.n == 5  # 4 objects + background


def test_graph_duplicate_detections_equal_rows():
    img = np.random.default_rng(4).random((64, 64, 3))
    det = rect_detection(64, 64, 10, 10, 20, 20)
    dup = rect_detection(64, 64, 10, 10, 20, 20)
    g = sg.build_scene_graph(img, [det, dup], _extractor(), _projections())
    assert np.array_equal(g.nodes.data[0], g.nodes.data[1])


def test_graph_edge_rows_are_node_sandwiches():
    img = np.random.default_rng(5).random((64, 64, 3))
    dets = [rect_detection(64, 64, 4, 4, 12, 12, 0.9), rect_detection(64, 64, 30, 30, 16, 16, 0.8)]
    proj = _projections()
    feats = sg.scene_features(img, dets)
    g = sg.build_scene_graph(img, dets, _extractor(), proj)
    dn = proj.node_dim
    er = proj.e_r(nc.constant(feats.rel_feats)).data
    for i in range(g.n):
        for j in range(g.n):
            row = g.edges.data[i * g.n + j]
            assert np.array_equal(row[:dn], g.nodes.data[i])
            assert np.array_equal(row[dn + 16:], g.nodes.data[j])
            assert np.allclose(row[dn:dn + 16], er[i * g.n + j])


def test_graph_ordering_confidence_then_ties():
    img = np.ones((64, 64, 3)) * 0.3
    a = rect_detection(64, 64, 4, 40, 10, 10, confidence=0.5)
    b = rect_detection(64, 64, 4, 4, 10, 10, confidence=0.9)
    c = rect_detection(64, 64, 30, 4, 20, 20, confidence=0.5)  # bigger area than a
    ordered = sg.order_detections([a, b, c])
    assert ordered == [b, c, a]


def test_graph_deterministic():
    img = np.random.default_rng(6).random((64, 64, 3))
    dets = [rect_detection(64, 64, 4, 4, 12, 12), rect_detection(64, 64, 30, 30, 16, 16)]
    g1 = sg.build_scene_graph(img, dets, _extractor(), _projections())
    g2 = sg.build_scene_graph(img, dets, _extractor(), _projections())
    assert np.array_equal(g1.nodes.data, g2.nodes.data)
    assert np.array_equal(g1.edges.data, g2.edges.data)


def test_graph_empty_raises():
    img = np.ones((16, 16, 3)) * 0.2
    with pytest.raises(sg.EmptyGraphError):
        sg.scene_features(img, [], include_background=False)


# --- manifests --------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**20 - 1), st.integers(2, 5), st.integers(2, 5))
def test_rle_roundtrip(bits, h, w):
    rng = np.random.default_rng(bits)
    mask = rng.random((h, w)) < 0.5
    runs = sg.rle_encode(mask)
    assert np.array_equal(sg.rle_decode(runs, h, w), mask)
    # canonical form: starts with a 0-count, no interior zero runs
    assert all(r > 0 for r in runs[1:])


def test_manifest_roundtrip(tmp_path):
    det = rect_detection(32, 48, 4, 6, 10, 12, confidence=0.75)
    doc = sg.manifest_to_dict("img.png", 48, 32, [det])
    path = tmp_path / "m.json"
    sg.save_manifest(doc, path)
    loaded = sg.load_manifest(path)
    image_path, w, h, dets = sg.manifest_from_dict(loaded)
    assert (image_path, w, h) == ("img.png", 48, 32)
    assert len(dets) == 1
    assert np.array_equal(dets[0].mask, det.mask)
    assert dets[0].confidence == 0.75


def test_manifest_rejects_empty_mask():
    doc = {
        "image": "x.png", "width": 8, "height": 8,
        "detections": [{"bbox_cxcywh": [4, 4, 2, 2], "confidence": 1.0, "mask": [64], "crop": None}],
    }
    with pytest.raises(sg.ManifestError):
        sg.manifest_from_dict(doc)


def test_manifest_rejects_bad_rle_length():
    doc = {
        "image": "x.png", "width": 8, "height": 8,
        "detections": [{"bbox_cxcywh": [4, 4, 2, 2], "confidence": 1.0, "mask": [10, 3], "crop": None}],
    }
    with pytest.raises(sg.ManifestError):
        sg.manifest_from_dict(doc)
