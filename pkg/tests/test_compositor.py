import numpy as np
import pytest
import torch

from scenecomp.compositor import (
    ObjectAsset,
    canonicalize_patch,
    compose_image,
    compose_layout,
    compose_layout_tensor,
    gt_transform,
)
from scenecomp.errors import EmptyObjectError, InvalidBBoxError, ShapeMismatchError
from scenecomp.features import ClassTable, LayoutStack, layout_to_channels
from scenecomp.geometry import NormalizedFrame, Transform2D, warp_to_scene

TABLE = ClassTable(("road", "sky", "car"), frozenset({"car"}), frozenset({"road"}))


def square_asset(patch_side=8, color=(1.0, 0.5, 0.25)):
    sil = np.ones((patch_side, patch_side), dtype=np.float32)
    patch = np.zeros((patch_side, patch_side, 3), dtype=np.float32)
    patch[:] = color
    edge = np.zeros_like(sil)
    return ObjectAsset(patch, sil, edge, class_id=2)


class TestCanonicalizePatch:
    def test_aspect_preserving_footprint(self):
        img = np.zeros((64, 64, 3), dtype=np.float32)
        mask = np.zeros((64, 64))
        mask[10:26, 20:52] = 1  # 32 wide x 16 tall
        img[10:26, 20:52] = 0.8
        asset = canonicalize_patch(img, mask, (20, 10, 32, 16), patch_side=64)
        ys, xs = np.nonzero(asset.silhouette)
        w = xs.max() - xs.min() + 1
        h = ys.max() - ys.min() + 1
        assert w == 64 and h == 32
        # centered within one pixel
        assert abs((xs.min() + xs.max() + 1) / 2 - 32) <= 1
        assert abs((ys.min() + ys.max() + 1) / 2 - 32) <= 1

    def test_full_size_crop_is_near_identity(self):
        rng = np.random.default_rng(0)
        img = rng.random((64, 64, 3)).astype(np.float32)
        mask = np.ones((64, 64))
        asset = canonicalize_patch(img, mask, (0, 0, 64, 64), patch_side=64)
        assert np.abs(asset.patch - img).mean() < 2 / 255

    def test_empty_mask_raises(self):
        img = np.zeros((32, 32, 3))
        mask = np.zeros((32, 32))
        with pytest.raises(EmptyObjectError):
            canonicalize_patch(img, mask, (4, 4, 8, 8))

    def test_out_of_bounds_bbox_raises(self):
        img = np.zeros((32, 32, 3))
        mask = np.ones((32, 32))
        with pytest.raises(InvalidBBoxError):
            canonicalize_patch(img, mask, (28, 4, 8, 8))

    def test_premasked_and_edge_invariants(self):
        rng = np.random.default_rng(1)
        img = rng.random((40, 40, 3)).astype(np.float32)
        mask = np.zeros((40, 40))
        mask[8:30, 6:20] = 1
        asset = canonicalize_patch(img, mask, (6, 8, 14, 22), patch_side=32)
        outside = asset.silhouette == 0
        assert np.all(asset.patch[outside] == 0)
        assert np.all(asset.edge[outside] == 0)
        assert set(np.unique(asset.silhouette)) <= {0.0, 1.0}
        assert asset.edge.max() <= 1.0


class TestGtTransform:
    def test_hand_computed_case(self):
        t = gt_transform((80, 72, 32, 16), NormalizedFrame(128, 128), 64)
        assert t.s == pytest.approx(0.5)
        assert t.t_x == pytest.approx(0.5)
        assert t.t_y == pytest.approx(0.25)

    def test_centered_default_patch_is_identity(self):
        t = gt_transform((32, 32, 64, 64), NormalizedFrame(128, 128), 64)
        assert t == Transform2D(1.0, 0.0, 0.0)

    def test_degenerate_bbox_raises(self):
        with pytest.raises(InvalidBBoxError):
            gt_transform((4, 4, 0, 8), NormalizedFrame(64, 64))
        with pytest.raises(InvalidBBoxError):
            gt_transform((60, 4, 8, 8), NormalizedFrame(64, 64))

    def test_round_trip_silhouette_iou(self):
        # gt_transform must put the canonical silhouette back on the crop
        rng = np.random.default_rng(7)
        frame = NormalizedFrame(128, 128)
        ious = []
        for _ in range(25):
            w = int(rng.integers(14, 40))
            h = int(rng.integers(10, 30))
            u0 = int(rng.integers(1, 128 - w - 1))
            v0 = int(rng.integers(1, 128 - h - 1))
            mask = np.zeros((128, 128))
            mask[v0 : v0 + h, u0 : u0 + w] = 1
            img = np.repeat(mask[:, :, None], 3, axis=2).astype(np.float32) * 0.7
            asset = canonicalize_patch(img, mask, (u0, v0, w, h), patch_side=64)
            t = gt_transform((u0, v0, w, h), frame, 64)
            warped = warp_to_scene(asset.silhouette, t, frame) >= 0.5
            inter = np.logical_and(warped, mask).sum()
            union = np.logical_or(warped, mask).sum()
            ious.append(inter / union)
        assert min(ious) >= 0.9


class TestComposeImage:
    def test_zero_silhouette_returns_scene_bit_exact(self):
        rng = np.random.default_rng(2)
        x = rng.random((32, 48, 3)).astype(np.float32)
        asset = square_asset(8)
        asset.silhouette[:] = 0
        asset.patch[:] = 0
        out = compose_image(x, asset, Transform2D(0.5, 0.1, -0.2))
        assert np.array_equal(out, x)

    def test_unit_mask_block_shows_patch(self):
        x = np.zeros((128, 128, 3), dtype=np.float32)
        x[:] = 0.2
        asset = square_asset(64, color=(0.9, 0.1, 0.4))
        out = compose_image(x, asset, Transform2D.identity())
        assert np.allclose(out[32:96, 32:96], [0.9, 0.1, 0.4])
        assert np.array_equal(out[:32], x[:32])

    def test_identity_off_support_bit_exact(self):
        rng = np.random.default_rng(3)
        x = rng.random((64, 64, 3)).astype(np.float32)
        asset = square_asset(16)
        t = Transform2D(0.5, 0.25, 0.25)
        frame = NormalizedFrame(64, 64)
        m = warp_to_scene(asset.silhouette, t, frame)
        out = compose_image(x, asset, t)
        off = m == 0
        assert np.array_equal(out[off], x[off])

    def test_hand_computed_pixel_table(self):
        # 4x4 scene, 2x2 patch, s=1 with P=2 and H=4 -> patch covers the
        # centered 2x2 block exactly; blend is pure replacement there.
        x = np.full((4, 4, 3), 0.5, dtype=np.float32)
        sil = np.ones((2, 2), dtype=np.float32)
        patch = np.zeros((2, 2, 3), dtype=np.float32)
        patch[..., 0] = 1.0
        asset = ObjectAsset(patch, sil, np.zeros_like(sil), class_id=2)
        out = compose_image(x, asset, Transform2D.identity())
        want = x.copy()
        want[1:3, 1:3] = [1.0, 0.0, 0.0]
        assert np.allclose(out, want, atol=1e-7)

    def test_output_range(self):
        rng = np.random.default_rng(4)
        x = rng.random((32, 32, 3)).astype(np.float32)
        asset = square_asset(8, color=(1.0, 1.0, 1.0))
        out = compose_image(x, asset, Transform2D(1.7, 0.2, 0.1))
        assert out.min() >= 0.0 and out.max() <= 1.0 + 1e-6

    def test_hard_mode_unpremultiplies(self):
        x = np.zeros((32, 32, 3), dtype=np.float32)
        asset = square_asset(8, color=(0.6, 0.3, 0.9))
        out = compose_image(x, asset, Transform2D(0.77, 0.05, -0.03), hard=True)
        on = np.abs(out).sum(axis=2) > 0
        colors = out[on]
        assert np.allclose(colors, [0.6, 0.3, 0.9], atol=1e-5)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            compose_image(np.zeros((8, 8)), square_asset(4), Transform2D.identity())


class TestComposeLayout:
    def road_layout(self, h=32, w=32):
        labels = np.zeros((h, w), dtype=np.int32)
        labels[: h // 2] = 1  # sky on top
        return layout_to_channels(labels, TABLE)

    def test_zero_silhouette_leaves_layout(self):
        x_l = self.road_layout()
        asset = square_asset(8)
        asset.silhouette[:] = 0
        out = compose_layout(x_l, asset, Transform2D(0.5, 0.0, 0.5))
        assert np.array_equal(out.channels, x_l.channels)

    def test_exclusivity_preserved_random_cases(self):
        rng = np.random.default_rng(5)
        x_l = self.road_layout()
        asset = square_asset(8)
        for _ in range(100):
            t = Transform2D(
                float(rng.uniform(0.1, 2.0)),
                float(rng.uniform(-1, 1)),
                float(rng.uniform(-1, 1)),
            )
            hard = compose_layout(x_l, asset, t)
            assert hard.channels.max() <= 1
            assert (hard.channels.sum(axis=0) <= 1 + 1e-6).all()
            assert set(np.unique(hard.channels)) <= {0.0, 1.0}
            soft = compose_layout(x_l, asset, t, soft=True)
            assert (soft.channels.sum(axis=0) <= 1 + 1e-6).all()

    def test_object_channel_never_shrinks_others_never_grow(self):
        rng = np.random.default_rng(6)
        x_l = self.road_layout()
        # seed some existing car pixels
        x_l.channels[2, 20:24, 4:10] = 1
        x_l.channels[0, 20:24, 4:10] = 0
        asset = square_asset(8)
        for _ in range(20):
            t = Transform2D(float(rng.uniform(0.2, 1.5)), float(rng.uniform(-1, 1)), 0.5)
            out = compose_layout(x_l, asset, t)
            assert out.channels[2].sum() >= x_l.channels[2].sum()
            for c in (0, 1):
                assert out.channels[c].sum() <= x_l.channels[c].sum()

    def test_unknown_class_rejected(self):
        x_l = self.road_layout()
        asset = square_asset(8)
        asset.class_id = 7
        with pytest.raises(ShapeMismatchError):
            compose_layout(x_l, asset, Transform2D.identity())

    def test_tensor_path_matches_soft_numpy(self):
        x_l = self.road_layout()
        asset = square_asset(8)
        t = Transform2D(0.6, 0.2, 0.4)
        soft = compose_layout(x_l, asset, t, soft=True)
        frame = NormalizedFrame(32, 32)
        got = compose_layout_tensor(
            torch.from_numpy(x_l.channels),
            torch.from_numpy(asset.silhouette)[None],
            t,
            asset.class_id,
            frame,
        )
        assert np.allclose(got.numpy(), soft.channels, atol=1e-6)

    def test_tensor_path_gradients_reach_transform(self):
        x_l = self.road_layout()
        asset = square_asset(8)
        frame = NormalizedFrame(32, 32)
        params = torch.tensor([0.6, 0.2, 0.4], requires_grad=True)
        out = compose_layout_tensor(
            torch.from_numpy(x_l.channels),
            torch.from_numpy(asset.silhouette)[None],
            params,
            asset.class_id,
            frame,
        )
        out.square().sum().backward()
        assert params.grad is not None and params.grad.abs().sum() > 0
