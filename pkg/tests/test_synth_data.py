"""Unit tests for the synthetic generator, prompt vocabulary and dataset I/O.

Marker: @pytest.mark.unit

Run:
    uv run pytest tests/test_synth_data.py -v -m unit
"""

import json

import numpy as np
import pytest

from svimo.data.dataset import (
    MANIFEST,
    make_splits,
    manifest_sha256,
    read_dataset,
    read_manifest,
    write_dataset,
)
from svimo.data.generated import (
    INDEX,
    GenerationMeta,
    GenerationRecord,
    read_generation,
    read_generations,
    write_generation,
)
from svimo.data.kinematics import bimanual_skeleton, finger_chains, hand_joint_positions
from svimo.data.synth import (
    catmull_rom,
    generate_sample,
    generate_samples,
    grasp_frame,
    render_appearance_video,
    sample_primitive,
)
from svimo.data.vocab import PromptVocab, make_prompt
from svimo.errors import IntegrityError, MissingArtifactError, VocabularyError
from svimo.projection import PALETTE_U8, CameraModel, palette_rgb, project_points, render_motion_video

from conftest import tiny_config


@pytest.fixture
def desk_cfg():
    return tiny_config(shapes={"N": 9, "H": 32, "W": 48}, data={"J": 12, "K": 32, "num_samples": 8})


# ---------------------------------------------------------------------------
# Vocabulary
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_vocab_encode_pads_and_decodes(vocab):
    prompt = make_prompt("left", "spoon", "stir", "bowl")
    ids = vocab.encode(prompt, 12)
    assert len(ids) == 12
    assert ids[-1] == vocab.pad_id == 0
    assert vocab.decode(ids) == prompt


@pytest.mark.unit
def test_vocab_rejects_unknown_words_and_long_prompts(vocab):
    with pytest.raises(VocabularyError):
        vocab.encode("left hand uses the hammer to stir the bowl", 12)
    with pytest.raises(VocabularyError):
        vocab.encode(make_prompt("left", "spoon", "stir", "bowl"), 4)
    with pytest.raises(VocabularyError):
        PromptVocab(["spoon", "<pad>"])


@pytest.mark.unit
def test_vocab_is_stable(vocab):
    assert PromptVocab.build() == vocab
    assert vocab.encode_batch(["left hand", "right hand"], 3).shape == (2, 3)


# ---------------------------------------------------------------------------
# Kinematics and geometry helpers
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_finger_chains_cover_every_joint_once():
    for n in (1, 2, 6, 21):
        chains = finger_chains(n)
        joints = sorted(j for c in chains for j in c)
        assert joints == list(range(1, n))
        assert len(chains) <= 5


@pytest.mark.unit
def test_bimanual_skeleton_offsets_second_hand():
    bones = bimanual_skeleton(12)
    assert len(bones) == 10
    assert all(a < 6 and b < 6 for a, b in bones[:5])
    assert all(a >= 6 and b >= 6 for a, b in bones[5:])


@pytest.mark.unit
def test_open_hand_fingers_stay_in_wrist_plane():
    joints = hand_joint_positions(np.zeros(3), np.eye(3), 0.0, 11)
    assert joints.shape == (11, 3)
    assert np.allclose(joints[:, 2], 0.0)
    curled = hand_joint_positions(np.zeros(3), np.eye(3), 1.0, 11)
    assert not np.allclose(curled[:, 2], 0.0)


@pytest.mark.unit
def test_catmull_rom_interpolates_control_points():
    pts = np.array([[0.0, 0, 0], [1.0, 2, 0], [3.0, 1, 1]])
    out = catmull_rom(pts, np.array([0.0, 0.5, 1.0]))
    assert np.allclose(out, pts)


@pytest.mark.unit
@pytest.mark.parametrize("shape", ["box", "cylinder", "sphere"])
def test_primitives_lie_on_unit_surfaces(shape):
    pts = sample_primitive(shape, 200, np.random.default_rng(0))
    assert pts.shape == (200, 3)
    if shape == "sphere":
        assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
    elif shape == "box":
        assert np.allclose(np.abs(pts).max(axis=1), 1.0)
    else:
        side = np.isclose(np.hypot(pts[:, 1], pts[:, 2]), 1.0)
        cap = np.isclose(np.abs(pts[:, 0]), 1.0)
        assert bool((side | cap).all())


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_generate_sample_shapes_and_types(desk_cfg):
    rec = generate_sample(11, desk_cfg, "x")
    assert rec.video.shape == (9, 32, 48, 3) and rec.video.dtype == np.float32
    assert rec.hands.shape == (9, 12, 3) and rec.hands.dtype == np.float64
    assert rec.objects.shape == (9, 32, 3)
    assert rec.masks.shape == (9, 32, 48) and rec.masks.dtype == bool
    assert np.array_equal(rec.image, rec.video[0])
    assert float(rec.video.min()) >= 0.0 and float(rec.video.max()) <= 1.0
    assert bool(rec.masks.any())
    assert rec.meta.grasp_frame == grasp_frame(9) == 3
    vocab = PromptVocab.build()
    vocab.encode(rec.prompt, desk_cfg.shapes.L_text)


@pytest.mark.unit
def test_generation_is_deterministic_per_seed(desk_cfg):
    a = generate_sample(5, desk_cfg, "a")
    b = generate_sample(5, desk_cfg, "a")
    c = generate_sample(6, desk_cfg, "a")
    assert a.equals(b)
    assert not np.array_equal(a.hands, c.hands)


@pytest.mark.unit
def test_tool_is_rigidly_attached_after_grasp(desk_cfg):
    rec = generate_sample(2, desk_cfg, "g")
    g = rec.meta.grasp_frame
    n_hand = desk_cfg.data.J // 2
    wrist_idx = 0 if rec.meta.hand == "left" else n_hand
    tool = rec.objects[:, : desk_cfg.data.K // 2]
    rel = tool - rec.hands[:, wrist_idx : wrist_idx + 1]
    # pairwise tool-point distances to the wrist are constant once welded
    dist = np.linalg.norm(rel[g:], axis=-1)
    assert np.allclose(dist, dist[0], atol=1e-9)


@pytest.mark.unit
@pytest.mark.parametrize("seed", [0, 3, 7, 12])
def test_tool_shape_is_rigid_in_every_frame(desk_cfg, seed):
    rec = generate_sample(seed, desk_cfg, "r")
    tool = rec.objects[:, : desk_cfg.data.K // 2]
    dist = np.linalg.norm(tool[:, :, None] - tool[:, None, :], axis=-1)
    assert np.abs(dist - dist[0]).max() < 1e-6


@pytest.mark.unit
@pytest.mark.parametrize("action", ["stir", "push", "lift", "rotate", "brush"])
def test_motion_stays_inside_scene_bounds(action):
    cfg = tiny_config(shapes={"N": 9, "H": 32, "W": 48}, data={"J": 12, "K": 32, "actions": [action]})
    lo, hi = np.array(cfg.data.bounds_lo), np.array(cfg.data.bounds_hi)
    for seed in range(4):
        rec = generate_sample(seed, cfg, "b")
        assert rec.meta.action == action
        for points in (rec.hands, rec.objects):
            assert bool((points >= lo).all()) and bool((points <= hi).all())


def _pixel_centroid(mask: np.ndarray) -> np.ndarray:
    rows, cols = np.nonzero(mask)
    return np.array([rows.mean(), cols.mean()])


@pytest.mark.unit
def test_appearance_and_motion_renderings_are_pixel_aligned(desk_cfg):
    rec = generate_sample(4, desk_cfg, "p")
    cam = CameraModel.from_dict(rec.meta.camera)
    H, W = desk_cfg.shapes.H, desk_cfg.shapes.W
    N, n_hand, K = rec.hands.shape[0], desk_cfg.data.J // 2, desk_cfg.data.K
    blank = np.zeros((H, W, 3))
    background = palette_rgb("background")
    no_hands, no_objects = np.zeros((N, 0, 3)), np.zeros((N, 0, 3))

    # each entity rendered alone in both styles
    entities = {
        "left": (np.concatenate([rec.hands[:, :n_hand]] * 2, axis=1), no_objects),
        "right": (np.concatenate([rec.hands[:, n_hand:]] * 2, axis=1), no_objects),
        "tool": (no_hands, rec.objects[:, : K // 2]),
        "target": (no_hands, rec.objects[:, K // 2 :]),
    }
    for name, (hands, objects) in entities.items():
        _, drawn = render_appearance_video(hands, objects, cam, H, W, blank)
        motion = render_motion_video(hands, objects, cam, H, W)
        points = hands if hands.shape[1] else objects
        uv = project_points(points, cam)[..., :2]
        for n in range(N):
            expected = np.array([uv[n, :, 1].mean(), uv[n, :, 0].mean()])
            appearance_c = _pixel_centroid(drawn[n])
            motion_c = _pixel_centroid(np.any(motion[n] != background, axis=-1))
            assert np.linalg.norm(appearance_c - expected) <= 2.0, (name, n)
            assert np.linalg.norm(motion_c - expected) <= 2.0, (name, n)
            assert np.linalg.norm(appearance_c - motion_c) <= 2.0, (name, n)


@pytest.mark.unit
def test_projected_objects_land_on_drawn_pixels(desk_cfg):
    rec = generate_sample(9, desk_cfg, "m")
    cam = CameraModel.from_dict(rec.meta.camera)
    uv = project_points(np.concatenate([rec.hands, rec.objects], axis=1), cam)
    rows = np.floor(uv[..., 1] + 0.5).astype(int)
    cols = np.floor(uv[..., 0] + 0.5).astype(int)
    frames = np.broadcast_to(np.arange(rows.shape[0])[:, None], rows.shape)
    assert bool(rec.masks[frames, rows, cols].all())

@pytest.mark.unit
def test_generated_samples_get_sequential_ids():
    records = generate_samples(tiny_config(data={"num_samples": 3}))
    assert [r.sample_id for r in records] == ["00000", "00001", "00002"]
    assert len({r.meta.seed for r in records}) == 3


# ---------------------------------------------------------------------------
# Dataset on disk
# ---------------------------------------------------------------------------


@pytest.mark.unit
def test_make_splits():
    ids = [f"{i:05d}" for i in range(10)]
    train, test = make_splits(ids, 0.9, seed=0)
    assert len(train) == 9 and len(test) == 1
    assert sorted(train + test) == ids
    assert make_splits(ids, 0.9, seed=0) == (train, test)
    assert make_splits(["a", "b"], 0.9, seed=0)[1] != []
    with pytest.raises(ValueError):
        make_splits([], 0.5, seed=0)


@pytest.mark.unit
def test_dataset_round_trip_is_exact(tmp_path, cfg):
    records = generate_samples(cfg)
    manifest = write_dataset(records, tmp_path, cfg)
    ds = read_dataset(tmp_path)
    assert manifest["ids"] == [r.sample_id for r in records]
    assert ds.vocab == PromptVocab.build()
    assert manifest["palette"]["tool"] == list(PALETTE_U8["tool"])
    for original, loaded in zip(records, ds.records):
        assert original.equals(loaded)
    assert len(ds.split("train")) + len(ds.split("test")) == len(records)


@pytest.mark.unit
def test_datagen_twice_gives_identical_manifest(tmp_path, cfg):
    write_dataset(generate_samples(cfg), tmp_path / "a", cfg)
    write_dataset(generate_samples(cfg), tmp_path / "b", cfg)
    assert manifest_sha256(tmp_path / "a") == manifest_sha256(tmp_path / "b")


@pytest.mark.unit
def test_corrupted_or_missing_files_are_detected(tmp_path, cfg):
    records = generate_samples(cfg)
    write_dataset(records, tmp_path, cfg)
    sid = records[0].sample_id
    hands = tmp_path / sid / "motion" / "hands.svt"
    blob = bytearray(hands.read_bytes())
    blob[-1] ^= 0xFF
    hands.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError):
        read_dataset(tmp_path)
    hands.unlink()
    with pytest.raises(MissingArtifactError):
        read_dataset(tmp_path)
    with pytest.raises(MissingArtifactError):
        read_manifest(tmp_path / "nowhere")


@pytest.mark.unit
def test_manifest_format_version_is_checked(tmp_path, cfg):
    write_dataset(generate_samples(cfg), tmp_path, cfg)
    manifest = json.loads((tmp_path / MANIFEST).read_text())
    manifest["format_version"] = 99
    (tmp_path / MANIFEST).write_text(json.dumps(manifest))
    with pytest.raises(IntegrityError):
        read_manifest(tmp_path)


# ---------------------------------------------------------------------------
# Generated clips on disk
# ---------------------------------------------------------------------------


def _generation(record, sample_id="gen_00000", rendered=None):
    return GenerationRecord(
        video=record.video,
        motion_video=record.video[::-1].copy(),
        hands=record.hands,
        objects=record.objects,
        z0_V=np.arange(6, dtype=np.float32).reshape(2, 3),
        z0_M=np.ones((2, 3), dtype=np.float32),
        meta=GenerationMeta(
            sample_id=sample_id,
            source_id=record.sample_id,
            prompt=record.prompt,
            seed=1,
            steps=5,
            use_guidance=True,
        ),
        rendered_motion=rendered,
    )


@pytest.mark.unit
def test_generation_round_trip_and_index(tmp_path, cfg):
    record = generate_samples(cfg)[0]
    meta = write_generation(tmp_path, _generation(record))
    write_generation(tmp_path, _generation(record, "gen_00001"))
    assert "motion/hands.svt" in meta.files
    assert json.loads((tmp_path / INDEX).read_text())["ids"] == ["gen_00000", "gen_00001"]

    loaded = read_generations(tmp_path)
    assert [g.sample_id for g in loaded] == ["gen_00000", "gen_00001"]
    first = loaded[0]
    assert np.array_equal(first.video, record.video)
    assert np.array_equal(first.motion_video, record.video[::-1])
    assert np.array_equal(first.hands, record.hands)
    assert np.array_equal(first.z0_V, np.arange(6, dtype=np.float32).reshape(2, 3))
    assert first.meta.source_id == record.sample_id
    assert first.rendered_motion is None

    write_generation(tmp_path, _generation(record, "gen_00002", rendered=record.video))
    assert np.array_equal(read_generation(tmp_path, "gen_00002").rendered_motion, record.video)


@pytest.mark.unit
def test_generation_tampering_is_detected(tmp_path, cfg):
    record = generate_samples(cfg)[0]
    write_generation(tmp_path, _generation(record))
    target = tmp_path / "gen_00000" / "latents" / "z0_M.svt"
    target.write_bytes(target.read_bytes()[:-4])
    with pytest.raises(IntegrityError):
        read_generation(tmp_path, "gen_00000")
    with pytest.raises(MissingArtifactError):
        read_generation(tmp_path, "gen_99999")
    with pytest.raises(MissingArtifactError):
        read_generations(tmp_path / "empty")
