import math

import numpy as np
import pytest

from scenegan.edits import (
    EditError,
    SessionState,
    apply_edit,
    disentanglement_grid,
    feature_resolution_for,
    fold_edits,
    footprint_mask,
    object_alphas,
    render_image,
    render_state,
    renderer_reach,
    run_script,
)

from helpers import small_generator, small_scene


@pytest.fixture(scope="module")
def gen():
    return small_generator(seed=1, n_blocks=1, feature_resolution=8, n_samples=12)


@pytest.fixture
def state():
    return SessionState(small_scene(np.random.default_rng(5), n_obj=2), resolution=16)


def test_rotate_and_translate_touch_only_their_object(state):
    s1 = apply_edit(state, {"op": "rotate_object", "index": 1, "yaw": 0.4})
    assert s1.scene.transforms[1].yaw == pytest.approx(
        math.remainder(state.scene.transforms[1].yaw + 0.4, 2 * math.pi), abs=1e-12)
    assert s1.scene.transforms[0] is state.scene.transforms[0]
    s2 = apply_edit(state, {"op": "translate_object", "index": 0, "delta": [0.1, -0.2]})
    np.testing.assert_allclose(s2.scene.transforms[0].translation,
                               state.scene.transforms[0].translation + [0.1, -0.2, 0.0])
    assert s2.version == state.version + 1


def test_code_edits_keep_the_other_code(state):
    s = apply_edit(state, {"op": "set_appearance", "index": 0, "seed": 3})
    np.testing.assert_array_equal(s.scene.codes[0].z_s, state.scene.codes[0].z_s)
    assert not np.array_equal(s.scene.codes[0].z_a, state.scene.codes[0].z_a)
    s = apply_edit(state, {"op": "set_shape", "index": 1, "z_s": [0.0, 1.0, 2.0, 3.0]})
    np.testing.assert_array_equal(s.scene.codes[1].z_s, [0, 1, 2, 3])
    np.testing.assert_array_equal(s.scene.codes[1].z_a, state.scene.codes[1].z_a)


def test_add_and_remove_objects(state):
    T = {"scale": 0.3, "translation": [0.2, 0.2, 0.3], "yaw": 1.0}
    s = apply_edit(state, {"op": "add_object", "transform": T, "seed": 9})
    assert s.scene.n_objects == 3 and s.scene.transforms[-1].scale[0] == 1.0
    assert s.scene.transforms[2].scale[0] == 0.3
    s = apply_edit(s, {"op": "remove_object", "index": 0})
    assert s.scene.n_objects == 2
    assert s.scene.codes[0] is state.scene.codes[1]
    one = apply_edit(s, {"op": "remove_object", "index": 0})
    with pytest.raises(EditError):
        apply_edit(one, {"op": "remove_object", "index": 0})
    full = state
    for k in range(state.scene.max_entities - state.scene.n_entities):
        full = apply_edit(full, {"op": "add_object", "transform": T, "seed": k})
    with pytest.raises(EditError):
        apply_edit(full, {"op": "add_object", "transform": T, "seed": 0})


def test_camera_and_resolution(state):
    s = apply_edit(state, {"op": "set_camera", "elevation": 0.7})
    assert s.scene.camera.elevation == 0.7 and s.scene.camera.azimuth == state.scene.camera.azimuth
    assert apply_edit(state, {"op": "set_resolution", "resolution": 32}).resolution == 32


@pytest.mark.parametrize("edit", [
    {"op": "rotate_object", "index": 2, "yaw": 0.1},
    {"op": "rotate_object", "index": -1, "yaw": 0.1},
    {"op": "rotate_object", "index": 0},
    {"op": "rotate_object", "index": 0, "yaw": "a"},
    {"op": "translate_object", "index": 0, "delta": [1, 2, 3, 4]},
    {"op": "set_shape", "index": 0, "z_s": [1.0]},
    {"op": "set_appearance", "index": 0},
    {"op": "add_object", "transform": {"scale": -1, "translation": [0, 0, 0]}, "seed": 0},
    {"op": "set_camera", "elevation": 2.0},
    {"op": "set_resolution", "resolution": 3},
    {"op": "explode"},
    ["not", "a", "dict"],
])
def test_invalid_edits_raise(state, edit):
    with pytest.raises(EditError):
        apply_edit(state, edit)


def test_state_is_fold_of_edits_and_round_trips(state):
    edits = [{"op": "rotate_object", "index": 0, "yaw": 0.3},
             {"op": "translate_object", "index": 1, "delta": [0.05, 0.0, 0.0]},
             {"op": "set_camera", "azimuth": 1.2}]
    s = state
    for e in edits:
        s = apply_edit(s, e)
    assert fold_edits(state, edits).to_dict() == s.to_dict()
    assert SessionState.from_dict(s.to_dict()).to_dict() == s.to_dict()


def test_script_frame_counts_and_errors(state):
    frames = run_script(state, [{"op": "rotate_object", "index": 0, "yaw": 1.0, "frames": 4},
                                {"op": "set_appearance", "index": 1, "seed": 2, "frames": 2},
                                {"macro": "rotate_360", "index": 1, "frames": 6},
                                {"macro": "circle_around", "index": 0, "center": 1, "frames": 5},
                                {"macro": "depth_sweep", "index": 0, "frames": 3, "distance": 0.4}])
    assert len(frames) == 4 + 2 + 7 + 6 + 4
    assert frames[3].scene.transforms[0].yaw == pytest.approx(
        math.remainder(state.scene.transforms[0].yaw + 1.0, 2 * math.pi), abs=1e-12)
    with pytest.raises(EditError, match="step 1"):
        run_script(state, [{"op": "set_camera", "azimuth": 0.0}, {"op": "rotate_object", "index": 7, "yaw": 1}])


def test_circle_macro_keeps_radius(state):
    frames = run_script(state, [{"macro": "circle_around", "index": 0, "center": 1, "frames": 8}])
    c = state.scene.transforms[1].translation[:2]
    r = [np.linalg.norm(f.scene.transforms[0].translation[:2] - c) for f in frames]
    np.testing.assert_allclose(r, r[0], rtol=1e-12)
    np.testing.assert_array_equal(frames[0].scene.transforms[0].translation, frames[-1].scene.transforms[0].translation)


def test_rotation_macro_is_periodic(gen, state):
    frames = run_script(state, [{"macro": "rotate_360", "index": 0, "frames": 4}])
    first, last = render_state(gen, frames[0]), render_state(gen, frames[-1])
    assert np.abs(first - last).mean() <= 1e-6
    assert np.abs(render_state(gen, frames[2]) - first).max() > 0


def test_renders_are_pure(gen, state):
    a = render_state(gen, state)
    b = render_state(gen, SessionState.from_dict(state.to_dict()))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (16, 16, 3)
    assert render_state(gen, apply_edit(state, {"op": "set_resolution", "resolution": 32})).shape == (32, 32, 3)
    with pytest.raises(EditError):
        feature_resolution_for(gen, 15)


def test_appearance_edit_preserves_alpha(gen, state):
    s = apply_edit(state, {"op": "set_appearance", "index": 0, "seed": 11})
    np.testing.assert_array_equal(object_alphas(gen, s.scene, 8), object_alphas(gen, state.scene, 8))
    assert np.abs(render_state(gen, s) - render_state(gen, state)).max() > 0


def test_translation_changes_only_the_dilated_footprint(gen, state):
    moved = apply_edit(state, {"op": "translate_object", "index": 1, "delta": [0.15, -0.1, 0.0]})
    a0, a1 = render_state(gen, state), render_state(gen, moved)
    f = feature_resolution_for(gen, 16)
    m = (footprint_mask(gen.entity_alpha(state.scene, 1, f), 16, renderer_reach(gen), threshold=0.0)
         | footprint_mask(gen.entity_alpha(moved.scene, 1, f), 16, renderer_reach(gen), threshold=0.0))
    assert (~m).sum() > 0
    assert np.abs(a0 - a1)[~m].mean() <= 1e-3
    assert np.abs(a0 - a1)[m].max() > 0


def test_disentanglement_grid_layout(gen, state):
    grid = disentanglement_grid(gen, [state.scene, state.scene], 16)
    assert grid.shape == (64, 32, 3)
    bg = render_image(gen, state.scene, 16, active={-1})
    np.testing.assert_array_equal(grid[:16, :16], bg)
    np.testing.assert_array_equal(grid[48:, 16:], render_image(gen, state.scene, 16))
