import json
import math

import numpy as np
import pytest

from langtrack.geom3d import Box3D, Pose
from langtrack.simworld import (MOVING_SPEED, Scene, SceneConfig, Track, build_element_map, derive_element_tags,
                                generate_scene, generate_scenes, split_dataset)


def ego_static(n):
    return [Pose() for _ in range(n)]


def const_track(center, velocity, n, category="car", color="red", track_id=1):
    boxes = [Box3D(tuple(np.asarray(center) + np.asarray(velocity) * 0.5 * f), (1.8, 4.5, 1.5)) for f in range(n)]
    return Track(track_id, category, color, "constant_velocity", 0, boxes, [tuple(velocity)] * n)


def relative_x(track, ego):
    return {f: float(ego[f].apply_inverse(track.box(f).xyz)[0]) for f in track.frames}


class TestGenerateScene:
    def test_empty(self):
        s = generate_scene(SceneConfig(n_tracks=0))
        assert s.tracks == [] and s.element_map.tags == []

    def test_deterministic_serialization(self):
        a = json.dumps(generate_scene(SceneConfig(seed=3), 2).to_dict())
        b = json.dumps(generate_scene(SceneConfig(seed=3), 2).to_dict())
        assert a == b

    def test_overtaking_mix_count(self):
        mix = (("constant_velocity", 0.4), ("stopped", 0.3), ("overtaking", 0.3))
        for seed in range(5):
            s = generate_scene(SceneConfig(n_tracks=10, motion_mix=mix, seed=seed))
            flips = 0
            for t in s.tracks:
                xs = [x for _, x in sorted(relative_x(t, s.ego).items())]
                if xs[0] < 0 < xs[-1] and all(b >= a for a, b in zip(xs, xs[1:])):
                    flips += 1
            assert flips == 3

    def test_round_trip(self):
        s = generate_scene(SceneConfig(seed=1))
        again = Scene.from_dict(json.loads(json.dumps(s.to_dict())))
        assert again.to_dict() == s.to_dict()

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            generate_scene(SceneConfig(n_tracks=-1))
        with pytest.raises(ValueError):
            generate_scene(SceneConfig(duration_frames=0))


class TestElementTags:
    def test_stationary_red_car_ahead(self):
        n = 6
        a = math.radians(10)
        t = const_track((20 * math.cos(a), 20 * math.sin(a), 0.75), (0.0, 0.0, 0.0), n)
        tags = derive_element_tags(t, ego_static(n))
        assert all(v == {"car", "red", "stopped", "front"} for v in tags.values())

    def test_speed_threshold_is_strict(self):
        n = 3
        t = const_track((20, 0, 0.75), (MOVING_SPEED, 0.0, 0.0), n)
        assert all("stopped" in v for v in derive_element_tags(t, ego_static(n)).values())
        t = const_track((20, 0, 0.75), (MOVING_SPEED + 1e-6, 0.0, 0.0), n)
        assert all("moving" in v for v in derive_element_tags(t, ego_static(n)).values())

    def test_overtaking_window_scan(self):
        mix = (("overtaking", 1.0),)
        for seed in range(4):
            s = generate_scene(SceneConfig(n_tracks=3, motion_mix=mix, seed=seed))
            for t in s.tracks:
                xs = relative_x(t, s.ego)
                frames = sorted(xs)
                expected = set()
                for i, f in enumerate(frames):
                    seen_behind = min(xs[g] for g in frames[: i + 1]) < -5
                    later_ahead = i + 1 < len(frames) and max(xs[g] for g in frames[i + 1:]) > 5
                    if -5 <= xs[f] <= 5 and seen_behind and later_ahead:
                        expected.add(f)
                got = {f for f, tags in derive_element_tags(t, s.ego).items() if "overtaking" in tags}
                assert got == expected
                assert expected, "generator should produce a visible overtake"

    def test_location_boundary_counter_clockwise(self):
        t = const_track((10.0, 10.0, 0.75), (0, 0, 0), 1)  # bearing exactly 45 deg
        assert "left" in derive_element_tags(t, ego_static(1))[0]


class TestSceneInvariants:
    scenes = generate_scenes(SceneConfig(seed=11), 6)

    def test_element_map_rederivable(self):
        for s in self.scenes:
            assert build_element_map(s.tracks, s.ego) == s.element_map

    def test_presence_and_ids(self):
        for s in self.scenes:
            ids = [t.track_id for t in s.tracks]
            assert len(ids) == len(set(ids))
            assert all(0 <= t.first_frame and t.last_frame < s.n_frames for t in s.tracks)

    def test_speeds_match_finite_differences(self):
        for s in self.scenes:
            for t in s.tracks:
                for f in list(t.frames)[:-1]:
                    diff = (t.box(f + 1).xyz - t.box(f).xyz)[:2] * 2.0
                    stored = math.hypot(*t.velocity(f)[:2])
                    if stored > 0:
                        assert abs(np.linalg.norm(diff) - stored) < 0.1 * stored
                    else:
                        assert np.linalg.norm(diff) < 1e-9


class TestSplit:
    def test_exact_ratio(self):
        train, val = split_dataset([f"s{i}" for i in range(10)], 0.7)
        assert len(train) == 7 and len(val) == 3

    def test_reference_scale_split(self):
        train, val = split_dataset([f"scene-{i:04d}" for i in range(850)], 700 / 850)
        assert (len(train), len(val)) == (700, 150)
        assert not set(train) & set(val)

    def test_deterministic(self):
        ids = [f"x{i}" for i in range(40)]
        assert split_dataset(ids, 0.5) == split_dataset(list(reversed(ids)), 0.5)

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            split_dataset(["a", "b"], 1.0)
