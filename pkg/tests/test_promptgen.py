import random

import pytest

from langtrack.promptgen import (And, Elem, ExprSchemaError, ExternalDescriber, Not, Or, PromptConfig, PromptLabel,
                                 REFERENCE_SCALE, build_prompt_labels, count_boxes, curated_templates,
                                 enumerate_combinations, eval_expression, format_stats, from_prefix,
                                 leaf_multiset, parse_elements, random_candidates, random_tree,
                                 render_description, summarize_promptset, to_prefix)
from langtrack.simworld import ElementMap, SceneConfig, UnknownElementError, generate_scene

from treegen import TAGS, brute_force, random_expr, random_map


def small_map():
    present = {0: frozenset({1, 2, 3})}
    members = {"moving": {0: frozenset({1, 2})}, "red": {0: frozenset({2, 3})}, "ghost": {0: frozenset()}}
    return ElementMap(members, present)


class TestEvalExpression:
    def test_not_of_empty_element_is_universe(self):
        assert eval_expression(Not(Elem("ghost")), small_map(), 0) == {1, 2, 3}

    def test_and(self):
        assert eval_expression(And((Elem("moving"), Elem("red"))), small_map(), 0) == {2}

    def test_unknown_tag(self):
        with pytest.raises(UnknownElementError):
            eval_expression(Elem("purple"), small_map(), 0)

    def test_reference_example_against_brute_force(self):
        rng = random.Random(4)
        expr = And((Elem("car"), Elem("moving"), Elem("red"), Not(Elem("left"))))
        for _ in range(50):
            emap = random_map(rng)
            for f in emap.frames:
                assert eval_expression(expr, emap, f) == brute_force(expr, emap, f)

    def test_brute_force_and_de_morgan_1000(self):
        rng = random.Random(2024)
        for _ in range(1000):
            emap = random_map(rng, rng.randint(0, 6), rng.randint(1, 4))
            e, a, b = random_expr(rng), random_expr(rng, 3), random_expr(rng, 3)
            for f in emap.frames:
                assert eval_expression(e, emap, f) == brute_force(e, emap, f)
                assert eval_expression(Not(And((a, b))), emap, f) == eval_expression(Or((Not(a), Not(b))), emap, f)
                assert eval_expression(Not(Or((a, b))), emap, f) == eval_expression(And((Not(a), Not(b))), emap, f)

    def test_adding_conjunct_never_grows(self):
        rng = random.Random(7)
        for _ in range(300):
            emap = random_map(rng)
            e, extra = random_expr(rng), random_expr(rng, 2)
            for f in emap.frames:
                assert eval_expression(And((e, extra)), emap, f) <= eval_expression(e, emap, f)

    def test_pure(self):
        rng = random.Random(9)
        emap, e = random_map(rng), random_expr(rng)
        assert [eval_expression(e, emap, f) for f in emap.frames] == [eval_expression(e, emap, f) for f in emap.frames]


class TestPrefix:
    def test_round_trip(self):
        rng = random.Random(1)
        for _ in range(200):
            e = random_expr(rng)
            assert from_prefix(to_prefix(e)) == e

    @pytest.mark.parametrize("bad", [[], ["NOT"], ["AND", "car"], ["XOR", "a", "b"], "AND", 3, [["car"]], ""])
    def test_rejects(self, bad):
        with pytest.raises(ExprSchemaError):
            from_prefix(bad)


class TestEnumerate:
    def test_only_car_non_empty(self):
        present = {f: frozenset({1, 2}) for f in range(3)}
        members = {"car": {f: frozenset({1, 2}) for f in range(3)}, "red": {}, "moving": {}}
        emap = ElementMap(members, present)
        kept = enumerate_combinations(emap, n_random=40, min_boxes=1, seed=3)
        assert kept
        assert all(count_boxes(e, emap) >= 1 for e in kept)

    def test_filter_soundness(self):
        scene = generate_scene(SceneConfig(seed=5))
        emap = scene.element_map
        kept = enumerate_combinations(emap, n_random=60, min_boxes=10, seed=8)
        assert all(count_boxes(e, emap) >= 10 for e in kept)
        for e in curated_templates(emap) + random_candidates(emap, 60, 8):
            if e not in kept:
                assert count_boxes(e, emap) < 10

    def test_deterministic(self):
        emap = generate_scene(SceneConfig(seed=5)).element_map
        assert enumerate_combinations(emap, seed=2) == enumerate_combinations(emap, seed=2)

    def test_random_tree_depth_bound(self):
        rng = random.Random(0)
        from langtrack.promptgen import depth
        assert all(depth(random_tree(TAGS, rng)) <= 4 for _ in range(500))


class TestRender:
    def test_reference_sentence(self):
        e = And((Elem("pedestrian"), Elem("moving"), Elem("red"), Not(Elem("left"))))
        assert render_description(e, 0) == "the red pedestrians currently in motion, not situated on the left side"

    def test_single_leaf(self):
        assert render_description(Elem("car"), 0) == "the cars"

    def test_parse_back_1000(self):
        rng = random.Random(77)
        tags = ("car", "truck", "bus", "trailer", "motorcycle", "bicycle", "pedestrian", "red", "yellow", "black",
                "white", "blue", "silver", "front", "left", "back", "right", "moving", "stopped", "crossing",
                "overtaking")
        for i in range(1000):
            e = random_tree(tags, rng)
            text = render_description(e, seed=i)
            assert parse_elements(text) == leaf_multiset(e), text


class TestLabels:
    def test_default_min_boxes(self):
        scene = generate_scene(SceneConfig(seed=0))
        labels = build_prompt_labels(scene)
        assert labels and all(l.n_boxes >= 10 for l in labels)
        assert len(labels) <= 40

    def test_label_round_trip(self):
        scene = generate_scene(SceneConfig(seed=0))
        for l in build_prompt_labels(scene)[:5]:
            assert PromptLabel.from_dict(l.to_dict()).to_dict() == l.to_dict()

    def test_deterministic_per_seed(self):
        scene = generate_scene(SceneConfig(seed=0))
        a = [l.to_dict() for l in build_prompt_labels(scene, PromptConfig(seed=3))]
        assert a == [l.to_dict() for l in build_prompt_labels(scene, PromptConfig(seed=3))]


def label_with_instances(k: int, pid: str) -> PromptLabel:
    return PromptLabel(pid, "s", Elem("car"), "the cars", {0: frozenset(range(1, k + 1))})


class TestSummarize:
    def test_singleton(self):
        assert summarize_promptset([label_with_instances(5, "a")]).mean_instances == 5.0

    def test_two(self):
        s = summarize_promptset([label_with_instances(4, "a"), label_with_instances(6, "b")])
        assert s.mean_instances == 5.0

    def test_reference_scale_printed(self):
        text = format_stats(summarize_promptset([label_with_instances(4, "a")]))
        assert "35,367" in text and "5.3" in text and "41.6" in text
        assert REFERENCE_SCALE == {"prompts": 35367, "instances_per_prompt": 5.3, "prompts_per_video": 41.6}

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize_promptset([])


class TestExternalDescriber:
    def test_disabled_by_default(self):
        with pytest.raises(RuntimeError):
            ExternalDescriber().describe(Elem("car"))

    def test_client_receives_request(self):
        seen = []
        d = ExternalDescriber(client=lambda req: seen.append(req) or "ok")
        assert d.describe(And((Elem("car"), Not(Elem("left"))))) == "ok"
        assert "cars" in seen[0] and "not in the left" in seen[0]
