import json

import pytest

from langtrack.io import (InputError, LineError, dumps_line, iter_jsonl, read_jsonl, read_predictions,
                          read_prompts, read_scenes, write_jsonl)

from fuzz import base_records, corpus


@pytest.fixture(scope="module")
def records():
    return base_records()


def test_round_trip(tmp_path, records):
    scene, labels, preds = records
    write_jsonl(tmp_path / "s.jsonl", [scene.to_dict()])
    write_jsonl(tmp_path / "p.jsonl", [l.to_dict() for l in labels])
    write_jsonl(tmp_path / "r.jsonl", [p.to_dict() for p in preds])
    assert [s.to_dict() for s in read_scenes(tmp_path / "s.jsonl")] == [scene.to_dict()]
    assert [l.to_dict() for l in read_prompts(tmp_path / "p.jsonl")] == [l.to_dict() for l in labels]
    assert [p.to_dict() for p in read_predictions(tmp_path / "r.jsonl")] == [p.to_dict() for p in preds]


def test_writer_is_compact_and_rejects_nan():
    assert dumps_line({"a": [1, 2]}) == '{"a":[1,2]}'
    with pytest.raises(ValueError):
        dumps_line({"a": float("nan")})


def test_blank_lines_are_skipped(tmp_path, records):
    scene = records[0]
    (tmp_path / "s.jsonl").write_text("\n\n" + dumps_line(scene.to_dict()) + "\n\n")
    assert len(read_jsonl(tmp_path / "s.jsonl", "scene")) == 1


def test_duplicate_scene_names_both_lines(tmp_path, records):
    line = dumps_line(records[0].to_dict())
    (tmp_path / "s.jsonl").write_text(f"{line}\n\n{line}\n")
    with pytest.raises(InputError) as exc:
        read_scenes(tmp_path / "s.jsonl")
    assert exc.value.errors[0].line == 3 and "first on line 1" in exc.value.errors[0].message


def test_missing_file_is_reported():
    errors = []
    assert list(iter_jsonl("/nonexistent/x.jsonl", "scene", errors)) == []
    assert errors and errors[0].line == 0


def test_error_text():
    assert str(LineError("f.jsonl", 4, "bad")) == "f.jsonl:4: bad"
    err = InputError([LineError("f", i, "x") for i in range(1, 26)])
    assert "and 5 more" in str(err)


@pytest.mark.parametrize("bad", [b for b in corpus() if not b.needs_context],
                         ids=lambda b: f"{b.kind}-{b.family}")
def test_every_malformed_line_is_rejected_with_its_number(tmp_path, records, bad):
    scene, labels, preds = records
    valid = {"scene": scene.to_dict(), "prompt": labels[0].to_dict(), "prediction": preds[0].to_dict()}[bad.kind]
    if bad.kind == "scene":
        # a second scene needs its own id to avoid a duplicate-key error masking the line under test
        valid = dict(valid, scene_id="other")
    path = tmp_path / "f.jsonl"
    path.write_bytes(json.dumps(valid).encode() + b"\n\n" + bad.data + b"\n")
    errors = []
    good = list(iter_jsonl(path, bad.kind, errors))
    assert [n for n, _ in good] == [1]
    assert [e.line for e in errors] == [3]
