"""Label matrices, candidate tables, the prompt, reply parsing, and
posterior thresholding."""

import json

import numpy as np
import pytest

from partialsed.corpus import Clip, EventInterval, Recording, STRONG
from partialsed.defaults import default_candidate_table, default_vocab
from partialsed.errors import AnnotationError, ConfigError, ContractError, LlmError
from partialsed.labelkit import (
    CandidateTable,
    DistillConfig,
    HttpLlmClient,
    build_candidate_table,
    distill_labels,
    expand_pseudo_strong,
    matrix_to_events,
    parse_candidate_reply,
    partial_to_weak_target,
    rasterize,
    render_prompt,
    restrict_distilled,
    scene_target,
    weak_target,
)

EVENTS = ["car", "dishes", "water"]


def strong_clip(events, length=10.0):
    return Clip(id="c", recording_id="c", start=0.0, length=length,
                scene="home", supervision=STRONG, events=tuple(events))


class TestRasterize:
    def test_frame_rule(self):
        # hop 0.1: (0.25, 0.55) covers frames 2..5 by positive measure
        clip = strong_clip([EventInterval(0.25, 0.55, "car")])
        m = rasterize(clip, 100, 0.1, EVENTS)
        assert m.shape == (100, 3)
        active = np.flatnonzero(m[:, 0])
        assert active.tolist() == [2, 3, 4, 5]

    def test_boundary_exact(self):
        # endpoints on the grid: [0.2, 0.5) -> frames 2..4; frame 5 gets
        # measure-zero overlap and stays off
        clip = strong_clip([EventInterval(0.2, 0.5, "car")])
        m = rasterize(clip, 100, 0.1, EVENTS)
        assert np.flatnonzero(m[:, 0]).tolist() == [2, 3, 4]

    def test_sub_frame_event(self):
        clip = strong_clip([EventInterval(0.31, 0.33, "water")])
        m = rasterize(clip, 100, 0.1, EVENTS)
        assert np.flatnonzero(m[:, 2]).tolist() == [3]

    def test_full_clip(self):
        clip = strong_clip([EventInterval(0.0, 10.0, "dishes")])
        m = rasterize(clip, 100, 0.1, EVENTS)
        assert m[:, 1].sum() == 100

    def test_requires_strong(self):
        weak = Clip(id="c", recording_id="c", start=0.0, length=10.0,
                    scene="home", supervision="weak", weak=(1, 0, 0))
        with pytest.raises(ContractError):
            rasterize(weak, 100, 0.1, EVENTS)

    def test_unknown_label(self):
        clip = strong_clip([EventInterval(0.0, 1.0, "zebra")])
        with pytest.raises(ConfigError):
            rasterize(clip, 100, 0.1, EVENTS)


class TestVectors:
    def test_weak_target(self):
        np.testing.assert_array_equal(
            weak_target({"car", "water"}, EVENTS), [1.0, 0.0, 1.0]
        )

    def test_weak_target_unknown(self):
        with pytest.raises(ConfigError):
            weak_target({"zebra"}, EVENTS)

    def test_partial_empty_warns(self):
        with pytest.warns(UserWarning):
            out = partial_to_weak_target(frozenset(), EVENTS)
        assert out.sum() == 0

    def test_expand_pseudo_strong(self):
        weak = np.array([1.0, 0.0, 1.0], dtype=np.float32)
        mat = expand_pseudo_strong(weak, 5)
        assert mat.shape == (5, 3)
        # every row is the weak vector, column-for-column
        assert (mat == weak[np.newaxis, :]).all()

    def test_expand_rejects_bad_input(self):
        with pytest.raises(ContractError):
            expand_pseudo_strong(np.zeros((2, 2)), 5)
        with pytest.raises(ContractError):
            expand_pseudo_strong(np.zeros(3), 0)

    def test_scene_target(self):
        np.testing.assert_array_equal(
            scene_target("b", ["a", "b", "c"]), [0.0, 1.0, 0.0]
        )
        with pytest.raises(ConfigError):
            scene_target("z", ["a", "b"])


class TestCandidateTable:
    def test_round_trip_csv(self, tmp_path):
        table = CandidateTable({"home": frozenset({"dishes", "water"}),
                                "street": frozenset({"car"})})
        path = tmp_path / "table.csv"
        table.to_csv(path)
        back = CandidateTable.from_csv(path)
        assert back.mapping == table.mapping
        assert path.read_text(encoding="utf-8").splitlines()[0] == "scene,event"

    def test_from_csv_header_required(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("home,dishes\n", encoding="utf-8")
        with pytest.raises(AnnotationError):
            CandidateTable.from_csv(path)

    def test_validate(self):
        table = CandidateTable({"home": frozenset({"dishes"})})
        table.validate(EVENTS, ["home"])
        with pytest.raises(ConfigError):
            table.validate(["car"], ["home"])  # unknown event
        with pytest.raises(ConfigError):
            table.validate(EVENTS, ["home", "office"])  # missing scene

    def test_provenance_restricted(self):
        with pytest.raises(ConfigError):
            CandidateTable({"home": frozenset()}, provenance="guess")

    def test_candidates_lookup(self):
        table = CandidateTable({"home": frozenset({"car"})})
        assert table.candidates("home") == frozenset({"car"})
        with pytest.raises(ConfigError):
            table.candidates("moon")

    def test_from_cooccurrence(self):
        recs = [
            Recording(id="a", scene="home", duration=10.0,
                      events=(EventInterval(0, 1, "dishes"),)),
            Recording(id="b", scene="home", duration=10.0,
                      events=(EventInterval(0, 1, "water"),)),
            Recording(id="c", scene="street", duration=10.0,
                      events=(EventInterval(0, 1, "car"),)),
        ]
        table = CandidateTable.from_cooccurrence(recs)
        assert table.provenance == "cooccurrence"
        assert table.mapping["home"] == frozenset({"dishes", "water"})

    def test_shipped_default_table_is_consistent(self):
        events, scenes = default_vocab()
        default_candidate_table().validate(events, scenes)


class TestPrompt:
    def test_verbatim_for_default_vocab(self):
        events, scenes = default_vocab()
        assert "office" in scenes
        prompt = render_prompt("office", events)
        lines = prompt.split("\n")
        assert lines[0] == "Here is the list of 25 possible sound events:"
        assert lines[1].startswith("object banging, object impact, ")
        assert lines[1].endswith("wind blowing.")
        assert lines[3].startswith('Here, "object" refers to an unknown sound source')
        assert lines[5] == (
            "If we are in a office scene, which sound events are likely to be heard?"
        )
        assert lines[6] == (
            "Please list all the sound events one by one (without merging) in "
            "CSV format, and provide your reasoning process in a two-column "
            "CSV format."
        )

    def test_object_note_dropped_without_object_classes(self):
        prompt = render_prompt("home", EVENTS)
        assert "unknown sound source" not in prompt
        assert "list of 3 possible sound events" in prompt

    def test_prompt_stable(self):
        events, _ = default_vocab()
        assert render_prompt("home", events) == render_prompt("home", events)


class TestParseReply:
    def test_csv_with_reasons(self):
        reply = "event,reason\ncar,engines are audible\ndishes,kitchen noise\n"
        found, reasons = parse_candidate_reply(reply, EVENTS)
        assert found == frozenset({"car", "dishes"})
        assert ("car", "engines are audible") in reasons

    def test_bullets_numbers_quotes(self):
        reply = "1. car\n- dishes\n* \"water\"\n"
        found, _ = parse_candidate_reply(reply, EVENTS)
        assert found == frozenset(EVENTS)

    def test_oov_dropped_with_warning(self):
        with pytest.warns(UserWarning):
            found, _ = parse_candidate_reply("car\nhelicopter\n", EVENTS)
        assert found == frozenset({"car"})

    def test_unusable_reply_raises_with_raw_text(self):
        with pytest.raises(LlmError) as err, pytest.warns(UserWarning):
            parse_candidate_reply("no events here at all", EVENTS)
        assert err.value.raw_reply == "no events here at all"


class FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload
        self.text = text or json.dumps(payload)

    def json(self):
        if self._payload is None:
            raise ValueError("not json")
        return self._payload


class TestHttpClient:
    def _patch(self, monkeypatch, response):
        calls = {}

        def fake_post(url, json=None, headers=None, timeout=None):
            calls.update(url=url, body=json, headers=headers, timeout=timeout)
            return response

        monkeypatch.setattr("partialsed.labelkit.requests.post", fake_post)
        return calls

    def test_success(self, monkeypatch):
        payload = {"choices": [{"message": {"content": "car,reason"}}]}
        calls = self._patch(monkeypatch, FakeResponse(200, payload))
        client = HttpLlmClient("http://x/v1/chat", "some-model", api_key="k")
        assert client.complete("hello") == "car,reason"
        assert calls["headers"]["Authorization"] == "Bearer k"
        assert calls["body"]["messages"][0]["content"] == "hello"

    def test_rate_limited_is_retryable(self, monkeypatch):
        self._patch(monkeypatch, FakeResponse(429, text="slow down"))
        client = HttpLlmClient("http://x", "m")
        with pytest.raises(LlmError) as err:
            client.complete("p")
        assert err.value.retryable

    def test_server_error_is_retryable(self, monkeypatch):
        self._patch(monkeypatch, FakeResponse(503, text="boom"))
        with pytest.raises(LlmError) as err:
            HttpLlmClient("http://x", "m").complete("p")
        assert err.value.retryable

    def test_client_error_is_not(self, monkeypatch):
        self._patch(monkeypatch, FakeResponse(401, text="denied"))
        with pytest.raises(LlmError) as err:
            HttpLlmClient("http://x", "m").complete("p")
        assert not err.value.retryable

    def test_malformed_body(self, monkeypatch):
        self._patch(monkeypatch, FakeResponse(200, {"unexpected": True}))
        with pytest.raises(LlmError):
            HttpLlmClient("http://x", "m").complete("p")


class StubClient:
    """Canned per-scene replies, no network."""

    def __init__(self, replies):
        self.replies = replies
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        for scene, reply in self.replies.items():
            if f"a {scene} scene" in prompt:
                return reply
        raise AssertionError("prompt for unexpected scene")


def test_build_candidate_table_archives(tmp_path):
    client = StubClient({
        "home": "dishes,kitchen\nwater,tap\n",
        "street": "car,traffic\n",
    })
    table = build_candidate_table(
        ["home", "street"], client, EVENTS, archive_dir=tmp_path / "archive"
    )
    assert table.provenance == "llm"
    assert table.mapping["home"] == frozenset({"dishes", "water"})
    archived = list((tmp_path / "archive").glob("*.json"))
    assert len(archived) == 2
    record = json.loads(archived[0].read_text(encoding="utf-8"))
    assert {"scene", "prompt", "reply", "time"} <= set(record)


class TestDistill:
    def test_threshold_with_tie(self):
        post = np.array([[0.19, 0.2], [0.21, 0.05]])
        out = distill_labels(post, DistillConfig(threshold=0.2))
        np.testing.assert_array_equal(out, [[0.0, 1.0], [1.0, 0.0]])

    def test_range_checked(self):
        with pytest.raises(ContractError):
            distill_labels(np.array([[1.5]]), DistillConfig())

    def test_threshold_bounds(self):
        with pytest.raises(ConfigError):
            DistillConfig(threshold=0.0)
        with pytest.raises(ConfigError):
            DistillConfig(threshold=1.0)

    def test_restrict(self):
        matrix = np.ones((4, 3), dtype=np.float32)
        out = restrict_distilled(matrix, {"car"}, EVENTS, enabled=True)
        np.testing.assert_array_equal(out.sum(axis=0), [4.0, 0.0, 0.0])
        out = restrict_distilled(matrix, {"car"}, EVENTS, enabled=False)
        assert out.sum() == 12.0


class TestMatrixToEvents:
    def test_runs_to_intervals(self):
        m = np.zeros((10, 3), dtype=np.float32)
        m[2:5, 0] = 1.0
        m[0:1, 2] = 1.0
        m[8:10, 2] = 1.0
        events = matrix_to_events(m, 0.1, EVENTS)
        assert events == [
            EventInterval(0.0, 0.1, "water"),
            EventInterval(0.2, 0.5, "car"),
            EventInterval(0.8, 1.0, "water"),
        ]

    def test_round_trip_with_rasterize(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            m = (rng.random((20, 3)) > 0.7).astype(np.float32)
            events = matrix_to_events(m, 0.5, EVENTS)
            clip = strong_clip(events, length=10.0)
            np.testing.assert_array_equal(rasterize(clip, 20, 0.5, EVENTS), m)
