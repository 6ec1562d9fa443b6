import json

import pytest

from ragtuner.errors import GenerationError, InputError, SchemaError
from ragtuner.rerag.pipeline import (
    PATHS,
    EchoGenerator,
    KeywordOverlapCritic,
    PipelineTrace,
    ReragPipeline,
    ScriptedCritic,
    build_prompt,
    run_pipeline,
)
from ragtuner.retrieval import VectorIndex

QUESTION = "why does the moon cause tides in the ocean"


class RecordingCritic:
    """Scripted critic that also records every relevance call it receives."""

    def __init__(self, retrieve: bool, verdicts):
        self.retrieve = retrieve
        self.verdicts = list(verdicts)
        self.calls = []

    def needs_retrieval(self, question):
        return self.retrieve

    def is_relevant(self, question, passage):
        self.calls.append((question, passage))
        return self.verdicts.pop(0)


class FailingGenerator:
    def generate(self, prompt):
        return "   "


class TestPaths:
    def test_no_retrieval(self, tide_index, embedder):
        answer, trace = run_pipeline(
            QUESTION, tide_index, ScriptedCritic(False), EchoGenerator(), embedder
        )
        assert trace.final_path == "no_retrieval"
        assert trace.index_queries == []
        assert trace.first_retrieval == []
        assert trace.rewrite_phrases is None
        assert QUESTION in trace.final_prompt
        assert answer == trace.answer

    def test_with_chunks(self, tide_index, embedder):
        critic = ScriptedCritic(True, [True, False, True])
        _, trace = run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)
        assert trace.final_path == "with_chunks"
        assert trace.index_queries == ["question"]
        assert len(trace.relevance_verdicts) == 3
        assert trace.rewrite_phrases is None
        assert trace.second_retrieval is None

    def test_rewrite_with_chunks(self, tide_index, embedder):
        critic = ScriptedCritic(True, [False] * 3 + [True, True, False])
        _, trace = run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)
        assert trace.final_path == "rewrite_with_chunks"
        assert trace.index_queries == ["question", "phrase_mean"]
        assert trace.rewrite_phrases
        assert len(trace.second_verdicts) == 3

    def test_fallback_original(self, tide_index, embedder):
        critic = ScriptedCritic(True, [False] * 6)
        _, trace = run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)
        assert trace.final_path == "fallback_original"
        assert trace.index_queries == ["question", "phrase_mean"]
        assert QUESTION in trace.final_prompt
        assert "Context" not in trace.final_prompt

    def test_path_names_are_the_documented_four(self):
        assert PATHS == ("no_retrieval", "with_chunks", "rewrite_with_chunks", "fallback_original")


class TestRewriteTrigger:
    def test_single_positive_verdict_prevents_rewrite(self, tide_index, embedder):
        critic = ScriptedCritic(True, [False, True, False])
        _, trace = run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)
        assert trace.final_path == "with_chunks"
        assert trace.rewrite_phrases is None

    def test_empty_index_triggers_rewrite(self, embedder):
        empty = VectorIndex(dim=32)
        critic = ScriptedCritic(True, [])
        _, trace = run_pipeline(QUESTION, empty, critic, EchoGenerator(), embedder)
        assert trace.first_retrieval == []
        assert trace.rewrite_phrases is not None
        assert trace.final_path == "fallback_original"
        assert any("no chunks" in note for note in trace.notes)

    def test_at_most_one_rewrite(self, tide_index, embedder):
        critic = ScriptedCritic(True, [False] * 6)
        _, trace = run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)
        assert trace.index_queries.count("phrase_mean") == 1

    def test_all_stopword_question_falls_back_without_second_query(self, tide_index, embedder):
        critic = ScriptedCritic(True, [False] * 3)
        _, trace = run_pipeline(
            "why is it that which", tide_index, critic, EchoGenerator(), embedder, k=3
        )
        assert trace.final_path == "fallback_original"
        assert trace.rewrite_phrases == []
        assert trace.index_queries == ["question"]
        assert any("no key phrases" in note for note in trace.notes)


class TestRelevanceScreening:
    def test_relevance_always_sees_original_question(self, tide_index, embedder):
        critic = RecordingCritic(True, [False] * 6)
        run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)
        assert len(critic.calls) == 6
        assert all(q == QUESTION for q, _ in critic.calls)

    def test_chunks_screened_one_at_a_time_in_retrieval_order(self, tide_index, embedder):
        critic = RecordingCritic(True, [True, True, True])
        _, trace = run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)
        retrieved_texts = [tide_index.chunk(h["chunk_id"]).text for h in trace.first_retrieval]
        assert [p for _, p in critic.calls] == retrieved_texts

    def test_kept_chunks_appear_in_prompt_in_order(self, tide_index, embedder):
        critic = ScriptedCritic(True, [False, True, True])
        _, trace = run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)
        kept = [
            tide_index.chunk(v["chunk_id"]).text
            for v in trace.relevance_verdicts
            if v["relevant"]
        ]
        assert len(kept) == 2
        positions = [trace.final_prompt.index(text) for text in kept]
        assert positions == sorted(positions)


class TestGeneration:
    def test_empty_reply_raises_with_trace(self, tide_index, embedder):
        with pytest.raises(GenerationError) as exc_info:
            run_pipeline(QUESTION, tide_index, ScriptedCritic(False), FailingGenerator(), embedder)
        trace = exc_info.value.trace
        assert trace is not None
        assert trace.final_path == "no_retrieval"
        assert trace.answer is None

    def test_echo_generator_quotes_question(self):
        prompt = build_prompt("answer_direct.v1", question="what is bread")
        assert "what is bread" in EchoGenerator().generate(prompt)

    def test_critic_notes_surface_in_trace(self, tide_index, embedder):
        class NotingCritic(ScriptedCritic):
            def drain_notes(self):
                return ["critic saw something odd"]

        _, trace = run_pipeline(
            QUESTION, tide_index, NotingCritic(False), EchoGenerator(), embedder
        )
        assert "critic saw something odd" in trace.notes


class TestTrace:
    def test_round_trip(self, tide_index, embedder):
        critic = ScriptedCritic(True, [False] * 6)
        _, trace = run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)
        restored = PipelineTrace.from_json(trace.to_json())
        assert restored == trace

    def test_json_is_an_object_with_all_fields(self, tide_index, embedder):
        _, trace = run_pipeline(QUESTION, tide_index, ScriptedCritic(False), EchoGenerator(), embedder)
        doc = json.loads(trace.to_json())
        expected_fields = {
            "question", "retrieve_decision", "index_queries", "first_retrieval",
            "relevance_verdicts", "rewrite_phrases", "second_retrieval",
            "second_verdicts", "final_path", "final_prompt", "answer", "notes",
        }
        assert set(doc) == expected_fields

    def test_identical_runs_identical_traces(self, tide_index, embedder):
        def go():
            critic = ScriptedCritic(True, [False] * 6)
            return run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)

        answer1, trace1 = go()
        answer2, trace2 = go()
        assert answer1 == answer2
        assert trace1.to_json() == trace2.to_json()

    def test_from_json_rejects_garbage(self):
        with pytest.raises(SchemaError):
            PipelineTrace.from_json("not json at all {")

    def test_from_json_rejects_missing_fields(self):
        with pytest.raises(SchemaError, match="missing"):
            PipelineTrace.from_json('{"question": "q"}')


class TestBuildPrompt:
    def test_unknown_template(self):
        with pytest.raises(InputError, match="unknown prompt template"):
            build_prompt("no_such_template.v9", question="q")

    def test_missing_field(self):
        with pytest.raises(InputError, match="question"):
            build_prompt("answer_direct.v1")

    def test_context_template_includes_both(self):
        out = build_prompt("answer_with_context.v1", context="CTX", question="Q?")
        assert "CTX" in out and "Q?" in out


class TestInputValidation:
    def test_empty_question(self, tide_index, embedder):
        with pytest.raises(InputError):
            run_pipeline("  ", tide_index, ScriptedCritic(False), EchoGenerator(), embedder)

    def test_bad_k(self, tide_index, embedder):
        with pytest.raises(InputError):
            run_pipeline(QUESTION, tide_index, ScriptedCritic(False), EchoGenerator(), embedder, k=0)

    def test_scripted_critic_exhaustion_is_loud(self, tide_index, embedder):
        critic = ScriptedCritic(True, [False])  # needs 3 verdicts for k=3
        with pytest.raises(InputError, match="ran out"):
            run_pipeline(QUESTION, tide_index, critic, EchoGenerator(), embedder, k=3)


class TestKeywordOverlapCritic:
    def test_relevance_counts_content_word_overlap(self):
        critic = KeywordOverlapCritic(min_overlap=2)
        q = "why does the moon cause tides"
        assert critic.is_relevant(q, "the tides follow the moon") is True
        assert critic.is_relevant(q, "the moon is made of rock") is False  # only "moon"
        assert critic.is_relevant(q, "bread needs flour") is False

    def test_stopword_only_question_is_never_relevant(self):
        critic = KeywordOverlapCritic()
        assert critic.is_relevant("why is it", "why is it why is it") is False

    def test_rate_zero_and_one(self):
        always = KeywordOverlapCritic(retrieve_rate=1.0)
        never = KeywordOverlapCritic(retrieve_rate=0.0)
        for i in range(50):
            q = f"question number {i}"
            assert always.needs_retrieval(q) is True
            assert never.needs_retrieval(q) is False

    def test_rate_roughly_respected(self):
        critic = KeywordOverlapCritic(retrieve_rate=0.5)
        hits = sum(critic.needs_retrieval(f"sample question {i}") for i in range(2000))
        assert 0.45 <= hits / 2000 <= 0.55

    def test_decision_is_stable_per_question(self):
        critic = KeywordOverlapCritic(retrieve_rate=0.7)
        q = "does this need context"
        assert critic.needs_retrieval(q) == critic.needs_retrieval(q)

    def test_validation(self):
        with pytest.raises(InputError):
            KeywordOverlapCritic(retrieve_rate=1.5)
        with pytest.raises(InputError):
            KeywordOverlapCritic(min_overlap=0)


class TestReragPipeline:
    def test_answer_and_last_trace(self, tide_index, embedder):
        pipe = ReragPipeline(tide_index, ScriptedCritic(False), EchoGenerator(), embedder)
        answer = pipe.answer(QUESTION)
        assert QUESTION in answer
        assert pipe.last_trace_.final_path == "no_retrieval"

    def test_predict_maps_over_questions(self, tide_index, embedder):
        pipe = ReragPipeline(
            tide_index, KeywordOverlapCritic(retrieve_rate=0.0), EchoGenerator(), embedder
        )
        answers = pipe.predict(["what is bread", "what is the moon"])
        assert len(answers) == 2 and all(answers)

    def test_get_params_exposes_collaborators(self, tide_index, embedder):
        pipe = ReragPipeline(tide_index, ScriptedCritic(False), EchoGenerator(), embedder, k=7)
        params = pipe.get_params(deep=False)
        assert params["k"] == 7
        assert params["index"] is tide_index
