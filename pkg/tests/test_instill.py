import pickle

import pytest
from hypothesis import given, settings, strategies as st

from knowprobe.errors import (
    BlankMarkerError,
    InvalidInputError,
    KExceedsMaxError,
    MissingInstilledEndpointError,
    RelationMismatchError,
    SameEndpointImplicitError,
)
from knowprobe.instill import (
    BLANK,
    ClozePrompt,
    FactRecord,
    LogprobQuery,
    PromptTemplate,
    build_plan,
    explicit_statement,
    from_lama_pattern,
    render_prompt,
)

OBAMA = FactRecord("f1", "Barack Obama", "P26", "Michelle Obama", "married to")
MARRIED = PromptTemplate("P26", "<S> is married to ___", "married to")


class TestRender:
    def test_obama(self):
        assert render_prompt(OBAMA, MARRIED) == "Barack Obama is married to ___"

    def test_subject_containing_marker(self):
        fact = FactRecord("f2", "Mr ___ Smith", "P26", "Jane")
        prompt = render_prompt(fact, MARRIED)
        assert prompt == "Mr ___ Smith is married to ___"
        assert prompt.blank_index == len("Mr ___ Smith is married to ")
        assert prompt.fill("Jane") == "Mr ___ Smith is married to Jane"
        # plain strings with two markers are ambiguous
        with pytest.raises(BlankMarkerError):
            ClozePrompt(str(prompt))

    def test_blank_before_subject(self):
        tpl = PromptTemplate("P36", "___ is the capital of <S>.")
        fact = FactRecord("f3", "France", "P36", "Paris")
        prompt = render_prompt(fact, tpl)
        assert prompt == "___ is the capital of France."
        assert prompt.blank_index == 0

    def test_wrong_relation(self):
        with pytest.raises(RelationMismatchError):
            render_prompt(OBAMA, PromptTemplate("P19", "<S> was born in ___"))

    def test_template_validation(self):
        with pytest.raises(InvalidInputError):
            PromptTemplate("P26", "<S> is married to")
        with pytest.raises(InvalidInputError):
            PromptTemplate("P26", "<S> and <S> ___")

    def test_underscore_run_is_ambiguous(self):
        with pytest.raises(InvalidInputError):
            PromptTemplate("P26", "_____<S>")

    def test_lama_conversion(self):
        tpl = from_lama_pattern("P26", "[X] is married to [Y] .")
        assert tpl.pattern == "<S> is married to ___ ."

    def test_cloze_prompt_pickles(self):
        prompt = render_prompt(OBAMA, MARRIED)
        again = pickle.loads(pickle.dumps(prompt))
        assert again == prompt and again.blank_index == prompt.blank_index


class TestStatement:
    def test_obama(self):
        assert explicit_statement(OBAMA, MARRIED) == "Barack Obama is married to Michelle Obama. "

    def test_object_with_period(self):
        fact = FactRecord("f", "John", "P26", "Bob Jr.")
        assert explicit_statement(fact, MARRIED) == "John is married to Bob Jr. "

    def test_lama_trailing_period(self):
        tpl = from_lama_pattern("P26", "[X] is married to [Y] .")
        assert explicit_statement(OBAMA, tpl) == "Barack Obama is married to Michelle Obama. "

    def test_blank_at_start(self):
        tpl = PromptTemplate("P36", "___ is the capital of <S>")
        fact = FactRecord("f3", "France", "P36", " Paris")
        assert explicit_statement(fact, tpl) == "Paris is the capital of France. "


class TestPlan:
    def test_explicit(self):
        plan = build_plan(OBAMA, MARRIED, "explicit", "bert-base")
        assert plan.before.endpoint_id == plan.after.endpoint_id == "bert-base"
        assert plan.before.query.prompt == "Barack Obama is married to ___"
        assert plan.after.query.prompt == (
            "Barack Obama is married to Michelle Obama. Barack Obama is married to ___"
        )
        assert plan.after.query.prompt.blank_index == len(plan.after.query.prompt) - len(BLANK)

    def test_implicit(self):
        plan = build_plan(OBAMA, MARRIED, "implicit", "bert-base", "bert-ft")
        assert plan.before.query.prompt == plan.after.query.prompt
        assert (plan.before.endpoint_id, plan.after.endpoint_id) == ("bert-base", "bert-ft")

    def test_implicit_errors(self):
        with pytest.raises(SameEndpointImplicitError):
            build_plan(OBAMA, MARRIED, "implicit", "bert-base", "bert-base")
        with pytest.raises(MissingInstilledEndpointError):
            build_plan(OBAMA, MARRIED, "implicit", "bert-base")

    def test_query_k_check(self):
        q = LogprobQuery("a ___", k=10)
        q.check_against(10)
        with pytest.raises(KExceedsMaxError):
            q.check_against(5)
        with pytest.raises(InvalidInputError):
            LogprobQuery("a ___", k=0)

    @settings(max_examples=200, deadline=None)
    @given(
        subject=st.text(min_size=1, max_size=20),
        obj=st.text(min_size=1, max_size=20),
        head=st.text(max_size=10).filter(lambda s: "<S>" not in s and BLANK not in s),
        mid=st.text(max_size=10).filter(lambda s: "<S>" not in s and BLANK not in s),
        subject_first=st.booleans(),
        mode=st.sampled_from(["explicit", "implicit"]),
    )
    def test_plan_validity(self, subject, obj, head, mid, subject_first, mode):
        pattern = head + ("<S>" + mid + BLANK if subject_first else BLANK + mid + "<S>")
        try:
            tpl = PromptTemplate("R", pattern)
        except InvalidInputError:
            return  # slot markers formed across the boundary
        fact = FactRecord("id", subject, "R", obj)
        plan = build_plan(fact, tpl, mode, "base", "ft")
        before = plan.before.query.prompt
        after = plan.after.query.prompt
        assert before.fill("X") == (head + subject + mid + "X" if subject_first else head + "X" + mid + subject)
        if mode == "explicit":
            assert after.endswith(before)
            assert after.fill("Y").endswith(before.fill("Y"))
        else:
            assert after == before
        assert render_prompt(fact, tpl) == render_prompt(fact, tpl)
