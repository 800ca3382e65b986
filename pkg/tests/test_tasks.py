import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from paralbench.errors import DuplicateTask, EmptyMapping, InvalidTaskSpec, UnknownLabel, UnknownTask
from paralbench.tasks import (
    LabelSpace,
    RegressionTarget,
    TaskRegistry,
    TaskSpec,
    build_label_mapping,
    canonicalize,
    load_builtin_catalog,
    resolve_label,
    task_from_record,
)

BUILTIN_TASKS = {
    "meld_emotion", "msp_emotion", "iemocap_emotion", "iemocap_arousal", "iemocap_valence",
    "iemocap_dominance", "meld_sentiment", "mosi_sentiment", "mustard_sarcasm", "flusense_influenza",
    "sep28k_stutter", "daicwoz_depression", "msp_gender", "vctk_age", "vctk_accent", "timit_dialect",
}


class TestLabelSpace:
    def test_canonical_lookup_and_aliases(self):
        space = LabelSpace(("Anger", "Happiness"), {"joy": "happiness", "EXC": "Happiness"})
        assert space.classes == ("anger", "happiness")
        assert space.lookup(" ANGER ") == "anger"
        assert space.lookup("Joy") == "happiness"
        assert space.lookup("exc") == "happiness"
        assert space.lookup("fear") is None
        assert resolve_label(space, "joy") == 1

    def test_unknown_label_raises(self):
        space = LabelSpace(("a", "b"), name="t")
        with pytest.raises(UnknownLabel):
            resolve_label(space, "zzz")

    def test_invalid_spaces(self):
        with pytest.raises(InvalidTaskSpec):
            LabelSpace(("a", "A"))
        with pytest.raises(InvalidTaskSpec):
            LabelSpace(("a", "b"), {"x": "c"})

    def test_exclusion_only_for_unknown_names(self):
        space = LabelSpace(("a", "b"), exclude=frozenset({"x", "a"}))
        assert space.is_excluded("X")
        assert not space.is_excluded("a")

    def test_restrict(self):
        space = LabelSpace(("a", "b", "c"), {"bee": "b"})
        r = space.restrict(["a", "b"])
        assert r.classes == ("a", "b")
        assert r.is_excluded("c")
        assert r.lookup("bee") == "b"

    @given(st.text(max_size=12))
    def test_canonicalize_idempotent(self, s):
        assert canonicalize(canonicalize(s)) == canonicalize(s)


class TestTaskSpec:
    def test_regression_normalization(self):
        t = RegressionTarget("arousal", (1.0, 5.0), "min_max_to_unit")
        assert t.normalize(1.0) == 0.0
        assert t.normalize(5.0) == 1.0
        assert t.normalize(3.0) == 0.5
        assert t.normalize(7.0) == 1.0

    def test_validation(self):
        with pytest.raises(InvalidTaskSpec):
            TaskSpec("x", "d", "short", "classification", LabelSpace(("only",))).validate()
        with pytest.raises(InvalidTaskSpec):
            TaskSpec("x", "d", "short", "regression").validate()
        with pytest.raises(InvalidTaskSpec):
            TaskSpec("x", "d", "daily", "regression", target=RegressionTarget("y", (0, 1))).validate()
        with pytest.raises(InvalidTaskSpec):
            RegressionTarget("y", (1, 1))

    def test_record_round_trip(self, registry):
        for task in registry:
            again = task_from_record(task.to_record())
            assert again.to_record() == task.to_record()


class TestRegistry:
    def test_builtin_catalog_covers_all_tasks(self):
        reg = load_builtin_catalog(include_synthetic=False)
        assert {t.task_id for t in reg} == BUILTIN_TASKS
        taxonomy = {t.task_id: t.taxonomy for t in reg}
        assert taxonomy["iemocap_emotion"] == "short"
        assert taxonomy["sep28k_stutter"] == "medium"
        assert taxonomy["timit_dialect"] == "long"

    def test_class_counts(self, registry):
        assert registry.get("meld_emotion").num_outputs == 7
        assert registry.get("iemocap_emotion").num_outputs == 4
        assert registry.get("msp_emotion").num_outputs == 5
        assert registry.get("timit_dialect").num_outputs == 8
        assert registry.get("vctk_age").num_outputs == 1

    def test_inferred_label_spaces_are_flagged(self, registry):
        assert registry.get("msp_emotion").inferred
        assert not registry.get("meld_emotion").inferred

    def test_duplicates_and_unknown(self, registry):
        reg = TaskRegistry()
        t = registry.get("meld_emotion")
        reg.register_task(t)
        with pytest.raises(DuplicateTask):
            reg.register_task(t)
        with pytest.raises(UnknownTask):
            reg.get("nope")

    def test_dump_reload(self, registry):
        reg = TaskRegistry()
        reg.load_document(yaml.safe_load(registry.dump()))
        assert [t.task_id for t in reg] == [t.task_id for t in registry]

    def test_expected_counts(self, registry):
        assert registry.expected("timit") == (4620, 0, 1680)
        assert registry.expected("iemocap", "iemocap_emotion") == (4290, 0, 1241)


class TestLabelMapping:
    def test_iemocap_to_msp_drops_disgust(self, registry):
        src = registry.get("iemocap_emotion").label_space
        m = build_label_mapping(src, registry.get("msp_emotion").label_space)
        assert m.dropped_target_classes == ("disgust",)
        assert m.source_index("D") is None
        assert m.source_index("H") == src.index_of("happiness")

    def test_iemocap_to_meld_drops_three(self, registry):
        src = registry.get("iemocap_emotion").label_space
        m = build_label_mapping(src, registry.get("meld_emotion").label_space)
        assert set(m.dropped_target_classes) == {"disgust", "surprise", "fear"}
        assert m.source_index("joy") == src.index_of("happiness")

    def test_identity_and_empty(self):
        a = LabelSpace(("x", "y"))
        assert build_label_mapping(a, a).is_identity
        with pytest.raises(EmptyMapping):
            build_label_mapping(a, LabelSpace(("p", "q")))

    @given(st.sets(st.sampled_from("abcdefgh"), min_size=2), st.sets(st.sampled_from("abcdefgh"), min_size=2))
    def test_mapped_indices_stay_in_source_space(self, a, b):
        src, tgt = LabelSpace(tuple(sorted(a))), LabelSpace(tuple(sorted(b)))
        if not a & b:
            with pytest.raises(EmptyMapping):
                build_label_mapping(src, tgt)
            return
        m = build_label_mapping(src, tgt)
        for name in tgt.classes:
            idx = m.source_index(name)
            assert (idx is None) == (name not in a)
            if idx is not None:
                assert src.classes[idx] == name
