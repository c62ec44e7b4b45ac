from hypothesis import given, settings
from hypothesis import strategies as st

import pytest

from comer.belief import (FlattenError, FrequencyTables, ParseError,
                          canonical_order, compute_frequencies, flatten,
                          from_combined, from_triplets, parse_flat, postprocess,
                          postprocess_state, state_from_json, state_to_json,
                          to_combined, to_triplets)
from comer.embeddings import DOMAIN_MARK, SLOT_MARK, VALUE_MARK, TokenUnit


def keys_of(tokens):
    return [t.key for t in tokens]


# ---------------------------------------------------------------------------
# hypothesis strategies

names = st.text(alphabet="abcdefgh", min_size=1, max_size=6)
value_words = st.lists(
    st.text(alphabet="abcdefgh0123456789>", min_size=1, max_size=5),
    min_size=1, max_size=3)
states = st.dictionaries(
    names,
    st.dictionaries(names, value_words, min_size=1, max_size=3),
    min_size=0, max_size=3)


class TestFlatten:
    def test_worked_example(self):
        b = {"restaurant": {"food": ["north", "african"], "area": ["west"]},
             "hotel": {"stars": ["3"]}}
        got = keys_of(flatten(b))
        assert got == [
            "domain:restaurant", "ctrl:-",
            "slot:food", "ctrl:,", "word:north", "word:african", "ctrl:;",
            "slot:area", "ctrl:,", "word:west", "ctrl:;",
            "domain:hotel", "ctrl:-",
            "slot:stars", "ctrl:,", "word:3", "ctrl:;",
        ]

    def test_empty_state(self):
        assert flatten({}) == []

    def test_operator_token_allowed(self):
        b = {"restaurant": {"leave at": [">", "17:00"]}}
        assert "word:>" in keys_of(flatten(b))

    def test_reserved_token_in_value_rejected(self):
        with pytest.raises(FlattenError):
            flatten({"d": {"s": [";"]}})

    def test_trailing_token_always_value_mark(self):
        b = {"hotel": {"stars": ["3"]}}
        assert flatten(b)[-1].surface == VALUE_MARK


class TestParse:
    def test_round_trip_example(self):
        b = {"restaurant": {"food": ["thai"]}, "hotel": {"area": ["north"]}}
        assert parse_flat(flatten(b)) == b

    def test_lenient_drops_incomplete_triplet(self):
        toks = [TokenUnit("restaurant", "domain"), TokenUnit(DOMAIN_MARK, "control"),
                TokenUnit("food", "slot"), TokenUnit(SLOT_MARK, "control"),
                TokenUnit(VALUE_MARK, "control"),  # empty value
                TokenUnit("area", "slot"), TokenUnit(SLOT_MARK, "control"),
                TokenUnit("west", "word"), TokenUnit(VALUE_MARK, "control")]
        assert parse_flat(toks) == {"restaurant": {"area": ["west"]}}

    def test_strict_raises_on_incomplete_triplet(self):
        toks = [TokenUnit("restaurant", "domain"), TokenUnit(DOMAIN_MARK, "control"),
                TokenUnit("food", "slot"), TokenUnit(SLOT_MARK, "control"),
                TokenUnit(VALUE_MARK, "control")]
        with pytest.raises(ParseError):
            parse_flat(toks, strict=True)

    def test_strict_raises_on_dangling_slot(self):
        toks = flatten({"d": {"s": ["v"]}}) + [TokenUnit("s2", "slot")]
        with pytest.raises(ParseError):
            parse_flat(toks, strict=True)

    def test_lenient_skips_value_word_outside_value(self):
        toks = [TokenUnit("stray", "word")] + flatten({"d": {"s": ["v"]}})
        assert parse_flat(toks) == {"d": {"s": ["v"]}}

    @given(states)
    @settings(max_examples=200)
    def test_round_trip_property(self, b):
        assert parse_flat(flatten(b), strict=True) == b


class TestCanonicalOrder:
    def _freq(self):
        return FrequencyTables(
            domain={"restaurant": 10, "hotel": 5, "taxi": 5},
            slot={("restaurant", "food"): 9, ("restaurant", "area"): 4})

    def test_frequency_then_name(self):
        b = {"taxi": {"a": ["x"]}, "hotel": {"b": ["y"]}, "restaurant": {"area": ["z"], "food": ["w"]}}
        out = canonical_order(b, self._freq())
        assert list(out) == ["restaurant", "hotel", "taxi"]
        assert list(out["restaurant"]) == ["food", "area"]

    def test_unknown_counts_as_zero(self):
        out = canonical_order({"zoo": {"s": ["v"]}, "hotel": {"s": ["v"]}}, self._freq())
        assert list(out) == ["hotel", "zoo"]

    def test_values_preserved(self):
        b = {"hotel": {"stars": ["3"]}}
        assert canonical_order(b, self._freq()) == b

    @given(states)
    @settings(max_examples=100)
    def test_idempotent(self, b):
        freq = self._freq()
        once = canonical_order(b, freq)
        assert canonical_order(once, freq) == once
        assert list(canonical_order(once, freq)) == list(once)


class TestPostprocess:
    def test_empty_components_dropped(self):
        trips = [("", "s", "v"), ("d", "", "v"), ("d", "s", ""), ("d", "s", "v")]
        assert postprocess(trips) == [("d", "s", "v")]

    def test_last_occurrence_wins(self):
        trips = [("d", "s", "old"), ("d", "s2", "x"), ("d", "s", "new")]
        assert postprocess(trips) == [("d", "s", "new"), ("d", "s2", "x")]

    @given(st.lists(st.tuples(names, names, names), max_size=8))
    @settings(max_examples=100)
    def test_idempotent(self, trips):
        once = postprocess(trips)
        assert postprocess(once) == once

    @given(states)
    @settings(max_examples=100)
    def test_state_round_trip(self, b):
        assert from_triplets(to_triplets(b)) == b
        assert postprocess_state(b) == b


class TestViews:
    def test_combined_bijection_example(self):
        b = {"restaurant": {"food": ["thai"]}, "hotel": {"stars": ["3"]}}
        c = to_combined(b)
        assert c == {"restaurant;food": ["thai"], "hotel;stars": ["3"]}
        assert from_combined(c) == b

    @given(states)
    @settings(max_examples=100)
    def test_combined_round_trip(self, b):
        assert from_combined(to_combined(b)) == b

    @given(states)
    @settings(max_examples=100)
    def test_json_round_trip(self, b):
        assert state_from_json(state_to_json(b)) == b


class TestFrequencies:
    def test_per_turn_counting(self):
        class T:
            def __init__(self, state):
                self.state = state

        class D:
            def __init__(self, turns):
                self.turns = turns

        dialogues = [D([T({"restaurant": {"food": ["thai"]}}),
                        T({"restaurant": {"food": ["thai"], "area": ["west"]}})]),
                     D([T({"hotel": {"stars": ["3"]}})])]
        freq = compute_frequencies(dialogues)
        assert freq.domain == {"restaurant": 2, "hotel": 1}
        assert freq.slot == {("restaurant", "food"): 2,
                             ("restaurant", "area"): 1,
                             ("hotel", "stars"): 1}
