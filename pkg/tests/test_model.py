import json

import pytest

from cardsim.errors import (
    ConfigError,
    DuplicateAssignmentError,
    DuplicateCardError,
    EmptyResultsError,
    NoCardsError,
    ParseError,
    UnknownCardError,
)
from cardsim.model import (
    Clustering,
    ParticipantSort,
    StudyConfig,
    StudyResults,
    filter_complete,
    parse_clustering,
    parse_raw_results,
    parse_study_config,
    screen_study,
    serialize_clustering,
    serialize_raw_results,
    serialize_study_config,
    summarize_study,
)

from synth import planted_results


def _cfg(**kw):
    doc = {"study_id": "s", "cards": ["A", "B", "C"], "number_of_participants": 3}
    doc.update(kw)
    return json.dumps(doc)


def test_parse_config_defaults():
    c = parse_study_config(_cfg())
    assert c.labels == ["A", "B", "C"]
    assert c.card_ids == [0, 1, 2]
    assert c.welcome_message is None and c.language_tag == "en"


def test_config_round_trip(study10):
    assert parse_study_config(serialize_study_config(study10)) == study10


def test_no_cards():
    with pytest.raises(NoCardsError):
        parse_study_config(_cfg(cards=[]))


def test_duplicate_canonical_label_located():
    with pytest.raises(DuplicateCardError) as exc:
        parse_study_config(_cfg(cards=["User’s guide", "Other", "User's  guide"]))
    assert exc.value.location == "cards[2]"


def test_malformed_json_has_line():
    with pytest.raises(ConfigError) as exc:
        parse_study_config('{\n "study_id": "s",\n "cards": [}\n')
    assert exc.value.location.startswith("line 3")


@pytest.mark.parametrize("bad", [
    {"number_of_participants": 0},
    {"number_of_participants": "5"},
    {"cards": "A,B"},
    {"extra": 1},
    {"demographics": 5},
])
def test_config_field_errors(bad):
    with pytest.raises(ConfigError):
        parse_study_config(_cfg(**bad))


def test_missing_field():
    with pytest.raises(ConfigError) as exc:
        parse_study_config('{"study_id": "s", "cards": ["A", "B"]}')
    assert exc.value.location == "number_of_participants"


def test_parse_raw_results(real10):
    assert len(real10.sorts) == 12
    assert all(s.complete for s in real10.sorts)
    assert real10.sorts[0].n_categories() == 3


def test_raw_unknown_card(study10):
    text = "respondent,category,card\nr1,X,Not a card\n"
    with pytest.raises(UnknownCardError) as exc:
        parse_raw_results(text, study10)
    assert exc.value.location == "row 2"


def test_raw_duplicate_assignment(study10):
    text = "respondent,category,card\nr1,X,FAQ\nr1,Y,FAQ\n"
    with pytest.raises(DuplicateAssignmentError) as exc:
        parse_raw_results(text, study10)
    assert exc.value.location == "row 3"


def test_raw_bad_header(study10):
    with pytest.raises(ParseError):
        parse_raw_results("who,what,card\n", study10)


def test_raw_matches_canonical_labels(study10):
    text = "respondent,category,card\nr1,X,  FAQ \nr1,X,Help  centre\n"
    res = parse_raw_results(text, study10)
    assert set(res.sorts[0].assignments) == {7, 9}
    assert not res.sorts[0].complete


def test_raw_round_trip(fixtures):
    config = parse_study_config((fixtures / "roundtrip_study.json").read_text(encoding="utf-8"))
    text = (fixtures / "roundtrip_raw.csv").read_text(encoding="utf-8")
    assert serialize_raw_results(parse_raw_results(text, config)) == text


def test_clustering_round_trip(fixtures):
    config = parse_study_config((fixtures / "roundtrip_study.json").read_text(encoding="utf-8"))
    text = (fixtures / "roundtrip_clustering.csv").read_text(encoding="utf-8")
    cl = parse_clustering(text, config)
    assert cl.n_categories() == 2
    assert serialize_clustering(cl, config) == text


def test_filter_complete(study10):
    full = ParticipantSort.build("a", {c: "x" if c < 5 else "y" for c in study10.card_ids},
                                 study10)
    partial = ParticipantSort.build("b", {0: "x"}, study10)
    res = StudyResults(study10, (full, partial))
    assert [s.respondent_id for s in filter_complete(res).sorts] == ["a"]
    with pytest.raises(EmptyResultsError):
        filter_complete(StudyResults(study10, (partial,)))


def test_screening(real10):
    assert screen_study(real10).passed
    small = planted_results(n_cards=8, participants=5)
    assert screen_study(small).violations == ("min-participants", "min-cards")


def test_summary_uses_sample_sd():
    res = planted_results(n_cards=10, k=2, participants=2)
    s = summarize_study(res)
    assert (s.n_cards, s.n_complete, s.mean_categories, s.sd_categories) == (10, 2, 2.0, 0.0)


def test_summary_single_participant():
    s = summarize_study(planted_results(n_cards=10, k=3, participants=1))
    assert s.sd_categories == 0.0


def test_clustering_helpers():
    cl = Clustering.from_labels([10, 11, 12, 13], [5, 5, 2, 7])
    assert cl.clusters == {"cluster-1": (10, 11), "cluster-2": (12,), "cluster-3": (13,)}
    assert cl.labels_for([13, 12, 11, 10]) == [2, 1, 0, 0]
    renamed = Clustering({"x": (12,), "y": (11, 10), "z": (13,)})
    assert cl.same_partition(renamed) and cl != renamed
    cl.check([10, 11, 12, 13])
    with pytest.raises(ValueError):
        Clustering({"a": (1, 2), "b": (2,)}).check([1, 2])
    with pytest.raises(ValueError):
        Clustering({"a": (1, 2)}).check([1, 2])


def test_study_config_from_labels_rejects_single_card():
    with pytest.raises(ConfigError):
        StudyConfig.from_labels("s", ["only"], 1)
