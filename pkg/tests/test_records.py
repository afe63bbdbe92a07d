import datetime
import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from medneutral.records import (
    Abstract,
    AntecedentLabel,
    ClassifiedInstance,
    Gender,
    LabelSource,
    PronounInstance,
    ResolvedInstance,
    read_abstracts,
    read_classified,
    read_instances,
    write_records,
)


def roundtrip(records, reader):
    out = io.StringIO()
    write_records(records, out)
    return list(reader(io.StringIO(out.getvalue())))


def test_read_abstract_table5_row1():
    stream = io.StringIO('{"pmid":"5598532","text":"Some compromise..."}\n')
    (abstract,) = read_abstracts(stream)
    assert abstract.pmid == "5598532"
    assert abstract.date is None


def test_read_empty_stream():
    errors = []
    assert list(read_abstracts(io.StringIO(""), errors)) == []
    assert errors == []


def test_missing_pmid_is_record_error():
    errors = []
    got = list(read_abstracts(io.StringIO('{"text":"x"}\n'), errors))
    assert got == []
    assert len(errors) == 1
    assert errors[0].line_number == 1


def test_malformed_line_collected_and_skipped():
    errors = []
    stream = io.StringIO('{"pmid":"1","text":"a"}\nnot json\n{"pmid":"2","text":"b"}\n')
    got = list(read_abstracts(stream, errors))
    assert [a.pmid for a in got] == ["1", "2"]
    assert len(errors) == 1 and errors[0].line_number == 2


def test_malformed_line_raises_without_error_list():
    with pytest.raises(json.JSONDecodeError):
        list(read_abstracts(io.StringIO("nope\n")))


def test_blank_lines_skipped():
    stream = io.StringIO('\n{"pmid":"1","text":"a"}\n\n')
    assert len(list(read_abstracts(stream))) == 1


def test_roundtrip_three_abstracts():
    originals = [
        Abstract(pmid="1", text="a"),
        Abstract(pmid="2", text="b", date=datetime.date(1968, 10, 25)),
        Abstract(pmid="3", text="c"),
    ]
    assert roundtrip(originals, read_abstracts) == originals


def test_roundtrip_non_ascii():
    a = Abstract(pmid="7", text="a naïve approach — œdème")
    out = io.StringIO()
    write_records([a], out)
    assert "naïve" in out.getvalue()
    assert roundtrip([a], read_abstracts) == [a]


def test_write_zero_records():
    out = io.StringIO()
    assert write_records([], out) == 0
    assert out.getvalue() == ""


def test_sink_failure_reports_partial_count():
    from medneutral.records import PipelineError

    class FailsAfterTwo:
        def __init__(self):
            self.writes = 0

        def write(self, data):
            if self.writes >= 2:
                raise OSError("disk full")
            self.writes += 1

    sink = FailsAfterTwo()
    with pytest.raises(PipelineError, match="after 2 records"):
        write_records([Abstract(pmid=str(i), text="x") for i in "123"], sink)


def _instance(offset=0, surface="He"):
    return PronounInstance(
        instance_id=f"1:{offset}",
        pmid="1",
        offset=offset,
        surface=surface,
        lemma=surface.lower(),
        gender=Gender.MASCULINE,
    )


def test_instance_roundtrip_with_labels():
    resolved = ResolvedInstance(
        instance=_instance(), antecedent_text="the surgeon", antecedent_span=(4, 15)
    )
    classified = ClassifiedInstance(
        resolved=resolved,
        label=AntecedentLabel.OCCUPATION,
        label_source=LabelSource.ORACLE,
    )
    assert roundtrip([classified], read_classified) == [classified]


def test_label_wire_strings_fixed():
    assert [label.value for label in AntecedentLabel] == [
        "patient",
        "named individual",
        "occupation",
        "author",
        "animal",
        "other",
    ]


def test_antecedent_whitespace_rejected():
    with pytest.raises(ValueError):
        ResolvedInstance(instance=_instance(), antecedent_text=" padded ")


def test_offset_soundness_check():
    inst = _instance(offset=0, surface="He")
    inst.check_against("He arrived.")
    from medneutral.records import IntegrityError

    with pytest.raises(IntegrityError):
        inst.check_against("She arrived.")


_label_st = st.sampled_from(list(AntecedentLabel))
_pmid_st = st.from_regex(r"[1-9][0-9]{0,7}", fullmatch=True)
_text_st = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=80
).filter(lambda s: s.strip())


@given(
    pmid=_pmid_st,
    text=_text_st,
    date=st.one_of(st.none(), st.dates(min_value=datetime.date(1965, 1, 1))),
)
def test_abstract_roundtrip_property(pmid, text, date):
    a = Abstract(pmid=pmid, text=text, date=date)
    assert roundtrip([a], read_abstracts) == [a]


@given(offset=st.integers(min_value=0, max_value=10**6), label=_label_st)
def test_classified_roundtrip_property(offset, label):
    resolved = ResolvedInstance(
        instance=_instance(offset=offset), antecedent_text="the nurse"
    )
    classified = ClassifiedInstance(
        resolved=resolved, label=label, label_source=LabelSource.HUMAN_ANNOTATION
    )
    assert roundtrip([classified], read_classified) == [classified]


def test_instances_reader(tmp_path):
    inst = _instance(offset=3, surface="his")
    path = tmp_path / "instances.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        write_records([inst], fh)
    with open(path, encoding="utf-8") as fh:
        assert list(read_instances(fh)) == [inst]
