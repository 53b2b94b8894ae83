import pytest
from hypothesis import given, strategies as st

from pcl_ensemble.corpus import (
    ColumnSchema, LabelValidationError, ParagraphRecord, ParseError, SplitConfig, binarize_label,
    load_task_tsv, make_splits, read_split_tsv, read_task_tsv, write_task_tsv,
)
from pcl_ensemble.errors import InputError

HEADER = "par_id\tart_id\tkeyword\tcountry_code\ttext\tlabel\n"


def write(tmp_path, body, name="data.tsv"):
    path = tmp_path / name
    path.write_text(body, encoding="utf-8")
    return path


def test_three_row_fixture_binarizes_at_cutoff_two(tmp_path):
    path = write(tmp_path, HEADER
                 + "3\t@a\thomeless\tgb\tThey need our help.\t4\n"
                 + "1\t@b\twomen\tus\tCouncil meets today.\t0\n"
                 + "2\t@c\trefugee\tca\tA dollar saves a life.\t2\n")
    records = load_task_tsv(path)
    assert [r.par_id for r in records] == ["1", "2", "3"]
    assert [r.raw_label for r in records] == [0, 2, 4]
    assert [r.binary_label for r in records] == [0, 1, 1]
    assert records[2].keyword == "homeless" and records[2].country_code == "gb"


def test_header_only_file_is_empty(tmp_path):
    assert load_task_tsv(write(tmp_path, HEADER)) == []


def test_label_out_of_range_names_line(tmp_path):
    path = write(tmp_path, HEADER + "1\t@a\tx\tgb\tok\t0\n2\t@b\tx\tgb\tbad\t7\n")
    with pytest.raises(LabelValidationError, match=r"data\.tsv:3"):
        load_task_tsv(path)


def test_wrong_column_count_names_line(tmp_path):
    path = write(tmp_path, HEADER + "1\t@a\tx\tgb\tok\n")
    with pytest.raises(ParseError, match=r":2: expected 6"):
        load_task_tsv(path)


def test_empty_text_rows_are_dropped_and_counted(tmp_path):
    path = write(tmp_path, "1\t@a\tx\tgb\t   \t0\n2\t@b\tx\tgb\treal text\t1\n")
    records, dropped = read_task_tsv(path)
    assert dropped == 1
    assert [r.par_id for r in records] == ["2"]


def test_custom_schema_and_unlabelled_file(tmp_path):
    path = write(tmp_path, "text here\tkw\t10\tart\tin\n")
    schema = ColumnSchema(text=0, keyword=1, par_id=2, art_id=3, country_code=4, label=None, header=False)
    (rec,) = load_task_tsv(path, schema)
    assert rec.par_id == "10" and rec.text == "text here" and rec.binary_label is None


def test_missing_file_is_input_error(tmp_path):
    with pytest.raises(InputError, match="nope.tsv"):
        load_task_tsv(tmp_path / "nope.tsv")


@pytest.mark.parametrize("raw,cutoff,expected", [(0, 2, 0), (4, 2, 1), (2, 2, 1), (1, 2, 0), (1, 1, 1)])
def test_binarize(raw, cutoff, expected):
    assert binarize_label(raw, cutoff) == expected


@pytest.mark.parametrize("raw", [-1, 5, 7])
def test_binarize_rejects_out_of_range(raw):
    with pytest.raises(LabelValidationError):
        binarize_label(raw, 2)


@given(st.integers(0, 4), st.integers(0, 4), st.integers(1, 4))
def test_binarize_monotone(a, b, cutoff):
    lo, hi = sorted((a, b))
    assert binarize_label(lo, cutoff) <= binarize_label(hi, cutoff)


def make_records(n, positives):
    return [ParagraphRecord(str(i), f"@{i}", "kw", "gb", f"text {i}", 3 if i < positives else 0,
                            int(i < positives)) for i in range(n)]


def test_explicit_splits():
    recs = [ParagraphRecord(x, "@", "k", "gb", "t", 0, 0) for x in "abc"]
    splits = make_splits(recs, SplitConfig(ids={"train": ["a", "b"], "dev": ["c"]}))
    assert len(splits["train"]) == 2 and len(splits["dev"]) == 1


def test_explicit_split_unknown_id_is_named():
    recs = [ParagraphRecord("a", "@", "k", "gb", "t", 0, 0)]
    with pytest.raises(InputError, match="zzz"):
        make_splits(recs, SplitConfig(ids={"train": ["a"], "dev": ["zzz"]}))


def test_stratified_80_20_on_balanced_fixture():
    # 50 positives, 50 negatives: a 20-record dev split holds 10 of each
    splits = make_splits(make_records(100, 50), SplitConfig(fractions={"train": 0.8, "dev": 0.2}, seed=3))
    dev_pos = sum(r.binary_label for r in splits["dev"].records)
    assert len(splits["dev"]) == 20
    assert 9 <= dev_pos <= 11


@given(st.integers(20, 300), st.floats(0.05, 0.5), st.integers(0, 10_000))
def test_stratified_splits_partition_and_keep_rate(n, pos_rate, seed):
    positives = max(1, int(n * pos_rate))
    recs = make_records(n, positives)
    splits = make_splits(recs, SplitConfig(fractions={"train": 0.7, "dev": 0.2, "test": 0.1}, seed=seed))
    ids = [r.par_id for s in splits.values() for r in s.records]
    assert sorted(ids) == sorted(r.par_id for r in recs)
    rate = positives / n
    for s in splits.values():
        if len(s) >= 100:
            assert abs(sum(r.binary_label for r in s.records) / len(s) - rate) < 0.01


def test_stratified_is_reproducible():
    cfg = SplitConfig(fractions={"train": 0.8, "dev": 0.2}, seed=11)
    a = make_splits(make_records(60, 13), cfg)
    b = make_splits(make_records(60, 13), cfg)
    assert a["dev"].par_ids == b["dev"].par_ids


def test_tsv_round_trip(tmp_path):
    recs = make_records(7, 3) + [ParagraphRecord("99", "@z", "in-need", "ng", "Ünïcode “quotes”", None, None)]
    write_task_tsv(recs, tmp_path / "split.tsv")
    back = read_split_tsv(tmp_path / "split.tsv", "train")
    assert back.records == recs
    # the generic loader reads the same file under the default schema
    assert load_task_tsv(tmp_path / "split.tsv") == sorted(recs, key=lambda r: int(r.par_id))
