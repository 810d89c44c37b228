from __future__ import annotations

import math

import pytest
from hypothesis import given, settings, strategies as st

from shiftlab.errors import DuplicateDyad, EmptyOfcList, MalformedRow, SchemaMismatch
from shiftlab.ingest import (
    CBCR_COLUMNS,
    META_COLUMNS,
    CorrectionsConfig,
    Subgroup,
    apply_corrections,
    format_number,
    is_aggregate,
    parse_cbcr,
    parse_meta,
    scale_record,
    select_sample,
    write_cbcr,
    write_meta,
)

from conftest import meta_row, rec

HEADER = ",".join(CBCR_COLUMNS)


def write(tmp_path, text, name="cbcr.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_parse_roundtrip(tmp_path):
    rows = [rec("USA", "BMU", 1234.5, tax=12.25), rec("USA", "DEU", 10.0, employees=math.nan),
            rec("DEU", "USA", -3.0, subgroup="ALL")]
    p = tmp_path / "c.csv"
    write_cbcr(rows, p)
    back = parse_cbcr(p)
    assert len(back) == 3
    assert back[0] == rows[0]
    assert math.isnan(back[1].employees)
    assert back[2].subgroup is Subgroup.ALL and back[2].profit == -3.0


def test_header_mismatch(tmp_path):
    p = write(tmp_path, "reporting,partner\nUSA,BMU\n")
    with pytest.raises(SchemaMismatch):
        parse_cbcr(p)


def test_empty_file_is_schema_error(tmp_path):
    with pytest.raises(SchemaMismatch):
        parse_cbcr(write(tmp_path, ""))


def test_malformed_cell_reports_line_and_column(tmp_path):
    p = write(tmp_path, HEADER + "\nUSA,BMU,POSITIVE,1,abc,1,1,1,1,1\n")
    with pytest.raises(MalformedRow) as info:
        parse_cbcr(p)
    assert info.value.line == 2
    assert info.value.column == "profit_usd_m"


@pytest.mark.parametrize("row,column", [
    ("USA,BMU,POSITIVE,1,-5,1,1,1,1,1", "profit_usd_m"),
    ("USA,BMU,POSITIVE,1,5,1,1,-1,1,1", "employees"),
    ("USA,BMU,POSITIVE,1,5,1,1,1,1,-2", "tangible_assets_usd_m"),
    ("USA,BMU,MIXED,1,5,1,1,1,1,1", "subgroup"),
    ("USA,BMU,POSITIVE,x,5,1,1,1,1,1", "n_firms"),
    ("USA,BMU,POSITIVE,1,,1,1,1,1,1", "profit_usd_m"),
    ("USA,BMU,POSITIVE,1,inf,1,1,1,1,1", "profit_usd_m"),
])
def test_row_validation(tmp_path, row, column):
    with pytest.raises(MalformedRow) as info:
        parse_cbcr(write(tmp_path, HEADER + "\n" + row + "\n"))
    assert info.value.column == column


def test_expected_subgroup(tmp_path):
    p = write(tmp_path, HEADER + "\nUSA,BMU,ALL,1,5,1,1,1,1,1\n")
    with pytest.raises(MalformedRow):
        parse_cbcr(p, Subgroup.POSITIVE)
    assert len(parse_cbcr(p, "ALL")) == 1


def test_duplicate_dyad(tmp_path):
    line = "USA,BMU,POSITIVE,1,5,1,1,1,1,1\n"
    with pytest.raises(DuplicateDyad):
        parse_cbcr(write(tmp_path, HEADER + "\n" + line + line))


def test_negative_profit_allowed_in_all(tmp_path):
    recs = parse_cbcr(write(tmp_path, HEADER + "\nUSA,BMU,ALL,1,-5,1,1,1,1,1\n"))
    assert recs[0].profit == -5


def test_meta_roundtrip(tmp_path):
    meta = {"USA": meta_row("USA"), "BMU": meta_row("BMU", salary=None, tax_rev=None)}
    p = tmp_path / "m.csv"
    write_meta(meta, p)
    back = parse_meta(p)
    assert back["BMU"].avg_salary is None and back["BMU"].total_tax_revenue is None
    assert back["USA"].gdp_pc == pytest.approx(meta["USA"].gdp_pc)


def test_meta_inconsistent_gdp_pc(tmp_path):
    row = "USA,1000,1000000,5,,0.2,,,HIGH,NA,"
    p = tmp_path / "m.csv"
    p.write_text(",".join(META_COLUMNS) + "\n" + row + "\n")
    with pytest.raises(MalformedRow) as info:
        parse_meta(p)
    assert info.value.column == "gdp_pc_usd"


@given(st.floats(allow_nan=False, allow_infinity=False, width=64))
def test_format_number_roundtrip(x):
    assert float(format_number(x)) == x


def test_format_number_missing():
    assert format_number(math.nan) == "" and format_number(None) == ""
    assert format_number(3.0) == "3"


def test_aggregate_labels():
    assert is_aggregate("OTHER_EUROPE") and not is_aggregate("DEU")


def test_scale_record_keeps_firm_count():
    r = rec("CHN", "HKG", 10.0, n_firms=7)
    s = scale_record(r, 2.0)
    assert s.profit == 20.0 and s.employees == 20.0 and s.n_firms == 7


def test_corrections_china_and_threshold():
    recs = [rec("CHN", "HKG", 10.0), rec("FRA", "BMU", 10.0), rec("ITA", "BMU", 10.0)]
    cfg = CorrectionsConfig({"FRA": 1.5, "ITA": 0.8}, china_factor=2.0)
    out = apply_corrections(recs, cfg)
    assert [r.profit for r in out] == [20.0, 15.0, 10.0]
    cfg2 = CorrectionsConfig({"ITA": 0.8}, apply_only_if_above_one=False)
    assert apply_corrections(recs[2:], cfg2)[0].profit == pytest.approx(8.0)


def test_us_substitution_only_replaces_present_subgroups():
    sub = [rec("USA", "BMU", 99.0), rec("USA", "BMU", 50.0, subgroup="ALL")]
    recs = [rec("USA", "BMU", 1.0), rec("DEU", "BMU", 2.0)]
    out = apply_corrections(recs, CorrectionsConfig(us_substitution=sub))
    assert sorted(r.profit for r in out) == [2.0, 99.0]


@settings(max_examples=50)
@given(st.dictionaries(st.sampled_from(["FRA", "ITA", "DEU"]), st.floats(0.2, 5.0), min_size=1),
       st.floats(0.5, 3.0))
def test_correction_inverse_is_identity(ratios, china):
    recs = [rec(c, "BMU", 100.0) for c in ("FRA", "ITA", "DEU", "CHN")]
    cfg = CorrectionsConfig(ratios, china, apply_only_if_above_one=False)
    back = apply_corrections(apply_corrections(recs, cfg), cfg.inverse())
    for a, b in zip(recs, back):
        assert b.profit == pytest.approx(a.profit, rel=1e-12)


def test_select_sample():
    recs = [rec("USA", p, 1.0) for p in ("BMU", "IRL", "LUX")] + [rec("DEU", "BMU", 1.0)]
    assert select_sample(recs, ["BMU", "IRL", "LUX"], 3) == {"USA"}
    assert select_sample(recs, ["BMU"], 1) == {"USA", "DEU"}
    with pytest.raises(EmptyOfcList):
        select_sample(recs, [], 1)
