"""Config document parsing: happy path against the generated fixture plus
every rejection branch on a minimal hand-built document."""

import copy
import json
from pathlib import Path

import pytest

from relmig.config import load_config, parse_config
from relmig.errors import ConfigValidationError

MINI_SOURCE_SCHEMA = {
    "tables": [
        {
            "name": "Thing",
            "columns": [
                {"name": "ID", "dataKind": "integer"},
                {"name": "Name", "dataKind": "text"},
            ],
            "primaryKey": "ID",
        }
    ]
}

MINI_TARGET_SCHEMA = {
    "tables": [
        {
            "name": "Thing",
            "columns": [
                {"name": "ID", "dataKind": "integer", "isIdentity": True},
                {"name": "Name", "dataKind": "text"},
            ],
            "primaryKey": "ID",
        }
    ]
}

MINI_DOC = {
    "sources": [
        {"dbid": 1, "label": "alpha", "path": "alpha.db"},
        {"dbid": 2, "label": "beta", "path": "beta.db"},
    ],
    "target": {"path": "target.db"},
    "sourceSchema": "source_schema.json",
    "targetSchema": "target_schema.json",
    "tables": {"Thing": {"mode": {"kind": "generateKeys"}}},
}


@pytest.fixture()
def base(tmp_path: Path) -> Path:
    (tmp_path / "source_schema.json").write_text(json.dumps(MINI_SOURCE_SCHEMA))
    (tmp_path / "target_schema.json").write_text(json.dumps(MINI_TARGET_SCHEMA))
    return tmp_path


def parse(doc, base: Path):
    return parse_config(doc, base)


def mutated(**changes):
    doc = copy.deepcopy(MINI_DOC)
    doc.update(changes)
    return doc


class TestFixtureConfig:
    def test_parses_with_defaults(self, fixture_dir):
        cfg = load_config(fixture_dir / "config.json")
        assert cfg.policy == "rejectRow"
        assert cfg.batch_size == 500
        assert [s.tag.dbid for s in cfg.sources] == [1, 2, 3]
        assert cfg.step_order is None

    def test_paths_resolved_against_config_dir(self, fixture_dir):
        cfg = load_config(fixture_dir / "config.json")
        assert Path(cfg.target_path).parent == fixture_dir
        for source in cfg.sources:
            assert Path(source.path).parent == fixture_dir

    def test_discriminator_parsed(self, fixture_dir):
        cfg = load_config(fixture_dir / "config.json")
        disc = cfg.discriminator
        assert disc is not None
        assert disc.table == "StudyCycle"
        assert disc.column == "StudyCycleID"
        # JSON object keys arrive as strings and are converted to dbids.
        assert disc.value_by_source == {1: 1, 2: 2, 3: 3}

    def test_table_sections_parsed(self, fixture_dir):
        cfg = load_config(fixture_dir / "config.json")
        assert cfg.tables["Faculty"].mode.kind == "preserveKeys"
        assert cfg.tables["Faculty"].mode.source_dbid == 1
        assert cfg.tables["Nationality"].lookup is not None
        assert cfg.tables["Student"].mode.kind == "generateKeys"
        assert cfg.tables["Student"].extract.columns is not None


class TestMinimalDocument:
    def test_minimal_parses(self, base):
        cfg = parse(MINI_DOC, base)
        assert cfg.tables["Thing"].mode.kind == "generateKeys"
        assert cfg.target_path == str(base / "target.db")

    def test_policy_and_batch_size_overrides(self, base):
        cfg = parse(mutated(policy="abort", batchSize=64), base)
        assert cfg.policy == "abort"
        assert cfg.batch_size == 64

    def test_step_order_kept_verbatim(self, base):
        cfg = parse(mutated(stepOrder=["Thing"]), base)
        assert cfg.step_order == ("Thing",)


class TestRejections:
    @pytest.mark.parametrize("missing", ["sources", "target", "sourceSchema", "targetSchema", "tables"])
    def test_missing_required_top_key(self, base, missing):
        doc = copy.deepcopy(MINI_DOC)
        del doc[missing]
        with pytest.raises(ConfigValidationError, match=missing):
            parse(doc, base)

    def test_unknown_top_key(self, base):
        with pytest.raises(ConfigValidationError, match="mystery"):
            parse(mutated(mystery=1), base)

    @pytest.mark.parametrize("bad", [[], "nope", None])
    def test_sources_must_be_non_empty_array(self, base, bad):
        with pytest.raises(ConfigValidationError, match="'sources' must be a non-empty array"):
            parse(mutated(sources=bad), base)

    def test_duplicate_source_dbid(self, base):
        doc = mutated(
            sources=[
                {"dbid": 1, "label": "a", "path": "a.db"},
                {"dbid": 1, "label": "b", "path": "b.db"},
            ]
        )
        with pytest.raises(ConfigValidationError, match="duplicate source dbid 1"):
            parse(doc, base)

    @pytest.mark.parametrize("dbid", [True, "1", 1.0])
    def test_source_dbid_must_be_integer(self, base, dbid):
        doc = mutated(sources=[{"dbid": dbid, "label": "a", "path": "a.db"}])
        with pytest.raises(ConfigValidationError, match="source dbid must be an integer"):
            parse(doc, base)

    def test_source_dbid_must_be_positive(self, base):
        doc = mutated(sources=[{"dbid": 0, "label": "a", "path": "a.db"}])
        with pytest.raises(ConfigValidationError, match=">= 1"):
            parse(doc, base)

    def test_bad_policy(self, base):
        with pytest.raises(ConfigValidationError, match="policy must be 'rejectRow' or 'abort'"):
            parse(mutated(policy="carryOn"), base)

    @pytest.mark.parametrize("bad", [0, -5, True, "10"])
    def test_bad_batch_size(self, base, bad):
        with pytest.raises(ConfigValidationError, match="batchSize must be a positive integer"):
            parse(mutated(batchSize=bad), base)

    @pytest.mark.parametrize("bad", ["Thing", ["Thing", 3]])
    def test_step_order_must_be_string_list(self, base, bad):
        with pytest.raises(ConfigValidationError, match="stepOrder must be a list of table names"):
            parse(mutated(stepOrder=bad), base)

    @pytest.mark.parametrize("bad", [{}, [], "x"])
    def test_tables_must_be_non_empty_object(self, base, bad):
        with pytest.raises(ConfigValidationError, match="'tables' must be a non-empty object"):
            parse(mutated(tables=bad), base)

    def test_table_needs_mode_or_lookup(self, base):
        with pytest.raises(ConfigValidationError, match="needs a 'mode'"):
            parse(mutated(tables={"Thing": {"rules": []}}), base)

    def test_lookup_table_takes_no_other_settings(self, base):
        doc = mutated(
            tables={
                "Thing": {
                    "lookup": {"sourceColumns": [["Thing", "Name"]]},
                    "mode": {"kind": "generateKeys"},
                }
            }
        )
        with pytest.raises(ConfigValidationError, match="lookup table takes no other settings"):
            parse(doc, base)

    def test_lookup_source_columns_are_pairs(self, base):
        doc = mutated(tables={"Thing": {"lookup": {"sourceColumns": [["Thing"]]}}})
        with pytest.raises(ConfigValidationError, match=r"\[table, column\] pair"):
            parse(doc, base)

    def test_preserve_keys_needs_source(self, base):
        doc = mutated(tables={"Thing": {"mode": {"kind": "preserveKeys"}}})
        with pytest.raises(ConfigValidationError, match="needs its designated 'source' dbid"):
            parse(doc, base)

    def test_preserve_keys_source_must_be_configured(self, base):
        doc = mutated(tables={"Thing": {"mode": {"kind": "preserveKeys", "source": 9}}})
        with pytest.raises(ConfigValidationError, match="source dbid 9 is not configured"):
            parse(doc, base)

    def test_generate_keys_takes_no_source(self, base):
        doc = mutated(tables={"Thing": {"mode": {"kind": "generateKeys", "source": 1}}})
        with pytest.raises(ConfigValidationError, match="generateKeys takes no 'source'"):
            parse(doc, base)

    def test_unknown_mode_kind(self, base):
        doc = mutated(tables={"Thing": {"mode": {"kind": "inventKeys"}}})
        with pytest.raises(ConfigValidationError, match="bad load mode kind 'inventKeys'"):
            parse(doc, base)

    def test_split_fed_table_takes_no_extract(self, base):
        doc = mutated(
            tables={
                "Thing": {
                    "mode": {"kind": "generateKeys"},
                    "rowSource": {"splitFrom": "Other"},
                    "extract": {"columns": ["Name"]},
                }
            }
        )
        with pytest.raises(ConfigValidationError, match="split-fed table takes no extract settings"):
            parse(doc, base)

    def test_discriminator_table_must_not_be_configured(self, base):
        doc = mutated(
            discriminator={
                "table": "Thing",
                "column": "SourceID",
                "valueBySource": {"1": 1, "2": 2},
            }
        )
        with pytest.raises(ConfigValidationError, match="seeded automatically"):
            parse(doc, base)

    def test_discriminator_must_cover_every_source(self, base):
        doc = mutated(
            discriminator={
                "table": "Origin",
                "column": "OriginID",
                "valueBySource": {"1": 1},
            }
        )
        with pytest.raises(ConfigValidationError, match=r"misses source dbids \[2\]"):
            parse(doc, base)

    def test_discriminator_key_must_be_a_dbid(self, base):
        doc = mutated(
            discriminator={
                "table": "Origin",
                "column": "OriginID",
                "valueBySource": {"one": 1, "2": 2},
            }
        )
        with pytest.raises(ConfigValidationError, match="key 'one' is not a dbid"):
            parse(doc, base)

    def test_discriminator_value_must_be_integer(self, base):
        doc = mutated(
            discriminator={
                "table": "Origin",
                "column": "OriginID",
                "valueBySource": {"1": "first", "2": 2},
            }
        )
        with pytest.raises(ConfigValidationError, match="value for dbid 1 must be an integer"):
            parse(doc, base)

    def test_discriminator_values_must_be_distinct(self, base):
        doc = mutated(
            discriminator={
                "table": "Origin",
                "column": "OriginID",
                "valueBySource": {"1": 7, "2": 7},
            }
        )
        with pytest.raises(ConfigValidationError, match="distinct per source"):
            parse(doc, base)

    def test_extract_columns_must_be_non_empty(self, base):
        doc = mutated(
            tables={"Thing": {"mode": {"kind": "generateKeys"}, "extract": {"columns": []}}}
        )
        with pytest.raises(ConfigValidationError, match="extract columns must be a non-empty list"):
            parse(doc, base)


class TestLoadConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigValidationError, match="cannot read config"):
            load_config(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigValidationError, match="not valid JSON"):
            load_config(path)
