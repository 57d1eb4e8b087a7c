"""Pagination strategies: exhaustive content equality between the two page
readers, resume-key positioning, and the benchmark plumbing."""

import sqlite3

import pytest

from relmig.paging import (
    BenchSpec,
    Measurement,
    bench,
    build_users,
    check_trend,
    csv_text,
    default_page_indices,
    key_before_page,
    page_keyset,
    page_offset,
)


@pytest.fixture(scope="module")
def users_db(tmp_path_factory):
    path = tmp_path_factory.mktemp("paging") / "users.db"
    with sqlite3.connect(path) as conn:
        build_users(conn, 1000, seed=7)
    conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    yield conn
    conn.close()


class TestPageReaders:
    @pytest.mark.parametrize("page_size", [1, 7, 10])
    def test_walks_agree_on_every_page(self, users_db, page_size):
        """Walk the whole table with both strategies and compare each page."""
        pages = -(-1000 // page_size)  # ceil
        after = ""
        seen = []
        for index in range(pages + 1):  # one page past the end
            by_offset = page_offset(users_db, page_size, index)
            by_key, after = page_keyset(users_db, page_size, after)
            assert by_offset == by_key, f"page {index} (size {page_size})"
            seen.extend(by_key)
        assert len(seen) == 1000
        keys = [row[2] for row in seen]
        assert keys == sorted(keys)
        assert len(set(keys)) == 1000

    def test_random_access_via_resume_key(self, users_db):
        for index in (0, 3, 57, 99):
            key = key_before_page(users_db, 10, index)
            rows, _ = page_keyset(users_db, 10, key)
            assert rows == page_offset(users_db, 10, index)

    def test_past_the_end(self, users_db):
        assert page_offset(users_db, 10, 100) == []
        key = key_before_page(users_db, 10, 100)
        rows, resumed = page_keyset(users_db, 10, key)
        assert rows == []
        assert resumed == key
        assert key_before_page(users_db, 10, 5000) == ""

    def test_shuffled_insert_order(self, users_db):
        """The paging order is the name index, not the physical row order."""
        ids = [r[0] for r in page_offset(users_db, 1000, 0)]
        assert ids != sorted(ids)
        assert sorted(ids) == list(range(1, 1001))


class TestSpec:
    def test_default_page_indices(self):
        assert default_page_indices(100_000, 10) == (0, 100, 1000, 5000, 9900)
        assert default_page_indices(1000, 10) == (0, 1, 10, 50, 99)

    def test_tiny_table_collapses(self):
        assert default_page_indices(5, 10) == (0, 1)

    def test_spec_defaults(self):
        spec = BenchSpec()
        assert spec.record_counts == (100_000,)
        assert spec.page_size == 10
        assert spec.reps == 30
        assert spec.indices_for(100_000) == (0, 100, 1000, 5000, 9900)

    def test_explicit_indices_win(self):
        spec = BenchSpec(page_indices=(0, 5))
        assert spec.indices_for(100_000) == (0, 5)


class TestBench:
    def test_small_bench_shape_and_csv(self, tmp_path):
        spec = BenchSpec(record_counts=(2000,), page_size=10, reps=3, seed=7)
        results = bench(spec, db_dir=tmp_path)
        indices = spec.indices_for(2000)
        assert len(results) == 2 * len(indices)
        strategies = {m.strategy for m in results}
        assert strategies == {"offset", "keyset"}
        for m in results:
            assert m.record_count == 2000
            assert m.reps == 3
            assert m.mean_ms >= 0.0
            assert m.stddev_ms >= 0.0

        text = csv_text(results)
        lines = text.splitlines()
        assert lines[0] == "strategy,record_count,page_index,mean_ms,stddev_ms"
        assert len(lines) == 1 + len(results)
        first = lines[1].split(",")
        assert first[0] == "offset"
        assert first[1] == "2000"
        float(first[3]), float(first[4])  # parseable

    def test_ci95_symmetric(self):
        m = Measurement("offset", 10, 0, mean_ms=2.0, stddev_ms=1.0, reps=25)
        low, high = m.ci95()
        assert low == pytest.approx(2.0 - 1.96 / 5)
        assert high == pytest.approx(2.0 + 1.96 / 5)


class TestTrend:
    def _m(self, strategy, index, mean, stddev=0.001, count=1000):
        return Measurement(strategy, count, index, mean, stddev, reps=30)

    def test_growing_offset_flat_keyset(self):
        results = [
            self._m("offset", 0, 0.01),
            self._m("offset", 99, 0.50),
            self._m("keyset", 0, 0.011),
            self._m("keyset", 99, 0.012),
        ]
        report = check_trend(results)
        assert report.offset_grows
        assert report.keyset_flat
        assert report.ok
        text = report.render_text()
        assert "offset" in text and "keyset" in text

    def test_flat_offset_fails(self):
        results = [
            self._m("offset", 0, 0.01),
            self._m("offset", 99, 0.0101),
            self._m("keyset", 0, 0.01),
            self._m("keyset", 99, 0.01),
        ]
        report = check_trend(results)
        assert not report.offset_grows
        assert not report.ok

    def test_growing_keyset_fails(self):
        results = [
            self._m("offset", 0, 0.01),
            self._m("offset", 99, 0.50),
            self._m("keyset", 0, 0.01),
            self._m("keyset", 99, 0.50),
        ]
        report = check_trend(results)
        assert not report.keyset_flat
        assert not report.ok

    def test_keyset_overlap_within_bound(self):
        """Wide CIs that overlap count as flat even when means differ."""
        results = [
            self._m("offset", 0, 0.01),
            self._m("offset", 99, 0.50),
            self._m("keyset", 0, 0.010, stddev=0.02),
            self._m("keyset", 99, 0.015, stddev=0.02),
        ]
        assert check_trend(results).keyset_flat
