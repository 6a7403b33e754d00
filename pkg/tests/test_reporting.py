"""
Tests for check records and report files.
"""
import os

import pytest

from bvlattice.reporting import (
    ERROR,
    FAIL,
    PASS,
    CheckRecord,
    build_report,
    failed_checks,
    load_report,
    render_markdown,
    summarize,
    write_report,
)


@pytest.fixture
def records():
    return [
        CheckRecord('bv', '△² = 0', 'BV Laplacian is nilpotent', PASS),
        CheckRecord('qme', 'ŝ² = 0', 'nilpotency', FAIL, {'X': 'phi*(2)', 'residual': 'phi(2)'}),
        CheckRecord('rg', 'RG covariance', 'covariance', ERROR, {'error': 'PreconditionError: no'}),
    ]


@pytest.mark.unit
class TestReports:
    """Report layout and persistence."""

    def test_summary(self, records):
        summary = summarize(records)
        assert summary == {'total_checks': 3, 'passed': 1, 'failed': 2, 'success_rate': '33.3%'}

    def test_empty_summary(self):
        assert summarize([])['success_rate'] == '100.0%'

    def test_passing_records_have_no_counterexample(self, records):
        assert 'counterexample' not in records[0].to_dict()
        assert records[1].to_dict()['counterexample']['X'] == 'phi*(2)'

    def test_timestamp_only_in_header(self, records):
        first = build_report(records, {'seed': 0}, timestamp='2024-01-01T00:00:00')
        second = build_report(records, {'seed': 0})
        assert first['checks'] == second['checks']
        assert first['timestamp'] == '2024-01-01T00:00:00'

    def test_failed_checks(self, records):
        report = build_report(records)
        assert [c['status'] for c in failed_checks(report)] == [FAIL, ERROR]

    def test_markdown_lists_counterexamples(self, records):
        text = render_markdown(build_report(records, {'model': 'W5'}))
        assert '| bv | △² = 0 |' in text
        assert '## Counterexamples' in text
        assert '`phi*(2)`' in text
        assert '- model: W5' in text

    def test_write_and_load(self, records, temp_output_dir):
        path = os.path.join(temp_output_dir, 'nested', 'report.json')
        report = build_report(records, {'seed': 3})
        md_path = write_report(report, path)
        assert load_report(path) == report
        assert md_path.endswith('report.md')
        assert os.path.exists(md_path)
