"""
Check reports: one record per identity, written as JSON with a summary
header and rendered as Markdown next to it.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

logger = logging.getLogger(__name__)

PASS = 'pass'
FAIL = 'fail'
ERROR = 'error'


@dataclass
class CheckRecord:
    """Outcome of a single identity check."""

    suite: str
    identity: str
    anchor: str
    status: str
    counterexample: Optional[Dict[str, str]] = None

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        if data['counterexample'] is None:
            del data['counterexample']
        return data


def summarize(records: Sequence[CheckRecord]) -> Dict[str, Any]:
    total = len(records)
    passed = sum(1 for r in records if r.passed)
    rate = (passed / total * 100) if total else 100.0
    return {
        'total_checks': total,
        'passed': passed,
        'failed': total - passed,
        'success_rate': f"{rate:.1f}%",
    }


def build_report(records: Sequence[CheckRecord], config: Optional[Dict[str, Any]] = None,
                 timestamp: Optional[str] = None) -> Dict[str, Any]:
    """
    Assemble the report document.

    Args:
        records: Check outcomes in execution order
        config: Run parameters (model, orders, seed, samples)
        timestamp: ISO timestamp; defaults to now (UTC)

    Returns:
        dict: ``{summary, timestamp, config, checks}``; ``checks`` depends only
        on the inputs of the run
    """
    return {
        'summary': summarize(records),
        'timestamp': timestamp or datetime.utcnow().isoformat(),
        'config': dict(config or {}),
        'checks': [r.to_dict() for r in records],
    }


def render_markdown(report: Dict[str, Any]) -> str:
    summary = report['summary']
    lines = [
        '# Identity check report',
        '',
        f"- Generated: {report['timestamp']}",
    ]
    for key, value in sorted(report.get('config', {}).items()):
        lines.append(f"- {key}: {value}")
    lines += [
        f"- Result: {summary['passed']}/{summary['total_checks']} passed ({summary['success_rate']})",
        '',
        '| Suite | Identity | Anchor | Status |',
        '|---|---|---|---|',
    ]
    for check in report['checks']:
        mark = '✓' if check['status'] == PASS else '✗'
        lines.append(f"| {check['suite']} | {check['identity']} | {check['anchor']} | {mark} {check['status']} |")
    failures = [c for c in report['checks'] if c.get('counterexample')]
    if failures:
        lines += ['', '## Counterexamples']
        for check in failures:
            lines += ['', f"### {check['suite']}: {check['identity']}", '']
            for key, value in check['counterexample'].items():
                lines.append(f"- **{key}**: `{value}`")
    return '\n'.join(lines) + '\n'


def write_report(report: Dict[str, Any], path: str) -> str:
    """
    Write the JSON report and a Markdown rendering beside it.

    Args:
        report: Document from :func:`build_report`
        path: Target JSON path; the Markdown file replaces the extension with ``.md``

    Returns:
        str: Path of the Markdown file
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report, f, indent=2, ensure_ascii=False)
    md_path = os.path.splitext(path)[0] + '.md'
    with open(md_path, 'w', encoding='utf-8') as f:
        f.write(render_markdown(report))
    logger.info(f"Report saved to: {path} (markdown: {md_path})")
    return md_path


def load_report(path: str) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def failed_checks(report: Dict[str, Any]) -> List[Dict[str, Any]]:
    return [c for c in report['checks'] if c['status'] != PASS]
