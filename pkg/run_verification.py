#!/usr/bin/env python3
"""
Run every lab command as one campaign and write a summary report.
"""

import argparse
import os
import sys
sys.path.append('src')

from datetime import datetime
from typing import List, Optional

import pandas as pd
from tqdm import tqdm

from config import COMMANDS, load_run_config
from qr_cli import Report, emit, run, save_plots
from qr_errors import ConfigError, EmitError, QRLabError


def print_header():
    print("\n" + "="*60)
    print("🔬  QUASIREGULAR DYNAMICS LAB  🔬")
    print("     Schroder pairs, linearizers and infinitesimal spaces")
    print("="*60 + "\n")


def create_directories(out_dir: str):
    """Create output directories if they don't exist."""
    for dir_name in (out_dir, os.path.join(out_dir, 'plots')):
        os.makedirs(dir_name, exist_ok=True)
    print("✅ Directory structure created")


def generate_report(reports: List[Report], elapsed: float) -> str:
    """
    Summarize a campaign as markdown.

    Args:
        reports: One Report per command that ran
        elapsed: Wall time in seconds

    Returns:
        Formatted report
    """
    lines = [
        "# Quasiregular Dynamics Lab: Campaign Summary",
        f"Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}",
        f"Wall time: {elapsed:.1f} s",
        "",
        "## Commands",
        "",
        "| command | criteria | failed | status |",
        "|---|---|---|---|",
    ]
    for report in reports:
        status = "✅ pass" if report.passed else "❌ fail"
        lines.append(f"| {report.command} | {len(report.criteria)} | {len(report.failures())} | {status} |")

    failures = [(report.command, c) for report in reports for c in report.failures()]
    if failures:
        lines += ["", "## Failed Criteria", ""]
        for command, criterion in failures:
            lines.append(f"- **{command}** `{criterion.name}`: {criterion.value:.6g} "
                         f"(tolerance {criterion.tolerance:.3g}) {criterion.note}".rstrip())
    return "\n".join(lines)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description='Run the full verification campaign')
    parser.add_argument('--config', default='campaigns/default.toml')
    parser.add_argument('--out', default='results')
    parser.add_argument('--only', nargs='+', choices=COMMANDS, help='subset of commands')
    parser.add_argument('--plots', action='store_true')
    args = parser.parse_args(argv)

    print_header()
    create_directories(args.out)

    commands = args.only or list(COMMANDS)
    reports = []
    started = datetime.now()
    for command in tqdm(commands, desc="Commands"):
        try:
            config = load_run_config(command, args.config, args.out, plots=args.plots)
        except ConfigError as exc:
            print(f"❌ {command}: configuration error: {exc}")
            return 2
        try:
            report = run(command, config)
        except ConfigError as exc:
            print(f"❌ {command}: configuration error: {exc}")
            return 2
        except QRLabError as exc:
            report = Report(command)
            report.fail("command aborted", exc)
        try:
            emit(report, config.fmt, config.out_dir)
            if config.plots:
                save_plots(report, os.path.join(args.out, 'plots'))
        except EmitError as exc:
            print(f"❌ {exc}")
            return 1
        reports.append(report)

    elapsed = (datetime.now() - started).total_seconds()
    summary = pd.DataFrame([
        {'command': r.command, 'criteria': len(r.criteria), 'failed': len(r.failures()), 'passed': r.passed}
        for r in reports
    ])
    summary.to_csv(os.path.join(args.out, 'campaign_summary.csv'), index=False)

    report_text = generate_report(reports, elapsed)
    with open(os.path.join(args.out, 'campaign_report.md'), 'w') as f:
        f.write(report_text)
    print("\n" + report_text)

    print("\n" + "="*60)
    print(f"💾 Results saved to: {args.out}/")
    print("="*60)
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n\n⚠️ Campaign interrupted by user")
        sys.exit(130)
    except Exception as e:
        print(f"\n❌ Error occurred: {e}")
        import traceback
        traceback.print_exc()
        sys.exit(1)
