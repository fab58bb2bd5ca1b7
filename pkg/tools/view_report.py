"""
Terminal viewer for a pressure-lab output directory and its state logs.

    python tools/view_report.py out/            # manifest, t0, validators
    python tools/view_report.py out/ --watch    # follow the newest state log
"""

import argparse
import json
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd
from rich.console import Console, Group
from rich.live import Live
from rich.panel import Panel
from rich.table import Table


def _fmt(value: Any) -> str:
    if value is None:
        return "N/A"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


class ReportViewer:
    def __init__(self, directory: str = "out", log_dir: str = "debug_logs"):
        self.directory = Path(directory)
        self.log_dir = Path(log_dir)
        self.console = Console()

    def _load(self, name: str) -> Optional[Dict[str, Any]]:
        path = self.directory / name
        if not path.exists():
            return None
        with open(path, 'r') as f:
            return json.load(f)

    def create_manifest_table(self, manifest: Dict[str, Any]) -> Table:
        """Files of the run with their checksums"""
        table = Table(title=f"{manifest['command']} (config {manifest['config_hash'][:12]})")
        table.add_column("File", style="cyan")
        table.add_column("sha256", style="yellow")
        for entry in manifest['files']:
            table.add_row(entry['name'], entry['sha256'][:16])
        return table

    def create_bowen_panel(self, result: Dict[str, Any]) -> Panel:
        lo, hi = result['bracket']
        text = (f"t0 = {result['t0']:.6f}  bracket [{lo:.6f}, {hi:.6f}]\n"
                f"iterations {result['iterations']}, sign ambiguous: {result['sign_ambiguous']}")
        return Panel(text, title="Bowen zero", border_style="green")

    def create_validator_table(self, report: Dict[str, Any]) -> Table:
        """One row per validator with status and headline numbers"""
        table = Table(title=f"Validators (all bounds hold: {report['all_bounds_hold']})")
        table.add_column("Validator", style="magenta")
        table.add_column("Status", style="green")
        table.add_column("Constant", style="blue")
        table.add_column("Holds")
        table.add_column("Detail")

        for name, entry in report['validators'].items():
            body = entry.get('report') or {}
            if entry['status'] != 'ok':
                table.add_row(name, entry['status'], "", "", entry.get('error', ''))
                continue
            constant = body.get('fitted_c', body.get('c'))
            holds = body.get('bound_holds', body.get('scaling_holds', body.get('passed',
                             body.get('all_hold', body.get('monotone')))))
            detail = body.get('verdict') or (f"dim {body['dim']:.3f}" if 'dim' in body else "")
            table.add_row(name, entry['status'], _fmt(constant), _fmt(holds), detail)
        return table

    def create_pressure_table(self, frame: pd.DataFrame) -> Table:
        table = Table(title="Pressure curve")
        for column in ('t', 'pressure', 'error', 'n', 'K'):
            table.add_column(column)
        for _, row in frame.iterrows():
            table.add_row(*(_fmt(row[c]) for c in ('t', 'pressure', 'error', 'n', 'K')))
        return table

    def render(self) -> Group:
        parts: List[Any] = []
        manifest = self._load('manifest.json')
        if manifest is None:
            return Group(Panel(f"No manifest in {self.directory}"))
        parts.append(self.create_manifest_table(manifest))
        bowen = self._load('t0.json')
        if bowen is not None:
            parts.append(self.create_bowen_panel(bowen))
        validators = self._load('validators.json')
        if validators is not None:
            parts.append(self.create_validator_table(validators))
        if (self.directory / 'pressure.csv').exists():
            parts.append(self.create_pressure_table(pd.read_csv(self.directory / 'pressure.csv')))
        return Group(*parts)

    def read_latest_states(self, n: int = 8) -> list:
        """Read the last n entries of the newest state log"""
        logs = sorted(self.log_dir.glob('state_*.log'), key=lambda p: p.stat().st_mtime)
        if not logs:
            return []
        with open(logs[-1], 'r') as f:
            lines = f.readlines()
        return [json.loads(line) for line in lines[-n:]]

    def create_state_table(self, states: list) -> Table:
        table = Table(title="Run state")
        table.add_column("Time", style="cyan")
        table.add_column("Operation", style="magenta")
        table.add_column("Summary", style="yellow")
        for state in states:
            summary = state.get('summary') or {
                k: state[k] for k in ('command', 'config_hash') if k in state}
            table.add_row(state['timestamp'].split('T')[1], state['operation'],
                          json.dumps(summary)[:80])
        return table

    def watch_state(self, refresh_rate: float = 2.0):
        """Follow the newest state log"""
        try:
            with Live(auto_refresh=False) as live:
                while True:
                    live.update(self.create_state_table(self.read_latest_states()))
                    live.refresh()
                    time.sleep(refresh_rate)
        except KeyboardInterrupt:
            self.console.print("\nStopped state monitoring")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Show a pressure-lab output directory")
    parser.add_argument('directory', nargs='?', default='out')
    parser.add_argument('--log-dir', default='debug_logs')
    parser.add_argument('--watch', action='store_true')
    args = parser.parse_args()

    viewer = ReportViewer(args.directory, args.log_dir)
    if args.watch:
        viewer.watch_state()
    else:
        viewer.console.print(viewer.render())
