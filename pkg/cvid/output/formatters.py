"""
Output formatters for CVID

Every command result is a plain dict payload with a ``kind`` key
("report", "checks", "training" or "derain"); each formatter renders
the kinds it knows: Rich, JSON, Markdown
"""

import json
import math
from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table

from ..utils.console import console as default_console

KINDS = ("report", "checks", "training", "derain")


def _fmt(value: Any, digits: int = 4) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        if math.isnan(value):
            return "n/a"
        return f"{value:.{digits}f}"
    return str(value)


class RichFormatter:
    """Rich console formatter for terminal output"""

    def __init__(self, console: Optional[Console] = None):
        self.console = console or default_console
        self.check_mark = "✓"
        self.cross_mark = "✗"

    def format_output(self, payload: Dict) -> None:
        kind = payload.get("kind")
        if kind == "report":
            self._render_report(payload)
        elif kind == "checks":
            self._render_checks(payload)
        elif kind == "training":
            self._render_training(payload)
        elif kind == "derain":
            self._render_derain(payload)
        else:
            raise ValueError(f"unknown payload kind {kind!r} (choices: {', '.join(KINDS)})")

    def _title(self, text: str, subtitle: str) -> None:
        self.console.print(
            Panel(
                f"[bold #F92672]» {text}[/bold #F92672]",
                title=f"[bold #66D9EF]» {subtitle}[/bold #66D9EF]",
                border_style="#AE81FF",
                expand=False,
                padding=(1, 2),
            )
        )

    def _render_report(self, payload: Dict) -> None:
        rows = payload.get("rows", [])
        self._title(f"{payload.get('count', len(rows))} image pair(s)", "Metric Report")

        table = Table(
            title="[bold #AE81FF]» Per-image metrics[/bold #AE81FF]",
            border_style="#75715E",
            expand=True,
        )
        table.add_column("Image", style="#66D9EF", no_wrap=True)
        table.add_column("PSNR (dB)", style="#E6DB74", justify="right")
        table.add_column("SSIM", style="#E6DB74", justify="right")
        table.add_column("CED μ (R/G/B)", style="#F8F8F2", justify="right")
        table.add_column("Bright px", style="#A6E22E", justify="right")
        for row in rows:
            ced = row.get("ced") or {}
            table.add_row(
                row["image_id"],
                _fmt(row.get("psnr"), 3),
                _fmt(row.get("ssim")),
                " / ".join(_fmt(stats["mean"]) for stats in ced.values()) or "-",
                _fmt(row.get("bright_pixel_count")),
            )
        self.console.print(table)

        aggregate = payload.get("aggregate", {})
        if aggregate:
            summary = Table(
                title="[bold #66D9EF]» Aggregate[/bold #66D9EF]", border_style="#75715E"
            )
            summary.add_column("Metric", style="#F8F8F2", no_wrap=True)
            summary.add_column("Mean", style="#E6DB74", justify="right")
            for key in sorted(aggregate):
                summary.add_row(key, _fmt(aggregate[key], 6))
            self.console.print(summary)

    def _render_checks(self, payload: Dict) -> None:
        checks = payload.get("checks", [])
        failed = [c for c in checks if not c["passed"]]
        status = "all checks passed" if not failed else f"{len(failed)} check(s) failed"
        self._title(status, "Invariant Checks")

        table = Table(border_style="#75715E", expand=True, show_lines=True)
        table.add_column("Check", style="#66D9EF", no_wrap=True)
        table.add_column("Result", justify="center")
        table.add_column("Detail", style="#F8F8F2", overflow="fold")
        table.add_column("Time (s)", style="#E6DB74", justify="right")
        for check in checks:
            result = (
                f"[bold #A6E22E]{self.check_mark} pass[/bold #A6E22E]"
                if check["passed"]
                else f"[bold red]{self.cross_mark} FAIL[/bold red]"
            )
            table.add_row(check["name"], result, check["detail"], f"{check['seconds']:.2f}")
        self.console.print(table)

    def _render_training(self, payload: Dict) -> None:
        self._title(escape(payload.get("checkpoint", "-")), "Training Finished")

        info = Table(title="[bold #66D9EF]» Run[/bold #66D9EF]", border_style="#75715E")
        info.add_column("Property", style="#F8F8F2", no_wrap=True)
        info.add_column("Value", style="#E6DB74")
        for key in ("steps", "epochs", "beta", "lambda", "seed", "log"):
            if key in payload:
                info.add_row(key, _fmt(payload[key]))
        final = payload.get("final_loss") or {}
        for key in ("kl", "rec", "sde", "total"):
            if key in final:
                info.add_row(f"final {key}", _fmt(final[key], 6))
        self.console.print(info)

        epochs = payload.get("epoch_records", [])
        if epochs:
            table = Table(
                title="[bold #AE81FF]» Validation[/bold #AE81FF]", border_style="#75715E"
            )
            table.add_column("Epoch", style="#66D9EF", justify="right")
            table.add_column("Step", justify="right")
            table.add_column("lr", style="#F8F8F2", justify="right")
            table.add_column("PSNR (dB)", style="#E6DB74", justify="right")
            table.add_column("SSIM", style="#E6DB74", justify="right")
            for record in epochs:
                table.add_row(
                    str(record["epoch"]),
                    str(record["step"]),
                    f"{record['lr']:.2e}",
                    _fmt(record["val_psnr"], 3),
                    _fmt(record["val_ssim"]),
                )
            self.console.print(table)

    def _render_derain(self, payload: Dict) -> None:
        outputs = payload.get("outputs", [])
        self._title(f"{len(outputs)} image(s) written", "Deraining")
        for path in outputs:
            self.console.print(f"[#A6E22E]{self.check_mark}[/#A6E22E] {escape(path)}")
        for path, reason in sorted(payload.get("failures", {}).items()):
            self.console.print(f"[bold red]{self.cross_mark}[/bold red] {escape(path)}: {escape(reason)}")
        if payload.get("report"):
            self._render_report(payload["report"])


class JSONFormatter:
    """JSON formatter for machine-readable output"""

    @staticmethod
    def format_output(payload: Dict) -> str:
        return json.dumps(
            JSONFormatter._make_json_serializable(payload),
            indent=2,
            sort_keys=True,
            ensure_ascii=False,
            default=str,
        )

    @staticmethod
    def _make_json_serializable(obj):
        if hasattr(obj, "to_dict"):
            return JSONFormatter._make_json_serializable(obj.to_dict())
        if isinstance(obj, dict):
            return {str(k): JSONFormatter._make_json_serializable(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [JSONFormatter._make_json_serializable(item) for item in obj]
        if isinstance(obj, float) and not math.isfinite(obj):
            return None
        if isinstance(obj, (bool, int, float, str, type(None))):
            return obj
        if hasattr(obj, "tolist"):
            return obj.tolist()
        return str(obj)


class MarkdownFormatter:
    """Markdown formatter for reports pasted into notes and issues"""

    @staticmethod
    def format_output(payload: Dict) -> str:
        kind = payload.get("kind")
        if kind == "report":
            return MarkdownFormatter._report(payload)
        if kind == "checks":
            return MarkdownFormatter._checks(payload)
        if kind == "training":
            return MarkdownFormatter._training(payload)
        if kind == "derain":
            lines = ["# Deraining", ""]
            lines += [f"- `{path}`" for path in payload.get("outputs", [])]
            for path, reason in sorted(payload.get("failures", {}).items()):
                lines.append(f"- **failed** `{path}`: {reason}")
            if payload.get("report"):
                lines += ["", MarkdownFormatter._report(payload["report"])]
            return "\n".join(lines)
        raise ValueError(f"unknown payload kind {kind!r} (choices: {', '.join(KINDS)})")

    @staticmethod
    def _report(payload: Dict) -> str:
        lines = [
            "# Metric Report",
            "",
            "| Image | PSNR (dB) | SSIM | Bright px |",
            "|---|---:|---:|---:|",
        ]
        for row in payload.get("rows", []):
            lines.append(
                f"| {row['image_id']} | {_fmt(row.get('psnr'), 3)} | {_fmt(row.get('ssim'))} "
                f"| {_fmt(row.get('bright_pixel_count'))} |"
            )
        aggregate = payload.get("aggregate", {})
        if aggregate:
            lines += ["", "## Aggregate", ""]
            lines += [f"- **{key}**: {_fmt(aggregate[key], 6)}" for key in sorted(aggregate)]
        return "\n".join(lines)

    @staticmethod
    def _checks(payload: Dict) -> str:
        lines = ["# Invariant Checks", "", "| Check | Result | Detail |", "|---|---|---|"]
        for check in payload.get("checks", []):
            result = "pass" if check["passed"] else "**FAIL**"
            lines.append(f"| {check['name']} | {result} | {check['detail']} |")
        return "\n".join(lines)

    @staticmethod
    def _training(payload: Dict) -> str:
        lines = [
            "# Training",
            "",
            f"- **Checkpoint**: `{payload.get('checkpoint', '-')}`",
            f"- **Steps**: {payload.get('steps', '-')}",
            f"- **β / λ**: {payload.get('beta')} / {payload.get('lambda')}",
        ]
        epochs: List[Dict] = payload.get("epoch_records", [])
        if epochs:
            lines += ["", "| Epoch | Step | PSNR (dB) | SSIM |", "|---:|---:|---:|---:|"]
            for record in epochs:
                lines.append(
                    f"| {record['epoch']} | {record['step']} | {_fmt(record['val_psnr'], 3)} "
                    f"| {_fmt(record['val_ssim'])} |"
                )
        return "\n".join(lines)
