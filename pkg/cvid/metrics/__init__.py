"""Quality metrics, bright-channel statistics and metric reports."""

from .bright import (
    BrightChannelConfig,
    Proposition1Result,
    bright_channel,
    bright_channel_histogram,
    count_bright_pixels,
    proposition1_check,
)
from .quality import (
    CedCurve,
    MetricReport,
    MetricRow,
    MetricSettings,
    build_report,
    ced,
    evaluate_pair,
    export_ced,
    psnr,
    ssim,
)

__all__ = [
    "BrightChannelConfig",
    "CedCurve",
    "MetricReport",
    "MetricRow",
    "MetricSettings",
    "Proposition1Result",
    "bright_channel",
    "bright_channel_histogram",
    "build_report",
    "ced",
    "count_bright_pixels",
    "evaluate_pair",
    "export_ced",
    "proposition1_check",
    "psnr",
    "ssim",
]
