import csv
import json
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import cv2
import matplotlib
import numpy as np
from PIL import Image
from pydantic import BaseModel

from fraclab import __version__
from fraclab.core.config import settings

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "fraclab"


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def header_line(command: str, params: Dict[str, Any]) -> str:
    """'# fraclab <version> <command> key=value ...' with keys sorted."""
    items = " ".join(f"{key}={_format_value(params[key])}" for key in sorted(params))
    return f"# fraclab {__version__} {command} {items}".rstrip()


def _format_value(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), f".{settings.float_digits}g")
    return str(value)


def round_floats(obj: Any, digits: Optional[int] = None) -> Any:
    """Round every float to ``digits`` significant digits; non-finite floats become None."""
    digits = settings.float_digits if digits is None else digits
    if isinstance(obj, BaseModel):
        return round_floats(obj.model_dump(), digits)
    if isinstance(obj, dict):
        return {str(key): round_floats(value, digits) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(value, digits) for value in obj]
    if isinstance(obj, np.ndarray):
        return round_floats(obj.tolist(), digits)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            return None
        return float(format(value, f".{digits}g"))
    return obj


def write_json(path: str, payload: Any) -> str:
    """UTF-8 JSON with sorted keys and floats rounded for byte-stable output."""
    ensure_dir(os.path.dirname(path) or ".")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(round_floats(payload), fh, sort_keys=True, indent=2, ensure_ascii=False)
        fh.write("\n")
    return path


def write_csv(
    path: str,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    command: str,
    params: Dict[str, Any],
) -> str:
    """Comma-separated table preceded by a '#' line naming the tool version and parameters."""
    ensure_dir(os.path.dirname(path) or ".")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header_line(command, params) + "\n")
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([_format_value(v) for v in row])
    return path


def read_csv(path: str) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def write_line_plot(
    path: str,
    x: np.ndarray,
    series: Dict[str, np.ndarray],
    title: str = "",
    xlabel: str = "x",
    ylabel: str = "",
    markers: bool = False,
) -> str:
    """SVG line plot of one or more series against a shared x axis."""
    ensure_dir(os.path.dirname(path) or ".")
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for label, values in series.items():
        ax.plot(x, values, marker="o" if markers else None, markersize=3, linewidth=1.2, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_heatmap(path: str, values: np.ndarray, max_width: int = 1200, row_height: int = 4) -> str:
    """PNG heatmap of a 2D array (row 0 drawn at the bottom), symmetric colour scale."""
    ensure_dir(os.path.dirname(path) or ".")
    data = np.asarray(values, dtype=float)[::-1]
    bound = float(np.max(np.abs(data))) or 1.0
    scaled = np.clip(np.round(127.5 * (data / bound + 1.0)), 0, 255).astype(np.uint8)
    width = min(max_width, scaled.shape[1])
    height = max(1, scaled.shape[0] * row_height)
    resized = cv2.resize(scaled, (width, height), interpolation=cv2.INTER_AREA)
    coloured = cv2.applyColorMap(resized, cv2.COLORMAP_VIRIDIS)
    Image.fromarray(cv2.cvtColor(coloured, cv2.COLOR_BGR2RGB)).save(path, format="PNG")
    return path
