"""Line-oriented dataset manifests and prediction export.

A manifest line is an image path followed by 136 comma-separated pixel
coordinates in (v1: TL.x, TL.y, TR.x, TR.y, BL.x, BL.y, BR.x, BR.y, ..., v17)
order, optionally followed by key=value metadata tokens and/or a bare split
tag. Coordinates are stored in raw-image pixels so manifests do not depend on
the working-frame height.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .metrics import CobbAngles
from .shapes import Shape, ShapeKind

NUM_COORDS = 136


class ManifestError(ValueError):
    """Malformed manifest content; the message names the offending line."""


@dataclass
class ManifestEntry:
    image_path: str
    shape: Shape
    split: str | None = None
    metadata: dict[str, str] = field(default_factory=dict)

    def resolve_path(self, base_dir: Path) -> Path:
        p = Path(self.image_path)
        return p if p.is_absolute() else base_dir / p


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    base_dir: Path


def load_manifest(path, check_files: bool = True) -> Manifest:
    """Parse a manifest file; relative image paths resolve against its directory."""
    path = Path(path)
    base_dir = path.parent
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split(",")
        if len(tokens) < 1 + NUM_COORDS:
            raise ManifestError(
                f"{path}:{lineno}: expected {NUM_COORDS} coordinates, got {len(tokens) - 1}"
            )
        image_path = tokens[0]
        try:
            coords = [float(t) for t in tokens[1 : 1 + NUM_COORDS]]
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: bad coordinate value: {exc}") from exc
        split = None
        metadata: dict[str, str] = {}
        for extra in tokens[1 + NUM_COORDS :]:
            extra = extra.strip()
            if not extra:
                continue
            if "=" in extra:
                key, value = extra.split("=", 1)
                metadata[key] = value
            elif split is None:
                split = extra
            else:
                raise ManifestError(f"{path}:{lineno}: multiple split tags")
        try:
            shape = Shape.from_flat(coords, ShapeKind.FULL68)
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from exc
        entry = ManifestEntry(image_path=image_path, shape=shape, split=split, metadata=metadata)
        if check_files and not entry.resolve_path(base_dir).exists():
            raise ManifestError(f"{path}:{lineno}: image file not found: {image_path}")
        entries.append(entry)
    return Manifest(entries=entries, base_dir=base_dir)


def _format_line(image_path: str, shape: Shape, extras: list[str]) -> str:
    coords = ",".join(f"{v:.6f}" for v in shape.flatten())
    tokens = [image_path, coords] + extras
    return ",".join(t for t in tokens if t)


def save_manifest(manifest: Manifest, path) -> None:
    lines = []
    for e in manifest.entries:
        extras = [f"{k}={v}" for k, v in sorted(e.metadata.items())]
        if e.split:
            extras.append(e.split)
        lines.append(_format_line(e.image_path, e.shape, extras))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


@dataclass
class PredictionRecord:
    image_path: str
    shape: Shape
    mse: float | None = None
    cobb: CobbAngles | None = None


def export_predictions(records: list[PredictionRecord], path) -> None:
    """Write predictions in manifest format with MSE/Cobb metadata columns."""
    if not records:
        raise ValueError("no predictions to export")
    lines = []
    for r in records:
        extras = []
        if r.mse is not None:
            extras.append(f"mse={r.mse:.9e}")
        if r.cobb is not None:
            extras.append(f"pt={r.cobb.pt:.6f}")
            extras.append(f"mt={r.cobb.mt:.6f}")
            extras.append(f"tl={r.cobb.tl:.6f}")
        lines.append(_format_line(r.image_path, r.shape, extras))
    Path(path).write_text("\n".join(lines) + "\n")
