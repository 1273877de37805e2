"""
Teardown image analysis.

Images are scored by the energy left after a Gaussian high-pass filter on
the centered 2D spectrum; candidate board views are ranked by detected
component count plus normalized spectral energy; a reference component of
known size calibrates pixels to millimeters, and detections become a
component-level inventory skeleton.
"""
from __future__ import annotations

import logging
import subprocess
import threading
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    SerializerFunctionWrapHandler,
    model_serializer,
    model_validator,
)
from scipy import ndimage

from .errors import BackendError, DataValidationError
from .models import DocumentFixture, InventoryEntry
from .serialization import dumps_line, loads

logger = logging.getLogger(__name__)

DEFAULT_CUTOFF = 32.0
MAX_SIDE = 512
ANISOTROPY_WARN = 0.10

ImageSource = Union[str, Path, Image.Image]
BBox = Tuple[int, int, int, int]


class ImageScore(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    doc_id: str
    hf_energy: float = Field(ge=0)
    hf_energy_normalized: float = Field(ge=0, le=1)
    component_count: int = Field(ge=0)
    lambda_energy: float
    combined: float

    @model_validator(mode="after")
    def _check(self) -> "ImageScore":
        expected = self.component_count + self.lambda_energy * self.hf_energy_normalized
        if abs(self.combined - expected) > 1e-9 * max(1.0, abs(expected)):
            raise ValueError(f"combined {self.combined} != count + lambda * energy ({expected})")
        return self


class Detection(BaseModel):
    """A detected part; serialized with the key ``class``"""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    component_class: str = Field(alias="class", min_length=1)
    bbox_px: BBox
    confidence: float = Field(ge=0.0, le=1.0)
    label_text: Optional[str] = None

    @model_validator(mode="after")
    def _check_bbox(self) -> "Detection":
        x, y, w, h = self.bbox_px
        if min(x, y, w, h) < 0:
            raise ValueError(f"bbox {self.bbox_px} has negative components")
        return self

    @model_serializer(mode="wrap")
    def _serialize(self, handler: SerializerFunctionWrapHandler) -> Dict[str, Any]:
        data = handler(self)
        if "component_class" in data:
            data["class"] = data.pop("component_class")
        return data

    def within(self, width: int, height: int) -> bool:
        x, y, w, h = self.bbox_px
        return x + w <= width and y + h <= height


class ScaleReference(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    component_id: str = "reference"
    known_w_mm: float = Field(gt=0)
    known_h_mm: float = Field(gt=0)
    bbox_px: BBox


class ScaleCalibration(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mm_per_px: float = Field(gt=0, allow_inf_nan=False)
    mm_per_px_x: float = Field(gt=0, allow_inf_nan=False)
    mm_per_px_y: float = Field(gt=0, allow_inf_nan=False)
    reference: ScaleReference

    @property
    def anisotropy(self) -> float:
        return abs(self.mm_per_px_x - self.mm_per_px_y) / min(self.mm_per_px_x, self.mm_per_px_y)

    def scaled(self, factor: float) -> "ScaleCalibration":
        return self.model_copy(update={
            'mm_per_px': self.mm_per_px * factor,
            'mm_per_px_x': self.mm_per_px_x * factor,
            'mm_per_px_y': self.mm_per_px_y * factor,
        })


class BoardDimensions(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    w_mm: float
    h_mm: float
    area_mm2: float
    shape: str = "rectangular"


# ---------------------------------------------------------------------------
# Decoding and spectral scoring
# ---------------------------------------------------------------------------


def load_image(source: ImageSource) -> Image.Image:
    if isinstance(source, Image.Image):
        return source
    try:
        with Image.open(source) as img:
            img.load()
            return img.copy()
    except (OSError, UnidentifiedImageError) as exc:
        raise DataValidationError(f"cannot decode image {source}: {exc}", details={'path': str(source)}) from exc


def grayscale_array(source: ImageSource) -> np.ndarray:
    """Float grayscale pixels at native resolution"""
    return np.asarray(load_image(source).convert("L"), dtype=float)


def preprocess(source: ImageSource, max_side: int = MAX_SIDE) -> np.ndarray:
    """Grayscale, resized (bilinear, float) so the longer side is ``max_side``"""
    gray = grayscale_array(source)
    h, w = gray.shape
    if max(h, w) == max_side:
        return gray
    scale = max_side / max(h, w)
    size = (max(1, round(w * scale)), max(1, round(h * scale)))
    resized = Image.fromarray(gray.astype(np.float32), mode="F").resize(size, Image.BILINEAR)
    return np.asarray(resized, dtype=float)


def gaussian_highpass(shape: Tuple[int, int], cutoff: float) -> np.ndarray:
    """H = 1 - exp(-D^2 / (2 c^2)), D in bins from the centered spectrum's DC"""
    if cutoff <= 0:
        raise DataValidationError(f"cutoff must be positive, got {cutoff}")
    h, w = shape
    v = np.arange(h) - h // 2
    u = np.arange(w) - w // 2
    d2 = v[:, None] ** 2 + u[None, :] ** 2
    return 1.0 - np.exp(-d2 / (2.0 * cutoff ** 2))


def hpf_score_array(pixels: np.ndarray, cutoff: float = DEFAULT_CUTOFF) -> float:
    spectrum = np.fft.fftshift(np.fft.fft2(pixels, norm="ortho"))
    filtered = np.abs(spectrum) * gaussian_highpass(pixels.shape, cutoff)
    return float(np.sqrt(np.mean(filtered ** 2)))


def hpf_score(image: ImageSource, cutoff: float = DEFAULT_CUTOFF, max_side: int = MAX_SIDE) -> float:
    """RMS magnitude of the Gaussian high-passed, centered, orthonormal spectrum"""
    return hpf_score_array(preprocess(image, max_side), cutoff)


# ---------------------------------------------------------------------------
# Detectors
# ---------------------------------------------------------------------------


class ComponentDetector(ABC):
    name: str = "base"

    @abstractmethod
    def detect(self, image: ImageSource) -> List[Detection]:
        """Detections in native pixel coordinates; deterministic per input"""


class BlobDetector(ComponentDetector):
    """Classical detector over the spatial high-pass response

    Parts are connected regions where |image - gaussian_blur(image)| exceeds
    max(threshold, sigma_factor * std); enclosed holes are filled. Regions
    whose bounding box covers more than ``max_area_fraction`` of the image
    (board outlines) are discarded before filling. Boxes are tightened to
    the pixels that differ from the surrounding background by at least half
    the peak contrast.
    """

    name = "blob"

    def __init__(self, threshold: float = 12.0, sigma_factor: float = 3.0, min_area: int = 20,
                 blur_sigma: float = 3.0, max_area_fraction: float = 0.25,
                 ic_min_area: int = 600, mechanical_aspect: float = 2.5):
        self.threshold = threshold
        self.sigma_factor = sigma_factor
        self.min_area = min_area
        self.blur_sigma = blur_sigma
        self.max_area_fraction = max_area_fraction
        self.ic_min_area = ic_min_area
        self.mechanical_aspect = mechanical_aspect

    def classify(self, w: int, h: int, area: int) -> str:
        if max(w, h) / max(1, min(w, h)) >= self.mechanical_aspect:
            return "mechanical"
        if area >= self.ic_min_area:
            return "IC"
        return "passive"

    def _mask(self, pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        response = pixels - ndimage.gaussian_filter(pixels, self.blur_sigma)
        level = max(self.threshold, self.sigma_factor * float(response.std()))
        mask = np.abs(response) > level

        labels, _ = ndimage.label(mask)
        limit = self.max_area_fraction * pixels.size
        for i, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            if (sl[0].stop - sl[0].start) * (sl[1].stop - sl[1].start) > limit:
                mask[labels == i] = False
        return ndimage.binary_fill_holes(mask), response, level

    def detect(self, image: ImageSource) -> List[Detection]:
        pixels = grayscale_array(image)
        height, width = pixels.shape
        mask, response, level = self._mask(pixels)
        labels, _ = ndimage.label(mask)

        found = []
        for i, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            y0, y1 = max(0, sl[0].start - 3), min(height, sl[0].stop + 3)
            x0, x1 = max(0, sl[1].start - 3), min(width, sl[1].stop + 3)
            region = labels[y0:y1, x0:x1] == i
            patch = pixels[y0:y1, x0:x1]
            ring = ndimage.binary_dilation(region, iterations=2) & ~region
            background = float(np.median(patch[ring])) if ring.any() else float(np.median(patch[region]))
            contrast = np.abs(patch - background) * region
            peak = float(contrast.max())
            if peak <= 0:
                continue
            core = contrast >= 0.5 * peak
            area = int(core.sum())
            if area < self.min_area:
                continue
            rows, cols = np.flatnonzero(core.any(axis=1)), np.flatnonzero(core.any(axis=0))
            x, y = x0 + int(cols[0]), y0 + int(rows[0])
            w, h = int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1)
            strength = float(np.abs(response[y0:y1, x0:x1][region]).max())
            found.append(Detection(
                component_class=self.classify(w, h, area),
                bbox_px=(x, y, w, h),
                confidence=min(1.0, strength / (4.0 * level)),
            ))
        found.sort(key=lambda d: (d.bbox_px[1], d.bbox_px[0]))
        return found


class SubprocessDetector(ComponentDetector):
    """Adapter for an external detector speaking JSON lines over stdin/stdout

    Request per line: ``{"image_path": ...}``; response per line:
    ``{"detections": [{class, bbox, confidence, label_text}]}``. Calls are
    serialized over one child process.
    """

    name = "subprocess"

    def __init__(self, command: Sequence[str], timeout: float = 30.0):
        if not command:
            raise DataValidationError("subprocess detector needs a command")
        self.command = list(command)
        self.timeout = timeout
        self._proc: Optional[subprocess.Popen] = None
        self._lock = threading.Lock()

    def _ensure(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1,
                )
            except OSError as exc:
                raise BackendError(f"cannot start detector {self.command[0]!r}: {exc}") from exc
        return self._proc

    def detect(self, image: ImageSource) -> List[Detection]:
        if isinstance(image, Image.Image):
            raise DataValidationError("subprocess detector needs an image path")
        with self._lock:
            proc = self._ensure()
            try:
                proc.stdin.write(dumps_line({'image_path': str(image)}).decode() + "\n")  # type: ignore[union-attr]
                proc.stdin.flush()  # type: ignore[union-attr]
                line = proc.stdout.readline()  # type: ignore[union-attr]
            except (OSError, ValueError) as exc:
                raise BackendError(f"detector process failed: {exc}") from exc
        if not line:
            raise BackendError("detector process closed its output")
        try:
            payload = loads(line)
            return [
                Detection(component_class=d['class'], bbox_px=tuple(d['bbox']),
                          confidence=d.get('confidence', 1.0), label_text=d.get('label_text'))
                for d in payload['detections']
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed detector response: {line.strip()[:200]}") from exc

    def close(self) -> None:
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=self.timeout)
            self._proc = None


def detect_in_frame(detector: ComponentDetector, source: ImageSource,
                    image: Optional[Image.Image] = None) -> List[Detection]:
    """Detections of ``source`` whose boxes lie inside the image"""
    image = image if image is not None else load_image(source)
    found = detector.detect(source)
    kept = [d for d in found if d.within(*image.size)]
    if len(kept) < len(found):
        logger.warning("%s detector: dropped %d detection(s) outside the %dx%d image",
                       detector.name, len(found) - len(kept), *image.size)
    return kept


# ---------------------------------------------------------------------------
# Ranking
# ---------------------------------------------------------------------------


class SkippedImage(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    doc_id: str
    reason: str


def rank_board_views(images: Mapping[str, ImageSource], detector: ComponentDetector,
                     lambda_energy: float = 1.0, cutoff: float = DEFAULT_CUTOFF
                     ) -> Tuple[List[ImageScore], List[SkippedImage]]:
    """Order candidate views by component count + lambda * normalized HF energy

    Undecodable images are skipped and reported; the first score is the
    selected board view.
    """
    if not images:
        raise DataValidationError("rank_board_views needs at least one image")

    raw: List[Tuple[str, float, int]] = []
    skipped: List[SkippedImage] = []
    for doc_id in sorted(images):
        try:
            source = load_image(images[doc_id])
            count = len(detect_in_frame(detector, images[doc_id], source))
            raw.append((doc_id, hpf_score(source, cutoff), count))
        except DataValidationError as exc:
            logger.warning("skipping image %s: %s", doc_id, exc.message)
            skipped.append(SkippedImage(doc_id=doc_id, reason=exc.message))

    energies = np.array([e for _, e, _ in raw])
    normalized = np.zeros_like(energies)
    if raw and energies.max() > energies.min():
        normalized = (energies - energies.min()) / (energies.max() - energies.min())
    scores = [
        ImageScore(doc_id=doc_id, hf_energy=energy, hf_energy_normalized=float(norm),
                   component_count=count, lambda_energy=lambda_energy,
                   combined=count + lambda_energy * float(norm))
        for (doc_id, energy, count), norm in zip(raw, normalized)
    ]
    scores.sort(key=lambda s: (-s.combined, s.doc_id))
    return scores, skipped


# ---------------------------------------------------------------------------
# Calibration and dimensions
# ---------------------------------------------------------------------------


def calibrate_scale(ref_known_mm: Tuple[float, float], ref_bbox_px: BBox,
                    component_id: str = "reference") -> ScaleCalibration:
    known_w, known_h = ref_known_mm
    x, y, w, h = ref_bbox_px
    if w <= 0 or h <= 0:
        raise DataValidationError(f"reference bbox {ref_bbox_px} has zero size")
    if known_w <= 0 or known_h <= 0:
        raise DataValidationError(f"reference dimensions {ref_known_mm} must be positive")
    sx, sy = known_w / w, known_h / h
    cal = ScaleCalibration(
        mm_per_px=(sx + sy) / 2.0, mm_per_px_x=sx, mm_per_px_y=sy,
        reference=ScaleReference(component_id=component_id, known_w_mm=known_w, known_h_mm=known_h,
                                 bbox_px=ref_bbox_px),
    )
    if cal.anisotropy > ANISOTROPY_WARN:
        logger.warning("reference %s: axis scales %.4g vs %.4g mm/px differ by %.0f%% (perspective distortion?)",
                       component_id, sx, sy, cal.anisotropy * 100)
    return cal


def board_dimensions(board_bbox_px: BBox, cal: ScaleCalibration) -> BoardDimensions:
    """Rectangular board: w, h and area from the bounding box; L-shapes are overestimated"""
    _, _, w, h = board_bbox_px
    w_mm, h_mm = w * cal.mm_per_px, h * cal.mm_per_px
    return BoardDimensions(w_mm=w_mm, h_mm=h_mm, area_mm2=w_mm * h_mm)


def foreground_bbox(image: ImageSource, tolerance: float = 10.0) -> BBox:
    """Bounding box of the pixels differing from the border's median gray"""
    pixels = grayscale_array(image)
    border = np.concatenate([pixels[0], pixels[-1], pixels[:, 0], pixels[:, -1]])
    mask = np.abs(pixels - float(np.median(border))) > tolerance
    if not mask.any():
        h, w = pixels.shape
        return (0, 0, w, h)
    rows, cols = np.flatnonzero(mask.any(axis=1)), np.flatnonzero(mask.any(axis=0))
    return (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def inventory_from_detections(detections: Sequence[Detection], cal: ScaleCalibration,
                              board_bbox_px: BBox) -> List[InventoryEntry]:
    """One count entry per detection plus one PCB area entry"""
    board = board_dimensions(board_bbox_px, cal)
    entries = [InventoryEntry(
        component_class="PCB",
        description="printed circuit board",
        quantity=board.area_mm2,
        unit="mm2",
        attributes={'w_mm': board.w_mm, 'h_mm': board.h_mm, 'shape': board.shape},
    )]
    for d in detections:
        x, y, w, h = d.bbox_px
        w_mm, h_mm = w * cal.mm_per_px, h * cal.mm_per_px
        entries.append(InventoryEntry(
            component_class=d.component_class,
            description=d.label_text or f"{d.component_class} at {x},{y} px",
            quantity=1.0,
            unit="count",
            attributes={'w_mm': w_mm, 'h_mm': h_mm, 'area_mm2': w_mm * h_mm, 'label_text': d.label_text},
        ))
    return entries


def _reference_calibration(doc: DocumentFixture, detections: Sequence[Detection]) -> Optional[ScaleCalibration]:
    meta = doc.metadata
    known = meta.get('reference_mm')
    if not known:
        return None
    bbox = meta.get('reference_bbox_px')
    if bbox is None and meta.get('reference_label'):
        for d in detections:
            if d.label_text == meta['reference_label']:
                bbox = d.bbox_px
                break
    if bbox is None:
        ics = [d for d in detections if d.component_class == "IC"]
        if not ics:
            return None
        bbox = max(ics, key=lambda d: (d.bbox_px[2] * d.bbox_px[3], -d.bbox_px[1], -d.bbox_px[0])).bbox_px
    return calibrate_scale(tuple(known), tuple(bbox), str(meta.get('reference_label', 'reference')))


def inventory_from_image(doc: DocumentFixture, detector: ComponentDetector) -> List[InventoryEntry]:
    """Decode an image document, detect parts, calibrate from its metadata

    Calibration uses ``reference_mm`` with ``reference_bbox_px``, or the
    detection labelled ``reference_label``, or else the largest IC. The
    board box is ``board_bbox_px`` from metadata or the foreground box.
    Without a usable reference the image contributes nothing.
    """
    if doc.modality != "image":
        raise DataValidationError(f"document {doc.doc_id} is not an image")
    image = load_image(doc.payload)
    detections = detect_in_frame(detector, doc.payload, image)
    cal = _reference_calibration(doc, detections)
    if cal is None:
        logger.warning("image %s has no usable scale reference; no entries emitted", doc.doc_id)
        return []
    board = doc.metadata.get('board_bbox_px') or foreground_bbox(image)
    return inventory_from_detections(detections, cal, tuple(board))


__all__ = [
    "DEFAULT_CUTOFF",
    "ImageScore",
    "Detection",
    "ScaleReference",
    "ScaleCalibration",
    "BoardDimensions",
    "load_image",
    "grayscale_array",
    "preprocess",
    "gaussian_highpass",
    "hpf_score_array",
    "hpf_score",
    "ComponentDetector",
    "BlobDetector",
    "SubprocessDetector",
    "detect_in_frame",
    "SkippedImage",
    "rank_board_views",
    "calibrate_scale",
    "board_dimensions",
    "foreground_bbox",
    "inventory_from_detections",
    "inventory_from_image",
]
