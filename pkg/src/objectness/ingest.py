"""VOC box annotations, binary PNM images and the toolkit's JSONL records."""

from __future__ import annotations

import json
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .scoring import Box

PathLike = Union[str, Path]


class ParseError(ValueError):
    pass


class DecodeError(ValueError):
    pass


@dataclass
class AnnotationRecord:
    image_id: str
    gt_boxes: list[Box] = field(default_factory=list)

    def __post_init__(self) -> None:
        for b in self.gt_boxes:
            if b.area <= 0:
                raise ValueError(f"annotation for {self.image_id!r} holds empty box {b}")


@dataclass
class ProposalRecord:
    image_id: str
    box: Box
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score):
            raise ValueError(f"proposal score must be finite, got {self.score!r}")


@dataclass
class ObjectRecord:
    image_id: str
    box: Box
    score: float
    rank: int


# -- VOC XML -----------------------------------------------------------------------

_BNDBOX_FIELDS = ("xmin", "ymin", "xmax", "ymax")


def parse_voc_annotation(xml_text: str) -> AnnotationRecord:
    """Read the boxes of a VOC ``<annotation>``; class names are ignored.

    Each ``bndbox`` becomes ``Box(xmin, ymin, xmax - xmin, ymax - ymin)``.
    The image id is the ``<filename>`` without its extension.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}") from exc
    if root.tag != "annotation":
        raise ParseError(f"expected <annotation> root, found <{root.tag}>")
    filename = root.findtext("filename")
    if filename is None or not filename.strip():
        raise ParseError("<annotation> is missing <filename>")
    image_id = Path(filename.strip()).stem
    boxes = []
    for n, obj in enumerate(root.findall("object"), start=1):
        bnd = obj.find("bndbox")
        if bnd is None:
            raise ParseError(f"<object> #{n} has no <bndbox>")
        coords = {}
        for name in _BNDBOX_FIELDS:
            text = bnd.findtext(name)
            if text is None:
                raise ParseError(f"<bndbox> of <object> #{n} is missing <{name}>")
            try:
                coords[name] = int(text.strip())
            except ValueError:
                raise ParseError(f"<{name}> of <object> #{n} is not an integer: {text!r}") from None
        if coords["xmax"] <= coords["xmin"]:
            raise ParseError(f"<object> #{n}: <xmax> {coords['xmax']} must exceed <xmin> {coords['xmin']}")
        if coords["ymax"] <= coords["ymin"]:
            raise ParseError(f"<object> #{n}: <ymax> {coords['ymax']} must exceed <ymin> {coords['ymin']}")
        boxes.append(Box.from_corners(coords["xmin"], coords["ymin"], coords["xmax"], coords["ymax"]))
    return AnnotationRecord(image_id, boxes)


def serialize_voc_annotation(record: AnnotationRecord, extension: str = ".ppm") -> str:
    """Write the supported VOC subset; boxes must have integer corners."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = record.image_id + extension
    for b in record.gt_boxes:
        corners = (b.x, b.y, b.x2, b.y2)
        if any(c != int(c) for c in corners):
            raise ValueError(f"VOC boxes need integer corners, got {b}")
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = "object"
        bnd = ET.SubElement(obj, "bndbox")
        for name, value in zip(_BNDBOX_FIELDS, corners):
            ET.SubElement(bnd, name).text = str(int(value))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


# -- PNM ---------------------------------------------------------------------------

_MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode binary PGM (P5) or PPM (P6) into an HxWxC array scaled to [0, 1]."""
    magic = data[:2]
    if magic not in _MAGIC_CHANNELS:
        raise DecodeError(f"unsupported PNM magic {magic!r}; expected P5 or P6")
    channels = _MAGIC_CHANNELS[magic]
    pos = 2
    header = []
    for name in ("width", "height", "maxval"):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise DecodeError(f"truncated PNM header: missing {name}")
        try:
            header.append(int(m.group(1)))
        except ValueError:
            raise DecodeError(f"PNM {name} is not an integer: {m.group(1)!r}") from None
        pos = m.end()
    width, height, maxval = header
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise DecodeError("PNM header must end with a single whitespace byte")
    pos += 1
    if width < 1 or height < 1:
        raise DecodeError(f"PNM dimensions must be positive, got {width}x{height}")
    if not 1 <= maxval <= 255:
        raise DecodeError(f"PNM maxval {maxval} is outside 1..255")
    expected = width * height * channels
    payload = data[pos:]
    if len(payload) != expected:
        raise DecodeError(f"PNM payload has {len(payload)} bytes, expected {expected}")
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / maxval
    return pixels.reshape(height, width, channels)


def encode_pnm(image: np.ndarray) -> bytes:
    """Encode an HxWx1 or HxWx3 array in [0, 1] as binary PGM/PPM with maxval 255."""
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"expected HxWx1 or HxWx3 image, got {image.shape}")
    h, w, c = image.shape
    magic = b"P5" if c == 1 else b"P6"
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_pnm(path: PathLike) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def write_pnm(path: PathLike, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(image))


# -- JSONL -------------------------------------------------------------------------


def _num(value: float) -> float | int:
    r = round(float(value), 6)
    return int(r) if r == int(r) else r


def _box_dict(b: Box) -> dict:
    return {"x": _num(b.x), "y": _num(b.y), "w": _num(b.w), "h": _num(b.h)}


def proposal_to_json(rec: ProposalRecord) -> dict:
    return {"image": rec.image_id, **_box_dict(rec.box), "score": _num(rec.score)}


def annotation_to_json(rec: AnnotationRecord) -> dict:
    return {"image": rec.image_id, "boxes": [_box_dict(b) for b in rec.gt_boxes]}


def object_to_json(rec: ObjectRecord) -> dict:
    return {"image": rec.image_id, "rank": rec.rank, **_box_dict(rec.box), "score": _num(rec.score)}


def _require(obj: dict, keys: Sequence[str], line: int) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise ParseError(f"line {line}: missing required key(s) {', '.join(missing)}")


def _box_from(obj: dict, line: int) -> Box:
    _require(obj, ("x", "y", "w", "h"), line)
    try:
        return Box(float(obj["x"]), float(obj["y"]), float(obj["w"]), float(obj["h"]))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"line {line}: bad box: {exc}") from exc


def _proposal_from(obj: dict, line: int) -> ProposalRecord:
    _require(obj, ("image", "x", "y", "w", "h", "score"), line)
    try:
        return ProposalRecord(str(obj["image"]), _box_from(obj, line), float(obj["score"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"line {line}: {exc}") from exc


def _annotation_from(obj: dict, line: int) -> AnnotationRecord:
    _require(obj, ("image", "boxes"), line)
    if not isinstance(obj["boxes"], list):
        raise ParseError(f"line {line}: 'boxes' must be a list")
    try:
        return AnnotationRecord(str(obj["image"]), [_box_from(b, line) for b in obj["boxes"]])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"line {line}: {exc}") from exc


def _object_from(obj: dict, line: int) -> ObjectRecord:
    _require(obj, ("image", "rank", "x", "y", "w", "h", "score"), line)
    return ObjectRecord(str(obj["image"]), _box_from(obj, line), float(obj["score"]), int(obj["rank"]))


_READERS = {"proposal": _proposal_from, "annotation": _annotation_from, "object": _object_from}
_WRITERS = {
    ProposalRecord: proposal_to_json,
    AnnotationRecord: annotation_to_json,
    ObjectRecord: object_to_json,
}


def parse_jsonl(text: str, kind: str = "proposal") -> list:
    """Parse JSONL text into records of ``kind`` (proposal, annotation or object)."""
    reader = _READERS[kind]
    records = []
    for n, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {n}: malformed JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise ParseError(f"line {n}: expected a JSON object")
        records.append(reader(obj, n))
    return records


def read_jsonl(path: PathLike, kind: str = "proposal") -> list:
    try:
        return parse_jsonl(Path(path).read_text(), kind)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def dumps_jsonl(records: Iterable) -> str:
    lines = []
    for rec in records:
        lines.append(json.dumps(_WRITERS[type(rec)](rec), separators=(", ", ": ")))
    return "".join(line + "\n" for line in lines)


def write_jsonl(path: PathLike, records: Iterable) -> None:
    Path(path).write_text(dumps_jsonl(records))
