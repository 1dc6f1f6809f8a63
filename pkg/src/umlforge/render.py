"""Deterministic grayscale rasterization of diagram ASTs.

Layout arithmetic is integer-only and text comes from the embedded bitmap
font, so a given AST always produces the same pixel buffer.
"""

from __future__ import annotations

import hashlib
import os
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import font
from .grammar import (
    Action,
    Activate,
    AltBlock,
    Arrow,
    Deactivate,
    Decision,
    DiagramAst,
    DiagramKind,
    Fork,
    Message,
    ParseError,
    ParticipantDecl,
    Start,
    Stop,
    parse,
    participants,
    validate,
)

WHITE = 255
INK = 0
FILL = 200
PLATE_GRAY = 128

MARGIN = 16
LANE_WIDTH = 160
ROW_PITCH = 48
HEADER_HEIGHT = 32

PLATE_SIZE = 512
PLATE_TEXT = "SYNTAX ERROR"
PLATE_SCALE = 4


class CanvasTooSmall(ValueError):
    pass


class ExternalUnavailable(RuntimeError):
    pass


class ExternalTimeout(RuntimeError):
    pass


class InvalidDiagram(ParseError):
    """A source that parses but breaks a semantic rule."""


class ExternalRenderError(ParseError):
    """The external renderer rejected a source or produced no image."""


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit grayscale image, row-major, shape ``(height, width)``."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.ndim != 2 or self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be a 2-D uint8 array")
        if self.pixels.shape[0] < 1 or self.pixels.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        self.pixels.setflags(write=False)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def digest(self) -> str:
        """SHA-256 over the dimensions and raw pixel buffer."""
        h = hashlib.sha256(f"{self.width}x{self.height}:".encode())
        h.update(np.ascontiguousarray(self.pixels).tobytes())
        return h.hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def save_png(self, path: str | os.PathLike) -> None:
        Image.fromarray(np.ascontiguousarray(self.pixels), mode="L").save(
            path, format="PNG", optimize=False, compress_level=6
        )


def to_grayscale(img: Image.Image) -> np.ndarray:
    """Convert any PIL image to uint8 luma with integer BT.601 weights."""
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8).copy()
    rgba = np.asarray(img.convert("RGBA"), dtype=np.int64)
    rgb, alpha = rgba[..., :3], rgba[..., 3:4]
    # transparent regions composite onto white
    rgb = (rgb * alpha + 255 * (255 - alpha) + 127) // 255
    luma = (299 * rgb[..., 0] + 587 * rgb[..., 1] + 114 * rgb[..., 2] + 500) // 1000
    return luma.astype(np.uint8)


def load_png(path: str | os.PathLike) -> RasterImage:
    with Image.open(path) as img:
        img.load()
        return RasterImage(to_grayscale(img))


# ---------------------------------------------------------------------------
# Drawing primitives
# ---------------------------------------------------------------------------


class Canvas:
    """Mutable pixel grid with clipped 1-bit drawing operations."""

    def __init__(self, width: int, height: int) -> None:
        self.a = np.full((height, width), WHITE, dtype=np.uint8)

    @property
    def width(self) -> int:
        return self.a.shape[1]

    @property
    def height(self) -> int:
        return self.a.shape[0]

    def fill(self, x0: int, y0: int, x1: int, y1: int, value: int = INK) -> None:
        """Fill the inclusive rectangle (x0, y0)-(x1, y1)."""
        x0, x1 = sorted((x0, x1))
        y0, y1 = sorted((y0, y1))
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, self.width - 1), min(y1, self.height - 1)
        if x0 <= x1 and y0 <= y1:
            self.a[y0:y1 + 1, x0:x1 + 1] = value

    def hline(self, x0: int, x1: int, y: int, dashed: bool = False) -> None:
        x0, x1 = sorted((x0, x1))
        if not dashed:
            self.fill(x0, y, x1, y)
            return
        for x in range(x0, x1 + 1, 8):
            self.fill(x, y, min(x + 4, x1), y)

    def vline(self, x: int, y0: int, y1: int, dashed: bool = False) -> None:
        y0, y1 = sorted((y0, y1))
        if not dashed:
            self.fill(x, y0, x, y1)
            return
        for y in range(y0, y1 + 1, 8):
            self.fill(x, y, x, min(y + 4, y1))

    def rect(self, x0: int, y0: int, x1: int, y1: int) -> None:
        self.hline(x0, x1, y0)
        self.hline(x0, x1, y1)
        self.vline(x0, y0, y1)
        self.vline(x1, y0, y1)

    def round_rect(self, x0: int, y0: int, x1: int, y1: int, r: int = 4) -> None:
        self.hline(x0 + r, x1 - r, y0)
        self.hline(x0 + r, x1 - r, y1)
        self.vline(x0, y0 + r, y1 - r)
        self.vline(x1, y0 + r, y1 - r)
        for i in range(1, r):
            j = r - i
            for px, py in ((x0 + i, y0 + j), (x1 - i, y0 + j), (x0 + i, y1 - j), (x1 - i, y1 - j)):
                self.fill(px, py, px, py)

    def arrowhead(self, x: int, y: int, direction: str) -> None:
        """Filled triangular head whose tip is at (x, y)."""
        for i in range(7):
            half = i // 2
            if direction == "right":
                self.fill(x - i, y - half, x - i, y + half)
            elif direction == "left":
                self.fill(x + i, y - half, x + i, y + half)
            elif direction == "down":
                self.fill(x - half, y - i, x + half, y - i)
            else:
                self.fill(x - half, y + i, x + half, y + i)

    def diamond(self, cx: int, cy: int, r: int) -> None:
        for dy in range(-r, r + 1):
            dx = r - abs(dy)
            self.fill(cx - dx, cy + dy, cx - dx, cy + dy)
            self.fill(cx + dx, cy + dy, cx + dx, cy + dy)

    def disc(self, cx: int, cy: int, r: int, ring: bool = False) -> None:
        y0, y1 = max(cy - r, 0), min(cy + r, self.height - 1)
        x0, x1 = max(cx - r, 0), min(cx + r, self.width - 1)
        if y0 > y1 or x0 > x1:
            return
        yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        mask = d2 <= r * r
        if ring:
            mask &= d2 > (r - 1) * (r - 1)
        self.a[y0:y1 + 1, x0:x1 + 1][mask] = INK

    def text(self, x: int, y: int, text: str, scale: int = 1, value: int = INK) -> None:
        """Draw text with its top-left corner at (x, y)."""
        mask = font.text_mask(text, scale)
        if mask.size == 0:
            return
        h, w = mask.shape
        cx0, cy0 = max(x, 0), max(y, 0)
        cx1, cy1 = min(x + w, self.width), min(y + h, self.height)
        if cx0 >= cx1 or cy0 >= cy1:
            return
        sub = mask[cy0 - y:cy1 - y, cx0 - x:cx1 - x]
        self.a[cy0:cy1, cx0:cx1][sub] = value

    def centered_text(self, cx: int, y: int, text: str) -> None:
        self.text(cx - font.text_width(text) // 2, y, text)


def _fit(text: str, width: int) -> str:
    """Truncate text so that it fits in ``width`` pixels."""
    limit = max((width + 1) // font.ADVANCE, 1)
    if len(text) <= limit:
        return text
    return text[: max(limit - 2, 1)] + ".."


# ---------------------------------------------------------------------------
# Sequence layout
# ---------------------------------------------------------------------------


def _sequence_size(ast: DiagramAst) -> tuple[int, int]:
    rows = 0

    def count(elements) -> None:
        nonlocal rows
        for el in elements:
            if isinstance(el, Message):
                rows += 1
            elif isinstance(el, AltBlock):
                rows += len(el.branches) + 1
                for branch in el.branches:
                    count(branch.elements)

    count(ast.body)
    lanes = max(len(participants(ast)), 1)
    width = 2 * MARGIN + lanes * LANE_WIDTH
    height = 2 * MARGIN + HEADER_HEIGHT + (rows + 1) * ROW_PITCH
    return width, height


def _draw_sequence(ast: DiagramAst, c: Canvas, width: int, height: int) -> None:
    names = participants(ast)
    display = {}
    for el in ast.body:
        if isinstance(el, ParticipantDecl) and el.name not in display:
            display[el.name] = el.display or el.name
    center = {n: MARGIN + i * LANE_WIDTH + LANE_WIDTH // 2 for i, n in enumerate(names)}

    top = MARGIN + HEADER_HEIGHT
    bottom = height - MARGIN - ROW_PITCH // 2

    messages: list[Message | tuple] = []
    bars: list[tuple[int, int, int, int]] = []
    frames: list[tuple] = []
    open_bars: dict[str, list[int]] = {}
    y = top
    last_y = top

    def walk(elements, depth: int) -> None:
        nonlocal y, last_y
        for el in elements:
            if isinstance(el, Message):
                y += ROW_PITCH
                messages.append((el, y))
                last_y = y
            elif isinstance(el, Activate):
                open_bars.setdefault(el.target, []).append(last_y)
            elif isinstance(el, Deactivate):
                stack = open_bars.get(el.target)
                if stack:
                    start = stack.pop()
                    bars.append((center[el.target], len(stack), start, max(last_y, start + 8)))
            elif isinstance(el, AltBlock):
                y += ROW_PITCH
                frame_top = y
                separators = []
                for i, branch in enumerate(el.branches):
                    if i:
                        y += ROW_PITCH
                        separators.append((y, branch.guard))
                    walk(branch.elements, depth + 1)
                y += ROW_PITCH
                frames.append((depth, frame_top, y, el.branches[0].guard, separators))
                last_y = y

    walk(ast.body, 0)

    for name in names:
        cx = center[name]
        c.rect(cx - LANE_WIDTH // 2 + 8, MARGIN, cx + LANE_WIDTH // 2 - 8, top)
        label = _fit(display.get(name, name), LANE_WIDTH - 24)
        c.centered_text(cx, MARGIN + (HEADER_HEIGHT - font.GLYPH_H) // 2, label)
        c.vline(cx, top + 1, bottom, dashed=True)

    for cx, depth, y0, y1 in bars:
        x0 = cx - 4 + 4 * depth
        c.fill(x0, y0, x0 + 8, y1, FILL)
        c.rect(x0, y0, x0 + 8, y1)

    for depth, y0, y1, guard, separators in frames:
        x0 = MARGIN // 2 + 4 * depth
        x1 = width - 1 - MARGIN // 2 - 4 * depth
        c.rect(x0, y0, x1, y1)
        c.rect(x0, y0, x0 + 24, y0 + 12)
        c.text(x0 + 3, y0 + 3, "alt")
        if guard:
            c.text(x0 + 30, y0 + 3, f"[{guard}]")
        for sy, sguard in separators:
            c.hline(x0, x1, sy, dashed=True)
            if sguard:
                c.text(x0 + 6, sy + 3, f"[{sguard}]")

    for msg, my in messages:
        xs, xt = center[msg.source], center[msg.target]
        dashed = msg.arrow is Arrow.DASHED
        if xs == xt:
            loop = xs + 32
            c.hline(xs, loop, my - 8, dashed)
            c.vline(loop, my - 8, my + 8, dashed)
            c.hline(xs, loop, my + 8, dashed)
            c.arrowhead(xs + 1, my + 8, "left")
            c.text(loop + 6, my - 4, msg.label)
            continue
        c.hline(xs, xt, my, dashed)
        c.arrowhead(xt - 1 if xt > xs else xt + 1, my, "right" if xt > xs else "left")
        if msg.label:
            c.centered_text((xs + xt) // 2, my - 11, msg.label)


# ---------------------------------------------------------------------------
# Activity layout
# ---------------------------------------------------------------------------

SLOT = 48
BAR_SLOT = 24
MIN_COLUMN = 64
NODE_H = 24
DIAMOND_R = 12


def _measure_body(body) -> tuple[int, int]:
    width, height = MIN_COLUMN, 0
    for el in body:
        w, h = _measure(el)
        width, height = max(width, w), height + h
    return width, height


def _measure(el) -> tuple[int, int]:
    if isinstance(el, Action):
        return max(MIN_COLUMN, font.text_width(el.label) + 32), SLOT
    if isinstance(el, Decision):
        wt, ht = _measure_body(el.then_body)
        wt = max(wt, font.text_width(el.then_label) + 16)
        if el.else_body is not None:
            we, he = _measure_body(el.else_body)
            we = max(we, font.text_width(el.else_label or "") + 16)
        else:
            we, he = MIN_COLUMN, 0
        width = max(wt + we, 2 * (font.text_width(el.condition) + DIAMOND_R + 8))
        return width, SLOT + max(ht, he) + SLOT
    if isinstance(el, Fork):
        sizes = [_measure_body(b) for b in el.branches] or [(MIN_COLUMN, 0)]
        return sum(w for w, _ in sizes) + 16, BAR_SLOT + max(h for _, h in sizes) + BAR_SLOT
    return MIN_COLUMN, SLOT


def _incoming(c: Canvas, cx: int, y0: int, y1: int) -> None:
    c.vline(cx, y0, y1)
    c.arrowhead(cx, y1, "down")


def _draw_body(c: Canvas, body, x: int, y: int, w: int, open_: bool = True) -> tuple[int, bool]:
    for el in body:
        y, open_ = _draw(c, el, x, y, w, open_)
    return y, open_


def _draw(c: Canvas, el, x: int, y: int, w: int, open_: bool) -> tuple[int, bool]:
    cx = x + w // 2
    if isinstance(el, Start):
        c.disc(cx, y + SLOT // 2, 8)
        c.vline(cx, y + SLOT // 2 + 8, y + SLOT - 1)
        return y + SLOT, True
    if isinstance(el, Stop):
        if open_:
            _incoming(c, cx, y, y + SLOT // 2 - 10)
        c.disc(cx, y + SLOT // 2, 9, ring=True)
        c.disc(cx, y + SLOT // 2, 5)
        return y + SLOT, False
    if isinstance(el, Action):
        top = y + (SLOT - NODE_H) // 2
        half = (font.text_width(el.label) + 16) // 2
        if open_:
            _incoming(c, cx, y, top - 1)
        c.round_rect(cx - half, top, cx + half, top + NODE_H)
        c.centered_text(cx, top + (NODE_H - font.GLYPH_H) // 2 + 1, el.label)
        c.vline(cx, top + NODE_H + 1, y + SLOT - 1)
        return y + SLOT, True
    if isinstance(el, Decision):
        return _draw_decision(c, el, x, y, w, open_)
    if isinstance(el, Fork):
        return _draw_fork(c, el, x, y, w, open_)
    raise TypeError(f"not an activity element: {el!r}")


def _draw_decision(c: Canvas, el: Decision, x: int, y: int, w: int, open_: bool) -> tuple[int, bool]:
    cx = x + w // 2
    mid = y + SLOT // 2
    if open_:
        _incoming(c, cx, y, mid - DIAMOND_R - 1)
    c.diamond(cx, mid, DIAMOND_R)
    c.text(cx + DIAMOND_R + 6, mid - DIAMOND_R - 2, el.condition)

    wt, ht = _measure_body(el.then_body)
    wt = max(wt, font.text_width(el.then_label) + 16)
    if el.else_body is not None:
        we, he = _measure_body(el.else_body)
        we = max(we, font.text_width(el.else_label or "") + 16)
    else:
        we, he = MIN_COLUMN, 0
    spare = w - wt - we
    left_w = wt + spare // 2
    right_w = w - left_w
    cx_t = x + left_w // 2
    cx_e = x + left_w + right_w // 2
    branch_top = y + SLOT
    merge_top = branch_top + max(ht, he)
    merge_mid = merge_top + SLOT // 2

    c.hline(cx_t, cx - DIAMOND_R, mid)
    c.vline(cx_t, mid, branch_top - 1)
    c.text(cx_t + 4, mid + 4, el.then_label)
    c.hline(cx + DIAMOND_R, cx_e, mid)
    c.vline(cx_e, mid, branch_top - 1)
    if el.else_label:
        c.text(cx_e + 4, mid + 4, el.else_label)

    end_t, open_t = _draw_body(c, el.then_body, x, branch_top, left_w)
    if el.else_body is not None:
        end_e, open_e = _draw_body(c, el.else_body, x + left_w, branch_top, right_w)
    else:
        end_e, open_e = branch_top, True

    if not (open_t or open_e):
        return merge_top + SLOT, False
    r = DIAMOND_R - 4
    c.diamond(cx, merge_mid, r)
    if open_t:
        c.vline(cx_t, end_t, merge_mid)
        c.hline(cx_t, cx - r - 1, merge_mid)
    if open_e:
        c.vline(cx_e, end_e, merge_mid)
        c.hline(cx + r + 1, cx_e, merge_mid)
    c.vline(cx, merge_mid + r + 1, merge_top + SLOT - 1)
    return merge_top + SLOT, True


def _draw_fork(c: Canvas, el: Fork, x: int, y: int, w: int, open_: bool) -> tuple[int, bool]:
    cx = x + w // 2
    bar_y = y + BAR_SLOT // 2 - 2
    if open_:
        _incoming(c, cx, y, bar_y - 1)
    c.fill(x + 8, bar_y, x + w - 9, bar_y + 3)
    sizes = [_measure_body(b) for b in el.branches]
    join_top = y + BAR_SLOT + max((h for _, h in sizes), default=0)
    join_y = join_top + BAR_SLOT // 2 - 2
    bx = x + 8
    inner = w - 16
    used = sum(bw for bw, _ in sizes)
    any_open = False
    for i, (branch, (bw, _)) in enumerate(zip(el.branches, sizes)):
        if i == len(sizes) - 1:
            bw = x + 8 + inner - bx
        elif used < inner:
            bw += (inner - used) // len(sizes)
        bcx = bx + bw // 2
        c.vline(bcx, bar_y + 4, y + BAR_SLOT - 1)
        end, open_b = _draw_body(c, branch, bx, y + BAR_SLOT, bw)
        if open_b:
            c.vline(bcx, end, join_y - 1)
            any_open = True
        bx += bw
    c.fill(x + 8, join_y, x + w - 9, join_y + 3)
    c.vline(cx, join_y + 4, join_top + BAR_SLOT - 1)
    return join_top + BAR_SLOT, any_open


def _activity_size(ast: DiagramAst) -> tuple[int, int]:
    w, h = _measure_body(ast.body)
    return w + 2 * MARGIN, h + 2 * MARGIN


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def natural_size(ast: DiagramAst) -> tuple[int, int]:
    """Smallest canvas (width, height) that holds the diagram."""
    if ast.kind is DiagramKind.SEQUENCE:
        return _sequence_size(ast)
    return _activity_size(ast)


def render_ast(ast: DiagramAst, canvas: tuple[int, int] | None = None) -> RasterImage:
    """Rasterize a valid AST.

    Args:
        ast: Diagram to draw.
        canvas: Optional fixed ``(width, height)``. The layout is anchored
            at the top-left, so a larger canvas only adds white padding.

    Raises:
        CanvasTooSmall: ``canvas`` cannot hold the natural layout.
    """
    width, height = natural_size(ast)
    if canvas is not None:
        cw, ch = canvas
        if cw < width or ch < height:
            raise CanvasTooSmall(f"diagram needs {width}x{height}, canvas is {cw}x{ch}")
    c = Canvas(width, height)
    if ast.kind is DiagramKind.SEQUENCE:
        _draw_sequence(ast, c, width, height)
    else:
        w, _ = _measure_body(ast.body)
        _draw_body(c, ast.body, MARGIN, MARGIN, w, open_=False)
    pixels = c.a
    if canvas is not None and (canvas[0], canvas[1]) != (width, height):
        padded = np.full((canvas[1], canvas[0]), WHITE, dtype=np.uint8)
        padded[:height, :width] = pixels
        pixels = padded
    return RasterImage(pixels)


def _make_plate() -> RasterImage:
    c = Canvas(PLATE_SIZE, PLATE_SIZE)
    c.a[:] = PLATE_GRAY
    tw = font.text_width(PLATE_TEXT, PLATE_SCALE)
    th = font.GLYPH_H * PLATE_SCALE
    c.text((PLATE_SIZE - tw) // 2, (PLATE_SIZE - th) // 2, PLATE_TEXT, PLATE_SCALE)
    return RasterImage(c.a)


ERROR_PLATE = _make_plate()


def error_plate() -> RasterImage:
    """Fixed image standing in for a diagram that failed to render."""
    return ERROR_PLATE


@dataclass(frozen=True)
class RenderOutcome:
    """Result of rendering untrusted source.

    ``error`` is None on success. On failure ``image`` is the error plate.
    """

    image: RasterImage
    error: ParseError | None = None
    provenance: str = "internal"

    @property
    def ok(self) -> bool:
        return self.error is None


def render_candidate(src: str) -> RenderOutcome:
    """Parse, validate and render source text; failures yield the error plate."""
    try:
        ast = parse(src)
    except ParseError as exc:
        return RenderOutcome(ERROR_PLATE, exc)
    violations = validate(ast)
    if violations:
        first = violations[0]
        return RenderOutcome(ERROR_PLATE, InvalidDiagram(f"{first.rule} at element {list(first.path)}"))
    return RenderOutcome(render_ast(ast))


class ExternalRenderer:
    """Adapter around an external renderer command such as PlantUML.

    ``command`` is a template containing ``{input}`` and ``{output}``
    placeholders, e.g. ``"sh -c 'plantuml -tpng -pipe < {input} > {output}'"``.
    At most ``max_procs`` subprocesses run at once.
    """

    def __init__(self, command: str, timeout: float = 30.0, max_procs: int = 4) -> None:
        if "{input}" not in command or "{output}" not in command:
            raise ValueError("command template needs {input} and {output} placeholders")
        self.command = command
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_procs)

    def render(self, src: str) -> RenderOutcome:
        with self._slots, tempfile.TemporaryDirectory(prefix="umlforge-") as tmp:
            src_path = Path(tmp, "diagram.puml")
            out_path = Path(tmp, "diagram.png")
            src_path.write_text(src, encoding="utf-8")
            argv = [
                part.replace("{input}", str(src_path)).replace("{output}", str(out_path))
                for part in shlex.split(self.command)
            ]
            try:
                proc = subprocess.run(argv, capture_output=True, timeout=self.timeout, check=False)
            except FileNotFoundError as exc:
                raise ExternalUnavailable(f"renderer not found: {argv[0]}") from exc
            except PermissionError as exc:
                raise ExternalUnavailable(f"renderer not executable: {argv[0]}") from exc
            except subprocess.TimeoutExpired as exc:
                raise ExternalTimeout(f"renderer exceeded {self.timeout}s") from exc
            if proc.returncode != 0:
                reason = proc.stderr.decode("utf-8", "replace").strip() or f"exit status {proc.returncode}"
                return RenderOutcome(ERROR_PLATE, ExternalRenderError(reason), "external")
            try:
                image = load_png(out_path)
            except (OSError, ValueError) as exc:
                return RenderOutcome(ERROR_PLATE, ExternalRenderError(f"undecodable output: {exc}"), "external")
            return RenderOutcome(image, None, "external")


def external_render(src: str, command: str, timeout: float = 30.0) -> RenderOutcome:
    return ExternalRenderer(command, timeout, max_procs=1).render(src)
