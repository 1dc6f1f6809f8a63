import json
import random
import shlex
import string
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from fixture_sets import render_asts
from umlforge.grammar import Action, Arrow, DiagramAst, DiagramKind, Message, ParticipantDecl, Start, Stop
from umlforge.render import (
    ERROR_PLATE,
    PLATE_GRAY,
    CanvasTooSmall,
    ExternalRenderer,
    ExternalTimeout,
    ExternalUnavailable,
    RasterImage,
    error_plate,
    external_render,
    load_png,
    natural_size,
    render_ast,
    render_candidate,
    to_grayscale,
)

FIXTURES = Path(__file__).parent / "fixtures"


def seq(*body):
    return DiagramAst(DiagramKind.SEQUENCE, tuple(body))


# determinism


def test_render_hashes_are_frozen():
    expected = json.loads((FIXTURES / "render_hashes.json").read_text())
    assert [render_ast(a).digest() for a in render_asts()] == expected


def test_render_is_repeatable():
    ast = seq(ParticipantDecl("A"))
    first, second = render_ast(ast), render_ast(ast)
    assert first == second and first.digest() == second.digest()
    assert first.pixels.dtype == np.uint8 and first.pixels.ndim == 2


def test_single_participant_draws_something():
    img = render_ast(seq(ParticipantDecl("A")))
    assert (img.pixels < 255).any()
    assert (img.pixels == 255).mean() > 0.5


def test_different_labels_give_different_buffers():
    rng = random.Random(31)
    alphabet = string.ascii_letters + string.digits + " _-?"
    for _ in range(100):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12))).strip() or "a"
        b = a
        while b == a:
            b = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12))).strip() or "b"
        draw = lambda label: render_ast(seq(Message("A", "B", Arrow.SOLID, label))).digest()
        assert draw(a) != draw(b), (a, b)


@pytest.mark.parametrize("a, b", [("O", "0"), ("l", "1"), ("I", "l"), ("B", "8"), ("S", "5")])
def test_lookalike_glyphs_differ(a, b):
    draw = lambda label: render_ast(DiagramAst(DiagramKind.ACTIVITY, (Start(), Action(label), Stop())))
    assert draw(a) != draw(b)


def test_arrow_style_changes_pixels():
    solid = render_ast(seq(Message("A", "B", Arrow.SOLID, "m")))
    dashed = render_ast(seq(Message("A", "B", Arrow.DASHED, "m")))
    assert solid != dashed


# canvas


def test_canvas_padding_is_white_and_anchored():
    ast = seq(ParticipantDecl("A"), ParticipantDecl("B"))
    w, h = natural_size(ast)
    natural = render_ast(ast)
    big = render_ast(ast, (w + 40, h + 30))
    assert (big.width, big.height) == (w + 40, h + 30)
    assert np.array_equal(big.pixels[:h, :w], natural.pixels)
    assert (big.pixels[h:, :] == 255).all() and (big.pixels[:, w:] == 255).all()


def test_canvas_too_small():
    ast = seq(ParticipantDecl("A"))
    w, h = natural_size(ast)
    with pytest.raises(CanvasTooSmall):
        render_ast(ast, (w - 1, h))
    with pytest.raises(CanvasTooSmall):
        render_ast(ast, (w, h - 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30))
def test_natural_size_grows_with_messages(n):
    names = ["A", "B", "C"]
    body = [Message(names[i % 3], names[(i + 1) % 3], Arrow.SOLID, f"m{i}") for i in range(n)]
    w1, h1 = natural_size(seq(*body))
    w2, h2 = natural_size(seq(*body, Message("A", "B", Arrow.SOLID, "extra")))
    assert w2 >= w1 and h2 > h1


# candidates and the error plate


def test_render_candidate_ok():
    outcome = render_candidate("@startuml\nA -> B : hello\n@enduml")
    assert outcome.ok and outcome.provenance == "internal"
    assert outcome.image == render_ast(seq(Message("A", "B", Arrow.SOLID, "hello")))


@pytest.mark.parametrize(
    "src",
    [
        "@startuml\nA -> B : hello",
        "@startuml\nalt x\nA -> B\n@enduml",
        "@startuml\nstart\n:a;\n@enduml",
        "@startuml\nclass Foo\n@enduml",
    ],
)
def test_render_candidate_failure_gives_plate(src):
    outcome = render_candidate(src)
    assert not outcome.ok
    assert outcome.image is ERROR_PLATE


def test_error_plate_shape_and_text():
    plate = error_plate()
    assert (plate.width, plate.height) == (512, 512)
    values = set(np.unique(plate.pixels).tolist())
    assert values == {0, PLATE_GRAY}
    ink_rows = np.where((plate.pixels == 0).any(axis=1))[0]
    assert ink_rows.min() > 200 and ink_rows.max() < 312
    assert plate == error_plate()


def test_raster_image_is_read_only_and_validated():
    img = render_ast(seq(ParticipantDecl("A")))
    with pytest.raises(ValueError):
        img.pixels[0, 0] = 1
    with pytest.raises(ValueError):
        RasterImage(np.zeros((2, 2), dtype=np.float64))
    with pytest.raises(ValueError):
        RasterImage(np.zeros((0, 3), dtype=np.uint8))


# PNG


def test_png_round_trip(tmp_path):
    img = render_ast(render_asts()[10])
    img.save_png(tmp_path / "a.png")
    assert load_png(tmp_path / "a.png") == img


def test_grayscale_conversion(tmp_path):
    rgba = np.zeros((2, 3, 4), dtype=np.uint8)
    rgba[0, 0] = (255, 0, 0, 255)
    rgba[0, 1] = (0, 255, 0, 255)
    rgba[0, 2] = (0, 0, 255, 255)
    rgba[1, 0] = (0, 0, 0, 0)  # transparent composites onto white
    rgba[1, 1] = (0, 0, 0, 255)
    rgba[1, 2] = (255, 255, 255, 255)
    gray = to_grayscale(Image.fromarray(rgba, mode="RGBA"))
    assert gray.tolist() == [[76, 150, 29], [255, 0, 255]]
    Image.fromarray(rgba, mode="RGBA").save(tmp_path / "c.png")
    assert load_png(tmp_path / "c.png").pixels.tolist() == gray.tolist()


# external renderer

FAKE_RENDERER = """
import sys
from PIL import Image
src = open(sys.argv[1]).read()
if "fail" in src:
    sys.stderr.write("bad diagram\\n")
    sys.exit(2)
if "hang" in src:
    import time
    time.sleep(10)
Image.new("L", (40, 20), 7).save(sys.argv[2])
"""


@pytest.fixture
def fake_command(tmp_path):
    script = tmp_path / "fake_renderer.py"
    script.write_text(FAKE_RENDERER)
    return f"{shlex.quote(sys.executable)} {shlex.quote(str(script))} {{input}} {{output}}"


def test_external_success(fake_command):
    outcome = external_render("@startuml\nA -> B\n@enduml", fake_command)
    assert outcome.ok and outcome.provenance == "external"
    assert (outcome.image.width, outcome.image.height) == (40, 20)
    assert (outcome.image.pixels == 7).all()


def test_external_failure(fake_command):
    outcome = external_render("fail", fake_command)
    assert not outcome.ok and outcome.provenance == "external"
    assert outcome.image is ERROR_PLATE
    assert "bad diagram" in outcome.error.reason


def test_external_timeout(fake_command):
    with pytest.raises(ExternalTimeout):
        external_render("hang", fake_command, timeout=0.5)


def test_external_missing_binary():
    with pytest.raises(ExternalUnavailable):
        external_render("x", "/nonexistent/plantuml {input} {output}")


def test_external_template_needs_placeholders():
    with pytest.raises(ValueError):
        ExternalRenderer("plantuml {input}")
