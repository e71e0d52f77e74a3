"""A tiny reversible structural-image language ("glyphlang").

Programs are trees of glyph atoms composed with fractions, superscripts and
radicals.  A deterministic rasterizer turns programs into fixed 64x32 binary
bitmaps; a recursive-descent parser inverts the token serialization.  The
pair (parser, renderer) is the compiler that makes transcription reversible:
it supplies both the training data and the reinforcement reward.

Grammar:  E -> atom | frac { E+ } { E+ } | sup { E+ } { E+ } | sqrt { E+ } | E E
"""

import importlib.resources
import random
import re

import numpy as np

from .errors import DimensionMismatch, ParseError, UnknownToken

CANVAS_W = 64
CANVAS_H = 32
ANCHOR = (2, 2)            # top-left corner where layout starts (x, y)
MAX_TOKENS = 16            # longest serialized program the generator emits
MAX_DEPTH = 3

ATOMS = ["a", "b", "c", "d", "e", "f", "g", "h"]
STRUCTURE = ["frac", "sup", "sqrt", "{", "}"]
END = "</s>"
START = "<s>"

# id layout: atoms, structure tokens, END, then START.  The decoder's output
# vocabulary is everything below START (START is only ever fed in, id 14).
TOKENS = ATOMS + STRUCTURE + [END, START]
TOKEN_TO_ID = {name: i for i, name in enumerate(TOKENS)}
ID_TO_TOKEN = dict(enumerate(TOKENS))
END_ID = TOKEN_TO_ID[END]
START_ID = TOKEN_TO_ID[START]
VOCAB_SIZE = len(TOKENS)          # embedding table rows
OUTPUT_VOCAB = START_ID           # distribution support: ids 0 .. END_ID


def tokenize(text):
    """Whitespace-separated token names -> list of ids."""
    ids = []
    for name in text.split():
        if name not in TOKEN_TO_ID:
            raise UnknownToken(name)
        ids.append(TOKEN_TO_ID[name])
    return ids


def token_names(ids):
    out = []
    for i in ids:
        if i not in ID_TO_TOKEN:
            raise UnknownToken(i)
        out.append(ID_TO_TOKEN[i])
    return out


# -- glyph table ---------------------------------------------------------------

GLYPH_W, GLYPH_H = 5, 7


def _load_glyph_table():
    text = importlib.resources.files(__package__).joinpath("glyphs.txt").read_text()
    table = {}
    blocks = re.findall(r"glyph (\w)\n((?:[.#]{5}\n){7})", text)
    for name, body in blocks:
        rows = body.strip().split("\n")
        table[name] = np.array([[1.0 if ch == "#" else 0.0 for ch in row]
                                for row in rows])
    if sorted(table) != ATOMS:
        raise ValueError("glyph table does not cover the atom set")
    return table


GLYPHS = _load_glyph_table()


# -- abstract syntax -----------------------------------------------------------


class Node:
    def __eq__(self, other):
        return type(self) is type(other) and self._key() == other._key()

    def __hash__(self):
        return hash((type(self).__name__, self._key()))

    def __repr__(self):
        return "%s(%s)" % (type(self).__name__, ", ".join(map(repr, self._key())))


class Atom(Node):
    def __init__(self, glyph):
        if glyph not in GLYPHS:
            raise UnknownToken(glyph)
        self.glyph = glyph

    def _key(self):
        return (self.glyph,)


class Row(Node):
    def __init__(self, children):
        self.children = list(children)

    def _key(self):
        return tuple(self.children)


class Frac(Node):
    def __init__(self, numerator, denominator):
        self.numerator = numerator
        self.denominator = denominator

    def _key(self):
        return (self.numerator, self.denominator)


class Sup(Node):
    def __init__(self, base, exponent):
        self.base = base
        self.exponent = exponent

    def _key(self):
        return (self.base, self.exponent)


class Sqrt(Node):
    def __init__(self, child):
        self.child = child

    def _key(self):
        return (self.child,)


def depth(node):
    """Structural nesting depth; a flat row of atoms has depth 1."""
    if isinstance(node, Atom):
        return 1
    if isinstance(node, Row):
        return max(depth(c) for c in node.children)
    if isinstance(node, Frac):
        return 1 + max(depth(node.numerator), depth(node.denominator))
    if isinstance(node, Sup):
        return 1 + max(depth(node.base), depth(node.exponent))
    if isinstance(node, Sqrt):
        return 1 + depth(node.child)
    raise TypeError(node)


def serialize(node):
    """Program -> token ids (inverse of parse on canonical trees)."""
    t = TOKEN_TO_ID
    if isinstance(node, Atom):
        return [t[node.glyph]]
    if isinstance(node, Row):
        out = []
        for c in node.children:
            out.extend(serialize(c))
        return out
    if isinstance(node, Frac):
        return ([t["frac"], t["{"]] + serialize(node.numerator) + [t["}"]]
                + [t["{"]] + serialize(node.denominator) + [t["}"]])
    if isinstance(node, Sup):
        return ([t["sup"], t["{"]] + serialize(node.base) + [t["}"]]
                + [t["{"]] + serialize(node.exponent) + [t["}"]])
    if isinstance(node, Sqrt):
        return [t["sqrt"], t["{"]] + serialize(node.child) + [t["}"]]
    raise TypeError(node)


# -- parser ----------------------------------------------------------------------


class _Parser:
    """Recursive descent over token ids.  Error positions are 0-based; when
    the input ends too early the last existing index is reported."""

    def __init__(self, ids):
        self.ids = list(ids)
        self.pos = 0

    def _fail(self, message):
        pos = min(self.pos, max(len(self.ids) - 1, 0))
        raise ParseError(pos, message)

    def _peek(self):
        return self.ids[self.pos] if self.pos < len(self.ids) else None

    def _expect(self, name):
        tok = self._peek()
        if tok != TOKEN_TO_ID[name]:
            self._fail("expected %r" % name)
        self.pos += 1

    def parse(self):
        node = self._sequence()
        if self.pos != len(self.ids):
            self._fail("trailing input")
        return node

    def _sequence(self):
        items = [self._item()]
        while True:
            tok = self._peek()
            if tok is None or tok == TOKEN_TO_ID["}"]:
                break
            items.append(self._item())
        return items[0] if len(items) == 1 else Row(items)

    def _group(self):
        self._expect("{")
        node = self._sequence()
        self._expect("}")
        return node

    def _item(self):
        tok = self._peek()
        if tok is None:
            self._fail("unexpected end of input")
        name = ID_TO_TOKEN.get(tok)
        if name in GLYPHS:
            self.pos += 1
            return Atom(name)
        if name == "frac":
            self.pos += 1
            return Frac(self._group(), self._group())
        if name == "sup":
            self.pos += 1
            return Sup(self._group(), self._group())
        if name == "sqrt":
            self.pos += 1
            return Sqrt(self._group())
        self._fail("unexpected token %r" % name)


def parse(ids):
    if not ids:
        raise ParseError(0, "empty program")
    return _Parser(ids).parse()


# -- renderer ---------------------------------------------------------------------
#
# Layout produces (width, height) boxes bottom-up, then paints into the canvas
# top-down.  All arithmetic is integral, so renders are bit-identical across
# platforms.

ROW_GAP = 1      # horizontal gap between row children
FRAC_PAD = 1     # bar overhang on each side, and gap above/below the bar
SQRT_HOOK = 3    # width of the radical hook


def _box(node):
    if isinstance(node, Atom):
        return GLYPH_W, GLYPH_H
    if isinstance(node, Row):
        boxes = [_box(c) for c in node.children]
        w = sum(b[0] for b in boxes) + ROW_GAP * (len(boxes) - 1)
        h = max(b[1] for b in boxes)
        return w, h
    if isinstance(node, Frac):
        nw, nh = _box(node.numerator)
        dw, dh = _box(node.denominator)
        return max(nw, dw) + 2 * FRAC_PAD, nh + dh + 2 * FRAC_PAD + 1
    if isinstance(node, Sup):
        bw, bh = _box(node.base)
        ew, eh = _box(node.exponent)
        rise = bh // 2
        return bw + ROW_GAP + ew, max(bh, eh + rise)
    if isinstance(node, Sqrt):
        cw, ch = _box(node.child)
        return SQRT_HOOK + cw, ch + 2
    raise TypeError(node)


def _paint(canvas, node, x, y):
    """Draw node with its box's top-left corner at (x, y)."""
    w, h = _box(node)
    if isinstance(node, Atom):
        canvas[y:y + GLYPH_H, x:x + GLYPH_W] = np.maximum(
            canvas[y:y + GLYPH_H, x:x + GLYPH_W], GLYPHS[node.glyph])
    elif isinstance(node, Row):
        cx = x
        for child in node.children:
            cw, ch = _box(child)
            _paint(canvas, child, cx, y + (h - ch) // 2)
            cx += cw + ROW_GAP
    elif isinstance(node, Frac):
        nw, nh = _box(node.numerator)
        dw, dh = _box(node.denominator)
        bar_y = y + nh + FRAC_PAD
        canvas[bar_y, x:x + w] = 1.0
        _paint(canvas, node.numerator, x + (w - nw) // 2, y)
        _paint(canvas, node.denominator, x + (w - dw) // 2, bar_y + 1 + FRAC_PAD)
    elif isinstance(node, Sup):
        bw, bh = _box(node.base)
        ew, eh = _box(node.exponent)
        rise = bh // 2
        _paint(canvas, node.base, x, y + h - bh)
        _paint(canvas, node.exponent, x + bw + ROW_GAP, y + h - rise - eh)
    elif isinstance(node, Sqrt):
        cw, ch = _box(node.child)
        # overbar, then the hook: short tick at mid height, a descending
        # stroke, and a rising stroke meeting the bar.
        canvas[y, x + SQRT_HOOK - 1:x + w] = 1.0
        mid = y + h // 2
        canvas[mid, x] = 1.0
        for yy in range(mid, y + h):
            canvas[yy, x + 1] = 1.0
        for yy in range(y + 1, y + h):
            canvas[yy, x + 2] = 1.0
        _paint(canvas, node.child, x + SQRT_HOOK, y + 2)
    else:
        raise TypeError(node)


def render(program):
    """Rasterize onto the fixed canvas; raises OverflowError when the layout
    does not fit at the anchor."""
    w, h = _box(program)
    ax, ay = ANCHOR
    if ax + w > CANVAS_W or ay + h > CANVAS_H:
        raise OverflowError("layout %dx%d exceeds canvas" % (w, h))
    canvas = np.zeros((CANVAS_H, CANVAS_W))
    _paint(canvas, program, ax, ay)
    return canvas


# -- random programs ----------------------------------------------------------------

# Element kind weights at depth >= 2; tuned so that well over 20% of depth-3
# programs contain at least one structure token while sequences stay short.
_KIND_WEIGHTS = [("atom", 0.60), ("frac", 0.16), ("sup", 0.12), ("sqrt", 0.12)]


def _sample_element(rng, budget):
    if budget <= 1:
        return Atom(rng.choice(ATOMS))
    r = rng.random()
    acc = 0.0
    kind = "atom"
    for name, weight in _KIND_WEIGHTS:
        acc += weight
        if r < acc:
            kind = name
            break
    if kind == "atom":
        return Atom(rng.choice(ATOMS))
    if kind == "frac":
        return Frac(_sample_group(rng, budget - 1), _sample_group(rng, budget - 1))
    if kind == "sup":
        return Sup(_sample_group(rng, budget - 1), _sample_group(rng, budget - 1))
    return Sqrt(_sample_group(rng, budget - 1))


def _sample_group(rng, budget):
    n = rng.randint(1, 2)
    items = [_sample_element(rng, budget) for _ in range(n)]
    return items[0] if n == 1 else Row(items)


def _sample_program(rng, max_depth):
    n = rng.randint(1, 6) if max_depth == 1 else rng.randint(1, 4)
    items = [_sample_element(rng, max_depth) for _ in range(n)]
    return items[0] if n == 1 else Row(items)


def random_program(rng_seed, max_depth=MAX_DEPTH):
    """Deterministic program sampler: token length <= 16, renders in-canvas.

    Oversized draws are resampled (bounded), then the depth budget shrinks;
    depth 1 with a single atom always fits, so this terminates.
    """
    if not 1 <= max_depth <= MAX_DEPTH:
        raise ValueError("max_depth must be in [1, %d]" % MAX_DEPTH)
    rng = random.Random(rng_seed)
    for budget in range(max_depth, 0, -1):
        for _ in range(64):
            program = _sample_program(rng, budget)
            if len(serialize(program)) > MAX_TOKENS:
                continue
            w, h = _box(program)
            if ANCHOR[0] + w <= CANVAS_W and ANCHOR[1] + h <= CANVAS_H:
                return program
    return Atom(rng.choice(ATOMS))


# -- similarity and reward ------------------------------------------------------------


def pixel_similarity(a, b):
    """Fraction of pixels equal after binarizing both images at 0.5."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionMismatch("images %s vs %s" % (a.shape, b.shape))
    return float(np.mean((a > 0.5) == (b > 0.5)))


def episode_reward(predicted_ids, original):
    """-1 when the token sequence fails to compile, else pixel similarity of
    its re-rendered image against the original."""
    try:
        image = render(parse(list(predicted_ids)))
    except (ParseError, OverflowError, UnknownToken):
        return -1.0
    return pixel_similarity(image, original)


# -- datasets ----------------------------------------------------------------------


def dataset_generate(count, seed, out_dir=None, max_depth=MAX_DEPTH):
    """Sample `count` (image, token ids) pairs; optionally write them to disk
    in the images/NNNNN.pgm + labels.txt layout."""
    if count < 1:
        raise ValueError("count must be >= 1")
    pairs = []
    for i in range(count):
        program = random_program(seed * 1_000_003 + i, max_depth)
        pairs.append((render(program), serialize(program)))
    if out_dir is not None:
        _write_dataset(pairs, out_dir)
    return pairs


def _write_dataset(pairs, out_dir):
    import os

    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    lines = []
    for i, (image, ids) in enumerate(pairs):
        stem = "%05d" % i
        write_pgm(os.path.join(img_dir, stem + ".pgm"), image * 255.0)
        lines.append("%s\t%s\n" % (stem, " ".join(token_names(ids))))
    with open(os.path.join(out_dir, "labels.txt"), "w") as fh:
        fh.writelines(lines)


def load_dataset(data_dir):
    import os

    pairs = []
    with open(os.path.join(data_dir, "labels.txt")) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            stem, names = line.split("\t")
            image = read_pgm(os.path.join(data_dir, "images", stem + ".pgm")) / 255.0
            pairs.append((image, tokenize(names)))
    return pairs


def write_pgm(path, gray):
    """Write a 2-d array of byte values as binary PGM (P5, maxval 255)."""
    gray = np.asarray(gray)
    data = np.clip(np.rint(gray), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(data.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", blob)
    if not m:
        raise ValueError("not a binary PGM: %s" % path)
    w, h, maxval = map(int, m.groups())
    if maxval != 255:
        raise ValueError("unsupported maxval %d" % maxval)
    pixels = np.frombuffer(blob[m.end():m.end() + w * h], dtype=np.uint8)
    return pixels.reshape(h, w).astype(np.float64)
