"""Templated captions, a word-level tokenizer, and the exact inverse parser.

Captions are fully information-complete: every semantic field of a scene
(including background shade) appears in the surface string, so
parse_caption(caption(s)) == s holds exhaustively. Surface variety comes
from template choice and, in paraphrases, from a fixed synonym table that
the parser canonicalizes before matching.
"""

import numpy as np

from ..errors import SceneError, TulipError
from ..util import rng_from
from .grammar import CELLS, SceneSpec, make_pair, make_single

COUNT_WORDS = {1: "one", 2: "two", 3: "three", 4: "four"}
WORD_COUNTS = {w: n for n, w in COUNT_WORDS.items()}

SHAPE_SINGULAR = {"circle": "circle", "square": "square", "triangle": "triangle"}
SHAPE_PLURAL = {"circle": "circles", "square": "squares", "triangle": "triangles"}
PLURAL_TO_SHAPE = {v: k for k, v in SHAPE_PLURAL.items()}

CELL_WORDS = {0: ("top", "left"), 1: ("top", "right"),
              2: ("bottom", "left"), 3: ("bottom", "right")}
WORDS_CELL = {v: k for k, v in CELL_WORDS.items()}

REL_PHRASE = {
    "left-of": ("to", "the", "left", "of"),
    "right-of": ("to", "the", "right", "of"),
    "above": ("above",),
    "below": ("below",),
}

# synonym -> canonical, applied before parsing
SYNONYMS = {
    "crimson": "red", "scarlet": "red",
    "emerald": "green", "lime": "green",
    "azure": "blue", "cobalt": "blue",
    "golden": "yellow", "amber": "yellow",
    "disc": "circle", "discs": "circles",
    "box": "square", "boxes": "squares",
    "pale": "light", "dim": "dark",
    "backdrop": "background",
    "over": "above", "under": "below",
}
# canonical -> synonym choices, used by the paraphraser
SYNONYM_CHOICES = {}
for syn, canon in SYNONYMS.items():
    SYNONYM_CHOICES.setdefault(canon, []).append(syn)

_CANONICAL = (
    "one", "two", "three", "four",
    "red", "green", "blue", "yellow",
    "circle", "circles", "square", "squares", "triangle", "triangles",
    "top", "bottom", "left", "right",
    "to", "the", "of", "above", "below",
    "in", "has", "there", "is", "are", "on", "a",
    "light", "dark", "background",
)

PAD, START, END, UNK = "<pad>", "<s>", "</s>", "<unk>"


class Vocabulary:
    """Dense word <-> id table over the caption grammar plus specials."""

    def __init__(self):
        self.words = (PAD, START, END, UNK) + _CANONICAL + tuple(sorted(SYNONYMS))
        self.ids = {w: i for i, w in enumerate(self.words)}
        self.pad_id = self.ids[PAD]
        self.start_id = self.ids[START]
        self.end_id = self.ids[END]
        self.unk_id = self.ids[UNK]

    def __len__(self):
        return len(self.words)

    def encode_word(self, word):
        return self.ids.get(word, self.unk_id)

    def decode_id(self, i):
        return self.words[int(i)]

    def encode(self, words, context_length):
        """[<s>] words [</s>] right-padded to context_length."""
        if len(words) + 2 > context_length:
            raise TulipError(
                f"caption of {len(words)} words exceeds context {context_length}")
        ids = np.full(context_length, self.pad_id, dtype=np.int64)
        ids[0] = self.start_id
        for k, w in enumerate(words):
            ids[k + 1] = self.encode_word(w)
        ids[len(words) + 1] = self.end_id
        return ids

    def decode(self, ids):
        """Strip specials and return the word list."""
        out = []
        for i in np.asarray(ids).reshape(-1):
            w = self.words[int(i)]
            if w == END:
                break
            if w in (PAD, START):
                continue
            out.append(w)
        return out


VOCAB = Vocabulary()


def _group_words(group):
    shape = (SHAPE_SINGULAR if group.count == 1 else SHAPE_PLURAL)[group.shape]
    return [COUNT_WORDS[group.count], group.color, shape]


def _be(count):
    return "is" if count == 1 else "are"


def caption(scene, template_seed):
    """Deterministic template fill; returns the canonical word list."""
    rng = rng_from(template_seed)
    suffix = ["on", "a", scene.background, "background"]
    if scene.relation is None:
        g = scene.groups[0]
        row, col = CELL_WORDS[g.cell]
        t = int(rng.integers(3))
        if t == 0:
            words = _group_words(g) + ["in", "the", row, col]
        elif t == 1:
            words = ["the", row, col, "has"] + _group_words(g)
        else:
            words = ["there", _be(g.count)] + _group_words(g) + ["in", "the", row, col]
    else:
        g0, g1 = scene.groups
        rel = list(REL_PHRASE[scene.relation[1]])
        t = int(rng.integers(2))
        words = _group_words(g0) + rel + _group_words(g1)
        if t == 1:
            words = ["there", _be(g0.count)] + words
    return words + suffix


class _Cursor:
    def __init__(self, words):
        self.words = words
        self.pos = 0

    def peek(self):
        return self.words[self.pos] if self.pos < len(self.words) else None

    def take(self):
        w = self.peek()
        self.pos += 1
        return w

    def expect(self, *seq):
        for w in seq:
            if self.take() != w:
                return False
        return True

    def done(self):
        return self.pos == len(self.words)


def _parse_group(cur):
    count = WORD_COUNTS.get(cur.take())
    if count is None:
        return None
    color = cur.take()
    if color not in ("red", "green", "blue", "yellow"):
        return None
    shape_word = cur.take()
    if count == 1:
        if shape_word not in SHAPE_SINGULAR:
            return None
        shape = shape_word
    else:
        shape = PLURAL_TO_SHAPE.get(shape_word)
        if shape is None:
            return None
    return shape, color, count


def _parse_cell(cur):
    if not cur.expect("in", "the"):
        return None
    row, col = cur.take(), cur.take()
    return WORDS_CELL.get((row, col))


def _parse_relation(cur):
    w = cur.take()
    if w == "above":
        return "above"
    if w == "below":
        return "below"
    if w == "to":
        if cur.take() != "the":
            return None
        side = cur.take()
        if side not in ("left", "right") or cur.take() != "of":
            return None
        return f"{side}-of"
    if w in ("left", "right"):
        if cur.take() != "of":
            return None
        return f"{w}-of"
    return None


def parse_caption(tokens):
    """Invert any template; returns the exact SceneSpec or None on no-parse.

    Accepts a word list or an id array (decoded with the default vocab).
    Never guesses: agreement violations, unknown words, or leftover tokens
    all yield None.
    """
    if isinstance(tokens, np.ndarray) or (
            tokens and isinstance(tokens[0], (int, np.integer))):
        tokens = VOCAB.decode(tokens)
    words = [SYNONYMS.get(w, w) for w in tokens]
    if len(words) < 4 or words[-4:-2] != ["on", "a"] or words[-1] != "background":
        return None
    shade = words[-2]
    if shade not in ("light", "dark"):
        return None
    cur = _Cursor(words[:-4])

    be = None
    if cur.peek() == "there":
        cur.take()
        be = cur.take()
        if be not in ("is", "are"):
            return None

    if be is None and cur.peek() == "the":
        cur.take()
        cell = WORDS_CELL.get((cur.take(), cur.take()))
        if cell is None or cur.take() != "has":
            return None
        g = _parse_group(cur)
        if g is None or not cur.done():
            return None
        return _build_single(g, cell, shade)

    g0 = _parse_group(cur)
    if g0 is None:
        return None
    if be is not None and be != _be(g0[2]):
        return None
    if cur.peek() == "in":
        cell = _parse_cell(cur)
        if cell is None or not cur.done():
            return None
        return _build_single(g0, cell, shade)
    kind = _parse_relation(cur)
    if kind is None:
        return None
    g1 = _parse_group(cur)
    if g1 is None or not cur.done():
        return None
    try:
        return make_pair(g0, g1, kind, shade)
    except SceneError:
        return None


def _build_single(g, cell, shade):
    if cell not in CELLS:
        return None
    try:
        return make_single(g[0], g[1], g[2], cell, shade)
    except SceneError:
        return None


def paraphrase_positive(tokens, seed):
    """Re-caption the parsed scene with a different template and controlled
    synonym substitutions; the parse of the output equals the input's."""
    scene = parse_caption(tokens)
    if scene is None:
        raise SceneError("paraphrase_positive: input caption does not parse")
    rng = rng_from(seed)
    words = caption(scene, int(rng.integers(2 ** 31)))
    out = []
    i = 0
    while i < len(words):
        if words[i] == "to" and words[i:i + 2] == ["to", "the"] and \
                i + 3 < len(words) and words[i + 2] in ("left", "right") and \
                words[i + 3] == "of" and rng.random() < 0.5:
            out.extend(words[i + 2:i + 4])  # "to the left of" -> "left of"
            i += 4
            continue
        w = words[i]
        choices = SYNONYM_CHOICES.get(w)
        if choices and rng.random() < 0.35:
            out.append(choices[int(rng.integers(len(choices)))])
        else:
            out.append(w)
        i += 1
    if out == list(tokens):
        return list(tokens)
    return out
