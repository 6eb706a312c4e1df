"""Generative-view provider boundary and the synthetic semantic-edit oracle.

A provider maps (image, caption, seed) to optional positive/negative
image and caption views, each tagged with an edit descriptor. The
in-process synthetic provider recovers the exact scene by parsing the
caption, re-renders it for positives, and renders/captions a single-field
edit for negatives, so every tag is correct by construction. External
providers speak line-delimited JSON over the same record shapes.
"""

import base64
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ProviderError
from ..scenes import (
    caption,
    paraphrase_positive,
    parse_caption,
    positive_image_view,
    random_edit,
    render,
    semantic_edit,
)
from ..util import rng_from, stable_seed


@dataclass
class GecoRequest:
    image: np.ndarray  # (S, S, 3) float32
    words: list        # original caption words
    seed: object


@dataclass
class GecoResponse:
    pos_image: Optional[np.ndarray] = None
    neg_image: Optional[np.ndarray] = None
    pos_words: Optional[list] = None
    neg_words: Optional[list] = None
    edits: dict = field(default_factory=dict)  # view name -> descriptor

    def validate(self, request):
        """A response never marks the unmodified original as negative."""
        if self.neg_words is not None and self.neg_words == list(request.words):
            raise ProviderError("negative caption equals the original")
        if self.neg_image is not None and np.array_equal(
                self.neg_image, np.asarray(request.image)):
            raise ProviderError("negative image equals the original")


class SyntheticSceneProvider:
    """Exact-oracle provider backed by the scene grammar."""

    def __init__(self, render_size=48):
        self.render_size = render_size

    def __call__(self, request):
        scene = parse_caption(request.words)
        if scene is None:
            raise ProviderError(
                f"caption does not parse: {' '.join(request.words)}")
        seed = request.seed
        pos_img = positive_image_view(scene, self.render_size, (seed, "pos-img"))
        img_edit = random_edit(scene, rng_from(seed, "img-edit"))
        neg_scene_img = semantic_edit(scene, img_edit)
        neg_img = render(neg_scene_img, self.render_size, (seed, "neg-img"))
        pos_words = paraphrase_positive(request.words, (seed, "pos-txt"))
        txt_edit = random_edit(scene, rng_from(seed, "txt-edit"))
        neg_scene_txt = semantic_edit(scene, txt_edit)
        neg_words = caption(neg_scene_txt, (seed, "neg-txt"))
        return GecoResponse(
            pos_image=pos_img, neg_image=neg_img,
            pos_words=pos_words, neg_words=neg_words,
            edits={"neg_image": str(img_edit), "neg_caption": str(txt_edit),
                   "pos_image": "re-render", "pos_caption": "paraphrase"})


def geco_augment(request, provider):
    """Run a provider and validate its tags; failures become ProviderError
    so the training loop can drop generated views for that sample."""
    try:
        response = provider(request)
    except ProviderError:
        raise
    except Exception as exc:
        raise ProviderError(f"provider failed: {exc}") from exc
    response.validate(request)
    return response


# --------------------------------------------------------------------------
# line-delimited wire format for external providers
# --------------------------------------------------------------------------

def _img_to_b64(img):
    if img is None:
        return None
    arr = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    header = f"{arr.shape[0]} {arr.shape[1]}".encode()
    return base64.b64encode(header + b"|" + arr.tobytes()).decode("ascii")


def _img_from_b64(text):
    if text is None:
        return None
    raw = base64.b64decode(text)
    header, payload = raw.split(b"|", 1)
    h, w = (int(v) for v in header.split())
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return arr.astype(np.float32) / np.float32(255.0)


def request_to_line(request):
    return json.dumps({
        "image": _img_to_b64(request.image),
        "words": list(request.words),
        "seed": stable_seed(request.seed),
    }, separators=(",", ":"))


def request_from_line(line):
    d = json.loads(line)
    return GecoRequest(image=_img_from_b64(d["image"]), words=d["words"],
                       seed=d["seed"])


def response_to_line(response):
    return json.dumps({
        "pos_image": _img_to_b64(response.pos_image),
        "neg_image": _img_to_b64(response.neg_image),
        "pos_words": response.pos_words,
        "neg_words": response.neg_words,
        "edits": response.edits,
    }, separators=(",", ":"))


def response_from_line(line):
    d = json.loads(line)
    return GecoResponse(
        pos_image=_img_from_b64(d["pos_image"]),
        neg_image=_img_from_b64(d["neg_image"]),
        pos_words=d["pos_words"], neg_words=d["neg_words"],
        edits=d.get("edits", {}))


class WireLoopbackProvider:
    """External-provider stub: round-trips every request and response
    through the wire format around an inner provider."""

    def __init__(self, inner):
        self.inner = inner

    def __call__(self, request):
        req = request_from_line(request_to_line(request))
        resp = self.inner(req)
        return response_from_line(response_to_line(resp))
