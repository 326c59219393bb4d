"""Convolution window templates over dependency trees and surface order.

Slot codes: a positive integer is a 1-based token index, ROOT_SLOT marks
vertical padding with the ROOT symbol, ZERO_SLOT marks an absent position
(zero vector).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROOT_SLOT = 0
ZERO_SLOT = -1

ANCESTOR = "ancestor"
SIBLING = "sibling"
SEQUENTIAL = "sequential"

# Slot vocabulary for sibling templates: m is the word itself, ls/rs the
# nearest left/right sibling, h the parent, g the grandparent.
_SIB_SLOTS = ("ls", "m", "rs", "h", "g")

DEFAULT_DSL = (
    "anc:3,anc:4,anc:5,"
    "sib:ls-m,sib:m-rs,sib:ls-m-h,sib:m-rs-h,sib:ls-m-rs-h,"
    "seq:3,seq:4,seq:5"
)


@dataclass(frozen=True)
class WindowTemplate:
    name: str
    family: str
    n: int  # slots per window
    slots: tuple[str, ...] = ()  # sibling family only


def ancestor(sentence, i: int, k: int) -> int:
    """k-th ancestor of token i (1-based); ROOT_SLOT once the chain tops out."""
    cur = i
    for _ in range(k):
        if cur == ROOT_SLOT:
            return ROOT_SLOT
        cur = sentence.tokens[cur - 1].head
    return cur


def ancestor_window(sentence, i: int, n: int) -> list[int]:
    """[i, p(i), ..., p^(n-1)(i)] with ROOT padding above the root."""
    return [ancestor(sentence, i, k) for k in range(n)]


def _nearest_siblings(sentence, i: int) -> tuple[int, int]:
    head = sentence.tokens[i - 1].head
    left = ZERO_SLOT
    right = ZERO_SLOT
    for tok in sentence.tokens:
        if tok.index != i and tok.head == head:
            if tok.index < i and (left == ZERO_SLOT or tok.index > left):
                left = tok.index
            if tok.index > i and right == ZERO_SLOT:
                right = tok.index
    return left, right


def sibling_window(sentence, i: int, template: WindowTemplate) -> list[int]:
    """Fill the template's slot list; absent siblings become zero padding."""
    left, right = _nearest_siblings(sentence, i)
    values = {
        "m": i,
        "ls": left,
        "rs": right,
        "h": ancestor(sentence, i, 1),
        "g": ancestor(sentence, i, 2),
    }
    return [values[s] for s in template.slots]


def sequential_window(sentence, i: int, n: int) -> list[int]:
    """Surface window [i .. i+n-1]; positions past the end are zero padding."""
    length = len(sentence.tokens)
    return [i + off if i + off <= length else ZERO_SLOT for off in range(n)]


def extract_windows(sentence, template: WindowTemplate) -> np.ndarray:
    """(sentence length, n) slot-code array, one window per word."""
    length = len(sentence.tokens)
    out = np.empty((length, template.n), dtype=np.int64)
    for i in range(1, length + 1):
        if template.family == ANCESTOR:
            win = ancestor_window(sentence, i, template.n)
        elif template.family == SIBLING:
            win = sibling_window(sentence, i, template)
        elif template.family == SEQUENTIAL:
            win = sequential_window(sentence, i, template.n)
        else:
            raise ValueError(f"unknown template family {template.family!r}")
        out[i - 1] = win
    return out


def parse_template_dsl(dsl: str) -> list[WindowTemplate]:
    """Parse "anc:3,sib:ls-m-h,seq:4" style template lists."""
    templates = []
    for part in dsl.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            kind, arg = part.split(":", 1)
        except ValueError:
            raise ValueError(f"bad template spec {part!r} (expected kind:arg)") from None
        if kind == "anc":
            n = int(arg)
            if n < 1:
                raise ValueError(f"ancestor arity must be >= 1, got {n}")
            templates.append(WindowTemplate(name=part, family=ANCESTOR, n=n))
        elif kind == "seq":
            n = int(arg)
            if n < 1:
                raise ValueError(f"sequential arity must be >= 1, got {n}")
            templates.append(WindowTemplate(name=part, family=SEQUENTIAL, n=n))
        elif kind == "sib":
            slots = tuple(arg.split("-"))
            bad = [s for s in slots if s not in _SIB_SLOTS]
            if bad:
                raise ValueError(f"unknown sibling slots {bad} in {part!r}")
            if "m" not in slots:
                raise ValueError(f"sibling template {part!r} must include m")
            templates.append(
                WindowTemplate(name=part, family=SIBLING, n=len(slots), slots=slots)
            )
        else:
            raise ValueError(f"unknown template kind {kind!r}")
    if not templates:
        raise ValueError("template DSL produced no templates")
    return templates


def default_templates() -> list[WindowTemplate]:
    """3 ancestor + 5 sibling + 3 sequential templates (11 total)."""
    return parse_template_dsl(DEFAULT_DSL)
