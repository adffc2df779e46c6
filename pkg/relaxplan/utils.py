#!/usr/bin/env python3
# License: BSD-3-Clause

import logging
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

PROB_TOLERANCE = 1e-9
EMPTY_LABEL = "{}"


def popcount(mask: int) -> int:
    """
    Number of set bits of a label or frontier bitmask
    """
    return mask.bit_count()


def mask_from_props(names: Iterable[str], props: Sequence[str]) -> int:
    """
    Convert a collection of proposition names into a bitmask over the ordered
    proposition list `props`
    """
    mask = 0
    for name in names:
        if name not in props:
            raise KeyError(f"Unknown atomic proposition {name!r}")
        mask |= 1 << props.index(name)
    return mask


def props_from_mask(mask: int, props: Sequence[str]) -> list[str]:
    return [p for i, p in enumerate(props) if mask >> i & 1]


def format_label(mask: int, props: Sequence[str]) -> str:
    """
    Human readable label, e.g. 'Base1&Obs' or '{}' for the empty label
    """
    names = props_from_mask(mask, props)
    if not names:
        return EMPTY_LABEL
    return "&".join(names)


def parse_label(text: str, props: Sequence[str]) -> int:
    """
    Inverse of `format_label`
    """
    text = text.strip()
    if text in ("", EMPTY_LABEL):
        return 0
    return mask_from_props([t.strip() for t in text.split("&")], props)


def format_sets(mask: int) -> str:
    """
    Frontier bitmask as a set of accepting-set indices, e.g. '{0,2}'
    """
    return "{" + ",".join(str(i) for i in range(mask.bit_length()) if mask >> i & 1) + "}"

