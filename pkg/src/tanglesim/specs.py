"""Parser for the compact policy / weight grammar used in scenario files.

Examples::

    uniform
    mcmc{0.1}            mcmc{alpha=0.1}
    age{g=exp,beta=2}    age{power,p=3}
    hybrid{mcmc{1},uniform}
    exp{beta=1}          const
"""

from __future__ import annotations

import re

_NAME = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_\-]*)\s*")


class SpecError(ValueError):
    pass


def parse(text: str) -> tuple[str, list, dict]:
    """Split ``name{a,b,k=v}`` into (name, positional, keyword).

    Positional arguments that are themselves specs stay unparsed strings so
    callers can recurse.
    """
    m = _NAME.match(text)
    if not m:
        raise SpecError(f"cannot parse spec {text!r}")
    name = m.group(1).lower()
    rest = text[m.end():].strip()
    if not rest:
        return name, [], {}
    if not (rest.startswith("{") and rest.endswith("}")):
        raise SpecError(f"expected '{{...}}' after {name!r} in {text!r}")
    body = rest[1:-1]
    args, kwargs = [], {}
    for part in _split_top(body, text):
        key, sep, value = part.partition("=")
        if sep and "{" not in key:
            kwargs[key.strip().lower()] = value.strip()
        elif part.strip():
            args.append(part.strip())
    return name, args, kwargs


def _split_top(body: str, text: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in body:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth < 0:
                raise SpecError(f"unbalanced braces in {text!r}")
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise SpecError(f"unbalanced braces in {text!r}")
    parts.append("".join(cur))
    return parts


def to_number(value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise SpecError(f"expected a number, got {value!r}") from None
