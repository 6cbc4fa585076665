"""
Parsers for the transform, split and nu command-line grammars.

Transforms are written in forward application order, e.g.
``Sc(-5,5) R(-5,5) C(5) B(0.01)``. Units: R in degrees, Tu/Tv in pixels,
Sc/Sh/C in percent, B absolute. A single argument ``R(30)`` is shorthand for
``R(-30,30)``.
"""

import logging
import math
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from models.interval import Interval
from models.transforms import Pixelwise, Rotate, Scale, Shear, TransformChain, Translate
from utils.error_handler import IntervalDomainError, SpecSyntaxError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r'([A-Za-z]+)\(([^()]*)\)')
_SEPARATORS = ' \t\n,;'

# grammar name -> divisor from grammar units to internal units
UNIT_DIVISORS = {
    'R': 1.0,
    'Tu': 1.0,
    'Tv': 1.0,
    'Sc': 100.0,
    'Sh': 100.0,
    'C': 100.0,
    'B': 1.0,
}


@dataclass(frozen=True)
class SplitSpec:
    """One split token: either a fixed cell count or a target cell width in grammar units."""
    count: Optional[int] = None
    width: Optional[float] = None

    def resolve(self, param: Interval, unit_scale: float) -> int:
        if self.count is not None:
            return self.count
        span = param.width * unit_scale
        if span == 0.0:
            return 1
        # round first so that 60 / 0.25 does not become 241 through float noise
        return max(1, math.ceil(round(span / self.width, 9)))


def _scan(text: str) -> List[Tuple[str, int]]:
    """Split text into (token, position) pairs on whitespace, commas and semicolons."""
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos] in _SEPARATORS:
            pos += 1
            continue
        match = _TOKEN_RE.match(text, pos)
        if match:
            tokens.append((match.group(0), pos))
            pos = match.end()
            continue
        end = pos
        while end < len(text) and text[end] not in _SEPARATORS:
            end += 1
        tokens.append((text[pos:end], pos))
        pos = end
    return tokens


def _parse_number(raw: str, token: str, position: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise SpecSyntaxError(f"Not a number: {raw.strip()!r}", token, position) from None
    if not math.isfinite(value):
        raise SpecSyntaxError("Values must be finite", token, position)
    return value


def _parse_range(name: str, args: str, token: str, position: int) -> Interval:
    parts = [part for part in args.split(',')]
    if len(parts) == 1:
        radius = _parse_number(parts[0], token, position)
        lo, hi = Interval.symmetric(radius).to_list()
    elif len(parts) == 2:
        lo = _parse_number(parts[0], token, position)
        hi = _parse_number(parts[1], token, position)
    else:
        raise SpecSyntaxError(f"{name} takes one or two arguments", token, position)
    if lo > hi:
        raise SpecSyntaxError(f"Lower bound exceeds upper bound in {name}", token, position)
    divisor = UNIT_DIVISORS[name]
    return Interval(lo / divisor, hi / divisor)


def parse_transforms(text: str) -> TransformChain:
    """
    Parse a transform specification into a TransformChain.

    Adjacent Tu and Tv tokens merge into a single translation. C and B may
    appear anywhere; the pixelwise stage always runs after the affine stages.

    Raises:
        SpecSyntaxError: on unknown names, malformed arguments or duplicates
    """
    affine = []
    pixelwise = {}
    pending_translate = None

    def flush_translate():
        nonlocal pending_translate
        if pending_translate is not None:
            du = pending_translate.get('Tu', Interval(0.0, 0.0))
            dv = pending_translate.get('Tv', Interval(0.0, 0.0))
            affine.append(Translate(du, dv))
            pending_translate = None

    tokens = _scan(text)
    if not tokens:
        raise SpecSyntaxError("Empty transform specification")

    for token, position in tokens:
        match = _TOKEN_RE.fullmatch(token)
        if not match:
            raise SpecSyntaxError("Malformed transform token", token, position)
        name, args = match.group(1), match.group(2)
        if name not in UNIT_DIVISORS:
            raise SpecSyntaxError(f"Unknown transform {name!r}", token, position)
        interval = _parse_range(name, args, token, position)

        if name in ('Tu', 'Tv'):
            if pending_translate is not None and name in pending_translate:
                flush_translate()
            pending_translate = pending_translate or {}
            pending_translate[name] = interval
            continue
        flush_translate()

        if name in ('C', 'B'):
            if name in pixelwise:
                raise SpecSyntaxError(f"{name} given more than once", token, position)
            pixelwise[name] = interval
            continue

        try:
            if name == 'R':
                affine.append(Rotate(interval))
            elif name == 'Sc':
                affine.append(Scale(interval))
            elif name == 'Sh':
                affine.append(Shear(interval))
        except IntervalDomainError as e:
            raise SpecSyntaxError(str(e), token, position) from e
    flush_translate()

    stage = None
    if pixelwise:
        stage = Pixelwise(pixelwise.get('C', Interval(0.0, 0.0)), pixelwise.get('B', Interval(0.0, 0.0)))
    chain = TransformChain(affine=tuple(affine), pixelwise=stage)
    logger.debug(f"Parsed transforms {text!r} -> {chain.describe()}")
    return chain


def parse_splits(text: str) -> List[SplitSpec]:
    """
    Parse split tokens: an integer count (``240``) or a cell width (``w0.25``).

    A single token applies to every parameter.
    """
    specs = []
    tokens = _scan(text)
    if not tokens:
        raise SpecSyntaxError("Empty split specification")
    for token, position in tokens:
        if token.startswith('w'):
            width = _parse_number(token[1:], token, position)
            if width <= 0:
                raise SpecSyntaxError("Split width must be positive", token, position)
            specs.append(SplitSpec(width=width))
            continue
        try:
            count = int(token)
        except ValueError:
            raise SpecSyntaxError("Split count must be an integer or w<width>", token, position) from None
        if count < 1:
            raise SpecSyntaxError("Split count must be at least 1", token, position)
        specs.append(SplitSpec(count=count))
    return specs


def _broadcast(items: Sequence, n_params: int, what: str) -> List:
    if len(items) == 1:
        return list(items) * n_params
    if len(items) != n_params:
        raise SpecSyntaxError(f"Expected 1 or {n_params} {what} values, got {len(items)}")
    return list(items)


def resolve_split_counts(specs: Sequence[SplitSpec], chain: TransformChain) -> List[int]:
    """Per-parameter split counts for a chain."""
    params = chain.parameters()
    specs = _broadcast(specs, len(params), 'split')
    return [spec.resolve(param, scale) for spec, param, scale in zip(specs, params, chain.unit_scales())]


def parse_nu(text: str, chain: TransformChain) -> List[float]:
    """
    Parse per-parameter local ball radii given in grammar units.

    Returns:
        radii in internal units (percent values divided by 100)
    """
    tokens = _scan(text)
    if not tokens:
        raise SpecSyntaxError("Empty nu specification")
    values = []
    for token, position in tokens:
        value = _parse_number(token, token, position)
        if value < 0:
            raise SpecSyntaxError("nu must be nonnegative", token, position)
        values.append(value)
    values = _broadcast(values, len(chain.parameters()), 'nu')
    return [value / scale for value, scale in zip(values, chain.unit_scales())]
