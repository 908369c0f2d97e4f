"""Built-in benchmark problems with reference solutions and start points."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import MpccProblem, NlpProblem, PrimalDualPoint, parse_model

__all__ = ["RegistryEntry", "REGISTRY_SOURCES", "get_problem", "problem_names", "load_problem"]


@dataclass(frozen=True, eq=False)
class RegistryEntry:
    name: str
    problem: MpccProblem
    reference: PrimalDualPoint
    starts: tuple[tuple[float, ...], ...]
    is_nlp: bool = False
    description: str = ""

    @property
    def nlp(self) -> NlpProblem:
        return self.problem.as_nlp()


REGISTRY_SOURCES = {
    "example51": """
        # corner-turning example with a nearby non-S point at the origin
        var w1, w2;
        minimize w1 + w1^2 + w1^3 + (w2-1)^4 + (w2-1)^2;
        subject to:
          comp w1 , w2;
    """,
    "leyffer": """
        var w1, w2;
        minimize (w1-1)^2 + w2^2 + w2^3;
        subject to:
          comp w1 , w2;
    """,
    "example54": """
        # S-stationary origin with zero biactive multipliers
        var w1, w2;
        minimize w1^4 + w1^2 + w2^4 + w2^2;
        subject to:
          comp w1 , w2;
    """,
    "sqp-weak": """
        var w;
        minimize w^2 + w^4;
        subject to:
          w >= 0;
    """,
    "sqp-strict": """
        var w;
        minimize (w+1)^2 + (w+1)^4;
        subject to:
          w >= 0;
    """,
}

# reference points and multipliers (w, λ, μ, ξ, ν), derived by hand from the stationarity systems
_REFERENCES = {
    "example51": ((0.0, 1.0), (), (), (1.0,), (0.0,)),
    "leyffer": ((1.0, 0.0), (), (), (0.0,), (0.0,)),
    "example54": ((0.0, 0.0), (), (), (0.0,), (0.0,)),
    "sqp-weak": ((0.0,), (), (0.0,), (), ()),
    "sqp-strict": ((0.0,), (), (6.0,), (), ()),
}

_STARTS = {
    "example51": ((2.0, 0.0),),
    "leyffer": ((0.0, 2.0), (0.0, 0.5)),
    "example54": ((0.3, 0.0), (0.0, 0.3)),
    "sqp-weak": ((0.4,),),
    "sqp-strict": ((0.4,),),
}

_DESCRIPTIONS = {
    "example51": "two-variable MPCC whose iterates turn the corner from the w1 axis to the solution (0, 1)",
    "leyffer": "MPCC with an M-stationary origin and minimizer (1, 0)",
    "example54": "MPCC whose S-stationary origin has zero biactive multipliers",
    "sqp-weak": "NLP whose bound is weakly active at the solution",
    "sqp-strict": "NLP whose bound is strictly active at the solution",
}


def problem_names() -> tuple[str, ...]:
    return tuple(REGISTRY_SOURCES)


@lru_cache(maxsize=None)
def get_problem(name: str) -> RegistryEntry:
    if name not in REGISTRY_SOURCES:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(REGISTRY_SOURCES)}")
    p = parse_model(REGISTRY_SOURCES[name], name=name)
    w, lam, mu, xi, nu = _REFERENCES[name]
    ref = PrimalDualPoint(np.array(w), np.array(lam), np.array(mu), np.array(xi), np.array(nu))
    return RegistryEntry(name, p, ref, _STARTS[name], p.m == 0, _DESCRIPTIONS[name])


def load_problem(source: str) -> MpccProblem:
    """A registry name or a path to a model file."""
    if source in REGISTRY_SOURCES:
        return get_problem(source).problem
    with open(source, encoding="utf-8") as fh:
        text = fh.read()
    return parse_model(text, name=source)
