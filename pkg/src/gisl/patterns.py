"""CI-pattern quads and their classification table.

For an ordered pair ``(i, j)`` the quad holds four verdicts::

    t1: I_i vs X_j          t2: I_i vs X_j | X_i
    t3: I_j vs X_i          t4: I_j vs X_i | X_j

(every slot additionally conditions on the selection and on ``cond_used``).
"""

from dataclasses import dataclass, field
from enum import Enum


class Verdict(str, Enum):
    DEP = "dep"
    INDEP = "indep"
    UNUSABLE = "unusable"


class ClassTag(str, Enum):
    CAUSAL = "causal"
    LATENT = "latent"
    SELECTION = "selection"
    CAUSAL_AND_LATENT = "causal_and_latent"
    UNKNOWN = "unknown"
    UNTESTED = "untested"


D, I = Verdict.DEP, Verdict.INDEP


@dataclass(frozen=True)
class PatternQuad:
    pair: tuple
    t1: Verdict
    t2: Verdict
    t3: Verdict
    t4: Verdict
    cond_used: frozenset = frozenset()
    notes: tuple = ()

    @property
    def slots(self):
        return (self.t1, self.t2, self.t3, self.t4)

    @property
    def usable(self):
        return Verdict.UNUSABLE not in self.slots

    def swapped(self):
        """Same quad seen from the pair ``(j, i)``."""
        i, j = self.pair
        return PatternQuad((j, i), self.t3, self.t4, self.t1, self.t2, self.cond_used, self.notes)

    def code(self):
        return "".join({D: "D", I: "I", Verdict.UNUSABLE: "?"}[v] for v in self.slots)

    def to_dict(self):
        return {
            "pair": list(self.pair),
            "slots": [v.value for v in self.slots],
            "cond": sorted(self.cond_used),
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class EdgeClass:
    tag: ClassTag
    direction: tuple = None
    note: str = field(default="", compare=False)

    def __post_init__(self):
        directed = self.tag in (ClassTag.CAUSAL, ClassTag.CAUSAL_AND_LATENT)
        if directed != (self.direction is not None):
            raise ValueError(f"{self.tag.value} edge class {'needs' if directed else 'takes no'} direction")

    def __str__(self):
        if self.direction:
            return f"{self.tag.value}({self.direction[0]}->{self.direction[1]})"
        return self.tag.value

    def to_dict(self):
        return {"tag": self.tag.value, "direction": list(self.direction) if self.direction else None}


_FORWARD = "forward"
_BACKWARD = "backward"

# (t1, t2, t3, t4) -> (tag, orientation relative to the quad's pair)
PATTERN_TABLE = {
    (D, I, I, D): (ClassTag.CAUSAL, _FORWARD),
    (I, D, D, I): (ClassTag.CAUSAL, _BACKWARD),
    (I, D, I, D): (ClassTag.LATENT, None),
    (D, D, D, D): (ClassTag.SELECTION, None),
    (D, D, I, D): (ClassTag.CAUSAL_AND_LATENT, _FORWARD),
    (I, D, D, D): (ClassTag.CAUSAL_AND_LATENT, _BACKWARD),
}


def classify_pattern(quad):
    """Look the quad up in the pattern table; anything else is Unknown."""
    if not quad.usable:
        return EdgeClass(ClassTag.UNKNOWN, note="unusable slot: " + "; ".join(quad.notes))
    hit = PATTERN_TABLE.get(quad.slots)
    if hit is None:
        return EdgeClass(ClassTag.UNKNOWN, note=f"pattern {quad.code()} not in table")
    tag, orientation = hit
    i, j = quad.pair
    if orientation == _FORWARD:
        return EdgeClass(tag, (i, j))
    if orientation == _BACKWARD:
        return EdgeClass(tag, (j, i))
    return EdgeClass(tag)
