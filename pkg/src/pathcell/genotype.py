"""Architecture encoding for the recurrent cell.

A genotype has a macro part (two searched input connections and three
combinator choices) and a micro part (two activation choices and six
link-transform choices). The text encoding is order-fixed and round-trips,
e.g. "inR=OS;inV=ZERO;cS=GATED;cR=GATED;cV=ADD;aS=TANH;aR=IDENTITY;links=WIWIWW".
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum


class Connection(Enum):
    H_PREV = "H"
    OS_OUT = "OS"
    ZERO = "ZERO"
    S_CUR = "S"


class Combinator(Enum):
    ADD = "ADD"
    MUL = "MUL"
    HERMITIAN = "HERMITIAN"
    GATED = "GATED"


class Activation(Enum):
    IDENTITY = "IDENTITY"
    TANH = "TANH"
    SIGMOID = "SIGMOID"


class LinkKind(Enum):
    WEIGHT = "W"
    IDENTITY = "I"


CONNECTIONS = tuple(Connection)
COMBINATORS = tuple(Combinator)
ACTIVATIONS = tuple(Activation)
LINK_KINDS = tuple(LinkKind)

# Link transform order: (h_prev -> Os), (s_t -> Os), (first input -> Or),
# (r_t -> Or), (first input -> Ov), (Or -> Ov).
N_LINKS = 6


@dataclass(frozen=True)
class MacroGenotype:
    in_r: Connection
    in_v: Connection
    comb_s: Combinator
    comb_r: Combinator
    comb_v: Combinator


@dataclass(frozen=True)
class MicroGenotype:
    act_s: Activation
    act_r: Activation
    links: tuple[LinkKind, ...]

    def __post_init__(self):
        if len(self.links) != N_LINKS:
            raise ValueError(f"expected {N_LINKS} link transforms, "
                             f"got {len(self.links)}")


@dataclass(frozen=True)
class Genotype:
    macro: MacroGenotype
    micro: MicroGenotype

    def encode(self) -> str:
        m, u = self.macro, self.micro
        links = "".join(k.value for k in u.links)
        return (f"inR={m.in_r.value};inV={m.in_v.value};"
                f"cS={m.comb_s.value};cR={m.comb_r.value};cV={m.comb_v.value};"
                f"aS={u.act_s.value};aR={u.act_r.value};links={links}")

    def __str__(self) -> str:
        return self.encode()


def decode(text: str) -> Genotype:
    fields = {}
    for part in text.strip().split(";"):
        if "=" not in part:
            raise ValueError(f"bad genotype field {part!r} in {text!r}")
        k, v = part.split("=", 1)
        fields[k] = v
    try:
        macro = MacroGenotype(
            in_r=Connection(fields["inR"]), in_v=Connection(fields["inV"]),
            comb_s=Combinator(fields["cS"]), comb_r=Combinator(fields["cR"]),
            comb_v=Combinator(fields["cV"]))
        links = tuple(LinkKind(c) for c in fields["links"])
        micro = MicroGenotype(act_s=Activation(fields["aS"]),
                              act_r=Activation(fields["aR"]), links=links)
    except (KeyError, ValueError) as exc:
        raise ValueError(f"cannot decode genotype {text!r}: {exc}") from exc
    return Genotype(macro=macro, micro=micro)


# Component layout shared with the search controller: name, category tuple,
# and whether the component belongs to the macro or micro part.
MACRO_COMPONENTS = (
    ("in_r", CONNECTIONS),
    ("in_v", CONNECTIONS),
    ("comb_s", COMBINATORS),
    ("comb_r", COMBINATORS),
    ("comb_v", COMBINATORS),
)
MICRO_COMPONENTS = (
    ("act_s", ACTIVATIONS),
    ("act_r", ACTIVATIONS),
) + tuple((f"link{i + 1}", LINK_KINDS) for i in range(N_LINKS))
ALL_COMPONENTS = MACRO_COMPONENTS + MICRO_COMPONENTS


def from_choices(macro_idx: tuple[int, ...], micro_idx: tuple[int, ...]) -> Genotype:
    """Build a genotype from per-component category indexes."""
    m = [cats[i] for (_, cats), i in zip(MACRO_COMPONENTS, macro_idx)]
    u = [cats[i] for (_, cats), i in zip(MICRO_COMPONENTS, micro_idx)]
    macro = MacroGenotype(in_r=m[0], in_v=m[1], comb_s=m[2], comb_r=m[3],
                          comb_v=m[4])
    micro = MicroGenotype(act_s=u[0], act_r=u[1], links=tuple(u[2:]))
    return Genotype(macro=macro, micro=micro)


def to_choices(g: Genotype) -> tuple[tuple[int, ...], tuple[int, ...]]:
    macro_idx = (CONNECTIONS.index(g.macro.in_r), CONNECTIONS.index(g.macro.in_v),
                 COMBINATORS.index(g.macro.comb_s),
                 COMBINATORS.index(g.macro.comb_r),
                 COMBINATORS.index(g.macro.comb_v))
    micro_idx = (ACTIVATIONS.index(g.micro.act_s),
                 ACTIVATIONS.index(g.micro.act_r)) + tuple(
        LINK_KINDS.index(k) for k in g.micro.links)
    return macro_idx, micro_idx


def enumerate_space(space: str = "full"):
    """Iterate genotype parts: 1024 macro / 576 micro / 589824 full."""
    if space == "macro":
        for inr, inv, cs, cr, cv in itertools.product(
                CONNECTIONS, CONNECTIONS, COMBINATORS, COMBINATORS, COMBINATORS):
            yield MacroGenotype(inr, inv, cs, cr, cv)
    elif space == "micro":
        for acts, actr, *links in itertools.product(
                ACTIVATIONS, ACTIVATIONS, *([LINK_KINDS] * N_LINKS)):
            yield MicroGenotype(acts, actr, tuple(links))
    elif space == "full":
        for macro in enumerate_space("macro"):
            for micro in enumerate_space("micro"):
                yield Genotype(macro, micro)
    else:
        raise ValueError(f"unknown space {space!r}")


DEFAULT_MICRO = MicroGenotype(act_s=Activation.IDENTITY,
                              act_r=Activation.IDENTITY,
                              links=(LinkKind.IDENTITY,) * N_LINKS)


def presets(name: str) -> Genotype:
    """Named cells reproducing the classic unit functions."""
    C, K, A, L = Connection, Combinator, Activation, LinkKind
    identity_links = (L.IDENTITY,) * N_LINKS
    table = {
        # v_t = s_t + r_t
        "transe": (MacroGenotype(C.S_CUR, C.ZERO, K.ADD, K.ADD, K.ADD),
                   DEFAULT_MICRO),
        # v_t = s_t (x) r_t
        "complex": (MacroGenotype(C.S_CUR, C.ZERO, K.ADD, K.HERMITIAN, K.ADD),
                    DEFAULT_MICRO),
        # h_t = h_{t-1} + r_t, v_t = h_t
        "ptranse_add": (MacroGenotype(C.H_PREV, C.ZERO, K.ADD, K.ADD, K.ADD),
                        DEFAULT_MICRO),
        # h_t = h_{t-1} * r_t, v_t = h_t
        "ptranse_mul": (MacroGenotype(C.H_PREV, C.ZERO, K.ADD, K.MUL, K.ADD),
                        DEFAULT_MICRO),
        # Os = h_{t-1} + s_t, h_t = gated(Os, r_t), v_t = h_t
        "chains": (MacroGenotype(C.OS_OUT, C.ZERO, K.ADD, K.GATED, K.ADD),
                   DEFAULT_MICRO),
        # Os = gated(h_{t-1}, s_t), h_t = gated(Os, r_t), v_t = W5 s_t + W6 h_t
        "rsn": (MacroGenotype(C.OS_OUT, C.S_CUR, K.GATED, K.GATED, K.ADD),
                MicroGenotype(A.IDENTITY, A.IDENTITY,
                              (L.IDENTITY, L.IDENTITY, L.IDENTITY, L.IDENTITY,
                               L.WEIGHT, L.WEIGHT))),
    }
    if name not in table:
        raise KeyError(f"unknown preset {name!r}; choose from "
                       f"{sorted(table)}")
    macro, micro = table[name]
    return Genotype(macro, micro)


def resolve(text_or_preset: str) -> Genotype:
    """Accept either a preset name or a full genotype string."""
    try:
        return presets(text_or_preset)
    except KeyError:
        return decode(text_or_preset)


def subspace_mask(name: str):
    """Predicates over MacroGenotype reconstructing the four study subspaces.

    P1: no recurrent dependence (neither searched input reads h or Os).
    P2: the hidden state enters only through Os.
    P3: relation-only recurrence (Or reads h directly; s_t unused downstream).
    P4: entity-and-relation recurrence (Os over (h, s_t) feeds Or).
    """
    C = Connection
    non_recurrent = (C.ZERO, C.S_CUR)

    def p1(m: MacroGenotype) -> bool:
        return m.in_r in non_recurrent and m.in_v in non_recurrent

    def p2(m: MacroGenotype) -> bool:
        return (m.in_r != C.H_PREV and m.in_v != C.H_PREV
                and (m.in_r == C.OS_OUT or m.in_v == C.OS_OUT))

    def p3(m: MacroGenotype) -> bool:
        return m.in_r == C.H_PREV and m.in_v in (C.ZERO, C.H_PREV)

    def p4(m: MacroGenotype) -> bool:
        return m.in_r == C.OS_OUT

    table = {"P1": p1, "P2": p2, "P3": p3, "P4": p4,
             "FULL": lambda m: True}
    if name not in table:
        raise KeyError(f"unknown subspace {name!r}")
    return table[name]
