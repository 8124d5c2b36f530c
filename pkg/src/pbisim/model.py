"""Sparse explicit-state MDP/DTMC representation and the plain-text exchange format.

A model is stored in compressed-row form.  State ``s`` owns the global action
indices ``action_offsets[s] .. action_offsets[s+1]``; action ``a`` owns the
transition slots ``trans_offsets[a] .. trans_offsets[a+1]`` of the flat
``targets``/``probs`` arrays.  The reverse adjacency (incoming transitions per
state) is built once at construction and never mutated.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

SUM_TOLERANCE = 1e-9

DTMC = "dtmc"
MDP = "mdp"


class ModelError(ValueError):
    """Raised for structurally invalid models or malformed input text."""


class ModelFormatError(ModelError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(eq=False)
class SparseModel:
    """Immutable explicit MDP.  Build through :meth:`from_choices` or :func:`load_model`."""

    num_states: int
    initial: int
    goal_mask: bytes
    action_offsets: list[int]
    trans_offsets: list[int]
    targets: list[int]
    probs: list[float]
    kind: str = MDP
    completed_deadlocks: tuple[int, ...] = ()
    # derived, filled by __post_init__
    action_state: list[int] = field(init=False, repr=False)
    rev_offsets: list[int] = field(init=False, repr=False)
    rev_actions: list[int] = field(init=False, repr=False)
    rev_states: list[int] = field(init=False, repr=False)
    rev_probs: list[float] = field(init=False, repr=False)

    def __post_init__(self):
        n = self.num_states
        if n < 1:
            raise ModelError("model needs at least one state")
        if not 0 <= self.initial < n:
            raise ModelError(f"initial state {self.initial} out of range")
        if len(self.goal_mask) != n:
            raise ModelError("goal mask length differs from number of states")
        if len(self.action_offsets) != n + 1:
            raise ModelError("action_offsets must have num_states + 1 entries")
        num_actions = self.action_offsets[-1]
        if len(self.trans_offsets) != num_actions + 1:
            raise ModelError("trans_offsets must have num_actions + 1 entries")
        owner = [0] * num_actions
        for s in range(n):
            lo, hi = self.action_offsets[s], self.action_offsets[s + 1]
            if hi <= lo:
                raise ModelError(f"state {s} has no enabled action")
            for a in range(lo, hi):
                owner[a] = s
        self.action_state = owner
        for a in range(num_actions):
            _check_distribution(self, a)
        self._build_reverse()

    def _build_reverse(self):
        n = self.num_states
        counts = [0] * (n + 1)
        for t in self.targets:
            counts[t + 1] += 1
        for s in range(n):
            counts[s + 1] += counts[s]
        offsets = counts[:]
        fill = counts[:-1]
        m = len(self.targets)
        rev_actions = [0] * m
        rev_states = [0] * m
        rev_probs = [0.0] * m
        owner = self.action_state
        to, tg, pr = self.trans_offsets, self.targets, self.probs
        for a in range(len(owner)):
            s = owner[a]
            for i in range(to[a], to[a + 1]):
                t = tg[i]
                j = fill[t]
                fill[t] = j + 1
                rev_actions[j] = a
                rev_states[j] = s
                rev_probs[j] = pr[i]
        self.rev_offsets = offsets
        self.rev_actions = rev_actions
        self.rev_states = rev_states
        self.rev_probs = rev_probs

    # -- construction ---------------------------------------------------

    @classmethod
    def from_choices(
        cls,
        choices: Sequence[Sequence[Iterable[tuple[int, float]]]],
        goal: Iterable[int] = (),
        initial: int = 0,
        kind: str | None = None,
    ) -> "SparseModel":
        """Build a model from ``choices[s] = [distribution, ...]``.

        Each distribution is an iterable of ``(target, prob)`` pairs; entries
        are sorted by target.  ``kind`` defaults to ``"dtmc"`` when every state
        has exactly one action.
        """
        n = len(choices)
        action_offsets = [0]
        trans_offsets = [0]
        targets: list[int] = []
        probs: list[float] = []
        for s, acts in enumerate(choices):
            for dist in acts:
                entries = sorted(dist)
                for t, p in entries:
                    targets.append(int(t))
                    probs.append(float(p))
                trans_offsets.append(len(targets))
            action_offsets.append(len(trans_offsets) - 1)
        mask = bytearray(n)
        for g in goal:
            if not 0 <= g < n:
                raise ModelError(f"goal state {g} out of range")
            mask[g] = 1
        if kind is None:
            kind = DTMC if all(len(acts) == 1 for acts in choices) else MDP
        return cls(n, initial, bytes(mask), action_offsets, trans_offsets,
                   targets, probs, kind=kind)

    # -- queries -------------------------------------------------------

    @property
    def num_actions(self) -> int:
        return self.action_offsets[-1]

    @property
    def num_transitions(self) -> int:
        return len(self.targets)

    @property
    def size(self) -> int:
        """|M|: states plus probabilistic transitions."""
        return self.num_states + len(self.targets)

    @property
    def goal(self) -> tuple[int, ...]:
        return tuple(s for s, g in enumerate(self.goal_mask) if g)

    def is_goal(self, s: int) -> bool:
        return bool(self.goal_mask[s])

    def actions(self, s: int) -> range:
        return range(self.action_offsets[s], self.action_offsets[s + 1])

    def distribution(self, a: int) -> list[tuple[int, float]]:
        lo, hi = self.trans_offsets[a], self.trans_offsets[a + 1]
        return list(zip(self.targets[lo:hi], self.probs[lo:hi]))

    def choices(self) -> list[list[list[tuple[int, float]]]]:
        return [[self.distribution(a) for a in self.actions(s)]
                for s in range(self.num_states)]

    def incoming(self, t: int) -> list[tuple[int, int, float]]:
        """(pred_state, pred_action, prob) for every transition entering ``t``."""
        lo, hi = self.rev_offsets[t], self.rev_offsets[t + 1]
        return list(zip(self.rev_states[lo:hi], self.rev_actions[lo:hi],
                        self.rev_probs[lo:hi]))

    def successors(self, s: int) -> set[int]:
        lo = self.trans_offsets[self.action_offsets[s]]
        hi = self.trans_offsets[self.action_offsets[s + 1]]
        return set(self.targets[lo:hi])

    def is_absorbing(self, s: int) -> bool:
        """True iff every action of ``s`` is a probability-1 self-loop."""
        for a in self.actions(s):
            lo, hi = self.trans_offsets[a], self.trans_offsets[a + 1]
            if hi - lo != 1 or self.targets[lo] != s:
                return False
        return True

    def structurally_equal(self, other: "SparseModel") -> bool:
        return (self.num_states == other.num_states
                and self.initial == other.initial
                and self.goal_mask == other.goal_mask
                and self.action_offsets == other.action_offsets
                and self.trans_offsets == other.trans_offsets
                and self.targets == other.targets
                and self.probs == other.probs)


def _check_distribution(model: SparseModel, a: int) -> None:
    lo, hi = model.trans_offsets[a], model.trans_offsets[a + 1]
    s = model.action_state[a]
    if hi <= lo:
        raise ModelError(f"action {a} of state {s} has an empty distribution")
    n = model.num_states
    prev = -1
    for i in range(lo, hi):
        t, p = model.targets[i], model.probs[i]
        if not 0 <= t < n:
            raise ModelError(f"state {s}: target {t} out of range")
        if t <= prev:
            raise ModelError(f"state {s}: duplicate or unsorted target {t}")
        if not 0.0 < p <= 1.0:
            raise ModelError(f"state {s}: probability {p!r} outside (0, 1]")
        prev = t
    total = math.fsum(model.probs[lo:hi])
    if abs(total - 1.0) > SUM_TOLERANCE:
        raise ModelError(f"state {s}: distribution sums to {total:.12g}")


# ---------------------------------------------------------------------------
# accumulated distributions and predecessor sets


def accumulated_prob(model: SparseModel, action: int, block_of: Sequence[int],
                     target_block: int) -> float:
    """Mass that ``action`` puts on the states of ``target_block``."""
    lo, hi = model.trans_offsets[action], model.trans_offsets[action + 1]
    tg = model.targets
    return math.fsum(model.probs[i] for i in range(lo, hi)
                     if block_of[tg[i]] == target_block)


def pre_states(model: SparseModel, block: Iterable[int]) -> list[tuple[int, int]]:
    """All (state, action) pairs with positive probability into ``block``."""
    seen: dict[int, None] = {}
    ro, ra = model.rev_offsets, model.rev_actions
    for t in block:
        for i in range(ro[t], ro[t + 1]):
            seen.setdefault(ra[i])
    owner = model.action_state
    return [(owner[a], a) for a in seen]


# ---------------------------------------------------------------------------
# text format

_LABEL_DECL = re.compile(r'(\d+)="([^"]*)"')


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line.split()


def parse_labels(lab_text: str, num_states: int) -> dict[str, set[int]]:
    lines = list(_data_lines(lab_text))
    if not lines:
        raise ModelFormatError("label file has no header")
    lineno, header = lines[0]
    names: dict[int, str] = {}
    for tok in header:
        m = _LABEL_DECL.fullmatch(tok)
        if m is None:
            raise ModelFormatError(f"bad label declaration {tok!r}", lineno)
        names[int(m.group(1))] = m.group(2)
    labels: dict[str, set[int]] = {name: set() for name in names.values()}
    for lineno, toks in lines[1:]:
        if not toks[0].endswith(":"):
            raise ModelFormatError("label row must start with '<state>:'", lineno)
        try:
            s = int(toks[0][:-1])
            ids = [int(x) for x in toks[1:]]
        except ValueError:
            raise ModelFormatError("non-integer token in label row", lineno) from None
        if not 0 <= s < num_states:
            raise ModelFormatError(f"state index {s} out of range", lineno)
        for i in ids:
            if i not in names:
                raise ModelFormatError(f"undeclared label id {i}", lineno)
            labels[names[i]].add(s)
    return labels


def load_model(tra_text: str, lab_text: str, goal_label: str = "goal",
               strict: bool = False) -> SparseModel:
    """Parse the explicit transition/label pair into a validated model.

    Rows with three columns describe a DTMC, four or five columns an MDP (the
    optional fifth column is an action name and is discarded).  States without
    any outgoing row are deadlocks: ``strict`` rejects them, otherwise they get
    a probability-1 self-loop and a warning is logged.
    """
    lines = list(_data_lines(tra_text))
    if not lines:
        raise ModelFormatError("transition file is empty")
    lineno, header = lines[0]
    try:
        counts = [int(x) for x in header]
    except ValueError:
        raise ModelFormatError("header must contain integers", lineno) from None
    if len(counts) == 2:
        kind = DTMC
        n, declared_trans = counts
        declared_choices = None
    elif len(counts) == 3:
        kind = MDP
        n, declared_choices, declared_trans = counts
    else:
        raise ModelFormatError("header must have 2 (DTMC) or 3 (MDP) fields", lineno)
    if n < 1:
        raise ModelFormatError("number of states must be positive", lineno)

    per_state: list[dict[int, dict[int, float]]] = [dict() for _ in range(n)]
    width = None
    for lineno, toks in lines[1:]:
        w = 3 if len(toks) == 3 else 4 if len(toks) in (4, 5) else None
        if w is None:
            raise ModelFormatError(f"expected 3, 4 or 5 columns, got {len(toks)}", lineno)
        if width is None:
            width = w
        elif w != width:
            raise ModelFormatError("mixed DTMC and MDP row widths", lineno)
        if (w == 3) != (kind == DTMC):
            raise ModelFormatError("row width does not match header", lineno)
        try:
            if w == 3:
                src, dst, prob = int(toks[0]), int(toks[1]), float(toks[2])
                choice = 0
            else:
                src, choice, dst = int(toks[0]), int(toks[1]), int(toks[2])
                prob = float(toks[3])
        except ValueError:
            raise ModelFormatError("malformed number", lineno) from None
        for idx in (src, dst):
            if not 0 <= idx < n:
                raise ModelFormatError(f"state index {idx} out of range", lineno)
        if choice < 0:
            raise ModelFormatError("negative choice index", lineno)
        if not 0.0 < prob <= 1.0:
            raise ModelFormatError(f"probability {prob!r} outside (0, 1]", lineno)
        dist = per_state[src].setdefault(choice, {})
        if dst in dist:
            raise ModelFormatError(f"duplicate transition {src} -> {dst}", lineno)
        dist[dst] = prob

    choices: list[list[list[tuple[int, float]]]] = []
    deadlocks = []
    num_trans = 0
    for s, acts in enumerate(per_state):
        if not acts:
            if strict:
                raise ModelError(f"deadlock state {s}")
            deadlocks.append(s)
            choices.append([[(s, 1.0)]])
            continue
        keys = sorted(acts)
        if keys != list(range(len(keys))):
            raise ModelError(f"state {s}: choice indices are not 0..{len(keys) - 1}")
        row = []
        for c in keys:
            dist = sorted(acts[c].items())
            total = math.fsum(p for _, p in dist)
            if abs(total - 1.0) > SUM_TOLERANCE:
                raise ModelError(f"state {s} choice {c}: distribution sums to {total:.12g}")
            num_trans += len(dist)
            row.append(dist)
        choices.append(row)
    if num_trans != declared_trans:
        raise ModelFormatError(
            f"header declares {declared_trans} transitions, found {num_trans}", 1)
    if declared_choices is not None:
        found = sum(len(acts) for acts in per_state)
        if found != declared_choices:
            raise ModelFormatError(
                f"header declares {declared_choices} choices, found {found}", 1)
    if deadlocks:
        logger.warning("completed %d deadlock state(s) with self-loops: %s",
                       len(deadlocks), deadlocks[:10])

    labels = parse_labels(lab_text, n)
    if goal_label not in labels:
        raise ModelError(f"unknown goal label {goal_label!r}")
    init = labels.get("init")
    initial = min(init) if init else 0
    model = SparseModel.from_choices(choices, goal=labels[goal_label],
                                     initial=initial, kind=kind)
    model.completed_deadlocks = tuple(deadlocks)
    return model


def read_model(tra_path, lab_path, goal_label: str = "goal",
               strict: bool = False) -> SparseModel:
    with open(tra_path) as f:
        tra = f.read()
    with open(lab_path) as f:
        lab = f.read()
    return load_model(tra, lab, goal_label, strict)


def write_model(model: SparseModel, goal_label: str = "goal") -> tuple[str, str]:
    """Canonical text for ``model``: rows sorted by (src, choice, dst).

    Probabilities are written with ``repr`` so a reload is bit-exact.
    """
    out = []
    if model.kind == DTMC and model.num_actions == model.num_states:
        out.append(f"{model.num_states} {model.num_transitions}")
        for s in range(model.num_states):
            for t, p in model.distribution(model.action_offsets[s]):
                out.append(f"{s} {t} {p!r}")
    else:
        out.append(f"{model.num_states} {model.num_actions} {model.num_transitions}")
        for s in range(model.num_states):
            for c, a in enumerate(model.actions(s)):
                for t, p in model.distribution(a):
                    out.append(f"{s} {c} {t} {p!r}")
    tra = "\n".join(out) + "\n"

    lab = [f'0="init" 1="{goal_label}"']
    for s in range(model.num_states):
        ids = []
        if s == model.initial:
            ids.append("0")
        if model.goal_mask[s]:
            ids.append("1")
        if ids:
            lab.append(f"{s}: {' '.join(ids)}")
    return tra, "\n".join(lab) + "\n"
