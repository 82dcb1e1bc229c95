"""Operator words and moment-matrix structure for the NPA hierarchy.

A letter is ``(party, input, outcome)`` with party 0 for Alice and 1 for Bob,
standing for the projector of that outcome. Words are tuples of letters; the
empty tuple is the identity. Moment matrices are real symmetric, so a word
and its reversal share one moment.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .behavior import Alphabets

Letter = tuple[int, int, int]
Word = tuple[Letter, ...]
Level = Union[int, str]

ALICE, BOB = 0, 1
LEVELS = (1, "1+AB", 2)


class NpaError(ValueError):
    pass


def normalize_level(level: Level) -> Level:
    if isinstance(level, str):
        key = level.strip().lower().replace(" ", "")
        if key in ("1", "2"):
            return int(key)
        if key in ("1+ab", "1ab"):
            return "1+AB"
        raise NpaError(f"unsupported hierarchy level {level!r}")
    if level in (1, 2):
        return int(level)
    raise NpaError(f"unsupported hierarchy level {level!r}")


def _reduce_party(letters: Iterable[Letter]) -> list[Letter] | None:
    out: list[Letter] = []
    for letter in letters:
        if out and out[-1][1] == letter[1]:
            if out[-1][2] == letter[2]:
                continue  # E E = E
            return None  # orthogonal projectors
        out.append(letter)
    return out


def canonicalize(word: Sequence[Letter]) -> Word | None:
    """Canonical form of a word, or ``None`` if it is identically zero.

    Alice's letters move in front of Bob's (keeping their relative order),
    then repeated projectors collapse and orthogonal neighbours annihilate.
    """
    a = _reduce_party(l for l in word if l[0] == ALICE)
    if a is None:
        return None
    b = _reduce_party(l for l in word if l[0] == BOB)
    if b is None:
        return None
    return tuple(a + b)


def adjoint(word: Sequence[Letter]) -> Word:
    return tuple(reversed(tuple(word)))


def moment_key(word: Sequence[Letter]) -> Word | None:
    """Key shared by a word and its adjoint (real moment matrices)."""
    c = canonicalize(word)
    if c is None:
        return None
    r = canonicalize(adjoint(c))
    return min(c, r)


def _letters(alphabets: Alphabets, drop_last: bool) -> tuple[list[Letter], list[Letter]]:
    nx = alphabets.nx - 1 if drop_last else alphabets.nx
    ny = alphabets.ny - 1 if drop_last else alphabets.ny
    alice = [(ALICE, u, x) for u in range(alphabets.nu) for x in range(nx)]
    bob = [(BOB, v, y) for v in range(alphabets.nv) for y in range(ny)]
    return alice, bob


def build_words(alphabets: Alphabets, level: Level, drop_last: bool = False) -> list[Word]:
    """Canonical words of the hierarchy level, ordered by length then letters.

    With ``drop_last`` the last outcome of every input is left out
    (Collins-Gisin words), which spans the same operator space once
    completeness is used.
    """
    level = normalize_level(level)
    alice, bob = _letters(alphabets, drop_last)
    letters = alice + bob
    words: set[Word] = {()}
    words.update((l,) for l in letters)
    if level == "1+AB":
        pairs = itertools.product(alice, bob)
    elif level == 2:
        pairs = itertools.product(letters, repeat=2)
    else:
        pairs = ()
    for pair in pairs:
        c = canonicalize(pair)
        if c is not None and len(c) == 2:
            words.add(c)
    return sorted(words, key=lambda w: (len(w), w))


@dataclass(frozen=True)
class NpaStructure:
    """Equality pattern of a moment matrix over a fixed word list.

    ``entry_class[i, j]`` is the index into ``class_keys`` of the moment
    stored at entry (i, j), or -1 where the entry is forced to zero.
    ``completeness`` holds relations ``sum_k coeff_k * moment[class_k] = 0``.
    """

    alphabets: Alphabets
    level: Level
    words: tuple[Word, ...]
    class_keys: tuple[Word, ...]
    entry_class: np.ndarray
    completeness: tuple[tuple[tuple[int, float], ...], ...]
    prob_entries: dict[tuple[int, int, int, int], tuple[int, int]] = field(repr=False)
    identity_entry: tuple[int, int] = (0, 0)

    @property
    def dim(self) -> int:
        return len(self.words)

    @property
    def zero_entries(self) -> list[tuple[int, int]]:
        return [tuple(map(int, e)) for e in np.argwhere(self.entry_class < 0)]

    def class_members(self) -> list[list[tuple[int, int]]]:
        """Entries (i <= j) of each class, in row-major order."""
        members: list[list[tuple[int, int]]] = [[] for _ in self.class_keys]
        n = self.dim
        for i in range(n):
            for j in range(i, n):
                c = self.entry_class[i, j]
                if c >= 0:
                    members[c].append((i, j))
        return members

    def class_of_word(self, word: Sequence[Letter]) -> int | None:
        """Class index of a word's moment; ``None`` if zero; KeyError if absent."""
        key = moment_key(word)
        if key is None:
            return None
        return self._key_index[key]

    @property
    def _key_index(self) -> dict[Word, int]:
        cache = self.__dict__.get("_key_index_cache")
        if cache is None:
            cache = {k: i for i, k in enumerate(self.class_keys)}
            object.__setattr__(self, "_key_index_cache", cache)
        return cache

    def expand(self, word: Sequence[Letter]) -> dict[int, float]:
        """Write a word's moment as a combination of this structure's moments.

        Letters carrying an outcome absent from the word list are replaced by
        ``1 - sum(other outcomes)`` before canonicalizing.
        """
        present = {l for w in self.words for l in w}
        factors: list[list[tuple[float, Word]]] = []
        for letter in word:
            if letter in present:
                factors.append([(1.0, (letter,))])
                continue
            party, inp, _ = letter
            n_out = self.alphabets.nx if party == ALICE else self.alphabets.ny
            others = [(party, inp, o) for o in range(n_out) if o != letter[2]]
            if any(o not in present for o in others):
                raise NpaError(f"cannot expand letter {letter} over the word list")
            factors.append([(1.0, ())] + [(-1.0, (o,)) for o in others])
        out: dict[int, float] = {}
        for combo in itertools.product(*factors):
            coeff = 1.0
            w: Word = ()
            for c, piece in combo:
                coeff *= c
                w = w + piece
            cls = self.class_of_word(w)
            if cls is None:
                continue
            out[cls] = out.get(cls, 0.0) + coeff
        return {k: v for k, v in out.items() if v != 0.0}

    def moment_vector(self, gamma: np.ndarray) -> np.ndarray:
        """Per-class values read from a matrix (first member of each class)."""
        first = {}
        n = self.dim
        for i in range(n):
            for j in range(i, n):
                c = int(self.entry_class[i, j])
                if c >= 0 and c not in first:
                    first[c] = gamma[i, j]
        return np.array([first[c] for c in range(len(self.class_keys))])

    def residuals(self, gamma: np.ndarray) -> dict[str, float]:
        """Largest violation of each linear condition by a candidate matrix."""
        gamma = np.asarray(gamma, dtype=float)
        mom = self.moment_vector(gamma)
        cls = self.entry_class
        mask = cls >= 0
        eq = float(np.max(np.abs(gamma[mask] - mom[cls[mask]]), initial=0.0))
        zero = float(np.max(np.abs(gamma[~mask]), initial=0.0))
        comp = max((abs(sum(c * mom[k] for k, c in rel)) for rel in self.completeness), default=0.0)
        sym = float(np.max(np.abs(gamma - gamma.T)))
        return {"equality": eq, "zero": zero, "completeness": float(comp), "symmetry": sym}

    def to_dict(self) -> dict:
        members = self.class_members()
        return {
            "level": self.level,
            "alphabets": self.alphabets.to_dict(),
            "words": [[list(l) for l in w] for w in self.words],
            "classes": [[i * self.dim + j for i, j in m] for m in members],
            "zero_entries": [i * self.dim + j for i, j in self.zero_entries if i <= j],
            "completeness": [[[k, c] for k, c in rel] for rel in self.completeness],
            "prob_entries": {f"{u},{v},{x},{y}": list(e) for (u, v, x, y), e in sorted(self.prob_entries.items())},
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def build_structure(words: Sequence[Word], alphabets: Alphabets, level: Level | None = None) -> NpaStructure:
    """Moment-matrix structure for ``Gamma_ij = <O_i^T O_j>`` over ``words``."""
    words = tuple(tuple(tuple(l) for l in w) for w in words)
    if not words:
        raise NpaError("empty word list")
    if len(set(words)) != len(words):
        raise NpaError("duplicate words")
    for w in words:
        if canonicalize(w) != w:
            raise NpaError(f"word {w} is not canonical")
        for party, inp, out in w:
            n_in = alphabets.nu if party == ALICE else alphabets.nv
            n_out = alphabets.nx if party == ALICE else alphabets.ny
            if not (0 <= inp < n_in and 0 <= out < n_out):
                raise NpaError(f"letter {(party, inp, out)} outside alphabets")
    n = len(words)
    keys: dict[Word, int] = {}
    entry_class = np.full((n, n), -1, dtype=np.int64)
    for i in range(n):
        left = adjoint(words[i])
        for j in range(i, n):
            key = moment_key(left + words[j])
            if key is None:
                continue
            c = keys.setdefault(key, len(keys))
            entry_class[i, j] = entry_class[j, i] = c
    entry_class.setflags(write=False)

    # Completeness: sum_x <L E_u^x R> = <L R> whenever every term is a known moment.
    inputs = [(ALICE, u, alphabets.nx) for u in range(alphabets.nu)]
    inputs += [(BOB, v, alphabets.ny) for v in range(alphabets.nv)]
    relations: set[tuple[tuple[int, float], ...]] = set()
    for i in range(n):
        left = adjoint(words[i])
        for j in range(i, n):
            right = words[j]
            base = moment_key(left + right)
            for party, inp, n_out in inputs:
                terms = [moment_key(left + ((party, inp, o),) + right) for o in range(n_out)]
                if any(t is not None and t not in keys for t in terms):
                    continue
                if base is not None and base not in keys:
                    continue
                coeffs: dict[int, float] = {}
                for t in terms:
                    if t is not None:
                        coeffs[keys[t]] = coeffs.get(keys[t], 0.0) + 1.0
                if base is not None:
                    coeffs[keys[base]] = coeffs.get(keys[base], 0.0) - 1.0
                rel = tuple(sorted((k, c) for k, c in coeffs.items() if c != 0.0))
                if rel:
                    relations.add(rel)

    index = {w: i for i, w in enumerate(words)}
    prob_entries = {}
    for u in range(alphabets.nu):
        for v in range(alphabets.nv):
            for x in range(alphabets.nx):
                for y in range(alphabets.ny):
                    a, b = ((ALICE, u, x),), ((BOB, v, y),)
                    if a in index and b in index:
                        prob_entries[(u, v, x, y)] = (index[a], index[b])
    if () not in index:
        raise NpaError("word list must contain the identity")
    ident = index[()]
    return NpaStructure(
        alphabets=alphabets,
        level=level if level is not None else max(len(w) for w in words),
        words=words,
        class_keys=tuple(sorted(keys, key=keys.get)),
        entry_class=entry_class,
        completeness=tuple(sorted(relations)),
        prob_entries=prob_entries,
        identity_entry=(ident, ident),
    )


def npa_structure(alphabets: Alphabets, level: Level, drop_last: bool = False) -> NpaStructure:
    level = normalize_level(level)
    return build_structure(build_words(alphabets, level, drop_last=drop_last), alphabets, level)


@dataclass
class StructureReport:
    n_classes: int
    n_zero: int
    n_constraints: int
    n_prob_entries: int
    problems: list[str]

    @property
    def ok(self) -> bool:
        return not self.problems


def hermitian_closure_check(structure: NpaStructure) -> StructureReport:
    """Audit that each class only gathers words equal up to adjoint/commutation."""
    problems: list[str] = []
    if structure.dim == 0:
        problems.append("empty word list")
    n = structure.dim
    words = structure.words
    for i in range(n):
        for j in range(n):
            c = structure.entry_class[i, j]
            w = canonicalize(adjoint(words[i]) + words[j])
            if c < 0:
                if w is not None:
                    problems.append(f"entry ({i},{j}) marked zero but word {w} is not")
                continue
            key = structure.class_keys[c]
            if w is None or (w != key and canonicalize(adjoint(w)) != key):
                problems.append(f"entry ({i},{j}) word {w} not equivalent to class key {key}")
            if structure.entry_class[j, i] != c:
                problems.append(f"entry ({i},{j}) not symmetric")
    upper = structure.entry_class[np.triu_indices(n)]
    n_zero = int((upper < 0).sum())
    n_equal = int((upper >= 0).sum()) - len(structure.class_keys)
    return StructureReport(
        n_classes=len(structure.class_keys),
        n_zero=n_zero,
        n_constraints=len(structure.completeness) + n_zero + n_equal,
        n_prob_entries=len(structure.prob_entries),
        problems=problems,
    )
