"""Affine maps ``x -> A x + b`` with a generator word for provenance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def reduce_word(word):
    """Merge adjacent powers of the same generator and drop zero powers."""
    out = []
    for name, power in word:
        if out and out[-1][0] == name:
            total = out[-1][1] + power
            out.pop()
            if total:
                out.append((name, total))
        elif power:
            out.append((name, power))
    return tuple(out)


def word_to_str(word) -> str:
    if not word:
        return "e"
    return " ".join(name if p == 1 else f"{name}^{p}" for name, p in word)


@dataclass(frozen=True, eq=False)
class AffineIsometry:
    A: np.ndarray
    b: np.ndarray
    word: tuple = field(default=())

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
            raise ValueError("affine map needs a square A and a matching b")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "word", reduce_word(self.word))

    @classmethod
    def identity(cls, n: int) -> "AffineIsometry":
        return cls(np.eye(n), np.zeros(n))

    @classmethod
    def translation(cls, b, name: str | None = None) -> "AffineIsometry":
        b = np.asarray(b, dtype=float)
        return cls(np.eye(b.size), b, ((name, 1),) if name else ())

    @classmethod
    def linear(cls, A, name: str | None = None) -> "AffineIsometry":
        A = np.asarray(A, dtype=float)
        return cls(A, np.zeros(A.shape[0]), ((name, 1),) if name else ())

    @property
    def dim(self) -> int:
        return self.b.size

    @property
    def word_str(self) -> str:
        return word_to_str(self.word)

    def apply(self, p) -> np.ndarray:
        """Image of a point (or of the rows of a batch)."""
        p = np.asarray(p, dtype=float)
        return p @ self.A.T + self.b

    def apply_tangent(self, base, w):
        """Push a tangent vector ``w`` at ``base`` forward: ``(g base, A w)``."""
        w = np.asarray(w, dtype=float)
        return self.apply(base), w @ self.A.T

    def compose(self, other: "AffineIsometry") -> "AffineIsometry":
        """``self o other``."""
        return AffineIsometry(self.A @ other.A, self.A @ other.b + self.b, self.word + other.word)

    __matmul__ = compose

    def inverse(self) -> "AffineIsometry":
        if np.array_equal(self.A.T @ self.A, np.eye(self.dim)):
            Ainv = self.A.T.copy()
        else:
            Ainv = np.linalg.inv(self.A)
        word = tuple((name, -p) for name, p in reversed(self.word))
        return AffineIsometry(Ainv, -Ainv @ self.b, word)

    def power(self, k: int) -> "AffineIsometry":
        out = AffineIsometry.identity(self.dim)
        base = self if k >= 0 else self.inverse()
        for _ in range(abs(k)):
            out = base @ out
        return out

    def close_to(self, other: "AffineIsometry", tol: float = 1e-9, mod_lattice: bool = False) -> bool:
        if np.max(np.abs(self.A - other.A)) > tol:
            return False
        db = self.b - other.b
        if mod_lattice:
            db = db - np.round(db)
        return bool(np.max(np.abs(db), initial=0.0) <= tol)

    def is_identity(self, tol: float = 1e-9, mod_lattice: bool = False) -> bool:
        return self.close_to(AffineIsometry.identity(self.dim), tol, mod_lattice)

    def det(self) -> float:
        return float(np.linalg.det(self.A))

    def to_json(self) -> dict:
        return {"A": self.A.tolist(), "b": self.b.tolist(), "word": self.word_str}

    def __repr__(self):
        return f"AffineIsometry(word={self.word_str!r}, A={self.A.tolist()}, b={self.b.tolist()})"
