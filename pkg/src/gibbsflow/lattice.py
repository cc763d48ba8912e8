"""Finite hypercubic lattice geometry and ±1 spin configurations.

Sites are integer coordinate tuples inside a box ``[0, L_0) x ... x [0, L_{d-1})``.
A box is either *open* (sites outside it belong to a boundary condition that
is supplied at Hamiltonian evaluation, never implicit) or a *torus*
(coordinates wrap).

Site ordering is row-major over the axes.  Every enumeration in this package
(state indexing, CSV output, Monte Carlo sweep order) derives from this single
ordering, which is what keeps seeded runs reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Iterator

import numpy as np

Site = tuple[int, ...]


@dataclass(frozen=True)
class Box:
    """A finite d-dimensional box of lattice sites, optionally periodic."""

    extents: tuple[int, ...]
    torus: bool = False

    def __post_init__(self):
        extents = tuple(int(e) for e in self.extents)
        if len(extents) == 0 or any(e < 1 for e in extents):
            raise ValueError(f"box extents must all be >= 1, got {self.extents}")
        object.__setattr__(self, "extents", extents)

    @property
    def dimension(self) -> int:
        return len(self.extents)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))

    def sites(self) -> Iterator[Site]:
        """All sites in row-major order."""
        return product(*(range(e) for e in self.extents))

    def site_list(self) -> list[Site]:
        return list(self.sites())

    def index(self, site: Site) -> int:
        """Row-major linear index of a site."""
        if not self.contains(site):
            raise ValueError(f"site {site} not in box {self.extents}")
        idx = 0
        for c, e in zip(site, self.extents):
            idx = idx * e + c
        return idx

    def contains(self, site) -> bool:
        return len(site) == self.dimension and all(
            0 <= c < e for c, e in zip(site, self.extents)
        )

    def wrap(self, site) -> Site | None:
        """Map a raw coordinate tuple into the box.

        On a torus this reduces coordinates mod the extents; on an open box
        it returns None for sites outside (they belong to the boundary).
        """
        if self.torus:
            return tuple(int(c) % e for c, e in zip(site, self.extents))
        return tuple(site) if self.contains(site) else None

    def shift(self, site: Site, offset: Site):
        """Raw coordinates of ``site + offset`` (not wrapped)."""
        return tuple(c + o for c, o in zip(site, offset))

    def center(self) -> Site:
        return tuple(e // 2 for e in self.extents)

    def distance(self, a: Site, b: Site) -> int:
        """Chebyshev distance, respecting wrap-around on a torus."""
        d = 0
        for ca, cb, e in zip(a, b, self.extents):
            delta = abs(ca - cb)
            if self.torus:
                delta = min(delta, e - delta)
            d = max(d, delta)
        return d


class Configuration:
    """An assignment of ±1 spins to every site of a box.

    Value semantics: the spin array is frozen after construction and every
    mutating operation returns a new Configuration.
    """

    __slots__ = ("box", "spins")

    def __init__(self, box: Box, spins):
        arr = np.asarray(spins, dtype=np.int8)
        if arr.shape != box.extents:
            arr = arr.reshape(box.extents)
        if not np.all(np.abs(arr) == 1):
            raise ValueError("spins must be +1 or -1")
        arr = arr.copy()
        arr.setflags(write=False)
        self.box = box
        self.spins = arr

    @classmethod
    def uniform(cls, box: Box, spin: int) -> "Configuration":
        if spin not in (-1, 1):
            raise ValueError("spin must be +1 or -1")
        return cls(box, np.full(box.extents, spin, dtype=np.int8))

    def spin(self, site: Site) -> int:
        if not self.box.contains(site):
            raise ValueError(f"site {site} not in box {self.box.extents}")
        return int(self.spins[site])

    def flip(self, site: Site) -> "Configuration":
        """Flip the spin at one site; an involution."""
        if not self.box.contains(site):
            raise ValueError(f"cannot flip site {site}: outside box {self.box.extents}")
        arr = self.spins.copy()
        arr[site] = -arr[site]
        return Configuration(self.box, arr)

    def flip_set(self, sites) -> "Configuration":
        arr = self.spins.copy()
        for s in sites:
            if not self.box.contains(s):
                raise ValueError(f"cannot flip site {s}: outside box {self.box.extents}")
            arr[s] = -arr[s]
        return Configuration(self.box, arr)

    def patch(self, other: "Configuration", sites) -> "Configuration":
        """Take this configuration on ``sites`` and ``other`` elsewhere."""
        if other.box != self.box:
            raise ValueError("patch requires configurations on the same box")
        arr = other.spins.copy()
        for s in sites:
            arr[s] = self.spins[s]
        return Configuration(self.box, arr)

    def translate(self, vector: Site) -> "Configuration":
        """Translate on a torus: the new spin at x is the old spin at x+v."""
        if not self.box.torus:
            raise ValueError("translation needs a torus")
        arr = self.spins
        for axis, v in enumerate(vector):
            arr = np.roll(arr, -v, axis=axis)
        return Configuration(self.box, arr)

    def magnetization(self) -> float:
        return float(self.spins.mean())

    def flat(self) -> np.ndarray:
        """Spins in row-major site order."""
        return self.spins.reshape(-1)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Configuration)
            and self.box == other.box
            and np.array_equal(self.spins, other.spins)
        )

    def __hash__(self):
        return hash((self.box, self.spins.tobytes()))

    def __repr__(self):
        return f"Configuration(box={self.box.extents}, torus={self.box.torus})"


@dataclass(frozen=True)
class Region:
    """A finite set of sites inside a box."""

    box: Box
    sites: frozenset

    def __post_init__(self):
        sites = frozenset(tuple(s) for s in self.sites)
        for s in sites:
            if not self.box.contains(s):
                raise ValueError(f"region site {s} outside box {self.box.extents}")
        object.__setattr__(self, "sites", sites)

    @classmethod
    def all_of(cls, box: Box) -> "Region":
        return cls(box, frozenset(box.sites()))

    @classmethod
    def annulus(cls, outer: "Region", inner: "Region") -> "Region":
        """outer minus inner; empty iff inner covers outer."""
        if outer.box != inner.box:
            raise ValueError("annulus requires regions in the same box")
        return cls(outer.box, outer.sites - inner.sites)

    def sorted_sites(self) -> list[Site]:
        """Sites in row-major order (the canonical enumeration order)."""
        return sorted(self.sites)

    def __contains__(self, site) -> bool:
        return tuple(site) in self.sites

    def __len__(self) -> int:
        return len(self.sites)


def _alternating_array(box: Box) -> np.ndarray:
    parity = np.indices(box.extents).sum(axis=0) % 2
    return np.where(parity == 0, 1, -1).astype(np.int8)


def special_config(kind: str, box: Box, p: float | None = None, seed=None) -> Configuration:
    """Construct one of the named reference configurations.

    kinds:
      ``all-plus`` / ``all-minus``  constant configurations
      ``alternating``               spin (+1)^(parity of coordinate sum),
                                    i.e. +1 at even-parity sites
      ``random-perturbed-alternating``
                                    start alternating, then flip each +1 spin
                                    to -1 independently with probability p
                                    (deterministic under a fixed seed)

    On a torus the alternating pattern requires every side length to be even;
    an odd side would frustrate the wrap-around and is rejected.
    """
    if kind == "all-plus":
        return Configuration.uniform(box, 1)
    if kind == "all-minus":
        return Configuration.uniform(box, -1)
    if kind in ("alternating", "random-perturbed-alternating"):
        if box.torus and any(e % 2 for e in box.extents):
            raise ValueError(
                "alternating configuration on a torus needs even side lengths, "
                f"got {box.extents}"
            )
        alt = _alternating_array(box)
        if kind == "alternating":
            return Configuration(box, alt)
        if p is None or not (0.0 <= p <= 1.0):
            raise ValueError("random-perturbed-alternating needs p in [0, 1]")
        if seed is None:
            raise ValueError("random-perturbed-alternating needs a seed")
        rng = np.random.default_rng(seed)
        flips = (rng.random(box.extents) < p) & (alt == 1)
        return Configuration(box, np.where(flips, np.int8(-1), alt))
    raise ValueError(f"unknown special configuration kind: {kind!r}")
