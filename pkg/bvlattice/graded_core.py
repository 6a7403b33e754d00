"""
Graded commutative polynomial algebra of lattice functionals.

Coefficients are truncated power series in ℏ over the Gaussian rationals
(sympy's ``QQ_I`` domain), so every identity in the engine is checked with
exact equality. Monomials are kept in a canonical order (site, species name);
the Koszul sign of a reordering is folded into the coefficient.
"""
import logging
import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Iterable, Iterator, Mapping, Optional, Tuple, Union

from sympy import Rational, Symbol, sympify
from sympy.polys.domains import QQ, QQ_I

from bvlattice.errors import (
    BVLatticeError,
    GradingError,
    NegativeHbarPowerError,
    TruncationMismatchError,
    UnassignedGeneratorError,
)

logger = logging.getLogger(__name__)

Scalar = type(QQ_I(0))
ZERO = QQ_I(0)
ONE = QQ_I(1)
I_UNIT = QQ_I(0, 1)

HBAR = Symbol('hbar', positive=True)


def scalar(value) -> Scalar:
    """Coerce ints, rationals, 'p/q' strings and sympy numbers to a Gaussian rational."""
    if isinstance(value, Scalar):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not scalars")
    if isinstance(value, int):
        return QQ_I(value)
    if isinstance(value, str):
        value = sympify(re.sub(r"\bi\b", "I", value))
    if isinstance(value, Rational):
        return QQ_I(QQ(int(value.p), int(value.q)))
    try:
        return QQ_I.from_sympy(sympify(value))
    except Exception as e:
        raise BVLatticeError(f"cannot convert {value!r} to an exact Gaussian rational: {e}")


def rational_scalar(numerator: int, denominator: int = 1) -> Scalar:
    return QQ_I(QQ(numerator, denominator))


def conjugate_scalar(z: Scalar) -> Scalar:
    return QQ_I(z.x, -z.y)


def scalar_to_sympy(z: Scalar):
    return QQ_I.to_sympy(z)


# ---------------------------------------------------------------------------
# ℏ-series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HbarSeries:
    """Truncated power series Σ_{k≤N} c_k ℏ^k with exact coefficients."""

    coeffs: Tuple[Scalar, ...]

    def __post_init__(self):
        if not self.coeffs:
            raise ValueError("an ℏ-series needs at least the constant coefficient")

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def zero(cls, order: int) -> 'HbarSeries':
        return cls((ZERO,) * (order + 1))

    @classmethod
    def constant(cls, value, order: int) -> 'HbarSeries':
        return cls((scalar(value),) + (ZERO,) * order)

    @classmethod
    def one(cls, order: int) -> 'HbarSeries':
        return cls.constant(ONE, order)

    @classmethod
    def monomial(cls, value, power: int, order: int) -> 'HbarSeries':
        """value·ℏ^power, zero if the power is beyond the truncation."""
        coeffs = [ZERO] * (order + 1)
        if power <= order:
            coeffs[power] = scalar(value)
        return cls(tuple(coeffs))

    def _check(self, other: 'HbarSeries'):
        if self.order != other.order:
            raise TruncationMismatchError(self.order, other.order)

    def __bool__(self) -> bool:
        return any(self.coeffs)

    def is_zero(self) -> bool:
        return not any(self.coeffs)

    def __add__(self, other: 'HbarSeries') -> 'HbarSeries':
        self._check(other)
        return HbarSeries(tuple(a + b for a, b in zip(self.coeffs, other.coeffs)))

    def __sub__(self, other: 'HbarSeries') -> 'HbarSeries':
        self._check(other)
        return HbarSeries(tuple(a - b for a, b in zip(self.coeffs, other.coeffs)))

    def __neg__(self) -> 'HbarSeries':
        return HbarSeries(tuple(-a for a in self.coeffs))

    def scale(self, factor) -> 'HbarSeries':
        factor = scalar(factor)
        return HbarSeries(tuple(factor * a for a in self.coeffs))

    def __mul__(self, other: 'HbarSeries') -> 'HbarSeries':
        if not isinstance(other, HbarSeries):
            return self.scale(other)
        self._check(other)
        n = self.order
        out = [ZERO] * (n + 1)
        for i, a in enumerate(self.coeffs):
            if not a:
                continue
            for j in range(n + 1 - i):
                b = other.coeffs[j]
                if b:
                    out[i + j] += a * b
        return HbarSeries(tuple(out))

    def leading_order(self) -> Optional[int]:
        for k, c in enumerate(self.coeffs):
            if c:
                return k
        return None

    def shift(self, power: int) -> 'HbarSeries':
        """Multiply by ℏ^power, dropping what falls beyond the truncation."""
        if power < 0:
            return self.unshift(-power)
        n = self.order
        return HbarSeries(((ZERO,) * power + self.coeffs)[:n + 1])

    def unshift(self, power: int) -> 'HbarSeries':
        """Divide by ℏ^power; the freed top coefficients become zero."""
        if any(self.coeffs[:power]):
            raise NegativeHbarPowerError(
                f"division by ℏ^{power} leaves a negative power (leading order {self.leading_order()})",
                order=self.leading_order())
        return HbarSeries(self.coeffs[power:] + (ZERO,) * min(power, len(self.coeffs)))

    def pad(self, order: int) -> 'HbarSeries':
        """Re-truncate at a different order (extending with zeros or cutting)."""
        if order >= self.order:
            return HbarSeries(self.coeffs + (ZERO,) * (order - self.order))
        return HbarSeries(self.coeffs[:order + 1])

    def exp(self) -> 'HbarSeries':
        """exp(a) for a series with vanishing constant term."""
        if self.coeffs[0]:
            raise BVLatticeError("exp needs a series with zero constant term")
        result = HbarSeries.one(self.order)
        term = HbarSeries.one(self.order)
        for k in range(1, self.order + 1):
            term = (term * self).scale(rational_scalar(1, k))
            if term.is_zero():
                break
            result = result + term
        return result

    def inverse(self) -> 'HbarSeries':
        a0 = self.coeffs[0]
        if not a0:
            raise BVLatticeError("series with zero constant term is not invertible")
        inv0 = ONE / a0
        out = [inv0]
        for n in range(1, self.order + 1):
            acc = ZERO
            for k in range(1, n + 1):
                acc += self.coeffs[k] * out[n - k]
            out.append(-inv0 * acc)
        return HbarSeries(tuple(out))

    def conjugate(self) -> 'HbarSeries':
        return HbarSeries(tuple(conjugate_scalar(c) for c in self.coeffs))

    def to_sympy(self):
        return sum((scalar_to_sympy(c) * HBAR ** k for k, c in enumerate(self.coeffs) if c),
                   sympify(0))

    def __str__(self) -> str:
        return str(self.to_sympy())


# ---------------------------------------------------------------------------
# Species, generators, monomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Species:
    """A field species or the antifield of one.

    Antifields keep a reference to their field in ``base``; the field side
    reaches its antifield through :meth:`antifield`.
    """

    name: str
    parity: int
    ghost_number: int = 0
    antifield_number: int = 0
    base: Optional['Species'] = None
    propagating: bool = False

    def __post_init__(self):
        if self.parity not in (0, 1):
            raise GradingError(f"species {self.name}: parity must be 0 or 1")
        if self.antifield_number not in (0, 1):
            raise GradingError(f"species {self.name}: antifield number must be 0 or 1")
        if self.antifield_number == 1 and self.base is None:
            raise GradingError(f"antifield species {self.name} needs its field species")

    @property
    def is_antifield(self) -> bool:
        return self.antifield_number == 1

    @property
    def odd(self) -> bool:
        return self.parity == 1

    def antifield(self) -> 'Species':
        if self.is_antifield:
            raise GradingError(f"{self.name} is already an antifield")
        return Species(
            name=f"{self.name}*",
            parity=1 - self.parity,
            ghost_number=-self.ghost_number - 1,
            antifield_number=1,
            base=self,
        )

    @property
    def partner(self) -> 'Species':
        return self.base if self.is_antifield else self.antifield()

    @property
    def pure_ghost_number(self) -> int:
        if self.is_antifield:
            return 0
        return max(self.ghost_number, 0)


def pure_ghost_number(species: Species) -> int:
    return species.pure_ghost_number


@dataclass(frozen=True)
class Generator:
    species: Species
    site: int

    @cached_property
    def key(self) -> Tuple[int, str]:
        return (self.site, self.species.name)

    @property
    def odd(self) -> bool:
        return self.species.parity == 1

    @property
    def is_antifield(self) -> bool:
        return self.species.is_antifield

    def partner(self) -> 'Generator':
        return Generator(self.species.partner, self.site)

    def __str__(self) -> str:
        return f"{self.species.name}({self.site})"

    def __repr__(self) -> str:
        return f"Generator({self.species.name!r}, {self.site})"


Factor = Tuple[Generator, int]


@dataclass(frozen=True)
class Monomial:
    """Canonically ordered product of generators with multiplicities.

    Odd generators have multiplicity one. The sign of the canonical
    reordering is never stored here; it lives in the coefficient.
    """

    factors: Tuple[Factor, ...] = ()

    @cached_property
    def degree(self) -> int:
        return sum(m for _, m in self.factors)

    @cached_property
    def parity(self) -> int:
        return sum(m for g, m in self.factors if g.odd) % 2

    @cached_property
    def ghost_number(self) -> int:
        return sum(g.species.ghost_number * m for g, m in self.factors)

    @cached_property
    def antifield_number(self) -> int:
        return sum(m for g, m in self.factors if g.is_antifield)

    @cached_property
    def sites(self) -> frozenset:
        return frozenset(g.site for g, _ in self.factors)

    @cached_property
    def generators(self) -> frozenset:
        return frozenset(g for g, _ in self.factors)

    def multiplicity(self, g: Generator) -> int:
        for h, m in self.factors:
            if h == g:
                return m
        return 0

    def __str__(self) -> str:
        if not self.factors:
            return "1"
        parts = []
        for g, m in self.factors:
            parts.append(str(g) if m == 1 else f"{g}^{m}")
        return "*".join(parts)


UNIT_MONOMIAL = Monomial(())


def monomial_of(*generators: Generator) -> Tuple[int, Optional[Monomial]]:
    """Canonical monomial of an ordered product of generators, with its sign.

    Returns (sign, monomial); the monomial is None when an odd generator repeats.
    """
    sign = 1
    mono: Optional[Monomial] = UNIT_MONOMIAL
    for g in generators:
        s, mono = mono_mul(mono, Monomial(((g, 1),)))
        if mono is None:
            return 0, None
        sign *= s
    return sign, mono


def mono_mul(u: Monomial, v: Monomial) -> Tuple[int, Optional[Monomial]]:
    """Product of canonical monomials: (Koszul sign, canonical product) or (0, None)."""
    if not u.factors:
        return 1, v
    if not v.factors:
        return 1, u
    odd_u = [g.key for g, _ in u.factors if g.odd]
    swaps = 0
    merged: Dict[Generator, int] = {g: m for g, m in u.factors}
    for g, m in v.factors:
        if g.odd:
            if g in merged:
                return 0, None
            swaps += sum(1 for k in odd_u if k > g.key)
        merged[g] = merged.get(g, 0) + m
    factors = tuple(sorted(merged.items(), key=lambda item: item[0].key))
    return (-1 if swaps % 2 else 1), Monomial(factors)


def mono_derivative(u: Monomial, g: Generator) -> Tuple[int, Optional[Monomial]]:
    """Left derivative of a monomial: (integer factor, remaining monomial)."""
    odd_before = 0
    for index, (h, m) in enumerate(u.factors):
        if h == g:
            if g.odd:
                factor = -1 if odd_before % 2 else 1
                rest = u.factors[:index] + u.factors[index + 1:]
            else:
                factor = m
                if m == 1:
                    rest = u.factors[:index] + u.factors[index + 1:]
                else:
                    rest = u.factors[:index] + ((h, m - 1),) + u.factors[index + 1:]
            return factor, Monomial(rest)
        if h.odd:
            odd_before += 1
    return 0, None


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------

class Functional:
    """Sparse graded polynomial with ℏ-series coefficients.

    Instances are treated as immutable; every operation returns a new one.
    """

    __slots__ = ('terms', 'order')

    def __init__(self, terms: Optional[Mapping[Monomial, HbarSeries]] = None, order: int = 0):
        clean: Dict[Monomial, HbarSeries] = {}
        if terms:
            for mono, coeff in terms.items():
                if coeff.order != order:
                    raise TruncationMismatchError(coeff.order, order)
                if coeff:
                    clean[mono] = coeff
        self.terms = clean
        self.order = order

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, order: int) -> 'Functional':
        return cls({}, order)

    @classmethod
    def constant(cls, value, order: int) -> 'Functional':
        return cls({UNIT_MONOMIAL: HbarSeries.constant(value, order)}, order)

    @classmethod
    def one(cls, order: int) -> 'Functional':
        return cls.constant(ONE, order)

    @classmethod
    def hbar(cls, power: int, order: int, value=1) -> 'Functional':
        return cls({UNIT_MONOMIAL: HbarSeries.monomial(value, power, order)}, order)

    @classmethod
    def generator(cls, g: Generator, order: int, coeff=1) -> 'Functional':
        return cls({Monomial(((g, 1),)): HbarSeries.constant(coeff, order)}, order)

    @classmethod
    def from_product(cls, generators: Iterable[Generator], order: int, coeff=1) -> 'Functional':
        """coeff times the ordered product g1·g2·…, Koszul sign included."""
        sign, mono = monomial_of(*generators)
        if mono is None:
            return cls.zero(order)
        return cls({mono: HbarSeries.constant(scalar(coeff) * sign, order)}, order)

    @classmethod
    def sum(cls, functionals: Iterable['Functional'], order: int) -> 'Functional':
        acc: Dict[Monomial, HbarSeries] = {}
        for f in functionals:
            if f.order != order:
                raise TruncationMismatchError(f.order, order)
            for mono, c in f.terms.items():
                prev = acc.get(mono)
                acc[mono] = c if prev is None else prev + c
        return cls(acc, order)

    # -- basic protocol -----------------------------------------------------

    def _check(self, other: 'Functional'):
        if self.order != other.order:
            raise TruncationMismatchError(self.order, other.order)

    def __bool__(self) -> bool:
        return bool(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other) -> bool:
        if not isinstance(other, Functional):
            return NotImplemented
        return self.order == other.order and self.terms == other.terms

    __hash__ = None

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self) -> Iterator[Tuple[Monomial, HbarSeries]]:
        return iter(self.terms.items())

    def __repr__(self) -> str:
        return f"Functional({self.pretty()}, order={self.order})"

    def __str__(self) -> str:
        return self.pretty()

    # -- linear structure ---------------------------------------------------

    def __add__(self, other: 'Functional') -> 'Functional':
        self._check(other)
        out = dict(self.terms)
        for mono, c in other.terms.items():
            prev = out.get(mono)
            out[mono] = c if prev is None else prev + c
        return Functional(out, self.order)

    def __neg__(self) -> 'Functional':
        return Functional({m: -c for m, c in self.terms.items()}, self.order)

    def __sub__(self, other: 'Functional') -> 'Functional':
        return self + (-other)

    def scale(self, factor: Union[HbarSeries, Scalar, int, str]) -> 'Functional':
        if isinstance(factor, HbarSeries):
            if factor.order != self.order:
                raise TruncationMismatchError(factor.order, self.order)
            return Functional({m: c * factor for m, c in self.terms.items()}, self.order)
        factor = scalar(factor)
        if not factor:
            return Functional.zero(self.order)
        return Functional({m: c.scale(factor) for m, c in self.terms.items()}, self.order)

    def __mul__(self, other) -> 'Functional':
        if isinstance(other, Functional):
            return pointwise_product(self, other)
        return self.scale(other)

    def __rmul__(self, other) -> 'Functional':
        return self.scale(other)

    # -- ℏ handling ---------------------------------------------------------

    def pad(self, order: int) -> 'Functional':
        return Functional({m: c.pad(order) for m, c in self.terms.items()}, order)

    def shift(self, power: int) -> 'Functional':
        return Functional({m: c.shift(power) for m, c in self.terms.items()}, self.order)

    def unshift(self, power: int) -> 'Functional':
        return Functional({m: c.unshift(power) for m, c in self.terms.items()}, self.order)

    def hbar_coefficient(self, power: int) -> 'Functional':
        """The ℏ^power coefficient, as an ℏ-free functional at the same truncation."""
        if power > self.order:
            return Functional.zero(self.order)
        return Functional({m: HbarSeries.constant(c.coeffs[power], self.order)
                           for m, c in self.terms.items()}, self.order)

    def leading_hbar_order(self) -> Optional[int]:
        orders = [c.leading_order() for c in self.terms.values()]
        orders = [o for o in orders if o is not None]
        return min(orders) if orders else None

    def conjugate(self) -> 'Functional':
        """Complex conjugation of the coefficients (ℏ and the generators are real)."""
        return Functional({m: c.conjugate() for m, c in self.terms.items()}, self.order)

    # -- gradings -----------------------------------------------------------

    def filter(self, keep: Callable[[Monomial], bool]) -> 'Functional':
        return Functional({m: c for m, c in self.terms.items() if keep(m)}, self.order)

    def parity_parts(self) -> Tuple['Functional', 'Functional']:
        return (self.filter(lambda m: m.parity == 0), self.filter(lambda m: m.parity == 1))

    def parity(self) -> int:
        parities = {m.parity for m in self.terms}
        if len(parities) > 1:
            raise GradingError("functional is not homogeneous in parity")
        return parities.pop() if parities else 0

    def is_homogeneous(self) -> bool:
        return len({m.parity for m in self.terms}) <= 1

    def ghost_numbers(self) -> frozenset:
        return frozenset(m.ghost_number for m in self.terms)

    def antifield_numbers(self) -> frozenset:
        return frozenset(m.antifield_number for m in self.terms)

    def with_antifields(self) -> 'Functional':
        return self.filter(lambda m: m.antifield_number > 0)

    def without_antifields(self) -> 'Functional':
        return self.filter(lambda m: m.antifield_number == 0)

    def support(self) -> frozenset:
        sites = set()
        for m in self.terms:
            sites |= m.sites
        return frozenset(sites)

    def generators(self) -> frozenset:
        gens = set()
        for m in self.terms:
            gens |= m.generators
        return frozenset(gens)

    def degree(self) -> int:
        return max((m.degree for m in self.terms), default=0)

    def restrict(self, sites: Iterable[int]) -> 'Functional':
        """Set every generator outside ``sites`` to zero."""
        allowed = frozenset(sites)
        return self.filter(lambda m: m.sites <= allowed)

    # -- calculus -----------------------------------------------------------

    def derivative(self, g: Generator) -> 'Functional':
        return left_derivative(self, g)

    def evaluate(self, config: Mapping[Generator, object]) -> HbarSeries:
        return evaluate(self, config)

    def pretty(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for mono in sorted(self.terms, key=_monomial_sort_key):
            coeff = self.terms[mono].to_sympy()
            if not mono.factors:
                parts.append(f"({coeff})")
            else:
                parts.append(f"({coeff})*{mono}")
        return " + ".join(parts)


def _monomial_sort_key(mono: Monomial):
    return (mono.degree, tuple((g.key, m) for g, m in mono.factors))


def pointwise_product(F: Functional, G: Functional) -> Functional:
    """Graded commutative product m(F⊗G)."""
    F._check(G)
    out: Dict[Monomial, HbarSeries] = {}
    for u, a in F.terms.items():
        for v, b in G.terms.items():
            sign, w = mono_mul(u, v)
            if w is None:
                continue
            c = a * b
            if sign < 0:
                c = -c
            prev = out.get(w)
            out[w] = c if prev is None else prev + c
    return Functional(out, F.order)


def left_derivative(F: Functional, g: Generator) -> Functional:
    out: Dict[Monomial, HbarSeries] = {}
    for mono, c in F.terms.items():
        factor, rest = mono_derivative(mono, g)
        if rest is None:
            continue
        term = c.scale(factor)
        prev = out.get(rest)
        out[rest] = term if prev is None else prev + term
    return Functional(out, F.order)


def support_of(F: Functional) -> frozenset:
    return F.support()


def evaluate(F: Functional, config: Mapping[Generator, object]) -> HbarSeries:
    """Substitute exact values for even generators; odd factors evaluate to zero."""
    total = HbarSeries.zero(F.order)
    for mono, c in F.terms.items():
        if any(g.odd for g, _ in mono.factors):
            continue
        value = ONE
        for g, m in mono.factors:
            if g not in config:
                raise UnassignedGeneratorError(f"no value assigned to {g}")
            value *= scalar(config[g]) ** m
        total = total + c.scale(value)
    return total


def factorial_inverse(k: int) -> Scalar:
    return rational_scalar(1, math.factorial(k))
