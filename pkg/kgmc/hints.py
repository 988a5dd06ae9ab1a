"""
    kgmc.hints
    ~~~~~~~~~~

    Contains type hint definitions used across modules in this package.
"""
import typing

# pylint: disable=invalid-name,no-member,unsubscriptable-object

#: Type hint that is an alias for the built-in :class:`~bool` type.
Bool = bool


#: Type hint that is an alias for the built-in :class:`~float` type.
Float = float


#: Type hint that is an alias for the built-in :class:`~int` type.
Int = int


#: Type hint that is an alias for the built-in :class:`~str` type.
Str = str


#: Type hint that defines the identifier of an entity or segment.
EntityId = str


#: Type hint that defines a single planar coordinate pair in map units.
Coordinate = typing.Tuple[float, float]


#: Type hint that defines an ordered sequence of coordinate pairs.
PointSeq = typing.Sequence[Coordinate]


#: Type hint that defines a pair of entity identifiers, source first.
IdPair = typing.Tuple[str, str]


#: Type hint that defines an optional duration in seconds; `None` means unlimited.
Seconds = typing.Optional[typing.Union[int, float]]


#: Type hint that defines an optional step count; `None` means unlimited.
Steps = typing.Optional[int]


#: Type hint that defines a seed accepted by :func:`~numpy.random.default_rng`.
Seed = typing.Optional[int]
