"""Maximum-entropy synthesis of categorical populations from marginal constraints."""

from .errors import EnumerationInfeasibleError, InvalidInputError, SchemaMismatchError
from .model import (
    AtomicConstraint,
    AttributeSchema,
    AttrLookup,
    ConstraintSet,
    build_attr_lookup,
    evaluate_features,
    expand_marginal_table,
    tuple_energy,
)

__version__ = "0.1.0"
