"""Exception taxonomy shared by all parqdb modules."""


class ParqDbError(Exception):
    """Base class for all parqdb errors."""


class HeterogeneousType(ParqDbError):
    """A column mixes value types that no promotion can reconcile."""


class EmptyName(ParqDbError):
    """A field name is empty, contains whitespace, or has an empty segment."""


class PathConflict(ParqDbError):
    """A flat path is both a leaf and a prefix of another path."""


class IncompatibleSchemas(ParqDbError):
    """Two schemas share a field whose types cannot be promoted together."""


class IdCollision(ParqDbError):
    """Input data already carries an id column where one would be assigned."""


class CorruptDataset(ParqDbError):
    """A fragment is unreadable or violates dataset invariants."""


class ManualRecoveryRequired(ParqDbError):
    """A stale transaction backup exists; the dataset needs manual recovery."""

    def __init__(self, backup_path: str):
        super().__init__(
            f"stale transaction backup at {backup_path}; inspect and either "
            f"restore its contents into the dataset directory or delete it"
        )
        self.backup_path = backup_path


class IoFailure(ParqDbError):
    """An underlying filesystem operation failed."""


class NestedTransaction(ParqDbError):
    """A transaction was opened while another one is still open."""


class RestoreFailure(ParqDbError):
    """Rollback could not restore the pre-transaction snapshot."""


class UnknownField(ParqDbError):
    """A referenced column does not exist in the schema."""


class TypeMismatch(ParqDbError):
    """A predicate literal is not promotable to the field's type."""


class MissingUpdateKeys(ParqDbError):
    """An update record lacks one of the configured match keys."""


class ProtectedColumn(ParqDbError):
    """The id column cannot be deleted."""


class MixedDeleteModes(ParqDbError):
    """A delete request must use exactly one of ids, columns, or filters."""


class StaleNestedMirrorWarning(UserWarning):
    """The nested mirror is older than the flat dataset it was built from."""
