class QShardError(Exception):
    """Base class for every error raised by the simulator."""


# ============ Circuit engine ============

class EncodingError(QShardError):
    pass


class GateError(QShardError):
    pass


class NoiseError(QShardError):
    pass


class SpecError(QShardError):
    pass


class UnsupportedObservable(QShardError):
    pass


# ============ Model / gradients ============

class ShapeError(QShardError):
    pass


class BatchError(QShardError):
    pass


class OracleModeError(QShardError):
    pass


# ============ Runtime ============

class PartitionError(QShardError):
    pass


class ProtocolError(QShardError):
    pass


class BarrierTimeout(QShardError):
    pass


class NumericsError(QShardError):
    pass


# ============ Data / metrics ============

class DataError(QShardError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class LedgerError(QShardError):
    pass


class MetricError(QShardError):
    pass


class InfeasibleTarget(QShardError):
    pass


class SpeedupUndefined(QShardError):
    pass


class BoundUndefined(QShardError):
    pass
