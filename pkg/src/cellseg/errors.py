"""Exception hierarchy shared by every cellseg module."""


class CellSegError(Exception):
    """Base class for all cellseg failures."""


class DataError(CellSegError):
    """Bad or inconsistent input data (missing files, corrupt images, shape clashes)."""


class MissingMaskError(DataError):
    def __init__(self, stem: str, masks_dir: str):
        super().__init__(f"no mask found for image '{stem}' in {masks_dir}")
        self.stem = stem


class ShapeError(DataError):
    pass


class ConfigError(CellSegError):
    """Invalid configuration values or unknown configuration keys."""


class ConfigMismatchError(ConfigError):
    pass


class CheckpointError(CellSegError):
    """A checkpoint file could not be read."""


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class TrainingError(CellSegError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
