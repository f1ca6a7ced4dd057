import logging
from typing import Optional, Tuple

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for incoherent options (beam < 1, m < 1, empty corpus selection, ...)."""


class Config:
    # Numeric mode: "f32" for training/inference, "f64" for gradient checks
    PRECISION: str = "f32"

    # Desk-scale model profile
    D_MODEL: int = 64
    N_HEADS: int = 4
    N_ENC_LAYERS: int = 2
    N_DEC_LAYERS: int = 2
    D_FF: int = 256
    MAX_LEN: int = 256
    STREAM_LOSS_WEIGHTS: Tuple[float, float] = (0.5, 0.5)

    # Optimizer
    LEARNING_RATE: float = 1e-3
    BETA1: float = 0.9
    BETA2: float = 0.999
    ADAM_EPS: float = 1e-8
    BATCH_SIZE: int = 10

    # Schedule
    EPOCHS_STAGE1: int = 15
    EPOCHS_STAGE2: int = 10
    ITERATIONS: int = 2

    # Decoding
    MAX_NEW_TOKENS: int = 32
    BEAM_SIZE: int = 4
    LENGTH_PENALTY: float = 1.0

    # Vocabulary
    MIN_FREQ: int = 1
    MAX_VOCAB: int = 30000

    SEED: int = 13
    LOG_LEVEL: str = "INFO"
    PROGRESS: bool = True

    @classmethod
    def validate(cls) -> bool:
        """Validate that the defaults are coherent"""
        ok = True
        if cls.PRECISION not in ("f32", "f64"):
            logger.warning(f"⚠️ Unknown precision {cls.PRECISION!r}; expected 'f32' or 'f64'")
            ok = False
        if cls.D_MODEL % cls.N_HEADS != 0:
            logger.warning(f"⚠️ D_MODEL={cls.D_MODEL} is not divisible by N_HEADS={cls.N_HEADS}")
            ok = False
        if abs(sum(cls.STREAM_LOSS_WEIGHTS) - 1.0) > 1e-9:
            logger.warning(f"⚠️ STREAM_LOSS_WEIGHTS {cls.STREAM_LOSS_WEIGHTS} do not sum to 1")
            ok = False
        if cls.EPOCHS_STAGE1 < 0 or cls.EPOCHS_STAGE2 < 0:
            logger.warning("⚠️ Epoch counts must be non-negative")
            ok = False
        if cls.BATCH_SIZE < 1 or cls.ITERATIONS < 1:
            logger.warning("⚠️ BATCH_SIZE and ITERATIONS must be at least 1")
            ok = False
        return ok


_logging_ready = False


def setup_logging(level: Optional[str] = None) -> None:
    global _logging_ready
    level_name = (level or Config.LOG_LEVEL).upper()
    if _logging_ready:
        logging.getLogger().setLevel(level_name)
        return
    logging.basicConfig(
        level=level_name,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    _logging_ready = True
