"""Laboratory configuration settings."""

from pathlib import Path

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Laboratory defaults loaded from environment variables (prefix MKELAB_)."""

    # Output
    OUT: Path = Path("results")  # MKELAB_OUT
    LOG_LEVEL: str = "INFO"

    # TwoMoon data defaults
    N_SAMPLES: int = 500
    NOISE_STD: float = 0.1
    MOON_SCALE: float = 1.0
    MOON_SHIFT: float = 1.0  # horizontal offset of the lower arc
    MOON_GAP: float = 0.0  # extra downward offset of the lower arc
    SPLIT_LABELED: int = 30
    SPLIT_UNLABELED: int = 270
    SPLIT_TEST: int = 200
    SPLIT_MAX_RETRIES: int = 100

    # Training defaults (full-batch)
    OPTIMIZER: str = "adam"
    EPOCHS: int = 3000
    LEARNING_RATE: float = 1e-3
    BETA1: float = 0.9
    BETA2: float = 0.999
    ADAM_EPS: float = 1e-8
    MIN_TEACHER_TRAIN_ACCURACY: float = 0.9
    NOISY_STUDENT_DROPOUT: float = 0.5

    # Sweeps
    NUM_SEEDS: int = 10
    JOBS: int = 1

    # Theory checks
    EXPANSION_RADIUS: float = 0.3
    EXPANSION_BUDGET: int = 2000
    EXPANSION_ENUMERATION_LIMIT: int = 15  # exhaustive below this class size
    PRODUCT_ENUMERATION_LIMIT: int = 32768  # rectangles enumerated exhaustively
    PRODUCT_SUBSET_ENUMERATION_LIMIT: int = 18  # product classes up to this size: every subset checked
    LEMMA1_CLASS_POINTS: int = 24  # per-class, per-modality points kept for product sets
    LEMMA1_SLACK: float = 0.9
    MU_DRAWS: int = 16

    # Plots
    PLOT_GRID_RESOLUTION: int = 200

    class Config:
        env_prefix = "MKELAB_"
        env_file = ".env"
        env_file_encoding = "utf-8"


# Global settings instance
settings = Settings()
