from pydantic import Field
from pydantic_settings import BaseSettings
from dotenv import load_dotenv

# Load .env file
load_dotenv()


class Settings(BaseSettings):
    # Project Settings
    PROJECT_NAME: str = Field(default="Hard-max Transformer Classifier")
    DEBUG: bool = Field(default=False)
    LOG_LEVEL: str = Field(default="")

    # Output Settings
    OUTPUT_DIR: str = Field(default="reports")
    MASTER_SEED: int = Field(default=20240501)

    # Desk-scale architecture defaults
    DEFAULT_K: int = Field(default=64)
    DEFAULT_T_N: int = Field(default=500)
    DEFAULT_J: int = Field(default=16)
    DEFAULT_N: int = Field(default=2)
    DEFAULT_H: int = Field(default=8)
    DEFAULT_D_KEY: int = Field(default=4)
    DEFAULT_BETA: float = Field(default=3.0)

    # Initialization / training defaults
    DEFAULT_C4: float = Field(default=0.5)
    DEFAULT_C5: float = Field(default=0.1)
    DEFAULT_C6: float = Field(default=0.5)
    DEFAULT_TAU_OFFSET: int = Field(default=1)

    # Experiment defaults
    DEFAULT_N_MC: int = Field(default=20000)
    DEFAULT_THREADS: int = Field(default=1)
    DEFAULT_BOOTSTRAP_SAMPLES: int = Field(default=1000)

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"


settings = Settings()
