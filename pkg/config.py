import os
from dotenv import load_dotenv

# Load .env file
load_dotenv()

# Logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

# Reproducibility
DEFAULT_SEED = int(os.getenv("FOURD_SEED", "7"))

# Storage
DATA_DIR = os.getenv("FOURD_DATA_DIR", "./data")

# Optional pipeline config file used when --config is not given
DEFAULT_CONFIG_PATH = os.getenv("FOURD_CONFIG", "")
