import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

# Environment configuration
LOG_LEVEL = os.getenv("DCLR_LOG_LEVEL", "INFO").upper()
EXACT_UNIFORMITY_LIMIT = int(os.getenv("DCLR_EXACT_UNIFORMITY_LIMIT", "2000"))

CHECKPOINT_VERSION = "dclr-ckpt-1"
EMBEDDING_MAGIC = b"EMB1"

# "--phi off": strictly above any cosine, so every negative keeps weight 1
PHI_OFF = 1.0 + 1e-6


def seed_override() -> Optional[int]:
    """
    Seed from DCLR_SEED, read at call time so tests can patch the environment
    """
    value = os.getenv("DCLR_SEED")
    if value is None or value.strip() == "":
        return None
    return int(value)
