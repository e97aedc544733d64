import sys
from pathlib import Path

from hypothesis import settings

SRC = Path(__file__).resolve().parents[1] / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

settings.register_profile("suite", max_examples=60, deadline=None)
settings.load_profile("suite")
