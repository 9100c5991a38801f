# THIS FILE NEEDS TO BE IN THE ROOT DIRECTORY

import os
from pathlib import Path

ROOT_DIR = Path(os.path.dirname(os.path.abspath(__file__)))

DATA_DIR = ROOT_DIR / 'data'
OUTPUT_DIR = ROOT_DIR / 'output'
GOLDEN_DIR = ROOT_DIR / 'short_tests' / 'golden'
