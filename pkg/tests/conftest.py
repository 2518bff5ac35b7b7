import sys
from pathlib import Path

# Make the sibling oracle/gradcheck helpers importable regardless of rootdir.
sys.path.insert(0, str(Path(__file__).resolve().parent))
