import sys
from pathlib import Path

# Make the sibling helper modules (util, straightline) importable when
# pytest is invoked from the repository root.
sys.path.insert(0, str(Path(__file__).parent))
