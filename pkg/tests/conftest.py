import sys
from pathlib import Path

# make sibling test helpers (gen_programs, refkernels, archs) importable
sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"
