import sys
from pathlib import Path

# Add src directory to path
sys.path.append(str(Path(__file__).parent / "src"))

from cli.main_cli import main

if __name__ == "__main__":
    main()
