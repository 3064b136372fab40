"""
Run Experiment - Script Principal
=================================
Punto de entrada de la CLI del Enhanced Interaction ViT.

    python run_experiment.py train --config configs/ei_vit_tiny.json --seed 0
    python run_experiment.py gradcheck
"""

import sys
from pathlib import Path
from typing import Optional, Sequence

# Agregar src al path
sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main
from src.config import ensure_directories


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Crea los directorios del proyecto y delega en la CLI"""
    ensure_directories()
    return main(argv)


if __name__ == "__main__":
    sys.exit(run())
