#!/usr/bin/env python3
"""
MF-PPO - Point d'entrée principal

Mean-Field Proximal Policy Optimization pour MDP multi-agents coopératifs
invariants par permutation, avec réseaux DeepSet et oracles exacts.

Usage:
    python main.py train --config configs/nav-3x3-n2.yaml
    python main.py check --suite all
    python main.py eval --checkpoint runs/actor.bin --env nav-3x3-n2
"""

import sys
import os

# Ajouter le dossier src au path Python
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from cli.app import main

if __name__ == "__main__":
    sys.exit(main())
