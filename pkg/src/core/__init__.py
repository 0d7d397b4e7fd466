"""
Core Package - Fonctionnalités principales

Ce package contient les modules essentiels de l'application :
- Configuration et état global
- Noyau champ moyen, symétries et environnements
- Réseaux DeepSet, politiques à énergie et entraînement MF-PPO
- Oracles exacts et suites de vérification
"""

__version__ = "1.0.0"
